#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "postkit/postkit.h"

namespace {

using json = nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitDomain = 1;
constexpr int kExitUsage = 2;

struct DomainFailure {
  pk_status status;
  std::string message;
  bool reported = false;  // JSON already written to stdout
};

struct UsageFailure {
  std::string message;
};

void check(pk_status s) {
  if (s != PK_OK) throw DomainFailure{s, pk_last_error()};
}

// Takes ownership of a string returned by the library.
std::string take(char* s) {
  std::string out = s == nullptr ? "" : s;
  pk_string_free(s);
  return out;
}

using Checkpoint = std::unique_ptr<pk_checkpoint, decltype(&pk_checkpoint_free)>;
using LangId = std::unique_ptr<pk_langid, decltype(&pk_langid_free)>;
using Bpe = std::unique_ptr<pk_bpe, decltype(&pk_bpe_free)>;

Checkpoint load(const std::string& path) {
  pk_checkpoint* c = nullptr;
  check(pk_checkpoint_load(path.c_str(), 0, &c));
  return Checkpoint(c, pk_checkpoint_free);
}

std::string read_file(const std::string& path) {
  std::stringstream ss;
  if (path == "-") {
    ss << std::cin.rdbuf();
    return ss.str();
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DomainFailure{PK_ERR_IO, "cannot open " + path};
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw DomainFailure{PK_ERR_IO, "cannot write " + path};
}

std::uint64_t token_count(const std::string& flag, const std::string& text) {
  std::uint64_t v = 0;
  if (pk_parse_token_count(text.c_str(), &v) != PK_OK) {
    throw UsageFailure{flag + ": " + pk_last_error()};
  }
  return v;
}

// Shortest round-trip form with a compact exponent: 1e-05 -> 1e-5.
std::string num(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, res.ptr);
  const auto e = s.find('e');
  if (e == std::string::npos) return s;
  std::string mantissa = s.substr(0, e);
  std::string exp = s.substr(e + 1);
  std::string sign;
  if (!exp.empty() && (exp[0] == '-' || exp[0] == '+')) {
    if (exp[0] == '-') sign = "-";
    exp.erase(0, 1);
  }
  exp.erase(0, std::min(exp.find_first_not_of('0'), exp.size() - 1));
  return mantissa + "e" + sign + exp;
}

// One value broadcasts to every input; otherwise counts must match.
std::vector<double> per_input(const std::string& flag, const std::vector<double>& values,
                              std::size_t n) {
  if (values.size() <= 1 || values.size() == n) {
    return values.size() == 1 ? std::vector<double>(n, values[0]) : values;
  }
  throw UsageFailure{flag + " given " + std::to_string(values.size()) + " times for " +
                     std::to_string(n) + " inputs"};
}

const std::vector<std::string> kSeaLangs = {"en", "id", "km", "lo", "ms", "my",
                                            "ta", "th", "tl", "vi", "zh"};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"postkit: checkpoint merging, training plans, corpus filtering and preference tools"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(pk_version()));

  bool as_json = false;
  unsigned jobs = 1;
  auto add_common = [&](CLI::App* sub) {
    sub->add_flag("--json", as_json, "Emit a single JSON document on stdout");
    sub->add_option("--jobs", jobs, "Worker threads")->check(CLI::Range(1u, 1024u));
  };
  std::function<void()> run;

  // merge
  std::string m_method, m_base, m_out;
  std::vector<std::string> m_inputs;
  std::vector<double> m_weights, m_densities;
  pk_merge_params m_params;
  pk_merge_params_init(&m_params);
  bool m_no_normalize = false;
  std::vector<std::string> methods;
  {
    std::string list = pk_merge_methods();
    std::stringstream ss(list);
    for (std::string tok; std::getline(ss, tok, ',');) {
      methods.push_back(tok.substr(tok.find_first_not_of(' ')));
    }
  }
  auto* merge = app.add_subcommand("merge", "Merge checkpoints");
  merge->add_option("--method", m_method, "Merge method")->required()->check(CLI::IsMember(methods));
  merge->add_option("--base", m_base, "Base checkpoint (not used by linear)");
  merge->add_option("--in", m_inputs, "Input checkpoint (repeatable)")->required();
  merge->add_option("--weight", m_weights, "Weight per input, or one for all");
  merge->add_option("--density", m_densities, "Density per input, or one for all");
  merge->add_option("--lambda", m_params.lambda, "Scale on the fused delta");
  merge->add_option("--epsilon", m_params.epsilon, "MAGPRUNE probability spread");
  merge->add_option("--tall-threshold", m_params.tall_threshold, "Consensus mask threshold");
  merge->add_option("--consensus-k", m_params.consensus_k, "Minimum agreeing tasks");
  merge->add_option("--seed", m_params.seed, "Seed for random drops");
  merge->add_flag("--no-normalize", m_no_normalize, "Do not divide by the weight sum");
  merge->add_option("--out", m_out, "Output checkpoint")->required();
  add_common(merge);
  merge->callback([&] {
    run = [&] {
      Checkpoint base(nullptr, pk_checkpoint_free);
      if (!m_base.empty()) base = load(m_base);
      std::vector<Checkpoint> models;
      std::vector<const pk_checkpoint*> ptrs;
      for (const auto& p : m_inputs) {
        models.push_back(load(p));
        ptrs.push_back(models.back().get());
      }
      const auto weights = per_input("--weight", m_weights, m_inputs.size());
      const auto densities = per_input("--density", m_densities, m_inputs.size());
      m_params.weights = weights.data();
      m_params.n_weights = weights.size();
      m_params.densities = densities.data();
      m_params.n_densities = densities.size();
      m_params.normalize = m_no_normalize ? 0 : 1;
      m_params.jobs = jobs;
      pk_checkpoint* out = nullptr;
      check(pk_merge(m_method.c_str(), base.get(), ptrs.data(), ptrs.size(), &m_params, &out));
      Checkpoint merged(out, pk_checkpoint_free);
      check(pk_checkpoint_save(merged.get(), m_out.c_str()));
      char* digest = nullptr;
      check(pk_checkpoint_digest(merged.get(), &digest));
      const std::string hex = take(digest);
      if (as_json) {
        std::cout << json{{"ok", true}, {"method", m_method}, {"out", m_out}, {"digest", hex}}.dump()
                  << '\n';
      } else {
        std::cout << "wrote " << m_out << " (" << m_method << ", sha256 " << hex << ")\n";
      }
    };
  });

  // recipe
  std::string r_path, r_workdir = "postkit-out";
  bool r_validate_only = false;
  auto* recipe = app.add_subcommand("recipe", "Validate and execute a merge recipe");
  recipe->add_option("recipe", r_path, "Recipe JSON file")->required();
  recipe->add_option("--workdir", r_workdir, "Directory for outputs and manifest.json");
  recipe->add_flag("--validate-only", r_validate_only, "Only check the recipe");
  add_common(recipe);
  recipe->callback([&] {
    run = [&] {
      int ok = 0;
      char* report = nullptr;
      check(pk_recipe_validate(r_path.c_str(), &ok, &report));
      const std::string report_json = take(report);
      if (!ok) {
        if (as_json) std::cout << report_json << '\n';
        throw DomainFailure{PK_ERR_INVALID_RECIPE, "recipe failed validation: " + report_json,
                            as_json};
      }
      if (r_validate_only) {
        char* order = nullptr;
        check(pk_recipe_order(r_path.c_str(), &order));
        const std::string order_json = take(order);
        if (as_json) {
          std::cout << json{{"ok", true}, {"order", json::parse(order_json)}}.dump() << '\n';
        } else {
          std::cout << "recipe ok; order:";
          for (const auto& id : json::parse(order_json)) std::cout << ' ' << id.get<std::string>();
          std::cout << '\n';
        }
        return;
      }
      char* manifest = nullptr;
      check(pk_recipe_execute(r_path.c_str(), r_workdir.c_str(), jobs, &manifest));
      const json doc = json::parse(take(manifest));
      if (as_json) {
        std::cout << doc.dump() << '\n';
        return;
      }
      for (const auto& m : doc["merges"]) {
        std::cout << m["id"].get<std::string>() << ": " << m["method"].get<std::string>() << " -> "
                  << m["output_digest"].get<std::string>() << '\n';
      }
      for (const auto& o : doc["outputs"]) {
        std::cout << "wrote " << o["path"].get<std::string>() << '\n';
      }
    };
  });

  // plan
  std::string p_sources, p_budget = "200e9", p_config;
  std::vector<double> p_ratios = {0.55, 0.25, 0.20};
  pk_schedule sched;
  pk_schedule_init(&sched);
  pk_optimizer optim;
  pk_optimizer_init(&optim);
  std::string decay_shape = "linear";
  auto add_schedule_flags = [&](CLI::App* sub) {
    sub->add_option("--warmup", sched.warmup_fraction, "Warmup fraction");
    sub->add_option("--decay", sched.decay_fraction, "Decay (cooldown) fraction");
    sub->add_option("--eta-max", sched.eta_max, "Peak learning rate");
    sub->add_option("--eta-min", sched.eta_min, "Final learning rate");
    sub->add_option("--shape", decay_shape, "Decay shape")
        ->check(CLI::IsMember({"linear", "cosine"}));
  };
  auto* plan = app.add_subcommand("plan", "Allocate a token budget across data sources");
  plan->add_option("--sources", p_sources, "Sources JSON file")->required();
  plan->add_option("--budget", p_budget, "Total tokens, e.g. 200e9");
  plan->add_option("--ratios", p_ratios, "SEA,EN,CODE fractions")->delimiter(',')->expected(3);
  plan->add_option("--train-config", p_config, "Also write the full training config here");
  plan->add_option("--beta1", optim.beta1, "AdamW beta1");
  plan->add_option("--beta2", optim.beta2, "AdamW beta2");
  plan->add_option("--adam-eps", optim.eps, "AdamW epsilon");
  plan->add_option("--weight-decay", optim.weight_decay, "AdamW weight decay");
  add_schedule_flags(plan);
  add_common(plan);
  plan->callback([&] {
    run = [&] {
      const std::uint64_t budget = token_count("--budget", p_budget);
      const std::string sources = read_file(p_sources);
      char* out = nullptr;
      check(pk_plan_mix(sources.c_str(), p_ratios.data(), budget, &out));
      const json doc = json::parse(take(out));
      if (!p_config.empty()) {
        sched.total = static_cast<double>(budget);
        sched.cosine_decay = decay_shape == "cosine";
        char* cfg = nullptr;
        check(pk_train_config(sources.c_str(), p_ratios.data(), budget, &sched, &optim, &cfg));
        write_file(p_config, take(cfg) + "\n");
      }
      if (as_json) {
        std::cout << doc.dump() << '\n';
        return;
      }
      for (const auto& a : doc["allocations"]) {
        std::printf("%-5s %-40s %15llu\n", a["category"].get<std::string>().c_str(),
                    a["name"].get<std::string>().c_str(),
                    static_cast<unsigned long long>(a["tokens"].get<std::uint64_t>()));
      }
      for (const auto& [cat, tokens] : doc["category_totals"].items()) {
        std::printf("total %-40s %15llu\n", cat.c_str(),
                    static_cast<unsigned long long>(tokens.get<std::uint64_t>()));
      }
    };
  });

  // schedule
  double s_total = 0.0;
  std::vector<double> s_at;
  bool s_table = false;
  auto* schedule = app.add_subcommand("schedule", "Warmup-stable-decay learning rate");
  schedule->add_option("--total", s_total, "Schedule length in tokens or steps")->required();
  schedule->add_option("--at", s_at, "Position(s) to evaluate");
  schedule->add_flag("--table", s_table, "Print lr at every 1% of the schedule");
  add_schedule_flags(schedule);
  add_common(schedule);
  schedule->callback([&] {
    run = [&] {
      sched.total = s_total;
      sched.cosine_decay = decay_shape == "cosine";
      std::vector<double> points = s_at;
      if (s_table) {
        for (int pct = 0; pct <= 100; ++pct) points.push_back(pct == 100 ? s_total : s_total * pct / 100.0);
      }
      if (points.empty()) throw UsageFailure{"give --at or --table"};
      json rows = json::array();
      for (double t : points) {
        double lr = 0.0;
        check(pk_schedule_lr(&sched, t, &lr));
        rows.push_back({{"t", t}, {"lr", lr}});
        if (!as_json) {
          if (points.size() == 1) {
            std::cout << num(lr) << '\n';
          } else {
            std::cout << num(t) << '\t' << num(lr) << '\n';
          }
        }
      }
      if (as_json) std::cout << json{{"points", rows}}.dump() << '\n';
    };
  });

  // filter
  std::string f_train, f_in = "-", f_out = "-", f_stats;
  std::vector<std::string> f_langs = kSeaLangs;
  pk_filter_options f_opts;
  pk_filter_options_init(&f_opts);
  bool f_no_metadata = false, f_no_classifier = false, f_keep_html = false;
  std::uint32_t f_buckets = 0;
  auto* filter = app.add_subcommand("filter", "Language-filter newline-delimited JSON documents");
  filter->add_option("--train", f_train, "Labeled {text, lang} lines for the classifier")
      ->required();
  filter->add_option("--buckets", f_buckets, "Hash buckets (default 65536)");
  filter->add_option("--langs", f_langs, "Languages to keep")->delimiter(',');
  filter->add_option("--tau", f_opts.tau, "Minimum confidence")->check(CLI::Range(0.0, 1.0));
  filter->add_option("--in", f_in, "Input documents, - for stdin");
  filter->add_option("--out", f_out, "Retained documents, - for stdout");
  filter->add_option("--stats", f_stats, "Write stats JSON here");
  filter->add_flag("--no-metadata", f_no_metadata, "Ignore the documents' lang field");
  filter->add_flag("--no-classifier", f_no_classifier, "Keep by the lang field only");
  filter->add_flag("--keep-html", f_keep_html, "Skip HTML tag stripping");
  add_common(filter);
  filter->callback([&] {
    run = [&] {
      if (as_json && f_out == "-") throw UsageFailure{"--json needs --out to be a file"};
      pk_langid* raw = nullptr;
      check(pk_langid_train_jsonl(f_train.c_str(), f_buckets, &raw));
      LangId model(raw, pk_langid_free);
      std::vector<const char*> langs;
      for (const auto& l : f_langs) langs.push_back(l.c_str());
      f_opts.langs = langs.data();
      f_opts.n_langs = langs.size();
      f_opts.check_metadata = f_no_metadata ? 0 : 1;
      f_opts.check_classifier = f_no_classifier ? 0 : 1;
      f_opts.strip_html = f_keep_html ? 0 : 1;
      f_opts.jobs = jobs;
      char* stats = nullptr;
      check(pk_filter_jsonl(model.get(), &f_opts, f_in.c_str(), f_out.c_str(), &stats));
      const std::string stats_json = take(stats);
      if (!f_stats.empty()) write_file(f_stats, stats_json + "\n");
      if (as_json) {
        std::cout << stats_json << '\n';
      } else {
        const json s = json::parse(stats_json);
        std::cerr << "retained " << s["retained"] << " of " << s["total"] << '\n';
      }
    };
  });

  // bpe-train
  std::string b_corpus, b_out;
  std::size_t b_merges = 0;
  auto* bpe_train = app.add_subcommand("bpe-train", "Learn a BPE merge table");
  bpe_train->add_option("--corpus", b_corpus, "Training text, - for stdin")->required();
  bpe_train->add_option("--merges", b_merges, "Target number of merges")->required();
  bpe_train->add_option("--out", b_out, "Model file")->required();
  add_common(bpe_train);
  bpe_train->callback([&] {
    run = [&] {
      const std::string text = read_file(b_corpus);
      pk_bpe* raw = nullptr;
      check(pk_bpe_learn(text.data(), text.size(), b_merges, &raw));
      Bpe model(raw, pk_bpe_free);
      check(pk_bpe_save(model.get(), b_out.c_str()));
      const std::size_t learned = pk_bpe_merge_count(model.get());
      if (as_json) {
        std::cout << json{{"ok", true}, {"merges", learned}, {"out", b_out}}.dump() << '\n';
      } else {
        std::cout << "learned " << learned << " merges -> " << b_out << '\n';
      }
    };
  });

  // tokenize
  std::string t_model, t_text, t_in;
  double t_dropout = 0.0;
  std::uint64_t t_seed = 0;
  auto* tokenize = app.add_subcommand("tokenize", "Segment text with a BPE model");
  tokenize->add_option("--model", t_model, "Model file")->required();
  auto* t_text_opt = tokenize->add_option("--text", t_text, "Text to segment");
  tokenize->add_option("--in", t_in, "Read text from a file, - for stdin")->excludes(t_text_opt);
  tokenize->add_option("--dropout", t_dropout, "Merge dropout probability")
      ->check(CLI::Range(0.0, 1.0));
  tokenize->add_option("--seed", t_seed, "Dropout seed");
  add_common(tokenize);
  tokenize->callback([&] {
    run = [&] {
      if (t_in.empty() && tokenize->count("--text") == 0) throw UsageFailure{"give --text or --in"};
      const std::string text = t_in.empty() ? t_text : read_file(t_in);
      pk_bpe* raw = nullptr;
      check(pk_bpe_load(t_model.c_str(), &raw));
      Bpe model(raw, pk_bpe_free);
      char* out = nullptr;
      check(pk_bpe_tokenize(model.get(), text.data(), text.size(), t_dropout, t_seed, &out));
      const std::string tokens = take(out);
      if (as_json) {
        std::cout << tokens << '\n';
      } else {
        for (const auto& tok : json::parse(tokens)) std::cout << tok.dump() << '\n';
      }
    };
  });

  // pairs
  std::string pr_in = "-", pr_out = "-";
  auto* pairs = app.add_subcommand("pairs", "Build chosen/rejected pairs from scored responses");
  pairs->add_option("--in", pr_in, "Scored responses, - for stdin");
  pairs->add_option("--out", pr_out, "Pairs, - for stdout");
  add_common(pairs);
  pairs->callback([&] {
    run = [&] {
      if (as_json && pr_out == "-") throw UsageFailure{"--json needs --out to be a file"};
      std::size_t n = 0;
      check(pk_pairs_jsonl(pr_in.c_str(), pr_out.c_str(), &n));
      if (as_json) {
        std::cout << json{{"ok", true}, {"pairs", n}}.dump() << '\n';
      } else {
        std::cerr << "wrote " << n << " pairs\n";
      }
    };
  });

  // simpo-eval
  std::string se_in = "-";
  pk_simpo_params simpo;
  pk_simpo_params_init(&simpo);
  auto* simpo_eval = app.add_subcommand("simpo-eval", "SimPO loss statistics over pairs");
  simpo_eval->add_option("--in", se_in, "Pairs, - for stdin");
  simpo_eval->add_option("--beta", simpo.beta, "Reward scale (default 2.0)");
  simpo_eval->add_option("--gamma", simpo.gamma, "Target margin (default 0.5)");
  add_common(simpo_eval);
  simpo_eval->callback([&] {
    run = [&] {
      char* out = nullptr;
      check(pk_simpo_eval_jsonl(se_in.c_str(), &simpo, jobs, &out));
      const std::string stats = take(out);
      if (as_json) {
        std::cout << stats << '\n';
        return;
      }
      const json s = json::parse(stats);
      std::cout << "pairs        " << s["count"] << '\n'
                << "mean loss    " << num(s["mean_loss"].get<double>()) << '\n'
                << "min loss     " << num(s["min_loss"].get<double>()) << '\n'
                << "max loss     " << num(s["max_loss"].get<double>()) << '\n'
                << "mean margin  " << num(s["mean_margin"].get<double>()) << '\n'
                << "accuracy     " << num(s["accuracy"].get<double>()) << '\n';
    };
  });

  // inspect
  std::string i_path;
  auto* inspect = app.add_subcommand("inspect", "Describe a checkpoint");
  inspect->add_option("checkpoint", i_path, "Checkpoint file")->required();
  add_common(inspect);
  inspect->callback([&] {
    run = [&] {
      auto ckpt = load(i_path);
      char* out = nullptr;
      check(pk_checkpoint_describe(ckpt.get(), &out));
      const std::string desc = take(out);
      if (as_json) {
        std::cout << desc << '\n';
        return;
      }
      const json d = json::parse(desc);
      std::cout << "sha256 " << d["digest"].get<std::string>() << '\n'
                << "parameters " << d["parameters"] << '\n';
      for (const auto& t : d["tensors"]) {
        std::cout << "  " << t["name"].get<std::string>() << ' '
                  << t["dtype"].get<std::string>() << ' ' << t["shape"].dump() << '\n';
      }
      for (const auto& [k, v] : d["metadata"].items()) {
        std::cout << "  @" << k << " = " << v.get<std::string>() << '\n';
      }
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    run();
    return kExitOk;
  } catch (const UsageFailure& f) {
    std::cerr << "postkit: " << f.message << '\n';
    return kExitUsage;
  } catch (const DomainFailure& f) {
    std::cerr << "postkit: " << f.message << '\n';
    if (as_json && !f.reported) {
      std::cout << json{{"ok", false}, {"status", pk_status_name(f.status)}, {"error", f.message}}
                       .dump()
                << '\n';
    }
    return kExitDomain;
  } catch (const std::exception& e) {
    std::cerr << "postkit: " << e.what() << '\n';
    return kExitDomain;
  }
}
