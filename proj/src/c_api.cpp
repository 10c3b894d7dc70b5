#include "postkit/postkit.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <new>
#include <sstream>

#include "json.hpp"
#include "postkit/bpe.hpp"
#include "postkit/corpus.hpp"
#include "postkit/error.hpp"
#include "postkit/merge.hpp"
#include "postkit/planner.hpp"
#include "postkit/prefs.hpp"
#include "postkit/recipe.hpp"
#include "postkit/tensor_store.hpp"

struct pk_checkpoint {
  postkit::TensorMap map;
};

struct pk_langid {
  postkit::LangIdModel model;
};

struct pk_bpe {
  postkit::BpeModel model;
};

namespace {

using json = nlohmann::json;

thread_local std::string g_last_error;

template <class Fn>
pk_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return PK_OK;
  } catch (const postkit::Error& e) {
    g_last_error = e.what();
    return static_cast<pk_status>(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return PK_ERR_OUT_OF_MEMORY;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return PK_ERR_INTERNAL;
  }
}

void require(bool cond, const char* what) {
  if (!cond) throw postkit::Error(postkit::Errc::kInvalidArgument, what);
}

char* dup_string(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (p == nullptr) throw std::bad_alloc();
  std::memcpy(p, s.data(), s.size() + 1);
  return p;
}

std::string read_text(const char* path) {
  std::stringstream ss;
  if (std::strcmp(path, "-") == 0) {
    ss << std::cin.rdbuf();
  } else {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw postkit::Error(postkit::Errc::kIoFailure, std::string("cannot open ") + path);
    ss << in.rdbuf();
  }
  return ss.str();
}

// Runs fn(istream&, ostream&) with "-" mapped to the standard streams.
template <class Fn>
void with_streams(const char* in_path, const char* out_path, Fn&& fn) {
  std::ifstream fin;
  std::ofstream fout;
  std::istream* in = &std::cin;
  std::ostream* out = &std::cout;
  if (std::strcmp(in_path, "-") != 0) {
    fin.open(in_path, std::ios::binary);
    if (!fin) throw postkit::Error(postkit::Errc::kIoFailure, std::string("cannot open ") + in_path);
    in = &fin;
  }
  if (out_path != nullptr && std::strcmp(out_path, "-") != 0) {
    fout.open(out_path, std::ios::binary | std::ios::trunc);
    if (!fout) {
      throw postkit::Error(postkit::Errc::kIoFailure, std::string("cannot write ") + out_path);
    }
    out = &fout;
  }
  fn(*in, *out);
  out->flush();
}

postkit::DType to_dtype(pk_dtype d) {
  switch (d) {
    case PK_F32: return postkit::DType::kF32;
    case PK_F16: return postkit::DType::kF16;
    case PK_BF16: return postkit::DType::kBF16;
  }
  throw postkit::Error(postkit::Errc::kInvalidArgument, "unknown dtype");
}

postkit::WsdSchedule to_schedule(const pk_schedule* s) {
  postkit::WsdSchedule out;
  out.total = s->total;
  out.warmup_fraction = s->warmup_fraction;
  out.decay_fraction = s->decay_fraction;
  out.eta_max = s->eta_max;
  out.eta_min = s->eta_min;
  out.decay_shape = s->cosine_decay ? postkit::DecayShape::kCosine : postkit::DecayShape::kLinear;
  return out;
}

std::map<postkit::Category, double> to_ratios(const double ratios[3]) {
  return {{postkit::Category::kSea, ratios[0]},
          {postkit::Category::kEn, ratios[1]},
          {postkit::Category::kCode, ratios[2]}};
}

postkit::PreferencePair raw_pair(const double* chosen, size_t n_chosen, const double* rejected,
                                 size_t n_rejected) {
  require(chosen != nullptr && rejected != nullptr, "logprob arrays must not be null");
  postkit::PreferencePair p;
  p.chosen.token_logprobs.assign(chosen, chosen + n_chosen);
  p.rejected.token_logprobs.assign(rejected, rejected + n_rejected);
  return p;
}

postkit::SimpoParams to_simpo(const pk_simpo_params* params) {
  postkit::SimpoParams p;
  if (params != nullptr) {
    p.beta = params->beta;
    p.gamma = params->gamma;
  }
  return p;
}

}  // namespace

extern "C" {

const char* pk_status_name(pk_status status) {
  switch (status) {
    case PK_OK: return "Ok";
    case PK_ERR_OUT_OF_MEMORY: return "OutOfMemory";
    case PK_ERR_INTERNAL: return "Internal";
    default: break;
  }
  if (status >= PK_ERR_INVALID_ARGUMENT && status <= PK_ERR_NOT_ENOUGH_RESPONSES) {
    return postkit::errc_name(static_cast<postkit::Errc>(status));
  }
  return "Unknown";
}

const char* pk_last_error(void) { return g_last_error.c_str(); }

const char* pk_version(void) { return "1.0.0"; }

void pk_string_free(char* s) { std::free(s); }

pk_status pk_checkpoint_new(pk_checkpoint** out) {
  return guarded([&] {
    require(out != nullptr, "out must not be null");
    *out = new pk_checkpoint{};
  });
}

pk_status pk_checkpoint_load(const char* path, int allow_nonfinite, pk_checkpoint** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "path and out must not be null");
    postkit::LoadOptions opts;
    opts.allow_nonfinite = allow_nonfinite != 0;
    *out = new pk_checkpoint{postkit::load_checkpoint(path, opts)};
  });
}

pk_status pk_checkpoint_save(const pk_checkpoint* ckpt, const char* path) {
  return guarded([&] {
    require(ckpt != nullptr && path != nullptr, "checkpoint and path must not be null");
    postkit::save_checkpoint(ckpt->map, path);
  });
}

void pk_checkpoint_free(pk_checkpoint* ckpt) { delete ckpt; }

pk_status pk_checkpoint_put_f32(pk_checkpoint* ckpt, const char* name, pk_dtype dtype,
                                const uint64_t* shape, size_t ndim, const float* values) {
  return guarded([&] {
    require(ckpt != nullptr && name != nullptr, "checkpoint and name must not be null");
    require(ndim == 0 || shape != nullptr, "shape must not be null");
    std::vector<std::uint64_t> dims(shape, shape + ndim);
    const std::size_t n = postkit::shape_numel(dims);
    require(n == 0 || values != nullptr, "values must not be null");
    ckpt->map.entries[name] =
        postkit::Tensor::from_f32(to_dtype(dtype), std::move(dims), std::span(values, n));
  });
}

pk_status pk_checkpoint_get_f32(const pk_checkpoint* ckpt, const char* name, float* out,
                                size_t capacity, size_t* numel) {
  return guarded([&] {
    require(ckpt != nullptr && name != nullptr && numel != nullptr,
            "checkpoint, name and numel must not be null");
    const auto it = ckpt->map.entries.find(name);
    if (it == ckpt->map.entries.end()) {
      throw postkit::Error(postkit::Errc::kInvalidArgument,
                           std::string("no tensor named '") + name + "'");
    }
    *numel = it->second.numel();
    if (out == nullptr) return;
    require(capacity >= *numel, "output buffer too small");
    const auto values = it->second.to_f32();
    std::copy(values.begin(), values.end(), out);
  });
}

pk_status pk_checkpoint_set_metadata(pk_checkpoint* ckpt, const char* key, const char* value) {
  return guarded([&] {
    require(ckpt != nullptr && key != nullptr && value != nullptr, "arguments must not be null");
    ckpt->map.metadata[key] = value;
  });
}

size_t pk_checkpoint_tensor_count(const pk_checkpoint* ckpt) {
  return ckpt == nullptr ? 0 : ckpt->map.entries.size();
}

pk_status pk_checkpoint_digest(const pk_checkpoint* ckpt, char** out_hex) {
  return guarded([&] {
    require(ckpt != nullptr && out_hex != nullptr, "arguments must not be null");
    *out_hex = dup_string(postkit::content_digest(ckpt->map));
  });
}

pk_status pk_checkpoint_describe(const pk_checkpoint* ckpt, char** out_json) {
  return guarded([&] {
    require(ckpt != nullptr && out_json != nullptr, "arguments must not be null");
    json tensors = json::array();
    std::uint64_t params = 0;
    for (const auto& [name, t] : ckpt->map.entries) {
      tensors.push_back({{"name", name},
                         {"dtype", postkit::dtype_name(t.dtype())},
                         {"shape", t.shape()},
                         {"numel", t.numel()}});
      params += t.numel();
    }
    json doc{{"digest", postkit::content_digest(ckpt->map)},
             {"parameters", params},
             {"tensors", tensors},
             {"metadata", ckpt->map.metadata}};
    *out_json = dup_string(doc.dump());
  });
}

pk_status pk_checkpoint_compat(const pk_checkpoint* const* ckpts, size_t n, int* ok,
                               char** out_json) {
  return guarded([&] {
    require(ckpts != nullptr && ok != nullptr, "arguments must not be null");
    std::vector<const postkit::TensorMap*> maps;
    for (size_t i = 0; i < n; ++i) {
      require(ckpts[i] != nullptr, "checkpoint must not be null");
      maps.push_back(&ckpts[i]->map);
    }
    const auto report = postkit::validate_compat(maps);
    *ok = report.ok ? 1 : 0;
    if (out_json == nullptr) return;
    json shapes = json::array();
    for (const auto& m : report.shape_mismatches) {
      shapes.push_back({{"name", m.name}, {"shapes", m.shapes}});
    }
    json dtypes = json::array();
    for (const auto& m : report.dtype_mismatches) {
      json names = json::array();
      for (auto d : m.dtypes) names.push_back(postkit::dtype_name(d));
      dtypes.push_back({{"name", m.name}, {"dtypes", names}});
    }
    *out_json = dup_string(json{{"ok", report.ok},
                                {"name_differences", report.name_differences},
                                {"shape_mismatches", shapes},
                                {"dtype_mismatches", dtypes}}
                               .dump());
  });
}

void pk_merge_params_init(pk_merge_params* params) {
  if (params == nullptr) return;
  const postkit::MergeParams d;
  *params = pk_merge_params{nullptr,  0,        nullptr,          0,           d.density,
                            d.lambda, d.epsilon, d.tall_threshold, d.consensus_k, d.seed,
                            d.normalize ? 1 : 0, d.jobs};
}

const char* pk_merge_methods(void) {
  static const std::string list = postkit::method_list();
  return list.c_str();
}

int pk_merge_method_known(const char* method) {
  return method != nullptr && postkit::parse_method(method).has_value() ? 1 : 0;
}

pk_status pk_merge(const char* method, const pk_checkpoint* base,
                   const pk_checkpoint* const* models, size_t n_models,
                   const pk_merge_params* params, pk_checkpoint** out) {
  return guarded([&] {
    require(method != nullptr && out != nullptr, "method and out must not be null");
    require(n_models == 0 || models != nullptr, "models must not be null");
    const auto m = postkit::parse_method(method);
    if (!m) {
      throw postkit::Error(postkit::Errc::kUnknownMethod,
                           std::string("'") + method + "'; expected one of " +
                               postkit::method_list());
    }
    postkit::MergeParams p;
    if (params != nullptr) {
      if (params->n_weights > 0) {
        require(params->weights != nullptr, "weights must not be null");
        p.weights.assign(params->weights, params->weights + params->n_weights);
      }
      if (params->n_densities > 0) {
        require(params->densities != nullptr, "densities must not be null");
        p.densities.assign(params->densities, params->densities + params->n_densities);
      }
      p.density = params->density;
      p.lambda = params->lambda;
      p.epsilon = params->epsilon;
      p.tall_threshold = params->tall_threshold;
      p.consensus_k = params->consensus_k;
      p.seed = params->seed;
      p.normalize = params->normalize != 0;
      p.jobs = params->jobs;
    }
    std::vector<const postkit::TensorMap*> maps;
    for (size_t i = 0; i < n_models; ++i) {
      require(models[i] != nullptr, "model must not be null");
      maps.push_back(&models[i]->map);
    }
    *out = new pk_checkpoint{
        postkit::merge(*m, base == nullptr ? nullptr : &base->map, maps, p)};
  });
}

pk_status pk_recipe_validate(const char* recipe_path, int* ok, char** out_report_json) {
  return guarded([&] {
    require(recipe_path != nullptr && ok != nullptr, "arguments must not be null");
    const auto report = postkit::validate(postkit::load_recipe(recipe_path));
    *ok = report.ok() ? 1 : 0;
    if (out_report_json != nullptr) *out_report_json = dup_string(postkit::report_to_json(report));
  });
}

pk_status pk_recipe_order(const char* recipe_path, char** out_json) {
  return guarded([&] {
    require(recipe_path != nullptr && out_json != nullptr, "arguments must not be null");
    const auto recipe = postkit::load_recipe(recipe_path);
    const auto report = postkit::validate(recipe);
    if (!report.ok()) {
      throw postkit::Error(postkit::Errc::kInvalidRecipe, postkit::report_to_json(report));
    }
    *out_json = dup_string(json(postkit::topological_order(recipe)).dump());
  });
}

pk_status pk_recipe_execute(const char* recipe_path, const char* workdir, unsigned jobs,
                            char** out_manifest_json) {
  return guarded([&] {
    require(recipe_path != nullptr && workdir != nullptr, "arguments must not be null");
    postkit::ExecuteOptions opts;
    opts.jobs = jobs;
    const auto manifest = postkit::execute(postkit::load_recipe(recipe_path), workdir, opts);
    if (out_manifest_json != nullptr) {
      *out_manifest_json = dup_string(postkit::manifest_to_json(manifest));
    }
  });
}

void pk_schedule_init(pk_schedule* schedule) {
  if (schedule == nullptr) return;
  const postkit::WsdSchedule d;
  *schedule = pk_schedule{d.total,   d.warmup_fraction, d.decay_fraction,
                          d.eta_max, d.eta_min,         d.decay_shape == postkit::DecayShape::kCosine};
}

void pk_optimizer_init(pk_optimizer* optimizer) {
  if (optimizer == nullptr) return;
  const postkit::OptimizerConfig d;
  *optimizer = pk_optimizer{d.beta1, d.beta2, d.eps, d.weight_decay};
}

pk_status pk_parse_token_count(const char* text, uint64_t* out) {
  return guarded([&] {
    require(text != nullptr && out != nullptr, "arguments must not be null");
    *out = postkit::parse_token_count(text);
  });
}

pk_status pk_schedule_lr(const pk_schedule* schedule, double t, double* out) {
  return guarded([&] {
    require(schedule != nullptr && out != nullptr, "arguments must not be null");
    *out = postkit::lr_at(to_schedule(schedule), t);
  });
}

pk_status pk_plan_mix(const char* sources_json, const double ratios[3], uint64_t budget,
                      char** out_json) {
  return guarded([&] {
    require(sources_json != nullptr && ratios != nullptr && out_json != nullptr,
            "arguments must not be null");
    const auto plan =
        postkit::plan_mix(postkit::sources_from_json(sources_json), to_ratios(ratios), budget);
    *out_json = dup_string(postkit::plan_to_json(plan));
  });
}

pk_status pk_train_config(const char* sources_json, const double ratios[3], uint64_t budget,
                          const pk_schedule* schedule, const pk_optimizer* optimizer,
                          char** out_json) {
  return guarded([&] {
    require(sources_json != nullptr && ratios != nullptr && schedule != nullptr &&
                optimizer != nullptr && out_json != nullptr,
            "arguments must not be null");
    const auto plan =
        postkit::plan_mix(postkit::sources_from_json(sources_json), to_ratios(ratios), budget);
    postkit::OptimizerConfig opt;
    opt.beta1 = optimizer->beta1;
    opt.beta2 = optimizer->beta2;
    opt.eps = optimizer->eps;
    opt.weight_decay = optimizer->weight_decay;
    *out_json = dup_string(postkit::emit_train_config(plan, to_schedule(schedule), opt));
  });
}

pk_status pk_langid_train_jsonl(const char* path, uint32_t buckets, pk_langid** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "arguments must not be null");
    std::istringstream in(read_text(path));
    const auto corpus = postkit::read_labeled_jsonl(in);
    *out = new pk_langid{postkit::train_langid(
        corpus, buckets == 0 ? postkit::kDefaultLangIdBuckets : buckets)};
  });
}

void pk_langid_free(pk_langid* model) { delete model; }

pk_status pk_langid_predict(const pk_langid* model, const char* text, char** out_label,
                            double* out_confidence) {
  return guarded([&] {
    require(model != nullptr && text != nullptr && out_label != nullptr &&
                out_confidence != nullptr,
            "arguments must not be null");
    const auto p = postkit::predict_lang(model->model, text);
    *out_label = dup_string(p.label);
    *out_confidence = p.confidence;
  });
}

void pk_filter_options_init(pk_filter_options* opts) {
  if (opts == nullptr) return;
  const postkit::FilterOptions d;
  *opts = pk_filter_options{nullptr, 0, d.tau, d.check_metadata, d.check_classifier, 1, d.jobs};
}

pk_status pk_filter_jsonl(const pk_langid* model, const pk_filter_options* opts,
                          const char* in_path, const char* out_path, char** out_stats_json) {
  return guarded([&] {
    require(model != nullptr && opts != nullptr && in_path != nullptr && out_path != nullptr,
            "arguments must not be null");
    require(opts->n_langs == 0 || opts->langs != nullptr, "langs must not be null");
    postkit::FilterOptions fo;
    for (size_t i = 0; i < opts->n_langs; ++i) fo.langs.insert(opts->langs[i]);
    fo.tau = opts->tau;
    fo.check_metadata = opts->check_metadata != 0;
    fo.check_classifier = opts->check_classifier != 0;
    if (!opts->strip_html) fo.prefilter = nullptr;
    fo.jobs = opts->jobs;
    postkit::FilterStats stats;
    with_streams(in_path, out_path, [&](std::istream& in, std::ostream& out) {
      stats = postkit::filter_jsonl(in, out, model->model, fo);
    });
    if (out_stats_json != nullptr) *out_stats_json = dup_string(postkit::stats_to_json(stats));
  });
}

pk_status pk_bpe_learn(const char* corpus, size_t len, size_t target_merges, pk_bpe** out) {
  return guarded([&] {
    require((corpus != nullptr || len == 0) && out != nullptr, "arguments must not be null");
    *out = new pk_bpe{postkit::learn_bpe(std::string_view(corpus == nullptr ? "" : corpus, len),
                                         target_merges)};
  });
}

pk_status pk_bpe_load(const char* path, pk_bpe** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "arguments must not be null");
    *out = new pk_bpe{postkit::load_bpe(path)};
  });
}

pk_status pk_bpe_save(const pk_bpe* model, const char* path) {
  return guarded([&] {
    require(model != nullptr && path != nullptr, "arguments must not be null");
    postkit::save_bpe(model->model, path);
  });
}

void pk_bpe_free(pk_bpe* model) { delete model; }

size_t pk_bpe_merge_count(const pk_bpe* model) {
  return model == nullptr ? 0 : model->model.merges().size();
}

pk_status pk_bpe_tokenize(const pk_bpe* model, const char* text, size_t len, double dropout_p,
                          uint64_t seed, char** out_json) {
  return guarded([&] {
    require(model != nullptr && (text != nullptr || len == 0) && out_json != nullptr,
            "arguments must not be null");
    const auto tokens = postkit::tokenize_bpe(
        model->model, std::string_view(text == nullptr ? "" : text, len), dropout_p, seed);
    *out_json = dup_string(json(tokens).dump(-1, ' ', false, json::error_handler_t::replace));
  });
}

void pk_simpo_params_init(pk_simpo_params* params) {
  if (params == nullptr) return;
  const postkit::SimpoParams d;
  *params = pk_simpo_params{d.beta, d.gamma};
}

pk_status pk_simpo_loss(const double* chosen, size_t n_chosen, const double* rejected,
                        size_t n_rejected, const pk_simpo_params* params, double* loss) {
  return guarded([&] {
    require(loss != nullptr, "loss must not be null");
    *loss = postkit::simpo_loss(raw_pair(chosen, n_chosen, rejected, n_rejected),
                                to_simpo(params));
  });
}

pk_status pk_simpo_grad(const double* chosen, size_t n_chosen, const double* rejected,
                        size_t n_rejected, const pk_simpo_params* params, double* grad_chosen,
                        double* grad_rejected) {
  return guarded([&] {
    require(grad_chosen != nullptr && grad_rejected != nullptr, "gradients must not be null");
    const auto g = postkit::simpo_grad(raw_pair(chosen, n_chosen, rejected, n_rejected),
                                       to_simpo(params));
    std::copy(g.chosen.begin(), g.chosen.end(), grad_chosen);
    std::copy(g.rejected.begin(), g.rejected.end(), grad_rejected);
  });
}

pk_status pk_pairs_jsonl(const char* in_path, const char* out_path, size_t* n_pairs) {
  return guarded([&] {
    require(in_path != nullptr && out_path != nullptr, "arguments must not be null");
    size_t n = 0;
    with_streams(in_path, out_path,
                 [&](std::istream& in, std::ostream& out) { n = postkit::pairs_jsonl(in, out); });
    if (n_pairs != nullptr) *n_pairs = n;
  });
}

pk_status pk_simpo_eval_jsonl(const char* in_path, const pk_simpo_params* params, unsigned jobs,
                              char** out_stats_json) {
  return guarded([&] {
    require(in_path != nullptr && out_stats_json != nullptr, "arguments must not be null");
    postkit::SimpoStats stats;
    with_streams(in_path, nullptr, [&](std::istream& in, std::ostream&) {
      stats = postkit::simpo_eval_jsonl(in, to_simpo(params), jobs);
    });
    *out_stats_json = dup_string(postkit::simpo_stats_to_json(stats));
  });
}

}  // extern "C"
