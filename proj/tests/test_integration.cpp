#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "postkit/bpe.hpp"
#include "postkit/corpus.hpp"
#include "postkit/merge.hpp"
#include "postkit/planner.hpp"
#include "postkit/prefs.hpp"
#include "postkit/recipe.hpp"
#include "synthetic_corpus.hpp"
#include "test_support.hpp"
#include "workflow_fixture.hpp"

using namespace postkit;

namespace {

std::map<std::string, std::string> digests_by_id(const LineageManifest& m) {
  std::map<std::string, std::string> out;
  for (const auto& s : m.sources) out[s.id] = s.digest;
  for (const auto& r : m.merges) out[r.id] = r.output_digest;
  return out;
}

}  // namespace

TEST_CASE("manifest lineage links every merge input to its producer") {
  for (const char* file : {"llama_workflow.json", "gemma_workflow.json"}) {
    INFO(file);
    testing::TempDir dir("int");
    const auto recipe = load_recipe(testing::stage_workflow(file, dir.path()));
    const auto manifest = execute(recipe, dir / "out");
    const auto digests = digests_by_id(manifest);
    for (const auto& m : manifest.merges) {
      if (m.base) CHECK(m.base->digest == digests.at(m.base->ref));
      for (const auto& in : m.inputs) CHECK(in.digest == digests.at(in.ref));
      CHECK(m.params.weights == std::vector<double>(m.inputs.size(), 1.0));
      CHECK(m.params.densities == std::vector<double>(m.inputs.size(), 1.0));
    }
    const auto written = load_checkpoint(dir / "out" / "final.stc");
    CHECK(content_digest(written) == digests.at("final"));
    const auto doc = nlohmann::json::parse(testing::read_text(dir / "out" / "manifest.json"));
    CHECK(doc["order"].size() == recipe.nodes.size());
  }
}

TEST_CASE("gemma workflow equals the hand-composed merges") {
  testing::TempDir dir("int");
  const auto recipe = load_recipe(testing::stage_workflow("gemma_workflow.json", dir.path()));
  execute(recipe, dir / "out");

  auto ckpt = [&](const std::string& id) { return load_checkpoint(dir / recipe.find(id)->path); };
  const auto base = ckpt("gemma2_9b");
  const auto it = ckpt("gemma2_9b_it");
  const auto stage2 = ckpt("stage2");
  MergeParams p;
  const std::vector<const TensorMap*> first{&it, &stage2};
  const auto merge1 = merge_della_linear(base, first, p);
  const auto fusechat = ckpt("fusechat");
  const auto cpt = ckpt("cpt");
  const auto aligned = ckpt("aligned_simpo");
  const std::vector<const TensorMap*> second{&merge1, &fusechat, &cpt, &aligned};
  const auto final_map = merge_della_linear(base, second, p);
  CHECK(load_checkpoint(dir / "out" / "final.stc") == final_map);
}

TEST_CASE("filtered corpus feeds a lossless BPE-dropout tokenizer") {
  std::mt19937_64 rng(31);
  const auto model = train_langid(testing::script_corpus(rng, 25), 8192);
  std::ostringstream docs;
  for (int i = 0; i < 200; ++i) {
    const auto& s = testing::scripts()[i % 4];
    nlohmann::json d{{"id", std::to_string(i)},
                     {"text", "<p>" + testing::random_text(rng, s, 6) + "</p>"}};
    docs << d.dump() << "\n";
  }
  FilterOptions opts;
  opts.langs = {"th", "km"};
  std::istringstream in(docs.str());
  std::ostringstream kept;
  const auto stats = filter_jsonl(in, kept, model, opts);
  CHECK(stats.retained == 100);
  CHECK(stats.non_target_language == 100);

  std::string corpus;
  std::istringstream lines(kept.str());
  std::string line;
  while (std::getline(lines, line)) {
    const auto d = nlohmann::json::parse(line);
    const auto text = d["text"].get<std::string>();
    CHECK(text.find('<') == std::string::npos);
    corpus += text + "\n";
  }
  const auto bpe = learn_bpe(corpus, 200);
  CHECK(bpe_from_text(bpe_to_text(bpe)) == bpe);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::string joined;
    for (const auto& t : tokenize_bpe(bpe, corpus, 0.1, seed)) joined += t;
    CHECK(joined == corpus);
  }
  CHECK(tokenize_bpe(bpe, corpus, 0.0, 0).size() < tokenize_bpe(bpe, corpus, 1.0, 0).size());
}

TEST_CASE("scored responses become pairs and SimPO statistics") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> reward(0.0, 1.0), lp(-2.0, -0.01);
  std::ostringstream src;
  for (int i = 0; i < 50; ++i) {
    nlohmann::json responses = nlohmann::json::array();
    for (int k = 0; k < 4; ++k) {
      std::vector<double> lps(1 + (i + k) % 6);
      for (auto& x : lps) x = lp(rng);
      responses.push_back({{"text", "r" + std::to_string(k)},
                           {"reward", reward(rng)},
                           {"token_logprobs", lps}});
    }
    src << nlohmann::json{{"prompt", "p" + std::to_string(i)}, {"responses", responses}}.dump()
        << "\n";
  }
  std::istringstream in(src.str());
  std::ostringstream pairs;
  CHECK(pairs_jsonl(in, pairs) == 50);
  std::istringstream a(pairs.str()), b(pairs.str());
  const auto s1 = simpo_eval_jsonl(a, SimpoParams{}, 1);
  const auto s2 = simpo_eval_jsonl(b, SimpoParams{}, 3);
  CHECK(s1.count == 50);
  CHECK(s1.mean_loss == s2.mean_loss);
  CHECK(s1.min_loss <= s1.mean_loss);
  CHECK(s1.mean_loss <= s1.max_loss);
}

TEST_CASE("plan and schedule compose into one training config") {
  const auto sources =
      sources_from_json(testing::read_text(testing::source_dir() / "data" / "cpt_sources.json"));
  const auto plan = plan_mix(
      sources, {{Category::kSea, 0.55}, {Category::kEn, 0.25}, {Category::kCode, 0.20}},
      parse_token_count("200e9"));
  WsdSchedule s;
  s.total = static_cast<double>(plan.total_budget);
  const auto doc = nlohmann::json::parse(emit_train_config(plan, s, OptimizerConfig{}));
  std::uint64_t sum = 0;
  for (const auto& a : doc["mix"]["allocations"]) sum += a["tokens"].get<std::uint64_t>();
  CHECK(sum == plan.total_budget);
  CHECK(doc["schedule"]["table"][50]["lr"].get<double>() == 1e-5);
}
