#include <algorithm>

#include "doctest.h"
#include "postkit/recipe.hpp"
#include "test_support.hpp"
#include "workflow_fixture.hpp"
#include "json.hpp"

using namespace postkit;
using testing::errc_of;

namespace {

const char* kChain = R"({
  "version": 1,
  "nodes": [
    {"id": "base", "kind": "EXTERNAL", "path": "base.stc"},
    {"id": "ft_a", "kind": "EXTERNAL", "path": "a.stc"},
    {"id": "ft_b", "kind": "EXTERNAL", "path": "b.stc"},
    {"id": "m", "kind": "MERGE", "method": "ties", "base": "base",
     "inputs": [{"ref": "ft_a", "weight": 2}, {"ref": "ft_b"}],
     "params": {"density": 0.5}}
  ],
  "outputs": ["m"]
})";

std::string with_nodes(const std::string& nodes, const std::string& outputs = "[]") {
  return R"({"version":1,"nodes":[)" + nodes + R"(],"outputs":)" + outputs + "}";
}

std::vector<std::string> issue_kinds(const ValidationReport& r) {
  std::vector<std::string> kinds;
  for (const auto& i : r.issues) kinds.push_back(i.kind);
  return kinds;
}

bool has_kind(const ValidationReport& r, const std::string& kind) {
  const auto k = issue_kinds(r);
  return std::find(k.begin(), k.end(), kind) != k.end();
}

void write_toys(const std::filesystem::path& dir, std::initializer_list<const char*> names) {
  std::mt19937_64 rng(3);
  const auto shape = testing::random_map(rng, 30, true, false);
  for (const char* n : names) save_checkpoint(testing::random_like(rng, shape), dir / n);
}

}  // namespace

TEST_CASE("parse a small recipe") {
  const auto r = parse_recipe(kChain, "/tmp/x");
  REQUIRE(r.nodes.size() == 4);
  const RecipeNode* m = r.find("m");
  REQUIRE(m);
  CHECK(m->kind == NodeKind::kMerge);
  CHECK(m->method == MergeMethod::kTies);
  CHECK(m->base == "base");
  CHECK(m->inputs[0].weight == 2.0);
  CHECK(m->inputs[1].weight == 1.0);
  CHECK_FALSE(m->inputs[1].density.has_value());
  CHECK(m->params.density == 0.5);
  CHECK(r.outputs == std::vector<std::string>{"m"});
  CHECK(r.base_dir == "/tmp/x");
  CHECK(r.find("nope") == nullptr);
}

TEST_CASE("recipe syntax errors") {
  CHECK(errc_of([] { parse_recipe("{not json"); }) == Errc::kSyntaxError);
  CHECK(errc_of([] { parse_recipe("[]"); }) == Errc::kSyntaxError);
  CHECK(errc_of([] { parse_recipe(R"({"version":2,"nodes":[]})"); }) == Errc::kSyntaxError);
  CHECK(errc_of([] {
          parse_recipe(with_nodes(R"({"id":"a","kind":"EXTERNAL","path":"a","bogus":1})"));
        }) == Errc::kUnknownField);
  CHECK(errc_of([] {
          parse_recipe(with_nodes(R"({"id":"a","kind":"EXTERNAL","path":"a"},)"
                                  R"({"id":"a","kind":"EXTERNAL","path":"b"})"));
        }) == Errc::kDuplicateNodeId);
  CHECK(errc_of([] {
          parse_recipe(with_nodes(R"({"id":"m","kind":"MERGE","method":"slerp","inputs":[]})"));
        }) == Errc::kUnknownMethod);
  CHECK(errc_of([] {
          parse_recipe(with_nodes(R"({"id":"a","kind":"SOURCE","path":"a"})"));
        }) == Errc::kSyntaxError);
  CHECK(errc_of([] {
          parse_recipe(
              with_nodes(R"({"id":"m","kind":"MERGE","method":"linear","path":"x","inputs":[]})"));
        }) == Errc::kSyntaxError);
  CHECK(errc_of([] {
          parse_recipe(with_nodes(
              R"({"id":"m","kind":"MERGE","method":"ties","inputs":[],"params":{"sed":1}})"));
        }) == Errc::kUnknownField);
}

TEST_CASE("validation finds each kind of problem") {
  testing::TempDir dir("recipe");
  write_toys(dir.path(), {"a.stc"});
  SUBCASE("clean") {
    const auto r = parse_recipe(with_nodes(R"({"id":"a","kind":"EXTERNAL","path":"a.stc"},)"
                                           R"({"id":"m","kind":"MERGE","method":"linear",)"
                                           R"("inputs":[{"ref":"a"},{"ref":"a.stc"}]})",
                                           R"(["m"])"),
                                dir.path());
    CHECK(validate(r).ok());
  }
  SUBCASE("dangling reference") {
    const auto r = parse_recipe(
        with_nodes(R"({"id":"m","kind":"MERGE","method":"linear","inputs":[{"ref":"ghost"}]})"),
        dir.path());
    CHECK(has_kind(validate(r), "DanglingRef"));
  }
  SUBCASE("dangling output") {
    const auto r = parse_recipe(with_nodes(R"({"id":"a","kind":"EXTERNAL","path":"a.stc"})",
                                           R"(["zzz"])"),
                                dir.path());
    CHECK(issue_kinds(validate(r)) == std::vector<std::string>{"DanglingRef"});
  }
  SUBCASE("cycle") {
    const auto r = parse_recipe(
        with_nodes(R"({"id":"x","kind":"MERGE","method":"linear","inputs":[{"ref":"y"}]},)"
                   R"({"id":"y","kind":"MERGE","method":"linear","inputs":[{"ref":"x"}]})"),
        dir.path());
    const auto report = validate(r);
    CHECK(issue_kinds(report) == std::vector<std::string>{"CycleDetected"});
    CHECK(report.issues[0].node == "x, y");
    CHECK(errc_of([&] { topological_order(r); }) == Errc::kInvalidRecipe);
  }
  SUBCASE("missing base and arity") {
    const auto r = parse_recipe(
        with_nodes(R"({"id":"a","kind":"EXTERNAL","path":"a.stc"},)"
                   R"({"id":"m","kind":"MERGE","method":"ties","inputs":[{"ref":"a"}]})"),
        dir.path());
    CHECK(issue_kinds(validate(r)) == std::vector<std::string>{"MissingBase", "ArityError"});
  }
  SUBCASE("parameters out of range") {
    const std::string pre = R"({"id":"a","kind":"EXTERNAL","path":"a.stc"},)";
    for (const std::string node :
         {R"({"id":"m","kind":"MERGE","method":"ties","base":"a","inputs":[{"ref":"a"},{"ref":"a","density":0}]})",
          R"({"id":"m","kind":"MERGE","method":"ties","base":"a","inputs":[{"ref":"a"},{"ref":"a","weight":-1}]})",
          R"({"id":"m","kind":"MERGE","method":"ties","base":"a","inputs":[{"ref":"a"},{"ref":"a"}],"params":{"lambda":-1}})",
          R"({"id":"m","kind":"MERGE","method":"consensus_ta","base":"a","inputs":[{"ref":"a"},{"ref":"a"}],"params":{"consensus_k":3}})",
          R"({"id":"m","kind":"MERGE","method":"della_linear","base":"a","inputs":[{"ref":"a"}],"params":{"density":0.5,"epsilon":1.5}})",
          R"({"id":"m","kind":"MERGE","method":"linear","inputs":[{"ref":"a","weight":0}]})"}) {
      INFO(node);
      CHECK(issue_kinds(validate(parse_recipe(with_nodes(pre + node), dir.path()))) ==
            std::vector<std::string>{"ParameterOutOfRange"});
    }
  }
}

TEST_CASE("validation report serializes to JSON") {
  ValidationReport r;
  r.issues.push_back({"DanglingRef", "m", "missing"});
  const auto doc = nlohmann::json::parse(report_to_json(r));
  CHECK(doc["ok"] == false);
  CHECK(doc["issues"][0]["kind"] == "DanglingRef");
  CHECK(nlohmann::json::parse(report_to_json({}))["ok"] == true);
}

TEST_CASE("topological order takes ready nodes lexicographically") {
  const auto r = parse_recipe(
      with_nodes(R"({"id":"z","kind":"EXTERNAL","path":"z"},)"
                 R"({"id":"b","kind":"EXTERNAL","path":"b"},)"
                 R"({"id":"m2","kind":"MERGE","method":"linear","inputs":[{"ref":"m1"},{"ref":"b"}]},)"
                 R"({"id":"m1","kind":"MERGE","method":"linear","inputs":[{"ref":"z"}]},)"
                 R"({"id":"al","kind":"ALIGN_ARTIFACT","path":"al","aligned_from":"m2"})"));
  CHECK(topological_order(r) == std::vector<std::string>{"b", "z", "m1", "m2", "al"});
}

TEST_CASE("execute writes outputs and a lineage manifest") {
  testing::TempDir dir("recipe");
  write_toys(dir.path(), {"base.stc", "a.stc", "b.stc"});
  testing::write_text(dir / "r.json", kChain);
  const auto recipe = load_recipe(dir / "r.json");
  const auto manifest = execute(recipe, dir / "out");

  CHECK(manifest.order == std::vector<std::string>{"base", "ft_a", "ft_b", "m"});
  REQUIRE(manifest.sources.size() == 3);
  REQUIRE(manifest.merges.size() == 1);
  const MergeRecord& rec = manifest.merges[0];
  CHECK(rec.params.weights == std::vector<double>{2.0, 1.0});
  CHECK(rec.params.densities == std::vector<double>{0.5, 0.5});
  REQUIRE(rec.base.has_value());
  CHECK(rec.base->digest == manifest.sources[0].digest);

  const auto base = load_checkpoint(dir / "base.stc");
  const auto a = load_checkpoint(dir / "a.stc");
  const auto b = load_checkpoint(dir / "b.stc");
  MergeParams p;
  p.weights = {2.0, 1.0};
  p.densities = {0.5, 0.5};
  p.density = 0.5;
  const std::vector<const TensorMap*> models{&a, &b};
  const auto expect = merge_ties(base, models, p);
  const auto written = load_checkpoint(dir / "out" / "m.stc");
  CHECK(written == expect);
  CHECK(rec.output_digest == content_digest(expect));
  CHECK(manifest.outputs[0].digest == rec.output_digest);

  const auto doc = nlohmann::json::parse(testing::read_text(dir / "out" / "manifest.json"));
  CHECK(doc["merges"][0]["inputs"][0]["weight"] == 2.0);
  CHECK(doc["merges"][0]["method"] == "ties");
  CHECK(doc["outputs"][0]["id"] == "m");
  CHECK(content_digest(expect).size() == 64);
}

TEST_CASE("execute refuses invalid recipes and missing inputs") {
  testing::TempDir dir("recipe");
  testing::write_text(dir / "r.json", kChain);
  CHECK(errc_of([&] { execute(load_recipe(dir / "r.json"), dir / "out"); }) ==
        Errc::kMissingInput);
  const auto cyclic = parse_recipe(
      with_nodes(R"({"id":"x","kind":"MERGE","method":"linear","inputs":[{"ref":"x"}]})"));
  CHECK(errc_of([&] { execute(cyclic, dir / "out"); }) == Errc::kInvalidRecipe);
  CHECK(errc_of([&] { load_recipe(dir / "absent.json"); }) == Errc::kIoFailure);
}

TEST_CASE("content digest of the empty map is the SHA-256 of its bytes") {
  CHECK(content_digest(TensorMap{}) ==
        "411a485216e432ece6b9af94fa32154cf79a2a56d4f81266baa50063f45092bd");
}

TEST_CASE("shipped workflows validate and run in stage order, reproducibly") {
  struct Case {
    const char* file;
    std::vector<std::string> merges;
  };
  for (const Case& c : {Case{"llama_workflow.json", {"merge1", "merge2", "final"}},
                        Case{"gemma_workflow.json", {"merge1", "final"}}}) {
    INFO(c.file);
    testing::TempDir dir("wf");
    const auto path = testing::stage_workflow(c.file, dir.path());
    const auto recipe = load_recipe(path);
    CHECK(validate(recipe).ok());
    const auto first = execute(recipe, dir / "run1");
    const auto second = execute(recipe, dir / "run2", ExecuteOptions{.jobs = 3});
    std::vector<std::string> ran;
    for (const auto& m : first.merges) ran.push_back(m.id);
    CHECK(ran == c.merges);
    const auto pos = [&](const std::string& id) {
      return std::find(first.order.begin(), first.order.end(), id) - first.order.begin();
    };
    CHECK(pos("aligned_simpo") < pos("final"));
    CHECK(pos("merge1") < pos("aligned_simpo"));
    REQUIRE(first.merges.size() == second.merges.size());
    for (std::size_t i = 0; i < first.merges.size(); ++i) {
      CHECK(first.merges[i].output_digest == second.merges[i].output_digest);
    }
    CHECK(testing::read_bytes(dir / "run1" / "final.stc") ==
          testing::read_bytes(dir / "run2" / "final.stc"));
  }
}
