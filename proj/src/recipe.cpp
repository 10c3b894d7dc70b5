#include "postkit/recipe.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include "json.hpp"
#include "postkit/error.hpp"

namespace postkit {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

void reject_unknown(const json& obj, std::initializer_list<std::string_view> allowed,
                    const std::string& where) {
  for (const auto& [key, unused] : obj.items()) {
    bool known = false;
    for (auto a : allowed) known = known || key == a;
    if (!known) throw Error(Errc::kUnknownField, where + ": unknown field '" + key + "'");
  }
}

std::string get_string(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) throw Error(Errc::kSyntaxError, where + ": missing '" + key + "'");
  if (!obj[key].is_string()) {
    throw Error(Errc::kSyntaxError, where + ": '" + key + "' must be a string");
  }
  return obj[key].get<std::string>();
}

double get_number(const json& v, const std::string& where) {
  if (!v.is_number()) throw Error(Errc::kSyntaxError, where + " must be a number");
  return v.get<double>();
}

NodeKind parse_kind(const std::string& s, const std::string& where) {
  if (s == "EXTERNAL") return NodeKind::kExternal;
  if (s == "MERGE") return NodeKind::kMerge;
  if (s == "ALIGN_ARTIFACT") return NodeKind::kAlignArtifact;
  throw Error(Errc::kSyntaxError,
              where + ": kind '" + s + "' is not EXTERNAL, MERGE or ALIGN_ARTIFACT");
}

void parse_params(const json& p, MergeParams& params, const std::string& where) {
  if (!p.is_object()) throw Error(Errc::kSyntaxError, where + ": params must be an object");
  reject_unknown(p,
                 {"density", "lambda", "epsilon", "tall_threshold", "consensus_k", "seed",
                  "normalize"},
                 where + ".params");
  if (p.contains("density")) params.density = get_number(p["density"], where + ".density");
  if (p.contains("lambda")) params.lambda = get_number(p["lambda"], where + ".lambda");
  if (p.contains("epsilon")) params.epsilon = get_number(p["epsilon"], where + ".epsilon");
  if (p.contains("tall_threshold")) {
    params.tall_threshold = get_number(p["tall_threshold"], where + ".tall_threshold");
  }
  if (p.contains("consensus_k")) {
    if (!p["consensus_k"].is_number_integer()) {
      throw Error(Errc::kSyntaxError, where + ".consensus_k must be an integer");
    }
    params.consensus_k = p["consensus_k"].get<int>();
  }
  if (p.contains("seed")) {
    if (!p["seed"].is_number_unsigned()) {
      throw Error(Errc::kSyntaxError, where + ".seed must be a non-negative integer");
    }
    params.seed = p["seed"].get<std::uint64_t>();
  }
  if (p.contains("normalize")) {
    if (!p["normalize"].is_boolean()) {
      throw Error(Errc::kSyntaxError, where + ".normalize must be a boolean");
    }
    params.normalize = p["normalize"].get<bool>();
  }
}

RecipeNode parse_node(const json& n, std::size_t index) {
  const std::string where = "nodes[" + std::to_string(index) + "]";
  if (!n.is_object()) throw Error(Errc::kSyntaxError, where + " must be an object");
  reject_unknown(n, {"id", "kind", "path", "aligned_from", "method", "base", "inputs", "params"},
                 where);
  RecipeNode node;
  node.id = get_string(n, "id", where);
  if (node.id.empty()) throw Error(Errc::kSyntaxError, where + ": empty id");
  node.kind = parse_kind(get_string(n, "kind", where), where);
  const std::string at = where + " ('" + node.id + "')";

  if (node.kind != NodeKind::kMerge) {
    for (const char* f : {"method", "base", "inputs", "params"}) {
      if (n.contains(f)) {
        throw Error(Errc::kSyntaxError,
                    at + ": field '" + f + "' is only valid on MERGE nodes");
      }
    }
    node.path = get_string(n, "path", at);
    if (n.contains("aligned_from")) {
      if (node.kind != NodeKind::kAlignArtifact) {
        throw Error(Errc::kSyntaxError, at + ": 'aligned_from' is only valid on ALIGN_ARTIFACT");
      }
      node.aligned_from = get_string(n, "aligned_from", at);
    }
    return node;
  }

  for (const char* f : {"path", "aligned_from"}) {
    if (n.contains(f)) {
      throw Error(Errc::kSyntaxError, at + ": field '" + f + "' is not valid on MERGE nodes");
    }
  }
  const std::string method = get_string(n, "method", at);
  node.method = parse_method(method);
  if (!node.method) {
    throw Error(Errc::kUnknownMethod,
                at + ": unknown method '" + method + "' (expected one of " + method_list() + ")");
  }
  if (n.contains("base")) node.base = get_string(n, "base", at);
  if (!n.contains("inputs") || !n["inputs"].is_array()) {
    throw Error(Errc::kSyntaxError, at + ": 'inputs' must be an array");
  }
  if (n.contains("params")) parse_params(n["params"], node.params, at);
  std::size_t i = 0;
  for (const auto& in : n["inputs"]) {
    const std::string iw = at + ".inputs[" + std::to_string(i++) + "]";
    if (!in.is_object()) throw Error(Errc::kSyntaxError, iw + " must be an object");
    reject_unknown(in, {"ref", "weight", "density"}, iw);
    RecipeInput input;
    input.ref = get_string(in, "ref", iw);
    if (in.contains("weight")) input.weight = get_number(in["weight"], iw + ".weight");
    if (in.contains("density")) input.density = get_number(in["density"], iw + ".density");
    node.inputs.push_back(std::move(input));
  }
  return node;
}

// Every reference a node makes, in declaration order.
std::vector<std::string> refs_of(const RecipeNode& node) {
  std::vector<std::string> refs;
  if (!node.base.empty()) refs.push_back(node.base);
  for (const auto& in : node.inputs) refs.push_back(in.ref);
  if (!node.aligned_from.empty()) refs.push_back(node.aligned_from);
  return refs;
}

struct Sorted {
  std::vector<std::string> order;
  std::vector<std::string> blocked;  // ids that never became ready (on or behind a cycle)
};

// Kahn's algorithm over node-to-node edges, taking ready nodes in
// lexicographic id order.
Sorted kahn(const MergeRecipe& recipe) {
  std::map<std::string, std::size_t> indegree;
  std::map<std::string, std::vector<std::string>> users;
  for (const auto& node : recipe.nodes) indegree[node.id];
  for (const auto& node : recipe.nodes) {
    std::set<std::string> deps;
    for (const auto& ref : refs_of(node)) {
      if (recipe.find(ref)) deps.insert(ref);
    }
    for (const auto& d : deps) {
      ++indegree[node.id];
      users[d].push_back(node.id);
    }
  }
  std::set<std::string> ready;
  for (const auto& [id, deg] : indegree) {
    if (deg == 0) ready.insert(id);
  }
  Sorted out;
  while (!ready.empty()) {
    std::string id = *ready.begin();
    ready.erase(ready.begin());
    for (const auto& u : users[id]) {
      if (--indegree[u] == 0) ready.insert(u);
    }
    out.order.push_back(std::move(id));
  }
  for (const auto& [id, deg] : indegree) {
    if (deg > 0) out.blocked.push_back(id);
  }
  return out;
}

fs::path resolve(const MergeRecipe& recipe, const std::string& path) {
  fs::path p(path);
  return p.is_absolute() || recipe.base_dir.empty() ? p : recipe.base_dir / p;
}

MergeParams effective_params(const RecipeNode& node) {
  MergeParams params = node.params;
  params.weights.clear();
  params.densities.clear();
  for (const auto& in : node.inputs) {
    params.weights.push_back(in.weight);
    params.densities.push_back(in.density.value_or(node.params.density));
  }
  return params;
}

json params_to_json(const MergeParams& p) {
  return json{{"weights", p.weights},
              {"densities", p.densities},
              {"density", p.density},
              {"lambda", p.lambda},
              {"epsilon", p.epsilon},
              {"tall_threshold", p.tall_threshold},
              {"consensus_k", p.consensus_k},
              {"seed", p.seed},
              {"normalize", p.normalize}};
}

void check_ranges(const RecipeNode& node, std::vector<ValidationIssue>& issues) {
  auto issue = [&](std::string kind, std::string msg) {
    issues.push_back({std::move(kind), node.id, std::move(msg)});
  };
  const MergeMethod method = *node.method;
  if (method_needs_base(method) && node.base.empty()) {
    issue("MissingBase", std::string(method_name(method)) + " requires a base");
  }
  if (node.inputs.size() < method_min_models(method)) {
    issue("ArityError", std::string(method_name(method)) + " needs at least " +
                            std::to_string(method_min_models(method)) + " inputs");
  }
  const MergeParams& p = node.params;
  auto density_ok = [](double d) { return d > 0.0 && d <= 1.0; };
  if (!density_ok(p.density)) issue("ParameterOutOfRange", "density must lie in (0, 1]");
  double weight_sum = 0.0;
  for (const auto& in : node.inputs) {
    if (!std::isfinite(in.weight) || in.weight < 0.0) {
      issue("ParameterOutOfRange", "weight of '" + in.ref + "' must be >= 0");
    } else {
      weight_sum += in.weight;
    }
    if (in.density && !density_ok(*in.density)) {
      issue("ParameterOutOfRange", "density of '" + in.ref + "' must lie in (0, 1]");
    }
  }
  if (p.normalize && !node.inputs.empty() && weight_sum <= 0.0 &&
      method != MergeMethod::kTies && method != MergeMethod::kDareTies) {
    issue("ParameterOutOfRange", "input weights sum to zero with normalize on");
  }
  if (!std::isfinite(p.lambda) || p.lambda < 0.0) issue("ParameterOutOfRange", "lambda must be >= 0");
  if (!std::isfinite(p.epsilon) || p.epsilon < 0.0) {
    issue("ParameterOutOfRange", "epsilon must be >= 0");
  }
  if (!std::isfinite(p.tall_threshold) || p.tall_threshold <= 0.0) {
    issue("ParameterOutOfRange", "tall_threshold must be > 0");
  }
  if (method == MergeMethod::kConsensusTa &&
      (p.consensus_k < 1 || static_cast<std::size_t>(p.consensus_k) > node.inputs.size())) {
    issue("ParameterOutOfRange", "consensus_k must lie in [1, #inputs]");
  }
  if (method == MergeMethod::kDellaLinear) {
    for (const auto& in : node.inputs) {
      const double d = in.density.value_or(p.density);
      if (!density_ok(d)) continue;
      try {
        // Extreme ranks of any tensor with at least two elements.
        kernels::magprune_drop_probability(d, p.epsilon, 0, 2);
        kernels::magprune_drop_probability(d, p.epsilon, 1, 2);
      } catch (const Error&) {
        issue("ParameterOutOfRange",
              "epsilon too large for density of '" + in.ref + "': drop probability leaves [0, 1)");
      }
    }
  }
}

std::string sha256_hex(std::span<const std::byte> bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(Errc::kIoFailure, "SHA-256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xf]);
  }
  return out;
}

}  // namespace

std::string_view node_kind_name(NodeKind kind) noexcept {
  switch (kind) {
    case NodeKind::kExternal: return "EXTERNAL";
    case NodeKind::kMerge: return "MERGE";
    case NodeKind::kAlignArtifact: return "ALIGN_ARTIFACT";
  }
  return "?";
}

const RecipeNode* MergeRecipe::find(std::string_view id) const {
  for (const auto& n : nodes) {
    if (n.id == id) return &n;
  }
  return nullptr;
}

MergeRecipe parse_recipe(std::string_view text, std::filesystem::path base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(Errc::kSyntaxError, std::string("recipe is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw Error(Errc::kSyntaxError, "recipe must be a JSON object");
  reject_unknown(doc, {"version", "nodes", "outputs"}, "recipe");
  if (!doc.contains("version") || !doc["version"].is_number_integer() ||
      doc["version"].get<int>() != 1) {
    throw Error(Errc::kSyntaxError, "recipe 'version' must be 1");
  }
  if (!doc.contains("nodes") || !doc["nodes"].is_array()) {
    throw Error(Errc::kSyntaxError, "recipe 'nodes' must be an array");
  }
  MergeRecipe recipe;
  recipe.base_dir = std::move(base_dir);
  std::set<std::string> ids;
  std::size_t i = 0;
  for (const auto& n : doc["nodes"]) {
    RecipeNode node = parse_node(n, i++);
    if (!ids.insert(node.id).second) {
      throw Error(Errc::kDuplicateNodeId, "node id '" + node.id + "' declared twice");
    }
    recipe.nodes.push_back(std::move(node));
  }
  if (doc.contains("outputs")) {
    if (!doc["outputs"].is_array()) throw Error(Errc::kSyntaxError, "'outputs' must be an array");
    for (const auto& o : doc["outputs"]) {
      if (!o.is_string()) throw Error(Errc::kSyntaxError, "'outputs' entries must be strings");
      recipe.outputs.push_back(o.get<std::string>());
    }
  }
  return recipe;
}

MergeRecipe load_recipe(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kIoFailure, "cannot open recipe '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_recipe(ss.str(), path.parent_path());
}

ValidationReport validate(const MergeRecipe& recipe) {
  ValidationReport report;
  auto& issues = report.issues;

  for (const auto& node : recipe.nodes) {
    for (const auto& ref : refs_of(node)) {
      if (recipe.find(ref)) continue;
      if (ref == node.aligned_from) {
        issues.push_back({"DanglingRef", node.id, "aligned_from '" + ref + "' is not a node"});
      } else if (!fs::is_regular_file(resolve(recipe, ref))) {
        issues.push_back({"DanglingRef", node.id,
                          "'" + ref + "' is neither a node nor an existing checkpoint file"});
      }
    }
    if (node.kind == NodeKind::kMerge) check_ranges(node, issues);
  }
  for (const auto& out : recipe.outputs) {
    if (!recipe.find(out)) {
      issues.push_back({"DanglingRef", out, "output '" + out + "' is not a declared node"});
    }
  }

  const auto sorted = kahn(recipe);
  if (!sorted.blocked.empty()) {
    std::string members;
    for (const auto& id : sorted.blocked) members += (members.empty() ? "" : ", ") + id;
    issues.push_back({"CycleDetected", members, "reference cycle through {" + members + "}"});
  }
  return report;
}

std::string report_to_json(const ValidationReport& report) {
  json issues = json::array();
  for (const auto& i : report.issues) {
    issues.push_back({{"kind", i.kind}, {"node", i.node}, {"message", i.message}});
  }
  return json{{"ok", report.ok()}, {"issues", issues}}.dump();
}

std::vector<std::string> topological_order(const MergeRecipe& recipe) {
  auto sorted = kahn(recipe);
  if (!sorted.blocked.empty()) throw Error(Errc::kInvalidRecipe, "recipe graph has a cycle");
  return std::move(sorted.order);
}

std::string content_digest(const TensorMap& map) {
  const auto bytes = serialize_checkpoint(map, SaveOptions{.allow_nonfinite = true});
  return sha256_hex(bytes);
}

std::string manifest_to_json(const LineageManifest& m) {
  json sources = json::array();
  for (const auto& s : m.sources) {
    sources.push_back({{"id", s.id}, {"kind", s.kind}, {"path", s.path}, {"digest", s.digest}});
  }
  json merges = json::array();
  for (const auto& r : m.merges) {
    json inputs = json::array();
    for (std::size_t i = 0; i < r.inputs.size(); ++i) {
      inputs.push_back({{"ref", r.inputs[i].ref},
                        {"digest", r.inputs[i].digest},
                        {"weight", r.params.weights.at(i)},
                        {"density", r.params.densities.at(i)}});
    }
    json base = r.base ? json{{"ref", r.base->ref}, {"digest", r.base->digest}} : json(nullptr);
    merges.push_back({{"id", r.id},
                      {"method", method_name(r.method)},
                      {"base", base},
                      {"inputs", inputs},
                      {"params", params_to_json(r.params)},
                      {"output_digest", r.output_digest},
                      {"duration_ms", r.duration_ms}});
  }
  json outputs = json::array();
  for (const auto& o : m.outputs) {
    outputs.push_back({{"id", o.id}, {"path", o.path}, {"digest", o.digest}});
  }
  return json{{"version", 1},
              {"order", m.order},
              {"sources", sources},
              {"merges", merges},
              {"outputs", outputs}}
      .dump(2);
}

LineageManifest execute(const MergeRecipe& recipe, const std::filesystem::path& workdir,
                        const ExecuteOptions& opts) {
  const auto report = validate(recipe);
  if (!report.ok()) {
    const auto& first = report.issues.front();
    throw Error(Errc::kInvalidRecipe,
                first.kind + " at '" + first.node + "': " + first.message +
                    (report.issues.size() > 1
                         ? " (+" + std::to_string(report.issues.size() - 1) + " more)"
                         : ""));
  }
  for (const auto& node : recipe.nodes) {
    if (node.kind != NodeKind::kMerge && !fs::is_regular_file(resolve(recipe, node.path))) {
      throw Error(Errc::kMissingInput,
                  "node '" + node.id + "': checkpoint '" + node.path + "' does not exist");
    }
  }

  std::error_code ec;
  fs::create_directories(workdir, ec);
  if (ec) throw Error(Errc::kIoFailure, "cannot create workdir '" + workdir.string() + "'");

  LineageManifest manifest;
  manifest.order = topological_order(recipe);

  struct Loaded {
    std::shared_ptr<const TensorMap> map;
    std::string digest;
  };
  std::map<std::string, Loaded> values;  // by node id, or by path for direct file refs

  auto load_source = [&](const std::string& key, const std::string& kind,
                         const std::string& path) -> const Loaded& {
    if (auto it = values.find(key); it != values.end()) return it->second;
    const fs::path full = resolve(recipe, path);
    if (!fs::is_regular_file(full)) {
      throw Error(Errc::kMissingInput, "checkpoint '" + path + "' does not exist");
    }
    auto map = std::make_shared<const TensorMap>(load_checkpoint(full));
    Loaded loaded{map, content_digest(*map)};
    manifest.sources.push_back({key, kind, path, loaded.digest});
    return values.emplace(key, std::move(loaded)).first->second;
  };
  auto lookup = [&](const std::string& ref) -> const Loaded& {
    if (recipe.find(ref)) return values.at(ref);
    return load_source(ref, "FILE", ref);
  };

  for (const auto& id : manifest.order) {
    const RecipeNode& node = *recipe.find(id);
    if (node.kind != NodeKind::kMerge) {
      load_source(node.id, std::string(node_kind_name(node.kind)), node.path);
      continue;
    }
    const auto started = std::chrono::steady_clock::now();
    MergeRecord record;
    record.id = node.id;
    record.method = *node.method;
    record.params = effective_params(node);
    record.params.jobs = opts.jobs;

    const TensorMap* base = nullptr;
    if (!node.base.empty()) {
      const Loaded& b = lookup(node.base);
      base = b.map.get();
      record.base = DigestRef{node.base, b.digest};
    }
    std::vector<const TensorMap*> models;
    for (const auto& in : node.inputs) {
      const Loaded& m = lookup(in.ref);
      models.push_back(m.map.get());
      record.inputs.push_back({in.ref, m.digest});
    }
    auto merged = std::make_shared<const TensorMap>(merge(record.method, base, models,
                                                          record.params));
    record.output_digest = content_digest(*merged);
    record.duration_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started)
            .count();
    values.emplace(node.id, Loaded{merged, record.output_digest});
    manifest.merges.push_back(std::move(record));
  }

  for (const auto& out : recipe.outputs) {
    const Loaded& v = values.at(out);
    const fs::path path = workdir / (out + ".stc");
    save_checkpoint(*v.map, path);
    manifest.outputs.push_back({out, path.string(), v.digest});
  }

  std::ofstream mf(workdir / "manifest.json", std::ios::trunc);
  mf << manifest_to_json(manifest) << '\n';
  if (!mf) throw Error(Errc::kIoFailure, "cannot write manifest.json");
  return manifest;
}

}  // namespace postkit
