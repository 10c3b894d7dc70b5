#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "postkit/merge.hpp"
#include "postkit/tensor_store.hpp"

namespace postkit {

enum class NodeKind { kExternal, kMerge, kAlignArtifact };

std::string_view node_kind_name(NodeKind kind) noexcept;

struct RecipeInput {
  std::string ref;  // node id, or a checkpoint path relative to the recipe
  double weight = 1.0;
  std::optional<double> density;  // falls back to the node's params.density
};

struct RecipeNode {
  std::string id;
  NodeKind kind = NodeKind::kExternal;
  // EXTERNAL / ALIGN_ARTIFACT
  std::string path;
  // ALIGN_ARTIFACT only: node the alignment run started from. Adds an
  // ordering edge; the artifact itself is still read from `path`.
  std::string aligned_from;
  // MERGE only
  std::optional<MergeMethod> method;
  std::string base;
  std::vector<RecipeInput> inputs;
  MergeParams params;
};

struct MergeRecipe {
  int version = 1;
  std::vector<RecipeNode> nodes;
  std::vector<std::string> outputs;
  // Relative checkpoint paths resolve against this directory.
  std::filesystem::path base_dir;

  const RecipeNode* find(std::string_view id) const;
};

MergeRecipe parse_recipe(std::string_view text, std::filesystem::path base_dir = {});
MergeRecipe load_recipe(const std::filesystem::path& path);

struct ValidationIssue {
  std::string kind;  // CycleDetected, DanglingRef, ParameterOutOfRange, MissingBase, ArityError
  std::string node;
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;
  bool ok() const noexcept { return issues.empty(); }
};

ValidationReport validate(const MergeRecipe& recipe);
std::string report_to_json(const ValidationReport& report);

// Ready nodes are taken in lexicographic id order.
std::vector<std::string> topological_order(const MergeRecipe& recipe);

struct DigestRef {
  std::string ref;
  std::string digest;
};

struct SourceRecord {
  std::string id;
  std::string kind;
  std::string path;
  std::string digest;
};

struct MergeRecord {
  std::string id;
  MergeMethod method = MergeMethod::kLinear;
  std::optional<DigestRef> base;
  std::vector<DigestRef> inputs;
  MergeParams params;  // effective, with per-input weights/densities filled in
  std::string output_digest;
  double duration_ms = 0.0;
};

struct OutputRecord {
  std::string id;
  std::string path;
  std::string digest;
};

struct LineageManifest {
  std::vector<std::string> order;
  std::vector<SourceRecord> sources;
  std::vector<MergeRecord> merges;
  std::vector<OutputRecord> outputs;
};

std::string manifest_to_json(const LineageManifest& manifest);

struct ExecuteOptions {
  unsigned jobs = 1;
};

// Validates, runs every node in topological order, writes each declared
// output to `<workdir>/<id>.stc` and the manifest to `<workdir>/manifest.json`.
LineageManifest execute(const MergeRecipe& recipe, const std::filesystem::path& workdir,
                        const ExecuteOptions& opts = {});

// Lowercase hex SHA-256 of the canonical serialized checkpoint.
std::string content_digest(const TensorMap& map);

}  // namespace postkit
