#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace postkit {

enum class DType : std::uint8_t { kF32, kF16, kBF16 };

std::size_t dtype_width(DType dtype) noexcept;
std::string_view dtype_name(DType dtype) noexcept;
// Throws Error(kMalformedHeader) for anything outside {F32, F16, BF16}.
DType parse_dtype(std::string_view name);

// IEEE half / bfloat16 conversions, round-to-nearest-even on the way down.
std::uint16_t f32_to_f16(float value) noexcept;
float f16_to_f32(std::uint16_t bits) noexcept;
std::uint16_t f32_to_bf16(float value) noexcept;
float bf16_to_f32(std::uint16_t bits) noexcept;

// Dense row-major tensor. The byte buffer always holds numel() * width bytes
// in little-endian element order.
class Tensor {
 public:
  Tensor() = default;
  Tensor(DType dtype, std::vector<std::uint64_t> shape,
         std::vector<std::byte> data);

  static Tensor zeros(DType dtype, std::vector<std::uint64_t> shape);
  static Tensor from_f32(DType dtype, std::vector<std::uint64_t> shape,
                         std::span<const float> values);

  DType dtype() const noexcept { return dtype_; }
  const std::vector<std::uint64_t>& shape() const noexcept { return shape_; }
  std::span<const std::byte> bytes() const noexcept { return data_; }
  std::size_t numel() const noexcept;
  std::size_t byte_size() const noexcept { return data_.size(); }

  float get(std::size_t index) const noexcept;
  void set(std::size_t index, float value) noexcept;

  // Widened copy for 32-bit arithmetic.
  std::vector<float> to_f32() const;
  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  DType dtype_ = DType::kF32;
  std::vector<std::uint64_t> shape_;
  std::vector<std::byte> data_;
};

std::size_t shape_numel(std::span<const std::uint64_t> shape) noexcept;

// Named tensors in lexicographic (byte-wise) name order plus optional
// string metadata. This is the in-memory form of a checkpoint.
struct TensorMap {
  std::map<std::string, Tensor> entries;
  std::map<std::string, std::string> metadata;

  friend bool operator==(const TensorMap&, const TensorMap&) = default;
};

struct LoadOptions {
  bool allow_nonfinite = false;
};

struct SaveOptions {
  bool allow_nonfinite = false;
};

// Container layout: u64 little-endian header length N, N bytes of compact
// JSON header, then the payload. Offsets in the header are relative to the
// payload start and must tile it exactly.
std::vector<std::byte> serialize_checkpoint(const TensorMap& map,
                                            const SaveOptions& opts = {});
TensorMap parse_checkpoint(std::span<const std::byte> file,
                           const LoadOptions& opts = {});

TensorMap load_checkpoint(const std::filesystem::path& path,
                          const LoadOptions& opts = {});
void save_checkpoint(const TensorMap& map, const std::filesystem::path& path,
                     const SaveOptions& opts = {});

struct ShapeMismatch {
  std::string name;
  std::vector<std::vector<std::uint64_t>> shapes;  // one per input map
};

struct DTypeMismatch {
  std::string name;
  std::vector<DType> dtypes;
};

struct CompatReport {
  // Names present in some but not all maps.
  std::vector<std::string> name_differences;
  std::vector<ShapeMismatch> shape_mismatches;
  std::vector<DTypeMismatch> dtype_mismatches;
  bool ok = true;
};

// Shape and dtype are only compared for names present in every map.
CompatReport validate_compat(std::span<const TensorMap* const> maps);
CompatReport validate_compat(std::initializer_list<const TensorMap*> maps);

}  // namespace postkit
