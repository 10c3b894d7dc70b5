#include "postkit/tensor_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

#include "json.hpp"
#include "postkit/error.hpp"

namespace postkit {

namespace {

using json = nlohmann::json;

constexpr std::string_view kMetadataKey = "__metadata__";
constexpr std::uint64_t kMaxHeaderBytes = 100ull << 20;

void store_u16(std::byte* dst, std::uint16_t v) {
  dst[0] = static_cast<std::byte>(v & 0xff);
  dst[1] = static_cast<std::byte>(v >> 8);
}

std::uint16_t load_u16(const std::byte* src) {
  return static_cast<std::uint16_t>(std::to_integer<unsigned>(src[0]) |
                                    (std::to_integer<unsigned>(src[1]) << 8));
}

void store_u32(std::byte* dst, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) dst[i] = static_cast<std::byte>((v >> (8 * i)) & 0xff);
}

std::uint32_t load_u32(const std::byte* src) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::to_integer<std::uint32_t>(src[i]) << (8 * i);
  return v;
}

std::uint64_t load_u64(const std::byte* src) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::to_integer<std::uint64_t>(src[i]) << (8 * i);
  return v;
}

// numel * width with overflow detection; returns false on overflow.
bool checked_numel(const std::vector<std::uint64_t>& shape, std::uint64_t width,
                   std::uint64_t& bytes) {
  std::uint64_t n = 1;
  for (auto d : shape) {
    if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / d) return false;
    n *= d;
  }
  if (n != 0 && width > std::numeric_limits<std::uint64_t>::max() / n) return false;
  bytes = n * width;
  return true;
}

std::uint64_t as_unsigned(const json& v, const char* what, const std::string& name) {
  if (!v.is_number_unsigned()) {
    throw Error(Errc::kMalformedHeader,
                "tensor '" + name + "': " + what + " must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

struct Span {
  std::uint64_t begin;
  std::uint64_t end;
  std::string name;
};

}  // namespace

std::size_t dtype_width(DType dtype) noexcept {
  return dtype == DType::kF32 ? 4 : 2;
}

std::string_view dtype_name(DType dtype) noexcept {
  switch (dtype) {
    case DType::kF32: return "F32";
    case DType::kF16: return "F16";
    case DType::kBF16: return "BF16";
  }
  return "?";
}

DType parse_dtype(std::string_view name) {
  if (name == "F32") return DType::kF32;
  if (name == "F16") return DType::kF16;
  if (name == "BF16") return DType::kBF16;
  throw Error(Errc::kMalformedHeader, "unsupported dtype '" + std::string(name) + "'");
}

std::uint16_t f32_to_f16(float value) noexcept {
  constexpr std::uint32_t kF32Inf = 255u << 23;
  constexpr std::uint32_t kF16Max = (127u + 16u) << 23;
  constexpr std::uint32_t kDenormMagic = ((127u - 15u) + (23u - 10u) + 1u) << 23;

  std::uint32_t f = std::bit_cast<std::uint32_t>(value);
  const std::uint32_t sign = f & 0x80000000u;
  f ^= sign;

  std::uint16_t out;
  if (f >= kF16Max) {
    out = f > kF32Inf ? 0x7e00 : 0x7c00;
  } else if (f < (113u << 23)) {
    // Result is subnormal or zero; let the FPU do the rounding.
    const float shifted = std::bit_cast<float>(f) + std::bit_cast<float>(kDenormMagic);
    out = static_cast<std::uint16_t>(std::bit_cast<std::uint32_t>(shifted) - kDenormMagic);
  } else {
    const std::uint32_t mant_odd = (f >> 13) & 1u;
    f += (static_cast<std::uint32_t>(15 - 127) << 23) + 0xfffu;
    f += mant_odd;
    out = static_cast<std::uint16_t>(f >> 13);
  }
  return static_cast<std::uint16_t>(out | (sign >> 16));
}

float f16_to_f32(std::uint16_t bits) noexcept {
  const std::uint32_t sign = static_cast<std::uint32_t>(bits & 0x8000u) << 16;
  const std::uint32_t exp = (bits >> 10) & 0x1fu;
  const std::uint32_t mant = bits & 0x3ffu;
  if (exp == 0) {
    const float mag = std::ldexp(static_cast<float>(mant), -24);
    return std::bit_cast<float>(sign | std::bit_cast<std::uint32_t>(mag));
  }
  if (exp == 31) return std::bit_cast<float>(sign | 0x7f800000u | (mant << 13));
  return std::bit_cast<float>(sign | ((exp + 112u) << 23) | (mant << 13));
}

std::uint16_t f32_to_bf16(float value) noexcept {
  const std::uint32_t x = std::bit_cast<std::uint32_t>(value);
  if ((x & 0x7fffffffu) > 0x7f800000u) {
    return static_cast<std::uint16_t>((x >> 16) | 0x40u);
  }
  const std::uint32_t rounded = x + 0x7fffu + ((x >> 16) & 1u);
  return static_cast<std::uint16_t>(rounded >> 16);
}

float bf16_to_f32(std::uint16_t bits) noexcept {
  return std::bit_cast<float>(static_cast<std::uint32_t>(bits) << 16);
}

std::size_t shape_numel(std::span<const std::uint64_t> shape) noexcept {
  std::size_t n = 1;
  for (auto d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

Tensor::Tensor(DType dtype, std::vector<std::uint64_t> shape, std::vector<std::byte> data)
    : dtype_(dtype), shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_) * dtype_width(dtype_)) {
    throw Error(Errc::kInvalidArgument, "tensor buffer length does not match shape");
  }
}

Tensor Tensor::zeros(DType dtype, std::vector<std::uint64_t> shape) {
  const std::size_t bytes = shape_numel(shape) * dtype_width(dtype);
  return Tensor(dtype, std::move(shape), std::vector<std::byte>(bytes));
}

Tensor Tensor::from_f32(DType dtype, std::vector<std::uint64_t> shape,
                        std::span<const float> values) {
  Tensor t = zeros(dtype, std::move(shape));
  if (values.size() != t.numel()) {
    throw Error(Errc::kInvalidArgument, "value count does not match shape");
  }
  for (std::size_t i = 0; i < values.size(); ++i) t.set(i, values[i]);
  return t;
}

std::size_t Tensor::numel() const noexcept { return data_.size() / dtype_width(dtype_); }

float Tensor::get(std::size_t index) const noexcept {
  switch (dtype_) {
    case DType::kF32: return std::bit_cast<float>(load_u32(data_.data() + 4 * index));
    case DType::kF16: return f16_to_f32(load_u16(data_.data() + 2 * index));
    case DType::kBF16: return bf16_to_f32(load_u16(data_.data() + 2 * index));
  }
  return 0.0f;
}

void Tensor::set(std::size_t index, float value) noexcept {
  switch (dtype_) {
    case DType::kF32:
      store_u32(data_.data() + 4 * index, std::bit_cast<std::uint32_t>(value));
      break;
    case DType::kF16: store_u16(data_.data() + 2 * index, f32_to_f16(value)); break;
    case DType::kBF16: store_u16(data_.data() + 2 * index, f32_to_bf16(value)); break;
  }
}

std::vector<float> Tensor::to_f32() const {
  std::vector<float> out(numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = get(i);
  return out;
}

bool Tensor::all_finite() const noexcept {
  const std::size_t n = numel();
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(get(i))) return false;
  }
  return true;
}

std::vector<std::byte> serialize_checkpoint(const TensorMap& map, const SaveOptions& opts) {
  json header = json::object();
  std::uint64_t cursor = 0;
  for (const auto& [name, tensor] : map.entries) {
    if (name.empty()) throw Error(Errc::kInvalidArgument, "empty tensor name");
    if (name == kMetadataKey) {
      throw Error(Errc::kInvalidArgument, "tensor name collides with metadata key");
    }
    if (!opts.allow_nonfinite && !tensor.all_finite()) {
      throw Error(Errc::kNonFiniteValue, "tensor '" + name + "' holds NaN or Inf");
    }
    const std::uint64_t end = cursor + tensor.byte_size();
    header[name] = {{"dtype", dtype_name(tensor.dtype())},
                    {"shape", tensor.shape()},
                    {"data_offsets", {cursor, end}}};
    cursor = end;
  }
  if (!map.metadata.empty()) header[std::string(kMetadataKey)] = map.metadata;

  std::string text;
  try {
    text = header.dump();
  } catch (const json::exception& e) {
    throw Error(Errc::kInvalidArgument, std::string("header is not valid UTF-8: ") + e.what());
  }

  std::vector<std::byte> out(8 + text.size() + cursor);
  const std::uint64_t n = text.size();
  for (int i = 0; i < 8; ++i) out[i] = static_cast<std::byte>((n >> (8 * i)) & 0xff);
  std::memcpy(out.data() + 8, text.data(), text.size());
  std::byte* payload = out.data() + 8 + text.size();
  for (const auto& [name, tensor] : map.entries) {
    auto bytes = tensor.bytes();
    if (!bytes.empty()) std::memcpy(payload, bytes.data(), bytes.size());
    payload += bytes.size();
  }
  return out;
}

TensorMap parse_checkpoint(std::span<const std::byte> file, const LoadOptions& opts) {
  if (file.size() < 8) throw Error(Errc::kMalformedHeader, "file shorter than header length");
  const std::uint64_t n = load_u64(file.data());
  if (n > kMaxHeaderBytes || n > file.size() - 8) {
    throw Error(Errc::kMalformedHeader, "header length " + std::to_string(n) + " out of bounds");
  }
  const std::string_view text(reinterpret_cast<const char*>(file.data() + 8),
                              static_cast<std::size_t>(n));
  const auto payload = file.subspan(8 + static_cast<std::size_t>(n));

  // The callback sees every key before it is folded into the object, which
  // is the only way to spot duplicates.
  std::set<std::string> seen;
  bool duplicate = false;
  std::string duplicate_name;
  json header;
  try {
    header = json::parse(text, [&](int depth, json::parse_event_t event, json& parsed) {
      if (depth == 1 && event == json::parse_event_t::key) {
        auto key = parsed.get<std::string>();
        if (!seen.insert(key).second && !duplicate) {
          duplicate = true;
          duplicate_name = key;
        }
      }
      return true;
    });
  } catch (const json::exception& e) {
    throw Error(Errc::kMalformedHeader, std::string("invalid header JSON: ") + e.what());
  }
  if (!header.is_object()) throw Error(Errc::kMalformedHeader, "header is not a JSON object");
  if (duplicate) throw Error(Errc::kMalformedHeader, "duplicate key '" + duplicate_name + "'");

  TensorMap map;
  struct Pending {
    std::string name;
    DType dtype;
    std::vector<std::uint64_t> shape;
    std::uint64_t begin;
    std::uint64_t end;
  };
  std::vector<Pending> pending;

  for (const auto& [name, value] : header.items()) {
    if (name == kMetadataKey) {
      if (!value.is_object()) throw Error(Errc::kMalformedHeader, "__metadata__ must be an object");
      for (const auto& [k, v] : value.items()) {
        if (!v.is_string()) {
          throw Error(Errc::kMalformedHeader, "__metadata__ values must be strings");
        }
        map.metadata.emplace(k, v.get<std::string>());
      }
      continue;
    }
    if (name.empty()) throw Error(Errc::kMalformedHeader, "empty tensor name");
    if (!value.is_object()) {
      throw Error(Errc::kMalformedHeader, "tensor '" + name + "' entry is not an object");
    }
    for (const auto& [field, unused] : value.items()) {
      if (field != "dtype" && field != "shape" && field != "data_offsets") {
        throw Error(Errc::kMalformedHeader, "tensor '" + name + "' has unknown field '" + field + "'");
      }
    }
    if (!value.contains("dtype") || !value["dtype"].is_string() || !value.contains("shape") ||
        !value["shape"].is_array() || !value.contains("data_offsets") ||
        !value["data_offsets"].is_array() || value["data_offsets"].size() != 2) {
      throw Error(Errc::kMalformedHeader, "tensor '" + name + "' entry is incomplete");
    }
    Pending p{name, parse_dtype(value["dtype"].get<std::string>()), {}, 0, 0};
    for (const auto& d : value["shape"]) p.shape.push_back(as_unsigned(d, "shape", name));
    p.begin = as_unsigned(value["data_offsets"][0], "data_offsets", name);
    p.end = as_unsigned(value["data_offsets"][1], "data_offsets", name);
    std::uint64_t expected = 0;
    if (!checked_numel(p.shape, dtype_width(p.dtype), expected)) {
      throw Error(Errc::kMalformedHeader, "tensor '" + name + "' shape overflows");
    }
    if (p.end < p.begin || p.end - p.begin != expected) {
      throw Error(Errc::kMalformedHeader,
                  "tensor '" + name + "' offsets do not match dtype and shape");
    }
    pending.push_back(std::move(p));
  }

  std::vector<Span> spans;
  for (const auto& p : pending) {
    if (p.end > p.begin) spans.push_back({p.begin, p.end, p.name});
  }
  std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) {
    return a.begin != b.begin ? a.begin < b.begin : a.end < b.end;
  });
  for (std::size_t i = 1; i < spans.size(); ++i) {
    if (spans[i].begin < spans[i - 1].end) {
      throw Error(Errc::kOverlappingOffsets,
                  "'" + spans[i - 1].name + "' and '" + spans[i].name + "' share bytes");
    }
  }
  std::uint64_t max_end = 0;
  for (const auto& p : pending) max_end = std::max(max_end, p.end);
  if (max_end > payload.size()) {
    throw Error(Errc::kTruncatedPayload, "header needs " + std::to_string(max_end) +
                                             " payload bytes, file has " +
                                             std::to_string(payload.size()));
  }
  std::uint64_t cursor = 0;
  for (const auto& s : spans) {
    if (s.begin != cursor) {
      throw Error(Errc::kMalformedHeader, "gap in payload before '" + s.name + "'");
    }
    cursor = s.end;
  }
  if (cursor != payload.size()) {
    throw Error(Errc::kMalformedHeader, "payload has " + std::to_string(payload.size() - cursor) +
                                            " bytes not covered by any tensor");
  }

  for (auto& p : pending) {
    const auto* src = payload.data() + p.begin;
    Tensor t(p.dtype, std::move(p.shape), std::vector<std::byte>(src, src + (p.end - p.begin)));
    if (!opts.allow_nonfinite && !t.all_finite()) {
      throw Error(Errc::kNonFiniteValue, "tensor '" + p.name + "' holds NaN or Inf");
    }
    map.entries.emplace(std::move(p.name), std::move(t));
  }
  return map;
}

TensorMap load_checkpoint(const std::filesystem::path& path, const LoadOptions& opts) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kIoFailure, "cannot open '" + path.string() + "'");
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(Errc::kIoFailure, "read failed for '" + path.string() + "'");
  const auto* bytes = reinterpret_cast<const std::byte*>(raw.data());
  return parse_checkpoint(std::span<const std::byte>(bytes, raw.size()), opts);
}

void save_checkpoint(const TensorMap& map, const std::filesystem::path& path,
                     const SaveOptions& opts) {
  const auto bytes = serialize_checkpoint(map, opts);
  auto tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::kIoFailure, "cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(Errc::kIoFailure, "write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(Errc::kIoFailure, "cannot move output into '" + path.string() + "'");
  }
}

CompatReport validate_compat(std::span<const TensorMap* const> maps) {
  CompatReport report;
  std::set<std::string> all_names;
  for (const auto* m : maps) {
    for (const auto& [name, unused] : m->entries) all_names.insert(name);
  }
  for (const auto& name : all_names) {
    bool everywhere = true;
    for (const auto* m : maps) everywhere = everywhere && m->entries.contains(name);
    if (!everywhere) {
      report.name_differences.push_back(name);
      continue;
    }
    ShapeMismatch sm{name, {}};
    DTypeMismatch dm{name, {}};
    for (const auto* m : maps) {
      const Tensor& t = m->entries.at(name);
      sm.shapes.push_back(t.shape());
      dm.dtypes.push_back(t.dtype());
    }
    if (std::adjacent_find(sm.shapes.begin(), sm.shapes.end(), std::not_equal_to<>()) !=
        sm.shapes.end()) {
      report.shape_mismatches.push_back(std::move(sm));
    }
    if (std::adjacent_find(dm.dtypes.begin(), dm.dtypes.end(), std::not_equal_to<>()) !=
        dm.dtypes.end()) {
      report.dtype_mismatches.push_back(std::move(dm));
    }
  }
  report.ok = report.name_differences.empty() && report.shape_mismatches.empty() &&
              report.dtype_mismatches.empty();
  return report;
}

CompatReport validate_compat(std::initializer_list<const TensorMap*> maps) {
  return validate_compat(std::span<const TensorMap* const>(maps.begin(), maps.size()));
}

}  // namespace postkit
