#include <cstring>
#include <random>

#include "doctest.h"
#include "postkit/tensor_store.hpp"
#include "test_support.hpp"

using namespace postkit;
using testing::errc_of;

namespace {

std::filesystem::path fixture(const std::string& name) {
  return testing::source_dir() / "tests" / "data" / name;
}

std::string header_text(const std::vector<std::byte>& file) {
  std::uint64_t n = 0;
  for (int i = 0; i < 8; ++i) n |= static_cast<std::uint64_t>(file[i]) << (8 * i);
  return std::string(reinterpret_cast<const char*>(file.data()) + 8, n);
}

std::vector<std::byte> with_header(const std::string& header, std::size_t payload_bytes) {
  std::vector<std::byte> out(8 + header.size() + payload_bytes, std::byte{0});
  const std::uint64_t n = header.size();
  for (int i = 0; i < 8; ++i) out[i] = static_cast<std::byte>((n >> (8 * i)) & 0xff);
  std::memcpy(out.data() + 8, header.data(), header.size());
  return out;
}

}  // namespace

TEST_CASE("2x2 F32 tensor serializes to the frozen golden bytes") {
  TensorMap m;
  const float v[] = {1.0f, 2.0f, 3.0f, 4.0f};
  m.entries["t"] = Tensor::from_f32(DType::kF32, {2, 2}, v);
  const auto golden = testing::read_bytes(fixture("golden_2x2_f32.stc"));
  REQUIRE(golden.size() == 81);
  CHECK(serialize_checkpoint(m) == golden);

  const TensorMap loaded = load_checkpoint(fixture("golden_2x2_f32.stc"));
  CHECK(loaded == m);
  CHECK(serialize_checkpoint(loaded) == golden);
}

TEST_CASE("save then load is the identity on random maps") {
  testing::TempDir dir("ts");
  std::mt19937_64 rng(7);
  for (int i = 0; i < 50; ++i) {
    const TensorMap m = testing::random_map(rng, 64, true, i % 2 == 0);
    const auto path = dir / "m.stc";
    save_checkpoint(m, path);
    const TensorMap back = load_checkpoint(path);
    REQUIRE(back == m);
    CHECK(testing::read_bytes(path) == serialize_checkpoint(back));
  }
}

TEST_CASE("saving twice yields byte-identical files") {
  testing::TempDir dir("ts");
  std::mt19937_64 rng(11);
  const TensorMap m = testing::random_map(rng, 100, true, true);
  save_checkpoint(m, dir / "a.stc");
  save_checkpoint(m, dir / "b.stc");
  CHECK(testing::read_bytes(dir / "a.stc") == testing::read_bytes(dir / "b.stc"));
  CHECK_FALSE(std::filesystem::exists(dir / "a.stc.partial"));
}

TEST_CASE("empty map is an empty header with no payload") {
  const auto bytes = serialize_checkpoint(TensorMap{});
  CHECK(header_text(bytes) == "{}");
  CHECK(bytes.size() == 10);
  CHECK(parse_checkpoint(bytes) == TensorMap{});
}

TEST_CASE("header lists tensors in lexicographic order") {
  TensorMap m;
  m.entries["b"] = Tensor::zeros(DType::kF32, {1});
  m.entries["a"] = Tensor::zeros(DType::kF16, {2});
  const std::string h = header_text(serialize_checkpoint(m));
  CHECK(h.find("\"a\"") < h.find("\"b\""));
  CHECK(h == R"({"a":{"data_offsets":[0,4],"dtype":"F16","shape":[2]},)"
             R"("b":{"data_offsets":[4,8],"dtype":"F32","shape":[1]}})");
}

TEST_CASE("metadata round-trips") {
  TensorMap m = testing::single("w", {1.5f});
  m.metadata["source"] = "unit";
  const auto back = parse_checkpoint(serialize_checkpoint(m));
  CHECK(back.metadata.at("source") == "unit");
}

TEST_CASE("corrupt container files are rejected with their specific error") {
  CHECK(errc_of([] { load_checkpoint(fixture("overlapping_offsets.stc")); }) ==
        Errc::kOverlappingOffsets);
  CHECK(errc_of([] { load_checkpoint(fixture("truncated_payload.stc")); }) ==
        Errc::kTruncatedPayload);
  CHECK(errc_of([] { load_checkpoint(fixture("unknown_dtype.stc")); }) == Errc::kMalformedHeader);
  CHECK(errc_of([] { load_checkpoint(fixture("nan_value.stc")); }) == Errc::kNonFiniteValue);
  LoadOptions lenient;
  lenient.allow_nonfinite = true;
  const auto m = load_checkpoint(fixture("nan_value.stc"), lenient);
  CHECK(std::isnan(m.entries.at("t").get(1)));
}

TEST_CASE("malformed headers") {
  SUBCASE("too short for the length prefix") {
    std::vector<std::byte> b(5);
    CHECK(errc_of([&] { parse_checkpoint(b); }) == Errc::kMalformedHeader);
  }
  SUBCASE("length beyond file") {
    auto b = with_header("{}", 0);
    b[0] = std::byte{0xff};
    CHECK(errc_of([&] { parse_checkpoint(b); }) == Errc::kMalformedHeader);
  }
  SUBCASE("not JSON") {
    CHECK(errc_of([] { parse_checkpoint(with_header("{oops", 0)); }) == Errc::kMalformedHeader);
  }
  SUBCASE("gap between tensors") {
    const auto b = with_header(
        R"({"a":{"data_offsets":[0,4],"dtype":"F32","shape":[1]},)"
        R"("b":{"data_offsets":[8,12],"dtype":"F32","shape":[1]}})",
        12);
    CHECK(errc_of([&] { parse_checkpoint(b); }) == Errc::kMalformedHeader);
  }
  SUBCASE("trailing bytes") {
    const auto b = with_header(R"({"a":{"data_offsets":[0,4],"dtype":"F32","shape":[1]}})", 8);
    CHECK(errc_of([&] { parse_checkpoint(b); }) == Errc::kMalformedHeader);
  }
  SUBCASE("offsets disagree with shape") {
    const auto b = with_header(R"({"a":{"data_offsets":[0,8],"dtype":"F32","shape":[1]}})", 8);
    CHECK(errc_of([&] { parse_checkpoint(b); }) == Errc::kMalformedHeader);
  }
  SUBCASE("duplicate tensor name") {
    const auto b = with_header(
        R"({"a":{"data_offsets":[0,4],"dtype":"F32","shape":[1]},)"
        R"("a":{"data_offsets":[4,8],"dtype":"F32","shape":[1]}})",
        8);
    CHECK(errc_of([&] { parse_checkpoint(b); }) == Errc::kMalformedHeader);
  }
  SUBCASE("unknown entry field") {
    const auto b = with_header(
        R"({"a":{"data_offsets":[0,4],"dtype":"F32","shape":[1],"extra":1}})", 4);
    CHECK(errc_of([&] { parse_checkpoint(b); }) == Errc::kMalformedHeader);
  }
  SUBCASE("negative dimension") {
    const auto b = with_header(R"({"a":{"data_offsets":[0,4],"dtype":"F32","shape":[-1]}})", 4);
    CHECK(errc_of([&] { parse_checkpoint(b); }) == Errc::kMalformedHeader);
  }
}

TEST_CASE("saving NaN is refused unless allowed") {
  TensorMap m = testing::single("w", {1.0f, std::numeric_limits<float>::infinity()});
  CHECK(errc_of([&] { serialize_checkpoint(m); }) == Errc::kNonFiniteValue);
  SaveOptions lenient;
  lenient.allow_nonfinite = true;
  CHECK_FALSE(serialize_checkpoint(m, lenient).empty());
}

TEST_CASE("zero-dimensional and empty tensors") {
  TensorMap m;
  const float one[] = {3.0f};
  m.entries["scalar"] = Tensor::from_f32(DType::kF32, {}, one);
  m.entries["empty"] = Tensor::zeros(DType::kBF16, {0, 3});
  CHECK(m.entries["scalar"].numel() == 1);
  CHECK(m.entries["empty"].numel() == 0);
  CHECK(parse_checkpoint(serialize_checkpoint(m)) == m);
}

TEST_CASE("tensor buffer length must match shape") {
  CHECK(errc_of([] { Tensor(DType::kF32, {2}, std::vector<std::byte>(4)); }) ==
        Errc::kInvalidArgument);
}

TEST_CASE("half and bfloat16 conversions round to nearest even") {
  CHECK(f32_to_f16(1.0f) == 0x3c00);
  CHECK(f32_to_f16(-2.0f) == 0xc000);
  CHECK(f32_to_f16(65504.0f) == 0x7bff);
  CHECK(f32_to_f16(1.0f + 0x1p-11f) == 0x3c00);      // tie, even stays
  CHECK(f32_to_f16(1.0f + 3 * 0x1p-11f) == 0x3c02);  // tie, rounds up to even
  CHECK(f32_to_f16(0x1p-24f) == 0x0001);             // smallest subnormal
  CHECK(f16_to_f32(0x0001) == 0x1p-24f);
  CHECK(f16_to_f32(0x3555) == doctest::Approx(0.333251953125));
  CHECK(f32_to_bf16(1.0f) == 0x3f80);
  CHECK(f32_to_bf16(1.0f + 0x1p-8f) == 0x3f80);
  CHECK(f32_to_bf16(1.0f + 3 * 0x1p-8f) == 0x3f82);
  CHECK(bf16_to_f32(0x4049) == 3.140625f);
  for (std::uint32_t bits = 0; bits < 0x7c00; bits += 7) {
    const auto h = static_cast<std::uint16_t>(bits);
    REQUIRE(f32_to_f16(f16_to_f32(h)) == h);
  }
}

TEST_CASE("validate_compat reports differences") {
  const TensorMap a = testing::single("A", {1, 2});
  const TensorMap a3 = testing::single("A", {1, 2, 3});
  TensorMap ab = a;
  ab.entries["B"] = Tensor::zeros(DType::kF32, {1});

  auto same = validate_compat({&a, &a});
  CHECK(same.ok);
  CHECK(same.name_differences.empty());

  auto shapes = validate_compat({&a, &a3});
  CHECK_FALSE(shapes.ok);
  REQUIRE(shapes.shape_mismatches.size() == 1);
  CHECK(shapes.shape_mismatches[0].name == "A");

  auto names = validate_compat({&ab, &a});
  CHECK_FALSE(names.ok);
  CHECK(names.name_differences == std::vector<std::string>{"B"});

  const TensorMap half = testing::single("A", {1, 2}, DType::kF16);
  auto dtypes = validate_compat({&a, &half});
  CHECK_FALSE(dtypes.ok);
  CHECK(dtypes.dtype_mismatches.size() == 1);
}
