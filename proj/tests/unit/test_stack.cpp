#include <doctest.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "helpers.hpp"
#include "qmr/error.hpp"
#include "qmr/io.hpp"
#include "qmr/stack.hpp"

using namespace qmr;

namespace {

// Independent QMRSTACK writer: magic, newline, u32 header length, JSON, payload.
void write_raw(const std::filesystem::path& path, const std::string& header, const std::string& payload,
               const char* magic = "QMRSTACK1") {
  std::string bytes(magic, 9);
  bytes.push_back('\n');
  const auto n = static_cast<std::uint32_t>(header.size());
  for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((n >> (8 * i)) & 0xff));
  bytes += header;
  bytes += payload;
  std::ofstream(path, std::ios::binary) << bytes;
}

std::string f32le(float v) {
  const auto u = std::bit_cast<std::uint32_t>(v);
  std::string s;
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
  return s;
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::io;
}

}  // namespace

TEST_SUITE("stack") {
  TEST_CASE("constructor enforces the stack invariants") {
    CHECK(kind_of([] { ImageStack(1, 8, 8, std::vector<double>(64)); }) == ErrorKind::validation);
    CHECK(kind_of([] { ImageStack(2, 7, 8, std::vector<double>(112)); }) == ErrorKind::validation);
    CHECK(kind_of([] { ImageStack(2, 8, 8, std::vector<double>(127)); }) == ErrorKind::dimension);
    std::vector<double> v(128, 0.0);
    v[5] = std::numeric_limits<double>::quiet_NaN();
    CHECK(kind_of([&] { ImageStack(2, 8, 8, v); }) == ErrorKind::validation);
    CHECK(kind_of([] { ImageStack(2, 8, 8, std::vector<double>(128), std::vector<double>{100.0}); }) ==
          ErrorKind::validation);
    CHECK(kind_of([] { ImageStack(2, 8, 8, std::vector<double>(128), std::vector<double>{100.0, 0.0}); }) ==
          ErrorKind::validation);
    CHECK_NOTHROW(ImageStack(2, 8, 8, std::vector<double>(128), std::vector<double>{100.0, 200.0}));
  }

  TEST_CASE("normalize maps the global range onto [0, 1] with one affine map") {
    const ImageStack s = test::random_stack(3, 8, 8, 11, -100.0, 300.0);
    const NormalizedStack n = normalize_stack(s);
    double lo = 1e9, hi = -1e9;
    for (double v : n.stack.values()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    CHECK(lo == 0.0);
    CHECK(hi == doctest::Approx(1.0).epsilon(1e-15));
    for (std::size_t i = 0; i < s.values().size(); ++i) {
      CHECK(n.map.invert(n.stack.values()[i]) == doctest::Approx(s.values()[i]).epsilon(1e-12));
      for (std::size_t j : {std::size_t{0}, std::size_t{17}}) {
        CHECK((s.values()[i] < s.values()[j]) == (n.stack.values()[i] < n.stack.values()[j]));
      }
    }
  }

  TEST_CASE("normalize is idempotent and rejects constant stacks") {
    const ImageStack once = normalize_stack(test::random_stack(4, 9, 10, 3, -5.0, 5.0)).stack;
    const ImageStack twice = normalize_stack(once).stack;
    for (std::size_t i = 0; i < once.values().size(); ++i) {
      CHECK(std::abs(once.values()[i] - twice.values()[i]) <= 1e-6);
    }
    CHECK(kind_of([] { normalize_stack(ImageStack(2, 8, 8, std::vector<double>(128, 5.0))); }) ==
          ErrorKind::degenerate);
  }

  TEST_CASE("crop_center keeps the middle block") {
    std::vector<double> v(2 * 12 * 10);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
    const ImageStack s(2, 12, 10, v);
    const ImageStack c = crop_center(s, 8, 8);
    CHECK(c.height() == 8);
    CHECK(c.width() == 8);
    // Offsets (12 - 8) / 2 = 2 rows and (10 - 8) / 2 = 1 column.
    CHECK(c.frame_image(1)(0, 0) == s.frame_image(1)(2, 1));
    CHECK(c.frame_image(0)(7, 7) == s.frame_image(0)(9, 8));
    CHECK_THROWS_AS(crop_center(s, 16, 8), Error);
  }

  TEST_CASE("roi mask rules") {
    CHECK(kind_of([] { RoiMask(8, 8, std::vector<std::uint8_t>(64, 0)); }) == ErrorKind::validation);
    CHECK(kind_of([] { RoiMask(8, 8, std::vector<std::uint8_t>(64, 2)); }) == ErrorKind::validation);
    std::vector<std::uint8_t> a(64, 0), b(64, 0);
    a[3] = 1;
    b[3] = b[9] = 1;
    const RoiMask u = RoiMask::unite(RoiMask(8, 8, a), RoiMask(8, 8, b), "both");
    CHECK(u.count() == 2);
    CHECK(u.label() == "both");
  }
}

TEST_SUITE("io") {
  TEST_CASE("stack round-trips bit-exactly with metadata") {
    const auto dir = test::scratch_dir("io-roundtrip");
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      // Float-representable values so the 32-bit payload is lossless.
      auto v = test::uniform(3 * 9 * 11, seed, -1e3, 1e3);
      for (double& x : v) x = static_cast<float>(x);
      const ImageStack s(3, 9, 11, v, std::vector<double>{100.5, 220.0, 3000.25}, Spacing{1.25, 0.75});
      save_stack(s, dir / "s.qmr");
      const ImageStack back = load_stack(dir / "s.qmr");
      CHECK(back == s);
    }
  }

  TEST_CASE("stack without inversion times omits the key") {
    const auto dir = test::scratch_dir("io-noti");
    const ImageStack s(3, 8, 8, std::vector<double>(192, 0.0));
    save_stack(s, dir / "z.qmr");
    const std::string bytes = read_all(dir / "z.qmr");
    CHECK(bytes.substr(0, 10) == "QMRSTACK1\n");
    std::uint32_t n = 0;
    for (int i = 0; i < 4; ++i) n |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[10 + i])) << (8 * i);
    const auto header = nlohmann::json::parse(bytes.substr(14, n));
    CHECK_FALSE(header.contains("inversion_times_ms"));
    CHECK(header["dtype"] == "f32le");
    // 3 * 8 * 8 = 192 zero floats follow the header.
    const std::string payload = bytes.substr(14 + n);
    CHECK(payload.size() == 192 * 4);
    CHECK(payload == std::string(192 * 4, '\0'));
    CHECK_FALSE(load_stack(dir / "z.qmr").inversion_times().has_value());
  }

  TEST_CASE("a hand-built 11 x 112 x 112 file loads with its declared shape") {
    const auto dir = test::scratch_dir("io-112");
    std::string payload;
    payload.reserve(11 * 112 * 112 * 4);
    for (int i = 0; i < 11 * 112 * 112; ++i) payload += f32le(static_cast<float>(i % 251) * 0.5f);
    write_raw(dir / "p.qmr", R"({"n_frames":11,"height":112,"width":112,"dtype":"f32le"})", payload);
    const ImageStack s = load_stack(dir / "p.qmr");
    CHECK(s.frames() == 11);
    CHECK(s.height() == 112);
    CHECK(s.width() == 112);
    CHECK(s.values()[1000] == (1000 % 251) * 0.5);
  }

  TEST_CASE("malformed files map to the right error kinds") {
    const auto dir = test::scratch_dir("io-bad");
    const std::string header = R"({"n_frames":2,"height":8,"width":8,"dtype":"f32le"})";
    const std::string payload(2 * 64 * 4, '\0');

    write_raw(dir / "magic.qmr", header, payload, "XXXXXXXXX");
    CHECK(kind_of([&] { load_stack(dir / "magic.qmr"); }) == ErrorKind::format);

    write_raw(dir / "short.qmr", header, payload.substr(4));
    CHECK(kind_of([&] { load_stack(dir / "short.qmr"); }) == ErrorKind::corruption);

    std::string nan_payload = payload;
    const std::string nan = f32le(std::numeric_limits<float>::quiet_NaN());
    nan_payload.replace(8, 4, nan);
    write_raw(dir / "nan.qmr", header, nan_payload);
    CHECK(kind_of([&] { load_stack(dir / "nan.qmr"); }) == ErrorKind::validation);

    write_raw(dir / "json.qmr", "{not json", payload);
    CHECK(kind_of([&] { load_stack(dir / "json.qmr"); }) == ErrorKind::format);

    write_raw(dir / "dtype.qmr", R"({"n_frames":2,"height":8,"width":8,"dtype":"f64"})", payload);
    CHECK(kind_of([&] { load_stack(dir / "dtype.qmr"); }) == ErrorKind::format);

    CHECK(kind_of([&] { load_stack(dir / "missing.qmr"); }) == ErrorKind::io);
  }

  TEST_CASE("masks and fields round-trip") {
    const auto dir = test::scratch_dir("io-mask-field");
    std::vector<std::uint8_t> m(80, 0);
    m[7] = m[33] = 1;
    const RoiMask mask(8, 10, m, "myocardium");
    save_mask(mask, dir / "m.qmr");
    CHECK(load_mask(dir / "m.qmr") == mask);
    CHECK_THROWS_AS(load_stack(dir / "m.qmr"), Error);

    DisplacementField f(2, 8, 9);
    const auto v = test::uniform(f.values().size(), 5, -3.0, 3.0);
    for (std::size_t i = 0; i < v.size(); ++i) f.values()[i] = static_cast<float>(v[i]);
    save_field(f, dir / "f.qmr");
    CHECK(load_field(dir / "f.qmr") == f);
    CHECK_THROWS_AS(load_stack(dir / "f.qmr"), Error);
  }
}
