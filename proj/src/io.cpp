#include "qmr/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "qmr/error.hpp"

namespace qmr {
namespace {

using nlohmann::json;

constexpr char kMagic[] = "QMRSTACK1";
constexpr std::size_t kMagicSize = 9;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_f32(std::string& out, double v) {
  put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

struct Container {
  json header;
  std::vector<double> values;  // f32le payload widened, or u8 payload
};

std::string encode(const json& header, const std::string& payload) {
  const std::string text = header.dump();
  std::string out(kMagic, kMagicSize);
  out.push_back('\n');
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out += payload;
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error(ErrorKind::io, "failed writing '" + path.string() + "'");
}

std::size_t positive_key(const json& header, const char* key, const std::filesystem::path& path) {
  if (!header.contains(key) || !header[key].is_number_unsigned() || header[key].get<std::size_t>() == 0) {
    throw Error(ErrorKind::format, path.string() + ": header key '" + key + "' missing or not a positive integer");
  }
  return header[key].get<std::size_t>();
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());

  if (bytes.size() < kMagicSize + 5 || bytes.compare(0, kMagicSize, kMagic) != 0 || bytes[kMagicSize] != '\n') {
    throw Error(ErrorKind::format, path.string() + ": not a QMRSTACK1 file");
  }
  const std::size_t header_len = get_u32(raw + kMagicSize + 1);
  const std::size_t header_start = kMagicSize + 5;
  if (header_len > bytes.size() - header_start) {
    throw Error(ErrorKind::format, path.string() + ": header length exceeds file size");
  }
  Container c;
  try {
    c.header = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(header_start),
                           bytes.begin() + static_cast<std::ptrdiff_t>(header_start + header_len));
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::format, path.string() + ": malformed header JSON (" + e.what() + ")");
  }
  if (!c.header.is_object()) throw Error(ErrorKind::format, path.string() + ": header is not a JSON object");

  const std::size_t frames = positive_key(c.header, "n_frames", path);
  const std::size_t height = positive_key(c.header, "height", path);
  const std::size_t width = positive_key(c.header, "width", path);
  std::size_t channels = 1;
  if (c.header.contains("channels")) channels = positive_key(c.header, "channels", path);
  if (!c.header.contains("dtype") || !c.header["dtype"].is_string()) {
    throw Error(ErrorKind::format, path.string() + ": header key 'dtype' missing");
  }
  const std::string dtype = c.header["dtype"].get<std::string>();
  std::size_t elem = 0;
  if (dtype == "f32le") {
    elem = 4;
  } else if (dtype == "u8") {
    elem = 1;
  } else {
    throw Error(ErrorKind::format, path.string() + ": unsupported dtype '" + dtype + "'");
  }

  const std::size_t count = frames * height * width * channels;
  const std::size_t payload = bytes.size() - header_start - header_len;
  if (payload != count * elem) {
    throw Error(ErrorKind::corruption, path.string() + ": payload holds " + std::to_string(payload) +
                                           " bytes, header declares " + std::to_string(count * elem));
  }
  const unsigned char* p = raw + header_start + header_len;
  c.values.resize(count);
  if (elem == 4) {
    for (std::size_t i = 0; i < count; ++i) {
      const float f = std::bit_cast<float>(get_u32(p + 4 * i));
      if (!std::isfinite(f)) {
        throw Error(ErrorKind::validation, path.string() + ": payload contains non-finite values");
      }
      c.values[i] = f;
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) c.values[i] = p[i];
  }
  return c;
}

std::optional<std::vector<double>> read_inversion_times(const json& header, const std::filesystem::path& path) {
  if (!header.contains("inversion_times_ms")) return std::nullopt;
  const auto& ti = header["inversion_times_ms"];
  if (!ti.is_array()) throw Error(ErrorKind::format, path.string() + ": inversion_times_ms is not an array");
  std::vector<double> out;
  for (const auto& v : ti) {
    if (!v.is_number()) throw Error(ErrorKind::format, path.string() + ": non-numeric inversion time");
    out.push_back(v.get<double>());
  }
  return out;
}

Spacing read_spacing(const json& header, const std::filesystem::path& path) {
  if (!header.contains("spacing_mm")) return {1.0, 1.0};
  const auto& s = header["spacing_mm"];
  if (!s.is_array() || s.size() != 2 || !s[0].is_number() || !s[1].is_number()) {
    throw Error(ErrorKind::format, path.string() + ": spacing_mm must hold 2 numbers");
  }
  return {s[0].get<double>(), s[1].get<double>()};
}

json base_header(int frames, int height, int width, const char* dtype) {
  json h;
  h["n_frames"] = frames;
  h["height"] = height;
  h["width"] = width;
  h["dtype"] = dtype;
  return h;
}

}  // namespace

void save_stack(const ImageStack& stack, const std::filesystem::path& path) {
  json h = base_header(stack.frames(), stack.height(), stack.width(), "f32le");
  if (stack.inversion_times()) h["inversion_times_ms"] = *stack.inversion_times();
  h["spacing_mm"] = {stack.spacing()[0], stack.spacing()[1]};
  std::string payload;
  payload.reserve(stack.values().size() * 4);
  for (double v : stack.values()) put_f32(payload, v);
  write_file(path, encode(h, payload));
}

ImageStack load_stack(const std::filesystem::path& path) {
  Container c = read_container(path);
  if (c.header["dtype"] != "f32le") throw Error(ErrorKind::format, path.string() + ": stack dtype must be f32le");
  if (c.header.contains("channels") && c.header["channels"] != 1) {
    throw Error(ErrorKind::format, path.string() + ": file holds a multi-channel field, not a stack");
  }
  const int frames = c.header["n_frames"].get<int>();
  const int height = c.header["height"].get<int>();
  const int width = c.header["width"].get<int>();
  return ImageStack(frames, height, width, std::move(c.values), read_inversion_times(c.header, path),
                    read_spacing(c.header, path));
}

void save_mask(const RoiMask& mask, const std::filesystem::path& path) {
  json h = base_header(1, mask.height(), mask.width(), "u8");
  h["label"] = mask.label();
  std::string payload(mask.values().begin(), mask.values().end());
  write_file(path, encode(h, payload));
}

RoiMask load_mask(const std::filesystem::path& path) {
  Container c = read_container(path);
  if (c.header["dtype"] != "u8") throw Error(ErrorKind::format, path.string() + ": mask dtype must be u8");
  if (c.header["n_frames"] != 1) throw Error(ErrorKind::format, path.string() + ": mask must have one frame");
  std::vector<std::uint8_t> m(c.values.begin(), c.values.end());
  std::string label = c.header.value("label", std::string("roi"));
  return RoiMask(c.header["height"].get<int>(), c.header["width"].get<int>(), std::move(m), std::move(label));
}

void save_field(const DisplacementField& field, const std::filesystem::path& path) {
  json h = base_header(field.frames(), field.height(), field.width(), "f32le");
  h["channels"] = 2;
  std::string payload;
  payload.reserve(field.values().size() * 4);
  for (int n = 0; n < field.frames(); ++n) {
    for (int y = 0; y < field.height(); ++y) {
      for (int x = 0; x < field.width(); ++x) {
        put_f32(payload, field.at(n, channel_y, y, x));
        put_f32(payload, field.at(n, channel_x, y, x));
      }
    }
  }
  write_file(path, encode(h, payload));
}

DisplacementField load_field(const std::filesystem::path& path) {
  Container c = read_container(path);
  if (c.header["dtype"] != "f32le" || !c.header.contains("channels") || c.header["channels"] != 2) {
    throw Error(ErrorKind::format, path.string() + ": a field needs dtype f32le and channels = 2");
  }
  DisplacementField field(c.header["n_frames"].get<int>(), c.header["height"].get<int>(),
                          c.header["width"].get<int>());
  std::size_t i = 0;
  for (int n = 0; n < field.frames(); ++n) {
    for (int y = 0; y < field.height(); ++y) {
      for (int x = 0; x < field.width(); ++x) {
        field.at(n, channel_y, y, x) = c.values[i++];
        field.at(n, channel_x, y, x) = c.values[i++];
      }
    }
  }
  return field;
}

}  // namespace qmr
