#include "tactiforce/field_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "tactiforce/errors.hpp"

namespace tactiforce {

namespace {

constexpr char kMagic[4] = {'T', 'F', 'R', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 |
         std::uint32_t{p[3]} << 24;
}

}  // namespace

std::vector<std::uint8_t> encode_tfr(const TfrImage& image) {
  const std::size_t expected = std::size_t{image.width} * image.height * image.channels;
  if (image.samples.size() != expected) throw FormatError("TFR1: sample count does not match shape");
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.reserve(16 + 4 * expected);
  put_u32(out, image.width);
  put_u32(out, image.height);
  put_u32(out, image.channels);
  for (float f : image.samples) put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

TfrImage decode_tfr(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("TFR1: bad magic or truncated header");
  }
  TfrImage image;
  image.width = get_u32(bytes.data() + 4);
  image.height = get_u32(bytes.data() + 8);
  image.channels = get_u32(bytes.data() + 12);
  const std::size_t count = std::size_t{image.width} * image.height * image.channels;
  if (bytes.size() != 16 + 4 * count) throw FormatError("TFR1: payload size does not match header");
  image.samples.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    image.samples[i] = std::bit_cast<float>(get_u32(bytes.data() + 16 + 4 * i));
  }
  return image;
}

void write_tfr(const std::filesystem::path& path, const TfrImage& image) {
  const auto bytes = encode_tfr(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

TfrImage read_tfr(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_tfr(bytes);
}

TfrImage to_tfr(const Grid<double>& field) {
  TfrImage image{static_cast<std::uint32_t>(field.cols()), static_cast<std::uint32_t>(field.rows()), 1, {}};
  image.samples.reserve(field.size());
  for (double v : field.values()) image.samples.push_back(static_cast<float>(v));
  return image;
}

TfrImage to_tfr(const Grid<Vec3>& field) {
  TfrImage image{static_cast<std::uint32_t>(field.cols()), static_cast<std::uint32_t>(field.rows()), 3, {}};
  image.samples.reserve(3 * field.size());
  for (const Vec3& v : field.values()) {
    for (double x : v) image.samples.push_back(static_cast<float>(x));
  }
  return image;
}

Grid<double> scalar_field(const TfrImage& image) {
  if (image.channels != 1) throw FormatError("TFR1: expected 1 channel");
  Grid<double> field(static_cast<int>(image.height), static_cast<int>(image.width));
  std::copy(image.samples.begin(), image.samples.end(), field.values().begin());
  return field;
}

Grid<Vec3> vector_field(const TfrImage& image) {
  if (image.channels != 3) throw FormatError("TFR1: expected 3 channels");
  Grid<Vec3> field(static_cast<int>(image.height), static_cast<int>(image.width));
  auto values = field.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = {image.samples[3 * i], image.samples[3 * i + 1], image.samples[3 * i + 2]};
  }
  return field;
}

void write_png(const std::filesystem::path& path, const TactileFrame& frame) {
  const auto& px = frame.pixels;
  std::vector<png_byte> buffer;
  buffer.reserve(3 * px.size());
  for (const Rgb& v : px.values()) {
    for (double ch : v) buffer.push_back(static_cast<png_byte>(std::lround(255.0 * std::clamp(ch, 0.0, 1.0))));
  }
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(px.cols());
  image.height = static_cast<png_uint_32>(px.rows());
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    const std::string reason = image.message;
    png_image_free(&image);
    throw std::runtime_error("PNG write failed: " + reason);
  }
}

}  // namespace tactiforce
