#pragma once

// "TFR1" float container: magic, u32 LE width, height, channels, then row-major
// interleaved float32 LE samples.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tactiforce/grid.hpp"
#include "tactiforce/tactile_sim.hpp"

namespace tactiforce {

struct TfrImage {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t channels = 0;
  std::vector<float> samples;
};

std::vector<std::uint8_t> encode_tfr(const TfrImage& image);
TfrImage decode_tfr(const std::vector<std::uint8_t>& bytes);

void write_tfr(const std::filesystem::path& path, const TfrImage& image);
TfrImage read_tfr(const std::filesystem::path& path);

TfrImage to_tfr(const Grid<double>& field);
TfrImage to_tfr(const Grid<Vec3>& field);

Grid<double> scalar_field(const TfrImage& image);
Grid<Vec3> vector_field(const TfrImage& image);

inline TfrImage to_tfr(const DepthMap& depth) { return to_tfr(depth.values); }
inline TfrImage to_tfr(const NormalMap& normals) { return to_tfr(normals.vectors); }
inline TfrImage to_tfr(const TactileFrame& frame) { return to_tfr(frame.pixels); }

/// 8-bit RGB PNG for inspection only; channels are clamped to [0,1].
void write_png(const std::filesystem::path& path, const TactileFrame& frame);

}  // namespace tactiforce
