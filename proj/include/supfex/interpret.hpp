#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "supfex/model.hpp"
#include "supfex/verifier.hpp"

namespace supfex {

/// Mean input-gradient of one penultimate neuron over samples from a region.
struct GradientMap {
  Vector values;  // one entry per input coordinate
  std::size_t neuron = 0;
  std::size_t sample_count = 0;
  std::uint64_t seed = 0;
};

/// Draw `count` points coordinate-wise uniformly from the region's box.
/// The draw order is fixed (sample-major, coordinate-minor), so the result
/// is fully determined by the seed.
inline std::vector<Vector> sample_region(const InputRegion& region,
                                         std::size_t count,
                                         std::uint64_t seed) {
  if (count < 1) throw ValidationError("sample: count must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<Vector> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    Vector x(region.dim());
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (region.lo[i] == region.hi[i]) {
        x[i] = region.lo[i];
      } else {
        std::uniform_real_distribution<double> u(region.lo[i], region.hi[i]);
        x[i] = u(rng);
      }
    }
    out.push_back(std::move(x));
  }
  return out;
}

inline GradientMap gradient_map(const Network& net, const InputRegion& region,
                                std::size_t neuron, std::size_t count = 100,
                                std::uint64_t seed = 0) {
  if (region.dim() != net.input_dim())
    throw ShapeError("gradient map: region does not match the network input");
  GradientMap gm;
  gm.neuron = neuron;
  gm.sample_count = count;
  gm.seed = seed;
  gm.values.assign(net.input_dim(), 0.0);
  for (const Vector& x : sample_region(region, count, seed)) {
    const Vector g = gradient_wrt_input(net, x, neuron);
    for (std::size_t i = 0; i < g.size(); ++i) gm.values[i] += g[i];
  }
  for (double& v : gm.values) v /= double(count);
  return gm;
}

/// Per-plane mean across channels: [C, H, W] values -> H*W values.
inline Vector average_channels(const Vector& values, std::size_t channels) {
  if (channels < 1 || values.size() % channels != 0)
    throw ShapeError("average: length not divisible by channel count");
  const std::size_t plane = values.size() / channels;
  Vector out(plane, 0.0);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < plane; ++p) out[p] += values[c * plane + p];
  for (double& v : out) v /= double(channels);
  return out;
}

struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, one byte per pixel
};

/// Grayscale rendering: clip to mean +- clip_sigma * stddev (population),
/// then min-max scale the clipped values onto 0..255, truncating toward
/// zero. A constant map has no range and renders as all-zero.
inline Image render_map(const GradientMap& gm, std::size_t width,
                        std::size_t height, double clip_sigma = 3.0) {
  const Vector& v = gm.values;
  if (width * height != v.size())
    throw ShapeError("render: " + std::to_string(width) + "x" +
                     std::to_string(height) + " does not cover " +
                     std::to_string(v.size()) + " values");
  if (!(clip_sigma >= 0.0))
    throw ValidationError("render: clip multiplier must be >= 0");

  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= double(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= double(v.size());
  const double half = clip_sigma * std::sqrt(var);

  Vector clipped(v.size());
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < v.size(); ++i) {
    clipped[i] = std::clamp(v[i], mean - half, mean + half);
    lo = std::min(lo, clipped[i]);
    hi = std::max(hi, clipped[i]);
  }

  Image img;
  img.width = width;
  img.height = height;
  img.pixels.assign(v.size(), 0);
  if (hi > lo) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double level = (clipped[i] - lo) / (hi - lo) * 255.0;
      img.pixels[i] = std::uint8_t(level);
    }
  }
  return img;
}

inline void write_pgm(const Image& img, std::ostream& os) {
  os << "P5\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()),
           std::streamsize(img.pixels.size()));
  if (!os) throw Error("pgm: write failed");
}

inline void write_pgm(const Image& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("pgm: cannot open " + path);
  write_pgm(img, f);
}

}  // namespace supfex
