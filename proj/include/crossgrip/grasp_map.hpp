#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "crossgrip/rng.hpp"

namespace crossgrip {

/// Dense single-channel image, row-major, values in [0, 1].
struct Heatmap {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  Heatmap() = default;
  Heatmap(int w, int h) : width(w), height(h), values(size_t(w) * h, 0.0) {}

  double at(int u, int v) const { return values[size_t(v) * width + u]; }
  double& at(int u, int v) { return values[size_t(v) * width + u]; }
};

struct PixelCoord {
  int u = 0;
  int v = 0;
};

struct PixelCentroid {
  double u = 0.0;
  double v = 0.0;
  std::size_t count = 0;
};

/// Minimal scene view the renderer needs; keeps this module independent of
/// the simulator types.
struct MapScene {
  std::size_t object_count = 1;
  double grasp_x = 0.0;  // world x of the grasp point, meters
};

struct RawMapParams {
  int map_width = 64;
  int map_height = 64;
  double workspace_width = 0.64;  // world meters spanned by the image x axis
  double sigma_scale = 2.0;       // blob sigma = sigma_scale / camera_height
  double min_camera_height = 0.1;
  double peak_lo = 0.8;
  double peak_hi = 1.0;
  int spurious_max = 3;           // 0..spurious_max spurious blobs per render
  double spurious_peak_lo = 0.4;
  double spurious_peak_hi = 0.9;
  double spurious_sigma = 1.0;    // pixels; narrow so outliers stay small
  double pixel_noise = 0.05;      // additive per-pixel uniform noise bound
};

/// Surrogate for a grasp-probability CNN: one strong Gaussian blob at the
/// grasp point's image projection (apparent size shrinks as the camera
/// rises), a few spurious mid-confidence blobs, and per-pixel noise.
/// Deterministic in (scene, camera_height, rng_seed).
inline Heatmap render_raw_map(const MapScene& scene, double camera_height,
                              std::uint64_t rng_seed,
                              const RawMapParams& p = RawMapParams{}) {
  if (scene.object_count == 0)
    throw std::invalid_argument("render_raw_map: scene has no objects");
  if (!(camera_height > 0.0))
    throw std::invalid_argument("render_raw_map: camera_height must be > 0");

  Rng rng(rng_seed);
  const double sigma =
      p.sigma_scale / std::max(camera_height, p.min_camera_height);
  const double peak = rng.uniform(p.peak_lo, p.peak_hi);
  const double u0 = scene.grasp_x / p.workspace_width * p.map_width;
  const double v0 = 0.5 * p.map_height;

  struct Blob {
    double u, v, peak, sigma;
  };
  std::vector<Blob> blobs{{u0, v0, peak, sigma}};
  const int n_spurious = static_cast<int>(rng.below(p.spurious_max + 1));
  for (int i = 0; i < n_spurious; ++i) {
    const double sp = rng.uniform(p.spurious_peak_lo, p.spurious_peak_hi);
    const double su = rng.uniform(0.0, p.map_width);
    const double sv = rng.uniform(0.0, p.map_height);
    blobs.push_back({su, sv, sp, p.spurious_sigma});
  }

  Heatmap map(p.map_width, p.map_height);
  for (int v = 0; v < p.map_height; ++v) {
    for (int u = 0; u < p.map_width; ++u) {
      double val = 0.0;
      for (const Blob& b : blobs) {
        const double du = u - b.u, dv = v - b.v;
        val += b.peak * std::exp(-(du * du + dv * dv) /
                                 (2.0 * b.sigma * b.sigma));
      }
      val += rng.uniform(0.0, p.pixel_noise);
      map.at(u, v) = std::clamp(val, 0.0, 1.0);
    }
  }
  return map;
}

/// Pixels with value >= threshold (values below it are discarded).
inline std::vector<PixelCoord> threshold_filter(const Heatmap& map,
                                                double threshold = 0.7) {
  std::vector<PixelCoord> kept;
  for (int v = 0; v < map.height; ++v)
    for (int u = 0; u < map.width; ++u)
      if (map.at(u, v) >= threshold) kept.push_back({u, v});
  return kept;
}

/// Unweighted centroid; nullopt when no pixels survived thresholding (the
/// recoverable no-grasp-detected case).
inline std::optional<PixelCentroid> centroid(
    const std::vector<PixelCoord>& pixels) {
  if (pixels.empty()) return std::nullopt;
  double su = 0.0, sv = 0.0;
  for (const PixelCoord& c : pixels) {
    su += c.u;
    sv += c.v;
  }
  const double n = static_cast<double>(pixels.size());
  return PixelCentroid{su / n, sv / n, pixels.size()};
}

/// Binary disc: 1.0 where the pixel lies within `radius` of the centroid
/// (boundary inclusive), clipped at the image borders.
inline Heatmap circular_mask(const PixelCentroid& center, double radius,
                             int width, int height) {
  Heatmap mask(width, height);
  const double r2 = radius * radius;
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      const double du = u - center.u, dv = v - center.v;
      mask.at(u, v) = (du * du + dv * dv <= r2) ? 1.0 : 0.0;
    }
  }
  return mask;
}

/// Full stabilization pipeline: threshold -> centroid -> fixed-radius disc.
/// An empty threshold set yields an all-zero map rather than an error.
inline Heatmap process_map(const Heatmap& raw, double threshold = 0.7,
                           double radius = 30.0) {
  const auto kept = threshold_filter(raw, threshold);
  const auto c = centroid(kept);
  if (!c) return Heatmap(raw.width, raw.height);
  return circular_mask(*c, radius, raw.width, raw.height);
}

/// KL divergence between the two maps' high-confidence value histograms:
/// values strictly above low_cut are binned into `bins` equal-width bins on
/// (low_cut, 1.0], smoothed additively, normalized, then sum p*ln(p/q).
inline double kl_divergence(const Heatmap& a, const Heatmap& b,
                            double low_cut = 0.4, int bins = 20,
                            double epsilon = 1e-9) {
  if (bins < 1) throw std::invalid_argument("kl_divergence: bins must be >= 1");
  const double bin_width = (1.0 - low_cut) / bins;
  auto histogram = [&](const Heatmap& m) {
    std::vector<double> h(static_cast<size_t>(bins), 0.0);
    for (double v : m.values) {
      if (v <= low_cut) continue;
      // (low_cut + i*w, low_cut + (i+1)*w] gets index i.
      int idx = static_cast<int>(std::ceil((v - low_cut) / bin_width)) - 1;
      idx = std::clamp(idx, 0, bins - 1);
      h[static_cast<size_t>(idx)] += 1.0;
    }
    double total = 0.0;
    for (double& c : h) {
      c += epsilon;
      total += c;
    }
    for (double& c : h) c /= total;
    return h;
  };
  const auto p = histogram(a), q = histogram(b);
  double kl = 0.0;
  for (size_t i = 0; i < p.size(); ++i) kl += p[i] * std::log(p[i] / q[i]);
  return std::max(0.0, kl);  // guard fp rounding; Gibbs says kl >= 0
}

/// Non-overlapping block average, e.g. 64x64 -> 8x8 policy features.
inline std::vector<double> average_pool(const Heatmap& map, int out_w = 8,
                                        int out_h = 8) {
  if (out_w <= 0 || out_h <= 0 || map.width % out_w != 0 ||
      map.height % out_h != 0)
    throw std::invalid_argument("average_pool: output must tile the map");
  const int bw = map.width / out_w, bh = map.height / out_h;
  std::vector<double> pooled(static_cast<size_t>(out_w) * out_h, 0.0);
  for (int ov = 0; ov < out_h; ++ov) {
    for (int ou = 0; ou < out_w; ++ou) {
      double sum = 0.0;
      for (int v = ov * bh; v < (ov + 1) * bh; ++v)
        for (int u = ou * bw; u < (ou + 1) * bw; ++u) sum += map.at(u, v);
      pooled[static_cast<size_t>(ov) * out_w + ou] = sum / (bw * bh);
    }
  }
  return pooled;
}

/// Text serialization: "GMAP <width> <height>" then one row per line of
/// space-separated full-precision decimals.
inline std::string heatmap_to_text(const Heatmap& map) {
  std::string out = "GMAP " + std::to_string(map.width) + " " +
                    std::to_string(map.height) + "\n";
  char buf[32];
  for (int v = 0; v < map.height; ++v) {
    for (int u = 0; u < map.width; ++u) {
      std::snprintf(buf, sizeof buf, "%.17g", map.at(u, v));
      out += buf;
      out += (u + 1 == map.width) ? '\n' : ' ';
    }
  }
  return out;
}

inline Heatmap heatmap_from_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("heatmap: empty input (line 1)");
  std::istringstream header(line);
  std::string magic;
  int w = 0, h = 0;
  if (!(header >> magic >> w >> h) || magic != "GMAP" || w <= 0 || h <= 0)
    throw std::runtime_error("heatmap: malformed header (line 1): " + line);
  Heatmap map(w, h);
  for (int v = 0; v < h; ++v) {
    if (!std::getline(in, line))
      throw std::runtime_error("heatmap: missing row (line " +
                               std::to_string(v + 2) + ")");
    const char* s = line.c_str();
    for (int u = 0; u < w; ++u) {
      char* end = nullptr;
      const double val = std::strtod(s, &end);
      if (end == s)
        throw std::runtime_error("heatmap: non-numeric cell (line " +
                                 std::to_string(v + 2) + ")");
      map.at(u, v) = val;
      s = end;
    }
    char* end = nullptr;
    std::strtod(s, &end);
    if (end != s)
      throw std::runtime_error("heatmap: too many cells (line " +
                               std::to_string(v + 2) + ")");
  }
  return map;
}

inline void save_heatmap(const Heatmap& map, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write heatmap: " + path);
  out << heatmap_to_text(map);
}

inline Heatmap load_heatmap(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read heatmap: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return heatmap_from_text(buf.str());
}

}  // namespace crossgrip
