// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "echoreg/data.hpp"
#include "echoreg/rng.hpp"

namespace echoreg::data {

namespace {

// Per-clip random streams.
constexpr std::uint64_t kPlacementStream = 1;
constexpr std::uint64_t kSpeckleStream = 2;
// Dataset-level streams.
constexpr std::uint64_t kClipSeedStream = 1;
constexpr std::uint64_t kLabelStream = 2;

constexpr int kSuper = 8;

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

struct Placement {
  double cx = 0.0;
  double cy = 0.0;
  std::size_t phase = 0;
};

Placement place(const SyntheticParams& p) {
  Rng rng(derive_seed(p.seed, kPlacementStream));
  Placement pl;
  pl.cx = 0.5 * static_cast<double>(p.width) + rng.uniform(-p.center_jitter, p.center_jitter);
  pl.cy = 0.5 * static_cast<double>(p.height) + rng.uniform(-p.center_jitter, p.center_jitter);
  pl.phase = rng.below(p.cycle_period);
  return pl;
}

// Area relative to the maximal area; 1 at phase 0, 1 - ef/100 half a cycle later.
double relative_area(const SyntheticParams& p, std::size_t t, std::size_t phase) {
  const double angle = 2.0 * std::numbers::pi * static_cast<double>((t + phase) % p.cycle_period) /
                       static_cast<double>(p.cycle_period);
  return 1.0 - 0.01 * p.target_ef * 0.5 * (1.0 - std::cos(angle));
}

}  // namespace

void validate_clip(const VideoClip& clip) {
  if (clip.frames.rank() != 4) {
    throw ShapeError("clip frames must be T x H x W x C, got " +
                     shape_to_string(clip.frames.shape()));
  }
  if (!(clip.label >= 0.0 && clip.label <= 100.0)) {
    throw std::invalid_argument("clip label must lie in [0, 100], got " +
                                std::to_string(clip.label));
  }
  for (double v : clip.frames.data()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument("clip pixel outside [0, 1]: " + std::to_string(v));
    }
  }
}

double ef_from_volumes(const VolumePair& v) {
  if (!(v.edv > 0.0)) throw std::invalid_argument("EDV must be positive");
  if (!(v.esv >= 0.0 && v.esv <= v.edv)) {
    throw std::invalid_argument("ESV must lie in [0, EDV]");
  }
  return 100.0 * (v.edv - v.esv) / v.edv;
}

void validate(const SyntheticParams& p) {
  if (!(p.target_ef >= 0.0 && p.target_ef <= 90.0)) {
    throw std::invalid_argument("target_ef must lie in [0, 90], got " +
                                std::to_string(p.target_ef));
  }
  if (p.frames == 0 || p.height == 0 || p.width == 0) {
    throw std::invalid_argument("clip extents must be positive");
  }
  if (p.cycle_period < 2) throw std::invalid_argument("cycle_period must be at least 2 frames");
  if (!(p.base_radius > 0.0)) throw std::invalid_argument("base_radius must be positive");
  if (!(p.noise_std >= 0.0)) throw std::invalid_argument("noise_std must be non-negative");
  if (!(p.center_jitter >= 0.0)) throw std::invalid_argument("center_jitter must be non-negative");
  // Worst-case jitter at maximal extent must keep half a pixel of margin.
  const double h = static_cast<double>(p.height);
  const double w = static_cast<double>(p.width);
  const double b = p.base_radius * h;
  const double a = SyntheticParams::kAspect * p.base_radius * w;
  if (0.5 * h + p.center_jitter + b > h - 0.5 || 0.5 * w + p.center_jitter + a > w - 0.5) {
    throw std::invalid_argument("chamber exceeds the frame at maximal extent");
  }
}

std::vector<double> chamber_coverage(const SyntheticParams& p, std::size_t t) {
  validate(p);
  const Placement pl = place(p);
  const double s = std::sqrt(relative_area(p, t, pl.phase));
  const double b = s * p.base_radius * static_cast<double>(p.height);
  const double a = s * SyntheticParams::kAspect * p.base_radius * static_cast<double>(p.width);
  std::vector<double> cov(p.height * p.width, 0.0);
  if (a <= 0.0 || b <= 0.0) return cov;
  // Normalized radius changes by at most ~0.71 / min(a, b) across a pixel.
  const double margin = 1.0 / std::min(a, b);
  const auto inside = [&](double x, double y) {
    const double u = (x - pl.cx) / a;
    const double v = (y - pl.cy) / b;
    return u * u + v * v <= 1.0;
  };
  for (std::size_t i = 0; i < p.height; ++i) {
    for (std::size_t j = 0; j < p.width; ++j) {
      const double x = static_cast<double>(j) + 0.5;
      const double y = static_cast<double>(i) + 0.5;
      const double u = (x - pl.cx) / a;
      const double v = (y - pl.cy) / b;
      const double r = std::sqrt(u * u + v * v);
      double c = 0.0;
      if (r <= 1.0 - margin) {
        c = 1.0;
      } else if (r < 1.0 + margin) {
        int hits = 0;
        for (int sy = 0; sy < kSuper; ++sy) {
          for (int sx = 0; sx < kSuper; ++sx) {
            hits += inside(static_cast<double>(j) + (sx + 0.5) / kSuper,
                           static_cast<double>(i) + (sy + 0.5) / kSuper);
          }
        }
        c = static_cast<double>(hits) / (kSuper * kSuper);
      }
      cov[i * p.width + j] = c;
    }
  }
  return cov;
}

VideoClip generate_synthetic_clip(const SyntheticParams& p) {
  validate(p);
  const std::size_t plane = p.height * p.width;
  // The speckle field is static so a static chamber yields zero differences.
  std::vector<double> background(plane);
  Rng speckle(derive_seed(p.seed, kSpeckleStream));
  const double half_width = std::sqrt(3.0) * p.noise_std;  // uniform with std noise_std
  for (double& v : background) {
    v = SyntheticParams::kBackground + speckle.uniform(-half_width, half_width);
  }
  VideoClip clip;
  clip.frames = Tensor({p.frames, p.height, p.width, 1});
  auto out = clip.frames.data();
  for (std::size_t t = 0; t < p.frames; ++t) {
    const std::vector<double> cov = chamber_coverage(p, t);
    for (std::size_t k = 0; k < plane; ++k) {
      const double v = background[k] + (SyntheticParams::kChamber - background[k]) * cov[k];
      out[t * plane + k] = to_f32(std::clamp(v, 0.0, 1.0));
    }
  }
  clip.label = to_f32(p.target_ef);
  return clip;
}

std::vector<VideoClip> generate_dataset(const DatasetSpec& spec) {
  if (!(spec.ef_min <= spec.ef_max)) throw std::invalid_argument("ef_min must not exceed ef_max");
  std::vector<VideoClip> clips;
  clips.reserve(spec.count);
  Rng labels(derive_seed(spec.base.seed, kLabelStream));
  const std::uint64_t clip_root = derive_seed(spec.base.seed, kClipSeedStream);
  for (std::size_t i = 0; i < spec.count; ++i) {
    SyntheticParams p = spec.base;
    p.target_ef = labels.uniform(spec.ef_min, spec.ef_max);
    p.seed = derive_seed(clip_root, i);
    clips.push_back(generate_synthetic_clip(p));
  }
  return clips;
}

}  // namespace echoreg::data
