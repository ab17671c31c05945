// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "echoreg/errors.hpp"
#include "echoreg/tensor.hpp"

namespace echoreg::data {

/// One clip: frames T x H x W x C with pixels in [0, 1] and an EF label in
/// percent.
struct VideoClip {
  Tensor frames;
  double label = 0.0;
};

/// Throws ShapeError / std::invalid_argument when the clip invariants fail.
void validate_clip(const VideoClip& clip);

struct VolumePair {
  double edv = 0.0;
  double esv = 0.0;
};

/// 100 (EDV - ESV) / EDV.
double ef_from_volumes(const VolumePair& v);

/// A filled ellipse whose area oscillates sinusoidally over the clip. Lengths
/// are in pixels except `base_radius`, the vertical semi-axis at maximal
/// extent as a fraction of the frame height; the horizontal semi-axis is
/// `kAspect` times that fraction of the frame width.
struct SyntheticParams {
  static constexpr double kAspect = 0.75;
  static constexpr double kBackground = 0.1;
  static constexpr double kChamber = 0.85;

  double target_ef = 60.0;
  double base_radius = 0.3;
  std::size_t cycle_period = 28;
  double noise_std = 0.05;
  double center_jitter = 4.0;
  std::uint64_t seed = 0;
  std::size_t frames = 28;
  std::size_t height = 112;
  std::size_t width = 112;
};

void validate(const SyntheticParams& p);

/// Fraction of each pixel covered by the chamber in frame t. Exposed for
/// tests; the rendered intensity is background + (chamber - background) * coverage.
std::vector<double> chamber_coverage(const SyntheticParams& p, std::size_t t);

/// Pure function of `p`. Pixels and label are float32-representable so the
/// clip survives the record format bit-exactly.
VideoClip generate_synthetic_clip(const SyntheticParams& p);

/// d_t = f_{t+1} - f_t over the leading axis of a T x H x W x C tensor.
Tensor frame_difference(const Tensor& frames);

/// T x H x W x 1 -> T x H x W x 3 with identical channels.
Tensor triplicate_grayscale(const Tensor& frames);

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
  std::array<double, 3> ratios{};
};

/// Seeded permutation cut at floor(r0 n) and floor((r0 + r1) n); the
/// remainder goes to test.
DatasetSplit split_dataset(std::size_t n, const std::array<double, 3>& ratios,
                           std::uint64_t seed);

/// Labels drawn uniformly from [ef_min, ef_max]; every other SyntheticParams
/// field comes from `base` except the seed, which is derived per clip.
struct DatasetSpec {
  std::size_t count = 64;
  double ef_min = 20.0;
  double ef_max = 80.0;
  SyntheticParams base;
};

std::vector<VideoClip> generate_dataset(const DatasetSpec& spec);

inline constexpr char kRecordMagic[8] = {'E', 'C', 'H', 'O', 'C', 'L', 'P', '1'};
/// Magic plus five u32 fields padded to 24 bytes.
inline constexpr std::size_t kRecordHeaderBytes = 8 + 24;

std::uint64_t record_file_size(std::size_t n, const Shape& clip_shape);

void write_records(std::span<const VideoClip> clips, const std::filesystem::path& path);
std::vector<unsigned char> encode_records(std::span<const VideoClip> clips);

/// Throws FormatError carrying the byte offset of the first inconsistency.
std::vector<VideoClip> read_records(const std::filesystem::path& path);
std::vector<VideoClip> decode_records(const std::vector<unsigned char>& bytes);

}  // namespace echoreg::data
