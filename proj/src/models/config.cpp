// SPDX-License-Identifier: Apache-2.0
#include <array>
#include <cmath>
#include <utility>

#include "echoreg/models.hpp"

namespace echoreg::models {
namespace {

template <typename E, std::size_t N>
using Names = std::array<std::pair<E, const char*>, N>;

constexpr Names<Family, 9> kFamilyNames{{
    {Family::kI3dOriginal, "I3D_ORIGINAL"},
    {Family::kI3dMini, "I3D_MINI"},
    {Family::kTwoStream, "TWO_STREAM"},
    {Family::kFusionCombination, "FUSION_COMBINATION"},
    {Family::kFusionNewCombination, "FUSION_NEW_COMBINATION"},
    {Family::kFusionDualInput, "FUSION_DUAL_INPUT"},
    {Family::kFusionDualTruncated, "FUSION_DUAL_TRUNCATED"},
    {Family::kFusionSingleInput, "FUSION_SINGLE_INPUT"},
    {Family::kCnnRnnScratch, "CNN_RNN_SCRATCH"},
}};
constexpr Names<NormChoice, 3> kNormNames{{
    {NormChoice::kBatch, "batch"}, {NormChoice::kLayer, "layer"}, {NormChoice::kMixed, "mixed"}}};
constexpr Names<Conv2Kernel, 4> kKernelNames{{{Conv2Kernel::k1x1x1, "1x1x1"},
                                              {Conv2Kernel::k3x1x1, "3x1x1"},
                                              {Conv2Kernel::k3x3x3, "3x3x3"},
                                              {Conv2Kernel::kDouble3x3x3, "double-3x3x3"}}};
constexpr Names<HeadVariant, 4> kHeadNames{{{HeadVariant::kOG, "OG"},
                                            {HeadVariant::kA, "A"},
                                            {HeadVariant::kB, "B"},
                                            {HeadVariant::kC, "C"}}};
constexpr Names<CellKind, 2> kCellNames{{{CellKind::kGru, "GRU"}, {CellKind::kLstm, "LSTM"}}};

template <typename E, std::size_t N>
std::string name_of(const Names<E, N>& names, E value) {
  for (const auto& [e, n] : names) {
    if (e == value) return n;
  }
  throw std::logic_error("unnamed enum value");
}

template <typename E, std::size_t N>
E parse(const Names<E, N>& names, std::string_view s, const std::string& key) {
  std::string accepted;
  for (const auto& [e, n] : names) {
    if (s == n) return e;
    accepted += accepted.empty() ? n : std::string(", ") + n;
  }
  throw ConfigError(key, "unknown value '" + std::string(s) + "', expected one of " + accepted);
}

}  // namespace

std::string to_string(Family f) { return name_of(kFamilyNames, f); }
std::string to_string(NormChoice n) { return name_of(kNormNames, n); }
std::string to_string(Conv2Kernel k) { return name_of(kKernelNames, k); }
std::string to_string(HeadVariant h) { return name_of(kHeadNames, h); }
std::string to_string(CellKind c) { return name_of(kCellNames, c); }

Family parse_family(std::string_view s, const std::string& key) {
  return parse(kFamilyNames, s, key);
}
NormChoice parse_norm(std::string_view s, const std::string& key) {
  return parse(kNormNames, s, key);
}
Conv2Kernel parse_conv2_kernel(std::string_view s, const std::string& key) {
  return parse(kKernelNames, s, key);
}
HeadVariant parse_head(std::string_view s, const std::string& key) {
  return parse(kHeadNames, s, key);
}
CellKind parse_rnn_cell(std::string_view s, const std::string& key) {
  return parse(kCellNames, s, key);
}

bool has_i3d_stem(Family f) { return f != Family::kTwoStream && f != Family::kCnnRnnScratch; }
bool is_recurrent(Family f) { return f == Family::kCnnRnnScratch; }

void validate(const ModelConfig& c) {
  if (!(c.width_multiplier > 0.0 && c.width_multiplier <= 1.0)) {
    throw ConfigError("width_multiplier", "must lie in (0, 1]");
  }
  if (!(c.dropout_rate >= 0.0 && c.dropout_rate < 1.0)) {
    throw ConfigError("dropout_rate", "must lie in [0, 1)");
  }
  if (c.frames < 2 || c.height == 0 || c.width == 0) {
    throw ConfigError("", "clip extents must be positive with at least 2 frames");
  }
  const std::string family = to_string(c.family);
  if (c.norm == NormChoice::kMixed && !is_recurrent(c.family)) {
    throw ConfigError("norm", "mixed normalization is only valid for CNN_RNN_SCRATCH, not " +
                                  family);
  }
  if (!has_i3d_stem(c.family) && c.conv2_kernel != Conv2Kernel::k1x1x1) {
    throw ConfigError("conv2_kernel", family + " has no I3D stem conv2 layer");
  }
  if (!has_i3d_stem(c.family) && c.head != HeadVariant::kA) {
    throw ConfigError("head", family + " has a fixed regression head");
  }
  if (!is_recurrent(c.family) && c.rnn_cell != CellKind::kGru) {
    throw ConfigError("rnn_cell", family + " has no recurrent layer");
  }
  if (is_recurrent(c.family) && c.rnn_hidden == 0) {
    throw ConfigError("rnn_hidden", "must be positive");
  }
}

std::size_t scaled_width(std::size_t c, double width_multiplier) {
  const auto scaled = static_cast<std::size_t>(std::llround(static_cast<double>(c) * width_multiplier));
  return scaled == 0 ? 1 : scaled;
}

}  // namespace echoreg::models
