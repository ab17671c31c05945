// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

namespace echoreg {

enum class Padding { kSame, kValid };

/// Sliding-window geometry along one axis.
struct ConvGeometry {
  std::size_t input = 1;
  std::size_t filter = 1;
  std::size_t pad_start = 0;
  std::size_t pad_end = 0;
  std::size_t stride = 1;
};

/// floor((I - F + P_start + P_end) / S) + 1.
/// Throws std::invalid_argument when the padded input is smaller than the
/// filter or an extent/stride is zero.
std::size_t conv_output_extent(const ConvGeometry& g);

/// Geometry for an axis under a padding mode. "same" pads so the output
/// extent is ceil(I / S), splitting the total padding with the smaller half
/// first.
ConvGeometry make_geometry(std::size_t input, std::size_t filter, std::size_t stride,
                           Padding padding);

}  // namespace echoreg
