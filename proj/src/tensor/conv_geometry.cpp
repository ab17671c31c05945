// SPDX-License-Identifier: Apache-2.0
#include "echoreg/conv_geometry.hpp"

#include <stdexcept>
#include <string>

namespace echoreg {

std::size_t conv_output_extent(const ConvGeometry& g) {
  if (g.input == 0 || g.filter == 0 || g.stride == 0) {
    throw std::invalid_argument("conv geometry requires I, F, S >= 1");
  }
  const std::size_t padded = g.input + g.pad_start + g.pad_end;
  if (padded < g.filter) {
    throw std::invalid_argument("padded input " + std::to_string(padded) +
                                " smaller than filter " + std::to_string(g.filter));
  }
  return (padded - g.filter) / g.stride + 1;
}

ConvGeometry make_geometry(std::size_t input, std::size_t filter, std::size_t stride,
                           Padding padding) {
  ConvGeometry g{input, filter, 0, 0, stride};
  if (padding == Padding::kSame) {
    if (stride == 0) throw std::invalid_argument("stride must be >= 1");
    const std::size_t out = (input + stride - 1) / stride;
    const std::size_t needed = (out - 1) * stride + filter;
    const std::size_t total = needed > input ? needed - input : 0;
    g.pad_start = total / 2;
    g.pad_end = total - g.pad_start;
  }
  return g;
}

}  // namespace echoreg
