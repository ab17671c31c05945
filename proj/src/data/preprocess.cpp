// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "echoreg/data.hpp"
#include "echoreg/rng.hpp"

namespace echoreg::data {

Tensor frame_difference(const Tensor& frames) {
  if (frames.rank() != 4) {
    throw ShapeError("frame_difference expects T x H x W x C, got " +
                     shape_to_string(frames.shape()));
  }
  const std::size_t t = frames.shape()[0];
  if (t < 2) throw ShapeError("frame_difference needs at least 2 frames");
  Shape shape = frames.shape();
  shape[0] = t - 1;
  Tensor out(shape);
  const std::size_t plane = frames.numel() / t;
  const auto in = frames.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i + plane] - in[i];
  return out;
}

Tensor triplicate_grayscale(const Tensor& frames) {
  if (frames.rank() != 4 || frames.shape()[3] != 1) {
    throw ShapeError("triplicate_grayscale expects T x H x W x 1, got " +
                     shape_to_string(frames.shape()));
  }
  Shape shape = frames.shape();
  shape[3] = 3;
  Tensor out(shape);
  const auto in = frames.data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[3 * i] = o[3 * i + 1] = o[3 * i + 2] = in[i];
  return out;
}

DatasetSplit split_dataset(std::size_t n, const std::array<double, 3>& ratios,
                           std::uint64_t seed) {
  if (n < 3) throw std::invalid_argument("split_dataset needs at least 3 items");
  for (double r : ratios) {
    if (!(r > 0.0)) throw std::invalid_argument("split ratios must be positive");
  }
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) {
    throw std::invalid_argument("split ratios must sum to 1");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  // The epsilon keeps exact products such as 0.744 * 1000 from flooring down.
  const double dn = static_cast<double>(n);
  const auto cut1 = static_cast<std::size_t>(std::floor(ratios[0] * dn + 1e-9));
  const auto cut2 = std::min(
      n, static_cast<std::size_t>(std::floor((ratios[0] + ratios[1]) * dn + 1e-9)));
  DatasetSplit s;
  s.seed = seed;
  s.ratios = ratios;
  s.train.assign(order.begin(), order.begin() + static_cast<long>(cut1));
  s.val.assign(order.begin() + static_cast<long>(cut1), order.begin() + static_cast<long>(cut2));
  s.test.assign(order.begin() + static_cast<long>(cut2), order.end());
  return s;
}

}  // namespace echoreg::data
