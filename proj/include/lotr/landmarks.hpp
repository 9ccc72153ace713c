#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "lotr/tensor.hpp"

namespace lotr {

/// N landmark coordinates (x, y) in pixel units of a width x height image.
struct LandmarkSet {
  Tensor coords;  // N x 2
  std::size_t width = 0;
  std::size_t height = 0;

  std::size_t count() const { return coords.dim(0); }
  double x(std::size_t i) const { return coords[2 * i]; }
  double y(std::size_t i) const { return coords[2 * i + 1]; }

  void validate() const {
    if (coords.rank() != 2 || coords.dim(1) != 2)
      throw ShapeError("landmarks must be N x 2, got " + to_string(coords.shape()));
    if (!all_finite(coords)) throw NumericError("landmark coordinates are not finite");
  }
};

/// Left/right pairing of landmark indices. Must be an involution.
class SwapMap {
 public:
  SwapMap() = default;

  explicit SwapMap(std::vector<std::size_t> perm) : perm_(std::move(perm)) {
    const std::size_t n = perm_.size();
    for (std::size_t i = 0; i < n; ++i) {
      if (perm_[i] >= n) throw ConfigError("swap map index " + std::to_string(perm_[i]) + " out of range");
      if (perm_[perm_[i]] != i)
        throw ConfigError("swap map is not an involution at index " + std::to_string(i));
    }
  }

  static SwapMap identity(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    return SwapMap(std::move(p));
  }

  std::size_t size() const { return perm_.size(); }
  std::size_t operator[](std::size_t i) const { return perm_[i]; }
  const std::vector<std::size_t>& indices() const { return perm_; }

 private:
  std::vector<std::size_t> perm_;
};

/// Mirror of an image [C x H x W] about its vertical axis.
inline Tensor flip_image_horizontal(const Tensor& image) {
  if (image.rank() != 3) throw ShapeError("image must be C x H x W, got " + to_string(image.shape()));
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor out(image.shape());
  auto o = out.mutable_data();
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) o[(k * h + y) * w + x] = image[(k * h + y) * w + (w - 1 - x)];
  return out;
}

/// Landmarks of the mirrored image: x <- (W - 1) - x, indices permuted by the swap map.
inline LandmarkSet flip_landmarks(const LandmarkSet& s, const SwapMap& swap) {
  const std::size_t n = s.count();
  if (swap.size() != n)
    throw ConfigError("swap map covers " + std::to_string(swap.size()) + " landmarks, set has " + std::to_string(n));
  Tensor out({n, 2});
  auto o = out.mutable_data();
  const double right = static_cast<double>(s.width) - 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    o[2 * i] = right - s.x(swap[i]);
    o[2 * i + 1] = s.y(swap[i]);
  }
  return {out, s.width, s.height};
}

}  // namespace lotr
