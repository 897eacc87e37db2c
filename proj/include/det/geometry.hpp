#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace det {

//! Axis-aligned box with per-dimension half-open intervals [lo, hi).
//!
//! The upper face is treated as closed whenever it coincides with the root
//! box of the tree the rectangle belongs to, so that the root box covers its
//! data set including points sitting exactly on the upper boundary. That
//! check needs root-box context and therefore lives in contains_point(),
//! not here.
struct HyperRect {
  std::vector<double> lo;
  std::vector<double> hi;

  HyperRect() = default;
  HyperRect(std::vector<double> lo_, std::vector<double> hi_)
    : lo(std::move(lo_))
    , hi(std::move(hi_))
  {
  }

  //! Validating factory: requires lo[d] < hi[d] and finite bounds.
  static HyperRect create(std::vector<double> lo, std::vector<double> hi)
  {
    if (lo.size() != hi.size())
      throw DimensionMismatch("box lo/hi have different lengths");
    if (lo.empty())
      throw DimensionMismatch("box must have at least one dimension");
    for (std::size_t d = 0; d < lo.size(); ++d) {
      if (!std::isfinite(lo[d]) || !std::isfinite(hi[d]))
        throw InvalidVolume("box bound not finite in dimension " + std::to_string(d));
      if (!(lo[d] < hi[d]))
        throw InvalidVolume("box has empty extent in dimension " + std::to_string(d));
    }
    return HyperRect(std::move(lo), std::move(hi));
  }

  std::size_t n_dims() const { return lo.size(); }

  double width(std::size_t d) const { return hi[d] - lo[d]; }

  double volume() const
  {
    double v = 1.0;
    for (std::size_t d = 0; d < lo.size(); ++d)
      v *= hi[d] - lo[d];
    return v;
  }

  bool operator==(const HyperRect& other) const = default;
};

//! Membership under the half-open convention, closed at the root's upper
//! boundary: p is in box iff lo[d] <= p[d] < hi[d] for all d, where
//! p[d] == hi[d] also counts when hi[d] equals root.hi[d].
inline bool contains_point(const HyperRect& box, std::span<const double> p,
                           const HyperRect& root)
{
  for (std::size_t d = 0; d < box.n_dims(); ++d) {
    if (p[d] < box.lo[d])
      return false;
    if (p[d] > box.hi[d])
      return false;
    if (p[d] == box.hi[d] && box.hi[d] != root.hi[d])
      return false;
  }
  return true;
}

//! Length of the overlap of [a_lo, a_hi) with [b_lo, b_hi) in one dimension.
inline double overlap_width(double a_lo, double a_hi, double b_lo, double b_hi)
{
  return std::max(0.0, std::min(a_hi, b_hi) - std::max(a_lo, b_lo));
}

//! Overlap volume of two boxes of equal dimension.
inline double overlap_volume(const HyperRect& a, const HyperRect& b)
{
  double v = 1.0;
  for (std::size_t d = 0; d < a.n_dims(); ++d)
    v *= overlap_width(a.lo[d], a.hi[d], b.lo[d], b.hi[d]);
  return v;
}

//! Assignment of fixed values to a subset of dimensions; the remaining
//! dimensions are "free". Defines the hyperplane used by slice integrals
//! and conditional sampling.
struct SliceSpec {
  std::map<std::size_t, double> fixed;

  bool is_fixed(std::size_t d) const { return fixed.count(d) != 0; }

  //! Free dimension indices in ascending order, given the total dimension count.
  std::vector<std::size_t> free_dims(std::size_t n_dims) const
  {
    std::vector<std::size_t> free;
    free.reserve(n_dims - fixed.size());
    for (std::size_t d = 0; d < n_dims; ++d)
      if (!is_fixed(d))
        free.push_back(d);
    return free;
  }

  //! Checks indices against the tree dimensionality and requires at least
  //! one free dimension.
  void check(std::size_t n_dims) const
  {
    for (const auto& [d, v] : fixed) {
      if (d >= n_dims)
        throw DimensionMismatch("fixed dimension index " + std::to_string(d) +
                                " out of range for " + std::to_string(n_dims) +
                                " dimensions");
      if (!std::isfinite(v))
        throw DimensionMismatch("fixed value not finite in dimension " +
                                std::to_string(d));
    }
    if (fixed.size() >= n_dims)
      throw NoFreeDimensions("slice fixes all dimensions; use point evaluation instead");
  }
};

} // namespace det
