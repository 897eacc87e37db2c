#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "tree.hpp"

namespace det {

//! Counters filled in by query functions; nodes_visited is the number of
//! tree nodes actually examined, which pruning keeps far below the node
//! count for narrow queries.
struct QueryStats {
  std::size_t nodes_visited = 0;
};

//! Integral of the estimator over an axis-aligned region: the sum of
//! density times overlap volume over every leaf intersecting the region.
//! Subtrees whose box misses the region are skipped whole.
inline double integrate_box(const DensityTree& tree, const HyperRect& region,
                            QueryStats* stats = nullptr)
{
  if (region.n_dims() != tree.n_dims())
    throw DimensionMismatch("region dimensionality does not match tree");
  struct Frame {
    std::uint32_t index;
    HyperRect box;
  };
  std::vector<Frame> stack;
  stack.push_back({0, tree.root_box()});
  double sum = 0.0;
  std::size_t visited = 0;
  while (!stack.empty()) {
    Frame f = std::move(stack.back());
    stack.pop_back();
    ++visited;
    double overlap = 1.0;
    bool empty = false;
    for (std::size_t d = 0; d < tree.n_dims() && !empty; ++d) {
      const double w = std::min(f.box.hi[d], region.hi[d]) - std::max(f.box.lo[d], region.lo[d]);
      if (w <= 0.0)
        empty = true;
      else
        overlap *= w;
    }
    if (empty)
      continue;
    const TreeNode& n = tree.node(f.index);
    if (n.is_leaf()) {
      sum += n.value * overlap;
      continue;
    }
    const auto d = static_cast<std::size_t>(n.split_dim);
    HyperRect left_box = f.box;
    left_box.hi[d] = n.value;
    HyperRect right_box = std::move(f.box);
    right_box.lo[d] = n.value;
    stack.push_back({n.right, std::move(right_box)});
    stack.push_back({n.left, std::move(left_box)});
  }
  if (stats)
    stats->nodes_visited = visited;
  return sum;
}

//! A slice integral: coordinates in slice.fixed are pinned, the remaining
//! dimensions are integrated over, optionally restricted to free_box.
//! free_box has full dimensionality for convenience; its extent in fixed
//! dimensions is ignored.
struct SliceIntegralQuery {
  SliceSpec slice;
  std::optional<HyperRect> free_box;
};

namespace detail {

//! Pruned descent shared by slice integration and conditional sampling:
//! calls visit(leaf_index, leaf_box) for every leaf containing all fixed
//! coordinates and overlapping free_box in every free dimension, in
//! left-to-right order. When a node splits on a fixed dimension only the
//! child containing the value is entered; children with empty free overlap
//! are dropped. Returns the number of nodes examined.
template <typename Visitor>
std::size_t walk_slice(const DensityTree& tree, const SliceSpec& slice,
                       const HyperRect& free_box, Visitor&& visit)
{
  const std::size_t n_dims = tree.n_dims();
  const HyperRect& root = tree.root_box();
  // root-level admissibility: fixed values inside the (top-closed) root box,
  // free ranges overlapping
  for (const auto& [d, v] : slice.fixed) {
    if (v < root.lo[d] || v > root.hi[d])
      return 0;
  }
  for (std::size_t d = 0; d < n_dims; ++d) {
    if (slice.is_fixed(d))
      continue;
    if (std::min(root.hi[d], free_box.hi[d]) - std::max(root.lo[d], free_box.lo[d]) <= 0.0)
      return 0;
  }

  struct Frame {
    std::uint32_t index;
    HyperRect box;
  };
  std::vector<Frame> stack;
  stack.push_back({0, root});
  std::size_t visited = 0;
  while (!stack.empty()) {
    Frame f = std::move(stack.back());
    stack.pop_back();
    ++visited;
    const TreeNode& n = tree.node(f.index);
    if (n.is_leaf()) {
      visit(static_cast<std::size_t>(f.index), f.box);
      continue;
    }
    const auto d = static_cast<std::size_t>(n.split_dim);
    const double thr = n.value;
    if (const auto it = slice.fixed.find(d); it != slice.fixed.end()) {
      // pinned dimension: exactly one child contains the fixed value
      HyperRect box = std::move(f.box);
      if (it->second < thr) {
        box.hi[d] = thr;
        stack.push_back({n.left, std::move(box)});
      } else {
        box.lo[d] = thr;
        stack.push_back({n.right, std::move(box)});
      }
      continue;
    }
    // free dimension: keep children whose range still overlaps free_box
    const bool keep_left = std::min(thr, free_box.hi[d]) - std::max(f.box.lo[d], free_box.lo[d]) > 0.0;
    const bool keep_right = std::min(f.box.hi[d], free_box.hi[d]) - std::max(thr, free_box.lo[d]) > 0.0;
    if (keep_left && keep_right) {
      HyperRect left_box = f.box;
      left_box.hi[d] = thr;
      HyperRect right_box = std::move(f.box);
      right_box.lo[d] = thr;
      stack.push_back({n.right, std::move(right_box)});
      stack.push_back({n.left, std::move(left_box)});
    } else if (keep_left) {
      HyperRect box = std::move(f.box);
      box.hi[d] = thr;
      stack.push_back({n.left, std::move(box)});
    } else if (keep_right) {
      HyperRect box = std::move(f.box);
      box.lo[d] = thr;
      stack.push_back({n.right, std::move(box)});
    }
  }
  return visited;
}

} // namespace detail

//! Integral of the estimator over the free dimensions of a slice: the sum,
//! over leaves whose box contains every fixed coordinate, of density times
//! the free-dimension overlap volume. Narrow slices touch a small fraction
//! of the tree thanks to the pruned descent.
inline double integrate_slice(const DensityTree& tree, const SliceIntegralQuery& query,
                              QueryStats* stats = nullptr)
{
  const std::size_t n_dims = tree.n_dims();
  query.slice.check(n_dims);
  const HyperRect& free_box = query.free_box ? *query.free_box : tree.root_box();
  if (free_box.n_dims() != n_dims)
    throw DimensionMismatch("free box dimensionality does not match tree");

  double sum = 0.0;
  const std::size_t visited =
      detail::walk_slice(tree, query.slice, free_box, [&](std::size_t leaf, const HyperRect& box) {
        double overlap = 1.0;
        for (std::size_t d = 0; d < n_dims; ++d) {
          if (query.slice.is_fixed(d))
            continue;
          overlap *= std::min(box.hi[d], free_box.hi[d]) - std::max(box.lo[d], free_box.lo[d]);
        }
        sum += tree.node(leaf).value * overlap;
      });
  if (stats)
    stats->nodes_visited = visited;
  return sum;
}

//! One-sided restriction on a single free dimension: values above (greater)
//! or at-most (not greater) the threshold.
struct HalfLineConstraint {
  std::size_t dim = 0;
  double threshold = 0.0;
  bool greater = true;
};

//! Fraction of the slice integral lying on the constrained side:
//! integrate_slice restricted to the half-line divided by the unrestricted
//! value. The result is clamped to [0,1]; a zero denominator means the
//! fixed point has no populated support.
inline double conditional_ratio(const DensityTree& tree, const SliceSpec& slice,
                                const HalfLineConstraint& constraint)
{
  const std::size_t n_dims = tree.n_dims();
  slice.check(n_dims);
  if (constraint.dim >= n_dims)
    throw DimensionMismatch("constraint dimension out of range");
  if (slice.is_fixed(constraint.dim))
    throw DimensionMismatch("constraint dimension must be free in the slice");

  const double denom = integrate_slice(tree, {slice, std::nullopt});
  if (!(denom > 0.0))
    throw NoSupport("slice has no populated support");

  const HyperRect& root = tree.root_box();
  HyperRect restricted = root;
  if (constraint.greater)
    restricted.lo[constraint.dim] = std::max(constraint.threshold, root.lo[constraint.dim]);
  else
    restricted.hi[constraint.dim] = std::min(constraint.threshold, root.hi[constraint.dim]);
  if (!(restricted.lo[constraint.dim] < restricted.hi[constraint.dim]))
    return 0.0; // constrained range misses the support entirely

  const double num = integrate_slice(tree, {slice, restricted});
  return std::clamp(num / denom, 0.0, 1.0);
}

//! One bin of a 1D projection histogram.
struct HistogramBin {
  double lo = 0.0;
  double hi = 0.0;
  double density = 0.0;
};

//! Marginal density of one dimension on a regular grid: each bin holds the
//! integral over bin-times-everything-else divided by the bin width, so
//! values integrate to the tree's total mass.
inline std::vector<HistogramBin> project_histogram(const DensityTree& tree, std::size_t dim,
                                                   std::size_t bins)
{
  if (dim >= tree.n_dims())
    throw DimensionMismatch("projection dimension out of range");
  if (bins < 1)
    throw std::invalid_argument("bins must be at least 1");
  const HyperRect& root = tree.root_box();
  const double lo = root.lo[dim];
  const double hi = root.hi[dim];
  std::vector<HistogramBin> out;
  out.reserve(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    const double b_lo = k == 0 ? lo : lo + (hi - lo) * (static_cast<double>(k) / static_cast<double>(bins));
    const double b_hi = k == bins - 1
                            ? hi
                            : lo + (hi - lo) * (static_cast<double>(k + 1) / static_cast<double>(bins));
    if (!(b_hi > b_lo))
      throw InvalidVolume("bin width collapsed to zero; use fewer bins");
    HyperRect region = root;
    region.lo[dim] = b_lo;
    region.hi[dim] = b_hi;
    const double mass = integrate_box(tree, region);
    out.push_back({b_lo, b_hi, mass / (b_hi - b_lo)});
  }
  return out;
}

} // namespace det
