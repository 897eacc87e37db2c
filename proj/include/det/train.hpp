#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <future>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dataset.hpp"
#include "errors.hpp"
#include "geometry.hpp"
#include "tree.hpp"

namespace det {

//! Training knobs. min_leaf_width empty means "choose automatically" from a
//! per-dimension Scott-like rule; root_box empty means "data extent plus a
//! sliver of padding above the maximum", so every point is strictly inside.
struct TrainConfig {
  std::vector<double> min_leaf_width;     // empty => automatic
  double min_leaf_weight = 0.0;
  std::size_t max_depth = 64;
  std::optional<HyperRect> root_box;      // empty => padded data extent
  double extent_padding = 1e-9;           // relative, applied above the max
};

//! A scored split: threshold in dimension dim, with the summed child error
//! (lower is better) and the weight landing on each side.
struct SplitCandidate {
  std::size_t dim = 0;
  double threshold = 0.0;
  double score = 0.0;       // R(left) + R(right), to be minimized
  double gain = 0.0;        // R(node) - score, always >= 0 for accepted splits
  double left_weight = 0.0;
  double right_weight = 0.0;
};

//! Cost of replacing a cell's sample by a constant density:
//! R = -weight^2 / (total_weight^2 * volume). Always <= 0; more negative
//! cells are better explained by a single constant.
inline double replacement_error(double weight, double total_weight, double volume)
{
  if (!(volume > 0.0) || !std::isfinite(volume))
    throw InvalidVolume("replacement_error: volume must be positive and finite");
  if (!(total_weight > 0.0) || !std::isfinite(total_weight))
    throw InvalidWeight("replacement_error: total weight must be positive and finite");
  if (!(weight >= 0.0) || !std::isfinite(weight))
    throw InvalidWeight("replacement_error: weight must be non-negative and finite");
  return -(weight * weight) / (total_weight * total_weight * volume);
}

//! Error reduction achieved by a split; the best split minimizes
//! left_R + right_R, equivalently maximizes this gain.
inline double gini_gain(double node_R, double left_R, double right_R)
{
  return node_R - left_R - right_R;
}

//! Splits with gain at or below this threshold are treated as uninformative
//! and rejected, which stops recursion on duplicate-heavy nodes.
inline constexpr double kMinSplitGain = 1e-12;

namespace detail {

struct ScanResult {
  SplitCandidate candidate;
  std::size_t left_count = 0; // rows strictly below the threshold
};

//! Split search over a node given per-dimension sorted row indices.
//! order[d][begin..end) lists the node's rows sorted ascending by
//! (coordinate in d, row index). Candidates are midpoints between
//! consecutive distinct values; the scan visits dimensions in ascending
//! order and thresholds in ascending order, keeping the first strict
//! improvement, so ties resolve to the smallest (dim, threshold).
inline std::optional<ScanResult> scan_splits(const Dataset& data,
                                             std::span<const std::vector<std::uint32_t>> order,
                                             std::size_t begin, std::size_t end,
                                             const HyperRect& box, double node_weight,
                                             double total_weight,
                                             std::span<const double> min_width,
                                             double min_weight)
{
  const std::size_t n_dims = data.n_dims();
  const double node_volume = box.volume();
  const double node_R = replacement_error(node_weight, total_weight, node_volume);

  std::optional<ScanResult> best;
  for (std::size_t d = 0; d < n_dims; ++d) {
    const double lo = box.lo[d];
    const double hi = box.hi[d];
    double left_w = 0.0;
    std::size_t i = begin;
    while (i < end) {
      // consume one run of equal coordinates
      const double v = data.coord(order[d][i], d);
      std::size_t j = i;
      double run_w = 0.0;
      while (j < end && data.coord(order[d][j], d) == v) {
        run_w += data.weight(order[d][j]);
        ++j;
      }
      left_w += run_w;
      if (j == end)
        break; // no further distinct value, so no candidate after this run
      const double next_v = data.coord(order[d][j], d);
      const double thr = 0.5 * (v + next_v);
      i = j;
      if (!(v < thr && thr < next_v))
        continue; // midpoint collapsed onto a data value in float arithmetic
      if (thr - lo < min_width[d] || hi - thr < min_width[d])
        continue;
      const double right_w = node_weight - left_w;
      if (left_w < min_weight || right_w < min_weight)
        continue;
      double left_volume = 1.0;
      double right_volume = 1.0;
      for (std::size_t k = 0; k < n_dims; ++k) {
        left_volume *= (k == d ? thr : box.hi[k]) - box.lo[k];
        right_volume *= box.hi[k] - (k == d ? thr : box.lo[k]);
      }
      const double score = -(left_w * left_w) / (total_weight * total_weight * left_volume) +
                           -(right_w * right_w) / (total_weight * total_weight * right_volume);
      if (!best || score < best->candidate.score) {
        best = ScanResult{{d, thr, score, node_R - score, left_w, right_w}, j - begin};
      }
    }
  }
  if (!best || best->candidate.gain <= kMinSplitGain)
    return std::nullopt;
  return best;
}

inline std::vector<std::vector<std::uint32_t>> sorted_orders(const Dataset& data)
{
  std::vector<std::vector<std::uint32_t>> order(data.n_dims());
  for (std::size_t d = 0; d < data.n_dims(); ++d) {
    auto& idx = order[d];
    idx.resize(data.n_rows());
    for (std::size_t i = 0; i < idx.size(); ++i)
      idx[i] = static_cast<std::uint32_t>(i);
    std::sort(idx.begin(), idx.end(), [&](std::uint32_t a, std::uint32_t b) {
      const double va = data.coord(a, d);
      const double vb = data.coord(b, d);
      return va < vb || (va == vb && a < b);
    });
  }
  return order;
}

//! Recursive grower. Each node owns the contiguous range [begin, end) of
//! every per-dimension order array; children re-partition those ranges in
//! place and own disjoint sub-ranges, so parallel subtree growth shares no
//! mutable state. Every grown subtree is returned as a self-contained
//! preorder block; parents splice blocks in a fixed order, which makes the
//! result independent of how subtrees were scheduled across threads.
class Grower {
public:
  Grower(const Dataset& data, double total_weight, std::vector<double> min_width,
         double min_weight, std::size_t max_depth, unsigned n_jobs)
      : data_(data),
        order_(sorted_orders(data)),
        min_width_(std::move(min_width)),
        min_weight_(min_weight),
        max_depth_(max_depth),
        total_weight_(total_weight),
        spare_workers_(n_jobs > 0 ? static_cast<int>(n_jobs) - 1 : 0)
  {
  }

  std::vector<TreeNode> grow(std::size_t begin, std::size_t end, HyperRect box,
                             double node_weight, std::size_t depth)
  {
    std::optional<ScanResult> best;
    if (depth < max_depth_)
      best = scan_splits(data_, order_, begin, end, box, node_weight, total_weight_,
                         min_width_, min_weight_);
    if (!best)
      return {TreeNode::leaf(leaf_density(node_weight, total_weight_, box.volume()))};

    const std::size_t mid = begin + best->left_count;
    partition(begin, mid, end, best->candidate.dim, best->candidate.threshold);

    HyperRect left_box = box;
    left_box.hi[best->candidate.dim] = best->candidate.threshold;
    HyperRect right_box = std::move(box);
    right_box.lo[best->candidate.dim] = best->candidate.threshold;

    std::vector<TreeNode> left_block;
    std::vector<TreeNode> right_block;
    if (try_fork(end - begin, depth)) {
      auto pending = std::async(std::launch::async,
                                [this, mid, end, rb = std::move(right_box),
                                 w = best->candidate.right_weight, depth]() mutable {
                                  return grow(mid, end, std::move(rb), w, depth + 1);
                                });
      left_block = grow(begin, mid, std::move(left_box), best->candidate.left_weight, depth + 1);
      right_block = pending.get();
      spare_workers_.fetch_add(1, std::memory_order_relaxed);
    } else {
      left_block = grow(begin, mid, std::move(left_box), best->candidate.left_weight, depth + 1);
      right_block = grow(mid, end, std::move(right_box), best->candidate.right_weight, depth + 1);
    }

    std::vector<TreeNode> out;
    out.reserve(1 + left_block.size() + right_block.size());
    TreeNode head = TreeNode::internal(static_cast<std::int32_t>(best->candidate.dim),
                                       best->candidate.threshold);
    head.left = 1;
    head.right = static_cast<std::uint32_t>(1 + left_block.size());
    out.push_back(head);
    append_with_offset(out, left_block, 1);
    append_with_offset(out, right_block, 1 + static_cast<std::uint32_t>(left_block.size()));
    return out;
  }

private:
  void partition(std::size_t begin, std::size_t mid, std::size_t end, std::size_t split_dim,
                 double thr)
  {
    for (std::size_t d = 0; d < order_.size(); ++d) {
      if (d == split_dim)
        continue; // its own sorted order is already partitioned at mid
      std::stable_partition(order_[d].begin() + static_cast<std::ptrdiff_t>(begin),
                            order_[d].begin() + static_cast<std::ptrdiff_t>(end),
                            [&](std::uint32_t i) { return data_.coord(i, split_dim) < thr; });
    }
    (void)mid;
  }

  bool try_fork(std::size_t node_rows, std::size_t depth)
  {
    if (depth > 16 || node_rows < 4096)
      return false; // too small to pay for a thread
    int avail = spare_workers_.load(std::memory_order_relaxed);
    while (avail > 0) {
      if (spare_workers_.compare_exchange_weak(avail, avail - 1, std::memory_order_relaxed))
        return true;
    }
    return false;
  }

  static void append_with_offset(std::vector<TreeNode>& out, const std::vector<TreeNode>& block,
                                 std::uint32_t offset)
  {
    for (TreeNode n : block) {
      if (!n.is_leaf()) {
        n.left += offset;
        n.right += offset;
      }
      out.push_back(n);
    }
  }

  const Dataset& data_;
  std::vector<std::vector<std::uint32_t>> order_;
  std::vector<double> min_width_;
  double min_weight_;
  std::size_t max_depth_;
  double total_weight_;
  std::atomic<int> spare_workers_;
};

} // namespace detail

//! The root box used when none is given explicitly: the data extent, padded
//! above the maximum so every point is strictly below the upper bound. A
//! dimension with zero extent is widened by a value-scaled sliver.
inline HyperRect resolve_root_box(const Dataset& data, const TrainConfig& config)
{
  if (config.root_box) {
    const HyperRect& box = *config.root_box;
    if (box.n_dims() != data.n_dims())
      throw DimensionMismatch("explicit root box dimensionality does not match data");
    for (std::size_t i = 0; i < data.n_rows(); ++i) {
      for (std::size_t d = 0; d < data.n_dims(); ++d) {
        const double v = data.coord(i, d);
        if (v < box.lo[d] || v > box.hi[d])
          throw PointOutsideBox("row " + std::to_string(i) + " lies outside the root box in dimension " +
                                std::to_string(d));
      }
    }
    return box;
  }
  if (data.n_rows() == 0)
    throw EmptyDataset("cannot derive a root box from an empty dataset");
  std::vector<double> lo(data.n_dims()), hi(data.n_dims());
  for (std::size_t d = 0; d < data.n_dims(); ++d) {
    double mn = data.coord(0, d);
    double mx = mn;
    for (std::size_t i = 1; i < data.n_rows(); ++i) {
      mn = std::min(mn, data.coord(i, d));
      mx = std::max(mx, data.coord(i, d));
    }
    const double extent = mx - mn;
    lo[d] = mn;
    hi[d] = extent > 0.0 ? mx + config.extent_padding * extent
                         : mx + std::max(std::abs(mx), 1.0) * config.extent_padding;
  }
  return HyperRect::create(std::move(lo), std::move(hi));
}

//! Automatic per-dimension resolution floor: 3.49 sigma N^(-1/3) with the
//! weighted standard deviation, clamped to at least 2^-20 of the root
//! extent so a degenerate dimension still gets a positive floor.
inline std::vector<double> auto_min_leaf_width(const Dataset& data, const HyperRect& root_box)
{
  if (data.n_rows() == 0 || !(data.total_weight() > 0.0))
    throw EmptyDataset("automatic leaf width needs data with positive total weight");
  const double n_factor = std::pow(static_cast<double>(data.n_rows()), -1.0 / 3.0);
  std::vector<double> width(data.n_dims());
  for (std::size_t d = 0; d < data.n_dims(); ++d) {
    double mean = 0.0;
    for (std::size_t i = 0; i < data.n_rows(); ++i)
      mean += data.weight(i) * data.coord(i, d);
    mean /= data.total_weight();
    double var = 0.0;
    for (std::size_t i = 0; i < data.n_rows(); ++i) {
      const double dx = data.coord(i, d) - mean;
      var += data.weight(i) * dx * dx;
    }
    var /= data.total_weight();
    const double floor = root_box.width(d) / 1048576.0; // 2^20 cells at most
    width[d] = std::max(3.49 * std::sqrt(var) * n_factor, floor);
  }
  return width;
}

//! Expands the configured minimal leaf width: empty => automatic rule, one
//! value => broadcast to every dimension, else exactly one value per
//! dimension.
inline std::vector<double> resolve_min_leaf_width(const Dataset& data, const HyperRect& root_box,
                                                  const TrainConfig& config)
{
  if (config.min_leaf_width.empty())
    return auto_min_leaf_width(data, root_box);
  std::vector<double> width = config.min_leaf_width;
  if (width.size() == 1 && data.n_dims() > 1)
    width.assign(data.n_dims(), width[0]);
  if (width.size() != data.n_dims())
    throw DimensionMismatch("min_leaf_width needs one value per dimension");
  for (double w : width) {
    if (!(w > 0.0) || !std::isfinite(w))
      throw InvalidVolume("min_leaf_width values must be positive and finite");
  }
  return width;
}

//! Best admissible split of a node holding exactly the rows of `points`,
//! inside `box`, where total_weight is the full training weight used for
//! normalization. Returns nothing when no candidate clears the width,
//! weight and gain requirements.
inline std::optional<SplitCandidate> best_split(const Dataset& points, const HyperRect& box,
                                                double total_weight, const TrainConfig& config)
{
  if (box.n_dims() != points.n_dims())
    throw DimensionMismatch("box dimensionality does not match data");
  if (points.n_rows() == 0)
    return std::nullopt;
  const std::vector<double> min_width = resolve_min_leaf_width(points, box, config);
  const auto order = detail::sorted_orders(points);
  auto found = detail::scan_splits(points, order, 0, points.n_rows(), box,
                                   points.total_weight(), total_weight, min_width,
                                   config.min_leaf_weight);
  if (!found)
    return std::nullopt;
  return found->candidate;
}

//! Grows a density tree by greedy recursive splitting: each node takes the
//! admissible split with the lowest summed child replacement error, until no
//! split clears the gain threshold or max_depth is reached. The result is
//! bit-identical no matter how many worker threads grow subtrees.
inline DensityTree train(const Dataset& data, const TrainConfig& config, unsigned n_jobs = 1)
{
  if (data.n_rows() == 0 || !(data.total_weight() > 0.0))
    throw EmptyDataset("training needs at least one row with positive total weight");
  if (config.max_depth < 1)
    throw std::invalid_argument("max_depth must be at least 1");
  if (!(config.min_leaf_weight >= 0.0) || !std::isfinite(config.min_leaf_weight))
    throw InvalidWeight("min_leaf_weight must be non-negative and finite");

  HyperRect root_box = resolve_root_box(data, config);
  std::vector<double> min_width = resolve_min_leaf_width(data, root_box, config);

  detail::Grower grower(data, data.total_weight(), std::move(min_width),
                        config.min_leaf_weight, config.max_depth, n_jobs);
  std::vector<TreeNode> nodes = grower.grow(0, data.n_rows(), root_box, data.total_weight(), 1);
  return DensityTree::from_parts(data.columns(), std::move(root_box), data.total_weight(),
                                 std::move(nodes));
}

} // namespace det
