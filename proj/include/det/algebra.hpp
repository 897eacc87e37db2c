#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "tree.hpp"

namespace det {

//! Per-leaf transformation of the stored values.
struct ScalarOp {
  enum class Kind { Scale, Shift, ClampMin } kind = Kind::Scale;
  double value = 1.0;

  static ScalarOp scale(double k) { return {Kind::Scale, k}; }
  static ScalarOp shift(double k) { return {Kind::Shift, k}; }
  static ScalarOp clamp_min(double k) { return {Kind::ClampMin, k}; }
};

//! When sibling leaves count as "negligibly different" and may be merged.
struct CompactionPolicy {
  enum class Mode { Absolute, Relative };
  double tolerance = 1e-6;
  Mode mode = Mode::Relative;

  static CompactionPolicy exact() { return {0.0, Mode::Absolute}; }

  bool mergeable(double a, double b) const
  {
    const double diff = std::abs(a - b);
    const double bound = mode == Mode::Absolute
                             ? tolerance
                             : tolerance * std::max(std::abs(a), std::abs(b));
    return diff <= bound;
  }
};

//! Applies one scalar operation to every leaf, leaving the structure
//! untouched. The result is generally not normalized. Shift clamps at zero
//! so leaf values stay valid densities.
inline DensityTree scalar_map(const DensityTree& tree, const ScalarOp& op)
{
  if (!std::isfinite(op.value))
    throw std::invalid_argument("scalar operand must be finite");
  if (op.kind == ScalarOp::Kind::Scale && op.value < 0.0)
    throw NegativeScale("scale factor must be non-negative");
  std::vector<TreeNode> nodes(tree.nodes().begin(), tree.nodes().end());
  for (TreeNode& n : nodes) {
    if (!n.is_leaf())
      continue;
    switch (op.kind) {
      case ScalarOp::Kind::Scale: n.value *= op.value; break;
      case ScalarOp::Kind::Shift: n.value = std::max(n.value + op.value, 0.0); break;
      case ScalarOp::Kind::ClampMin: n.value = std::max(n.value, op.value); break;
    }
  }
  return DensityTree::from_parts(tree.dims(), tree.root_box(), tree.total_weight(),
                                 std::move(nodes));
}

namespace detail {

inline void require_compatible(const DensityTree& a, const DensityTree& b)
{
  if (a.dims() != b.dims())
    throw IncompatibleSupport("trees are defined over different dimensions");
  if (!(a.root_box() == b.root_box()))
    throw IncompatibleSupport("trees are defined over different root boxes");
}

//! Core of align/combine: walks a's partition, and inside each a-leaf
//! replays every b split that cuts the leaf box, so the output partition
//! refines both inputs. leaf_op(a_value, a_flag, b_value, b_flag) supplies
//! each output leaf as (value, no_support). Iterative throughout, so deep
//! input trees cannot exhaust the call stack.
template <typename LeafOp>
std::vector<TreeNode> merge_partitions(const DensityTree& a, const DensityTree& b, LeafOp&& leaf_op)
{
  enum : int { WalkA, RefineB, PatchRight };
  struct Task {
    int kind;
    std::uint32_t node = 0;
    HyperRect box;
    double value = 0.0;
    bool flag = false;
    std::size_t patch = 0;
  };

  TreeBuilder builder;
  std::vector<Task> stack;
  stack.push_back({WalkA, 0, a.root_box()});
  while (!stack.empty()) {
    Task t = std::move(stack.back());
    stack.pop_back();
    if (t.kind == PatchRight) {
      builder.set_right(t.patch);
      continue;
    }
    if (t.kind == WalkA) {
      const TreeNode& an = a.node(t.node);
      if (!an.is_leaf()) {
        const auto d = static_cast<std::size_t>(an.split_dim);
        const std::size_t head = builder.begin_internal(an.split_dim, an.value);
        HyperRect left_box = t.box;
        left_box.hi[d] = an.value;
        HyperRect right_box = std::move(t.box);
        right_box.lo[d] = an.value;
        stack.push_back({WalkA, an.right, std::move(right_box)});
        stack.push_back({PatchRight, 0, {}, 0.0, false, head});
        stack.push_back({WalkA, an.left, std::move(left_box)});
        continue;
      }
      t.value = an.value;
      t.flag = an.no_support;
      t.node = 0; // start refining from b's root
    }
    // refine the box [t.box] of an a-leaf against b, descending inline along
    // the leftmost path and deferring right halves to the stack
    std::uint32_t bi = t.node;
    while (true) {
      const TreeNode& bn = b.node(bi);
      if (bn.is_leaf()) {
        const auto [v, flag] = leaf_op(t.value, t.flag, bn.value, bn.no_support);
        builder.add_leaf(v, flag);
        break;
      }
      const auto d = static_cast<std::size_t>(bn.split_dim);
      const double thr = bn.value;
      if (thr <= t.box.lo[d]) {
        bi = bn.right; // box lies entirely on the upper side
        continue;
      }
      if (thr >= t.box.hi[d]) {
        bi = bn.left; // box lies entirely on the lower side
        continue;
      }
      const std::size_t head = builder.begin_internal(bn.split_dim, thr);
      HyperRect right_box = t.box;
      right_box.lo[d] = thr;
      stack.push_back({RefineB, bn.right, std::move(right_box), t.value, t.flag});
      stack.push_back({PatchRight, 0, {}, 0.0, false, head});
      t.box.hi[d] = thr;
      bi = bn.left;
    }
  }
  return builder.take();
}

//! Volume of every node's box, computed in one preorder sweep.
inline std::vector<double> node_volumes(const DensityTree& tree)
{
  std::vector<double> vol(tree.n_nodes(), 0.0);
  struct Frame {
    std::uint32_t index;
    HyperRect box;
  };
  std::vector<Frame> stack;
  stack.push_back({0, tree.root_box()});
  while (!stack.empty()) {
    Frame f = std::move(stack.back());
    stack.pop_back();
    vol[f.index] = f.box.volume();
    const TreeNode& n = tree.node(f.index);
    if (n.is_leaf())
      continue;
    const auto d = static_cast<std::size_t>(n.split_dim);
    HyperRect left_box = f.box;
    left_box.hi[d] = n.value;
    HyperRect right_box = std::move(f.box);
    right_box.lo[d] = n.value;
    stack.push_back({n.right, std::move(right_box)});
    stack.push_back({n.left, std::move(left_box)});
  }
  return vol;
}

inline void append_block(std::vector<TreeNode>& out, const std::vector<TreeNode>& block,
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

} // namespace detail

//! Re-expresses a on a partition refining both a's and b's: the returned
//! tree evaluates identically to a everywhere, but every one of its leaves
//! lies inside a single leaf of a and a single leaf of b.
inline DensityTree align(const DensityTree& a, const DensityTree& b)
{
  detail::require_compatible(a, b);
  auto nodes = detail::merge_partitions(
      a, b, [](double va, bool fa, double, bool) { return std::pair<double, bool>{va, fa}; });
  return DensityTree::from_parts(a.dims(), a.root_box(), a.total_weight(), std::move(nodes));
}

//! Merges sibling leaves whose values differ within the policy's tolerance,
//! repeating bottom-up until no merge applies. Exactly-equal siblings merge
//! into a leaf carrying that same value, so zero-tolerance compaction never
//! changes what the tree evaluates to; otherwise the merged leaf takes the
//! volume-weighted mean.
inline DensityTree compact(const DensityTree& tree, const CompactionPolicy& policy)
{
  if (!(policy.tolerance >= 0.0))
    throw std::invalid_argument("compaction tolerance must be non-negative");
  const std::vector<double> vol = detail::node_volumes(tree);
  // Reverse preorder puts every child before its parent, so a single sweep
  // with a block stack performs all cascading merges.
  std::vector<std::vector<TreeNode>> blocks;
  const auto nodes = tree.nodes();
  for (std::size_t k = nodes.size(); k-- > 0;) {
    const TreeNode& n = nodes[k];
    if (n.is_leaf()) {
      blocks.push_back({n});
      continue;
    }
    std::vector<TreeNode> left = std::move(blocks.back());
    blocks.pop_back();
    std::vector<TreeNode> right = std::move(blocks.back());
    blocks.pop_back();
    if (left.size() == 1 && right.size() == 1 && left[0].is_leaf() && right[0].is_leaf() &&
        policy.mergeable(left[0].value, right[0].value)) {
      const double vl = left[0].value;
      const double vr = right[0].value;
      const double merged =
          vl == vr ? vl
                   : (vl * vol[n.left] + vr * vol[n.right]) / (vol[n.left] + vol[n.right]);
      blocks.push_back({TreeNode::leaf(merged, left[0].no_support && right[0].no_support)});
      continue;
    }
    std::vector<TreeNode> out;
    out.reserve(1 + left.size() + right.size());
    TreeNode head = TreeNode::internal(n.split_dim, n.value);
    head.left = 1;
    head.right = static_cast<std::uint32_t>(1 + left.size());
    out.push_back(head);
    detail::append_block(out, left, 1);
    detail::append_block(out, right, 1 + static_cast<std::uint32_t>(left.size()));
    blocks.push_back(std::move(out));
  }
  return DensityTree::from_parts(tree.dims(), tree.root_box(), tree.total_weight(),
                                 std::move(blocks.back()));
}

enum class CombineOp { Add, SubtractClamped, Multiply, Divide };

//! Leafwise binary operation on two trees over the same support: aligns a
//! to b, applies op against the covering b value, then compacts with the
//! given policy. Division maps empty-over-empty cells to zero with a
//! no-support flag; a positive value over an empty cell has no meaningful
//! quotient and is rejected.
inline DensityTree combine(const DensityTree& a, const DensityTree& b, CombineOp op,
                           const CompactionPolicy& policy = {})
{
  detail::require_compatible(a, b);
  auto leaf_op = [op](double va, bool fa, double vb, bool fb) -> std::pair<double, bool> {
    const bool flag = fa && fb;
    switch (op) {
      case CombineOp::Add: return {va + vb, flag};
      case CombineOp::SubtractClamped: return {std::max(va - vb, 0.0), flag};
      case CombineOp::Multiply: return {va * vb, flag};
      case CombineOp::Divide: break;
    }
    if (vb == 0.0) {
      if (va == 0.0)
        return {0.0, true};
      throw InconsistentRatio("division by an empty cell with non-empty numerator");
    }
    return {va / vb, flag};
  };
  auto nodes = detail::merge_partitions(a, b, leaf_op);
  DensityTree raw = DensityTree::from_parts(a.dims(), a.root_box(), a.total_weight(),
                                            std::move(nodes));
  return compact(raw, policy);
}

//! Per-cell pass probability: (pass_weight/all_weight) times the leafwise
//! ratio t_pass/t_all, clamped to [0,1]. Cells where t_all vanishes get
//! value 0 and a no-support flag.
inline DensityTree efficiency_tree(const DensityTree& t_pass, const DensityTree& t_all,
                                   double pass_weight, double all_weight,
                                   const CompactionPolicy& policy = {})
{
  detail::require_compatible(t_pass, t_all);
  if (!(all_weight > 0.0) || !std::isfinite(all_weight))
    throw InvalidWeight("all_weight must be positive and finite");
  if (!(pass_weight >= 0.0) || !std::isfinite(pass_weight) || pass_weight > all_weight)
    throw InvalidWeight("pass_weight must lie in [0, all_weight]");
  const double rescale = pass_weight / all_weight;
  auto leaf_op = [rescale](double va, bool, double vb, bool) -> std::pair<double, bool> {
    if (vb == 0.0)
      return {0.0, true};
    return {std::clamp(rescale * (va / vb), 0.0, 1.0), false};
  };
  auto nodes = detail::merge_partitions(t_pass, t_all, leaf_op);
  DensityTree raw = DensityTree::from_parts(t_pass.dims(), t_pass.root_box(),
                                            t_pass.total_weight(), std::move(nodes));
  return compact(raw, policy);
}

} // namespace det
