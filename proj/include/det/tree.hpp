#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"

namespace det {

//! One node of a density tree, stored in a flat preorder array.
//! split_dim < 0 marks a leaf; then value is the stored density and
//! no_support flags cells produced by a 0/0 ratio. Internal nodes carry the
//! split dimension, the threshold in value, and the indices of both
//! children (left is always the next preorder slot).
struct TreeNode {
  std::int32_t split_dim = -1;
  double value = 0.0;
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  bool no_support = false;

  bool is_leaf() const { return split_dim < 0; }

  static TreeNode leaf(double density, bool no_support = false)
  {
    TreeNode n;
    n.value = density;
    n.no_support = no_support;
    return n;
  }

  static TreeNode internal(std::int32_t dim, double threshold)
  {
    TreeNode n;
    n.split_dim = dim;
    n.value = threshold;
    return n;
  }

  bool operator==(const TreeNode& other) const = default;
};

//! Density estimate d = w / (W * V) for a leaf holding weight w out of total
//! W over volume V.
inline double leaf_density(double weight_in_leaf, double total_weight, double leaf_volume)
{
  if (!(leaf_volume > 0.0) || !std::isfinite(leaf_volume))
    throw InvalidVolume("leaf volume must be positive and finite");
  if (!(total_weight > 0.0) || !std::isfinite(total_weight))
    throw InvalidWeight("total weight must be positive and finite");
  if (!(weight_in_leaf >= 0.0) || !std::isfinite(weight_in_leaf))
    throw InvalidWeight("leaf weight must be non-negative and finite");
  return weight_in_leaf / (total_weight * leaf_volume);
}

enum class ViolationKind {
  ThresholdNotInterior,
  NegativeDensity,
  NonFiniteValue,
  BadSplitDimension,
  BadTotalWeight,
  BadRootBox,
};

inline const char* to_string(ViolationKind k)
{
  switch (k) {
    case ViolationKind::ThresholdNotInterior: return "ThresholdNotInterior";
    case ViolationKind::NegativeDensity: return "NegativeDensity";
    case ViolationKind::NonFiniteValue: return "NonFiniteValue";
    case ViolationKind::BadSplitDimension: return "BadSplitDimension";
    case ViolationKind::BadTotalWeight: return "BadTotalWeight";
    case ViolationKind::BadRootBox: return "BadRootBox";
  }
  return "?";
}

//! One invariant violation found by validate(); path is the node position
//! written as root, root.L, root.L.R, ...
struct Violation {
  std::string path;
  ViolationKind kind;
  std::string detail;
};

//! Piecewise-constant density estimator: a binary tree whose leaf boxes
//! partition the root box, each leaf carrying one density value. Immutable
//! after construction; all queries are safe to run concurrently.
class DensityTree {
public:
  DensityTree() = default;

  //! Builds a tree from its parts, checking only structural sanity (node
  //! array non-empty, children laid out in preorder, exactly one tree).
  //! Value-level invariants are the business of validate(), so that
  //! deliberately broken trees can be constructed and inspected in tests.
  static DensityTree from_parts(std::vector<std::string> dims, HyperRect root_box,
                                double total_weight, std::vector<TreeNode> nodes)
  {
    if (dims.empty())
      throw DimensionMismatch("tree needs at least one dimension");
    if (root_box.n_dims() != dims.size())
      throw DimensionMismatch("root box dimensionality does not match dims");
    if (nodes.empty())
      throw CorruptFile("tree has no nodes");
    check_preorder(nodes);
    DensityTree t;
    t.dims_ = std::move(dims);
    t.root_box_ = std::move(root_box);
    t.total_weight_ = total_weight;
    t.nodes_ = std::move(nodes);
    t.count_shape();
    return t;
  }

  const std::vector<std::string>& dims() const { return dims_; }
  std::size_t n_dims() const { return dims_.size(); }
  const HyperRect& root_box() const { return root_box_; }
  double total_weight() const { return total_weight_; }

  std::span<const TreeNode> nodes() const { return nodes_; }
  const TreeNode& node(std::size_t i) const { return nodes_[i]; }
  std::size_t n_nodes() const { return nodes_.size(); }
  std::size_t n_leaves() const { return n_leaves_; }
  std::size_t depth() const { return depth_; }

  //! Index of the named dimension.
  std::size_t dim_index(const std::string& name) const
  {
    for (std::size_t d = 0; d < dims_.size(); ++d)
      if (dims_[d] == name)
        return d;
    throw UnknownDimension("unknown dimension: " + name);
  }

  //! Density at a point: the value of the unique leaf containing it, or 0
  //! outside the root box.
  double evaluate(std::span<const double> point) const
  {
    if (point.size() != dims_.size())
      throw DimensionMismatch("point has " + std::to_string(point.size()) +
                              " coordinates, tree has " + std::to_string(dims_.size()));
    for (std::size_t d = 0; d < point.size(); ++d) {
      if (point[d] < root_box_.lo[d] || point[d] > root_box_.hi[d])
        return 0.0;
    }
    std::size_t i = 0;
    while (!nodes_[i].is_leaf()) {
      const TreeNode& n = nodes_[i];
      i = point[static_cast<std::size_t>(n.split_dim)] < n.value ? n.left : n.right;
    }
    return nodes_[i].value;
  }

  //! Visits every leaf with its index and reconstructed box. Iterative, so
  //! arbitrarily deep (e.g. freshly loaded) trees cannot exhaust the stack.
  template <typename Fn>
  void for_each_leaf(Fn&& fn) const
  {
    struct Frame {
      std::uint32_t index;
      HyperRect box;
    };
    std::vector<Frame> stack;
    stack.push_back({0, root_box_});
    while (!stack.empty()) {
      Frame f = std::move(stack.back());
      stack.pop_back();
      const TreeNode& n = nodes_[f.index];
      if (n.is_leaf()) {
        fn(static_cast<std::size_t>(f.index), f.box);
        continue;
      }
      const auto d = static_cast<std::size_t>(n.split_dim);
      HyperRect left_box = f.box;
      left_box.hi[d] = n.value;
      HyperRect right_box = std::move(f.box);
      right_box.lo[d] = n.value;
      // push right first so leaves are visited left-to-right
      stack.push_back({n.right, std::move(right_box)});
      stack.push_back({n.left, std::move(left_box)});
    }
  }

  bool operator==(const DensityTree& other) const
  {
    return dims_ == other.dims_ && root_box_ == other.root_box_ &&
           total_weight_ == other.total_weight_ && nodes_ == other.nodes_;
  }

private:
  static void check_preorder(const std::vector<TreeNode>& nodes)
  {
    // In a preorder layout each internal node is followed immediately by its
    // left child, and its right child starts right after the left subtree
    // ends. Walking the array in order, every time a subtree completes the
    // next index must therefore equal the innermost pending right-child
    // index, and the last subtree must end exactly at the array end.
    std::vector<std::uint32_t> pending; // right-child indices not yet reached
    std::size_t i = 0;
    while (true) {
      if (i >= nodes.size())
        throw CorruptFile("node array ends inside a subtree");
      if (!nodes[i].is_leaf()) {
        if (nodes[i].left != i + 1)
          throw CorruptFile("left child of node " + std::to_string(i) +
                            " is not in preorder position");
        pending.push_back(nodes[i].right);
        ++i;
        continue;
      }
      ++i; // a leaf closes the current subtree
      if (pending.empty()) {
        if (i != nodes.size())
          throw CorruptFile("trailing nodes after the tree");
        return;
      }
      if (pending.back() != i)
        throw CorruptFile("right child index of an ancestor of node " +
                          std::to_string(i - 1) + " does not follow its left subtree");
      pending.pop_back();
    }
  }

  void count_shape()
  {
    n_leaves_ = 0;
    depth_ = 0;
    std::vector<std::pair<std::uint32_t, std::size_t>> stack{{0, 1}};
    while (!stack.empty()) {
      auto [i, level] = stack.back();
      stack.pop_back();
      depth_ = std::max(depth_, level);
      const TreeNode& n = nodes_[i];
      if (n.is_leaf()) {
        ++n_leaves_;
      } else {
        stack.push_back({n.left, level + 1});
        stack.push_back({n.right, level + 1});
      }
    }
  }

  std::vector<std::string> dims_;
  HyperRect root_box_;
  double total_weight_ = 0.0;
  std::vector<TreeNode> nodes_;
  std::size_t n_leaves_ = 0;
  std::size_t depth_ = 0;
};

inline double evaluate(const DensityTree& tree, std::span<const double> point)
{
  return tree.evaluate(point);
}

//! Checks every DensityTree invariant and reports violations as data.
//! An empty result means the tree is sound. The leaf partition itself is
//! implied by the preorder structure; what can go wrong are the values.
inline std::vector<Violation> validate(const DensityTree& tree)
{
  std::vector<Violation> out;
  if (!(tree.total_weight() > 0.0) || !std::isfinite(tree.total_weight()))
    out.push_back({"root", ViolationKind::BadTotalWeight,
                   "total weight must be positive and finite"});
  for (std::size_t d = 0; d < tree.n_dims(); ++d) {
    if (!std::isfinite(tree.root_box().lo[d]) || !std::isfinite(tree.root_box().hi[d]) ||
        !(tree.root_box().lo[d] < tree.root_box().hi[d])) {
      out.push_back({"root", ViolationKind::BadRootBox,
                     "root box empty or non-finite in dimension " + std::to_string(d)});
    }
  }

  struct Frame {
    std::uint32_t index;
    HyperRect box;
    std::string path;
  };
  std::vector<Frame> stack;
  stack.push_back({0, tree.root_box(), "root"});
  while (!stack.empty()) {
    Frame f = std::move(stack.back());
    stack.pop_back();
    const TreeNode& n = tree.node(f.index);
    if (n.is_leaf()) {
      if (!std::isfinite(n.value))
        out.push_back({f.path, ViolationKind::NonFiniteValue, "leaf density not finite"});
      else if (n.value < 0.0)
        out.push_back({f.path, ViolationKind::NegativeDensity,
                       "leaf density is negative"});
      continue;
    }
    const auto d = static_cast<std::size_t>(n.split_dim);
    if (d >= tree.n_dims()) {
      out.push_back({f.path, ViolationKind::BadSplitDimension,
                     "split dimension " + std::to_string(n.split_dim) + " out of range"});
      continue; // child boxes are meaningless here
    }
    if (!std::isfinite(n.value)) {
      out.push_back({f.path, ViolationKind::NonFiniteValue, "threshold not finite"});
      continue;
    }
    if (!(f.box.lo[d] < n.value && n.value < f.box.hi[d]))
      out.push_back({f.path, ViolationKind::ThresholdNotInterior,
                     "threshold not strictly inside the node box"});
    HyperRect left_box = f.box;
    left_box.hi[d] = n.value;
    HyperRect right_box = std::move(f.box);
    right_box.lo[d] = n.value;
    stack.push_back({n.right, std::move(right_box), f.path + ".R"});
    stack.push_back({n.left, std::move(left_box), f.path + ".L"});
  }
  return out;
}

//! Helper for assembling preorder node arrays top-down.
class TreeBuilder {
public:
  //! Opens an internal node and returns its index; call set_right() once the
  //! left subtree is fully emitted.
  std::size_t begin_internal(std::int32_t dim, double threshold)
  {
    const std::size_t i = nodes_.size();
    TreeNode n = TreeNode::internal(dim, threshold);
    n.left = static_cast<std::uint32_t>(i + 1);
    nodes_.push_back(n);
    return i;
  }

  void set_right(std::size_t index)
  {
    nodes_[index].right = static_cast<std::uint32_t>(nodes_.size());
  }

  void add_leaf(double density, bool no_support = false)
  {
    nodes_.push_back(TreeNode::leaf(density, no_support));
  }

  //! Appends an already-built preorder block, fixing up child indices.
  void splice(const std::vector<TreeNode>& block)
  {
    const auto offset = static_cast<std::uint32_t>(nodes_.size());
    for (TreeNode n : block) {
      if (!n.is_leaf()) {
        n.left += offset;
        n.right += offset;
      }
      nodes_.push_back(n);
    }
  }

  std::size_t size() const { return nodes_.size(); }

  std::vector<TreeNode> take() { return std::move(nodes_); }

private:
  std::vector<TreeNode> nodes_;
};

} // namespace det
