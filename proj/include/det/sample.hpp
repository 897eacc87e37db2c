#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "integrate.hpp"
#include "tree.hpp"

namespace det {

namespace detail {

//! Stateless 64-bit scrambler used to derive engine seeds and sub-stream
//! seeds; consecutive raw seeds must not produce correlated engines.
inline std::uint64_t scramble_seed(std::uint64_t x)
{
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

} // namespace detail

//! Seeded random stream with reproducible forks: fork(k) yields a stream
//! that is deterministic in (seed, k) and uncorrelated with its parent, so
//! parallel consumers can draw independently.
class RandomStream {
public:
  explicit RandomStream(std::uint64_t seed)
      : seed_(seed), engine_(detail::scramble_seed(seed))
  {
  }

  std::uint64_t seed() const { return seed_; }

  //! Uniform draw from [0, 1) with 53 random bits.
  double uniform()
  {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  //! Uniform draw from [lo, hi); requires lo < hi.
  double uniform(double lo, double hi)
  {
    return lo + uniform() * (hi - lo);
  }

  RandomStream fork(std::uint64_t k) const
  {
    return RandomStream(detail::scramble_seed(seed_ ^ detail::scramble_seed(k + 1)));
  }

private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

//! How a leaf's selection probability is formed when sampling a slice.
//! DensityTimesVolume reproduces the conditional density (the default);
//! VolumeOnly picks leaves proportionally to their intersection volume
//! alone, which flattens the draw across cells of different density.
enum class SelectionWeighting { DensityTimesVolume, VolumeOnly };

//! Draws free-dimension coordinates conditional on the fixed coordinates of
//! a slice: a leaf is selected by inverse-CDF lookup on a precomputed
//! cumulative table, then each free coordinate is drawn flat within that
//! leaf's clipped extent.
class ConditionalSampler {
public:
  struct Entry {
    std::size_t leaf = 0;        // node index in the source tree
    double cumulative = 0.0;     // normalized upper CDF edge
    std::vector<double> lo, hi;  // clipped extent per free dimension
  };

  ConditionalSampler(std::vector<std::size_t> free_dims, std::vector<Entry> entries,
                     double total_weight, std::uint64_t seed)
      : free_dims_(std::move(free_dims)),
        entries_(std::move(entries)),
        total_weight_(total_weight),
        rng_(seed)
  {
    cdf_.reserve(entries_.size());
    for (const Entry& e : entries_)
      cdf_.push_back(e.cumulative);
  }

  const std::vector<std::size_t>& free_dims() const { return free_dims_; }
  const std::vector<Entry>& entries() const { return entries_; }
  double total_weight() const { return total_weight_; }
  std::uint64_t seed() const { return rng_.seed(); }

  //! Clone with an independent sub-stream; entries are shared by value.
  ConditionalSampler fork(std::uint64_t k) const
  {
    ConditionalSampler copy = *this;
    copy.rng_ = rng_.fork(k);
    return copy;
  }

  //! Draws `count` rows, each holding one value per free dimension in
  //! ascending dimension order, flattened row-major.
  std::vector<double> draw(std::size_t count)
  {
    const std::size_t n_free = free_dims_.size();
    std::vector<double> out;
    out.reserve(count * n_free);
    for (std::size_t i = 0; i < count; ++i) {
      const double u = rng_.uniform();
      const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
      const Entry& e = entries_[it == cdf_.end() ? entries_.size() - 1
                                                 : static_cast<std::size_t>(it - cdf_.begin())];
      for (std::size_t j = 0; j < n_free; ++j)
        out.push_back(rng_.uniform(e.lo[j], e.hi[j]));
    }
    return out;
  }

private:
  std::vector<std::size_t> free_dims_;
  std::vector<Entry> entries_;
  std::vector<double> cdf_;
  double total_weight_ = 0.0;
  RandomStream rng_;
};

//! Builds the cumulative selection table for a slice: enumerates the leaves
//! containing the fixed coordinates via the same pruned descent as slice
//! integration, weighs each by density times clipped free volume (or volume
//! alone), and normalizes. Leaves with zero selection weight never enter
//! the table.
inline ConditionalSampler build_sampler(const DensityTree& tree, const SliceSpec& slice,
                                        std::uint64_t seed,
                                        SelectionWeighting weighting = SelectionWeighting::DensityTimesVolume,
                                        const std::optional<HyperRect>& free_box = std::nullopt)
{
  const std::size_t n_dims = tree.n_dims();
  slice.check(n_dims);
  const HyperRect& clip = free_box ? *free_box : tree.root_box();
  if (clip.n_dims() != n_dims)
    throw DimensionMismatch("free box dimensionality does not match tree");
  const std::vector<std::size_t> free_dims = slice.free_dims(n_dims);

  std::vector<ConditionalSampler::Entry> entries;
  double total = 0.0;
  detail::walk_slice(tree, slice, clip, [&](std::size_t leaf, const HyperRect& box) {
    const double density = tree.node(leaf).value;
    if (density == 0.0)
      return; // cells without mass are never drawn, in either weighting
    ConditionalSampler::Entry e;
    e.leaf = leaf;
    double volume = 1.0;
    for (std::size_t d : free_dims) {
      const double lo = std::max(box.lo[d], clip.lo[d]);
      const double hi = std::min(box.hi[d], clip.hi[d]);
      volume *= hi - lo;
      e.lo.push_back(lo);
      e.hi.push_back(hi);
    }
    const double weight =
        weighting == SelectionWeighting::DensityTimesVolume ? density * volume : volume;
    if (!(weight > 0.0))
      return;
    total += weight;
    e.cumulative = total; // normalized below
    entries.push_back(std::move(e));
  });
  if (entries.empty() || !(total > 0.0))
    throw NoSupport("slice has no populated support to sample from");
  for (ConditionalSampler::Entry& e : entries)
    e.cumulative /= total;
  entries.back().cumulative = 1.0; // guard against accumulated rounding
  return ConditionalSampler(free_dims, std::move(entries), total, seed);
}

//! Draws `count` rows from the sampler; forwards to its draw method.
inline std::vector<double> sample(ConditionalSampler& sampler, std::size_t count)
{
  if (count < 1)
    throw std::invalid_argument("sample count must be at least 1");
  return sampler.draw(count);
}

} // namespace det
