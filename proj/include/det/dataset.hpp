#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace det {

//! Weighted multivariate sample: N rows of D finite coordinates plus one
//! non-negative weight per row (1.0 each when none are given).
//!
//! Construction rejects structural violations (row length, non-finite
//! values, negative weights, bad column names). An empty dataset is
//! representable; training rejects it with EmptyDataset.
class Dataset {
public:
  Dataset() = default;

  //! @param columns unique, non-empty dimension names (size D).
  //! @param points row-major coordinates, N*D values.
  //! @param weights per-row weights; empty means unit weights.
  Dataset(std::vector<std::string> columns, std::vector<double> points,
          std::vector<double> weights = {})
    : columns_(std::move(columns))
    , points_(std::move(points))
    , weights_(std::move(weights))
  {
    const std::size_t d = columns_.size();
    if (d == 0)
      throw DimensionMismatch("dataset needs at least one column");
    std::unordered_set<std::string> seen;
    for (const auto& c : columns_) {
      if (c.empty())
        throw DimensionMismatch("empty column name");
      if (!seen.insert(c).second)
        throw DimensionMismatch("duplicate column name: " + c);
    }
    if (points_.size() % d != 0)
      throw DimensionMismatch("point data length is not a multiple of the column count");
    const std::size_t n = points_.size() / d;
    for (double v : points_)
      if (!std::isfinite(v))
        throw DimensionMismatch("non-finite coordinate in dataset");
    if (weights_.empty())
      weights_.assign(n, 1.0);
    if (weights_.size() != n)
      throw InvalidWeight("weight count does not match row count");
    total_weight_ = 0.0;
    for (double w : weights_) {
      if (!std::isfinite(w) || w < 0.0)
        throw InvalidWeight("weights must be finite and non-negative");
      total_weight_ += w;
    }
  }

  std::size_t n_rows() const { return columns_.empty() ? 0 : points_.size() / columns_.size(); }
  std::size_t n_dims() const { return columns_.size(); }

  const std::vector<std::string>& columns() const { return columns_; }

  std::span<const double> row(std::size_t i) const
  {
    return {points_.data() + i * n_dims(), n_dims()};
  }

  double coord(std::size_t i, std::size_t d) const { return points_[i * n_dims() + d]; }
  double weight(std::size_t i) const { return weights_[i]; }

  const std::vector<double>& weights() const { return weights_; }

  //! Sum of all weights, accumulated in row order.
  double total_weight() const { return total_weight_; }

private:
  std::vector<std::string> columns_;
  std::vector<double> points_; // row-major
  std::vector<double> weights_;
  double total_weight_ = 0.0;
};

} // namespace det
