#pragma once

#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "algebra.hpp"
#include "dataset.hpp"
#include "errors.hpp"
#include "integrate.hpp"
#include "io.hpp"
#include "sample.hpp"
#include "train.hpp"
#include "tree.hpp"

namespace det::cli {

namespace detail {

using det::detail::format_double;
using det::detail::parse_double;

//! Comma-separated list of reals; flag-format problems are usage errors.
inline std::vector<double> parse_double_list(const std::string& text, const std::string& flag)
{
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::string token =
        text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    const auto v = parse_double(token);
    if (!v)
      throw CLI::ValidationError(flag, "not a number: '" + token + "'");
    out.push_back(*v);
    if (comma == std::string::npos)
      break;
    start = comma + 1;
  }
  if (out.empty())
    throw CLI::ValidationError(flag, "expected at least one value");
  return out;
}

//! Region syntax lo1:hi1,lo2:hi2,... with every lo < hi.
inline HyperRect parse_region(const std::string& text, const std::string& flag)
{
  std::vector<double> lo, hi;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::string token =
        text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    const std::size_t colon = token.find(':');
    if (colon == std::string::npos)
      throw CLI::ValidationError(flag, "expected lo:hi, got '" + token + "'");
    const auto lo_v = parse_double(token.substr(0, colon));
    const auto hi_v = parse_double(token.substr(colon + 1));
    if (!lo_v || !hi_v)
      throw CLI::ValidationError(flag, "not a number in '" + token + "'");
    lo.push_back(*lo_v);
    hi.push_back(*hi_v);
    if (comma == std::string::npos)
      break;
    start = comma + 1;
  }
  try {
    return HyperRect::create(std::move(lo), std::move(hi));
  } catch (const Error& e) {
    throw CLI::ValidationError(flag, e.what());
  }
}

//! Fix syntax name=value,name=value,... (names resolved against the model
//! later, so only the shape is checked here).
inline std::vector<std::pair<std::string, double>> parse_fix_list(const std::string& text,
                                                                 const std::string& flag)
{
  std::vector<std::pair<std::string, double>> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::string token =
        text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    const std::size_t eq = token.find('=');
    if (eq == std::string::npos || eq == 0)
      throw CLI::ValidationError(flag, "expected name=value, got '" + token + "'");
    const auto v = parse_double(token.substr(eq + 1));
    if (!v)
      throw CLI::ValidationError(flag, "not a number in '" + token + "'");
    out.emplace_back(token.substr(0, eq), *v);
    if (comma == std::string::npos)
      break;
    start = comma + 1;
  }
  if (out.empty())
    throw CLI::ValidationError(flag, "expected at least one name=value pair");
  return out;
}

inline SliceSpec resolve_slice(const DensityTree& tree,
                               const std::vector<std::pair<std::string, double>>& fixes,
                               const std::string& flag)
{
  SliceSpec slice;
  for (const auto& [name, value] : fixes) {
    const std::size_t d = tree.dim_index(name); // throws UnknownDimension
    if (slice.fixed.count(d) != 0)
      throw CLI::ValidationError(flag, "dimension fixed twice: " + name);
    slice.fixed[d] = value;
  }
  slice.check(tree.n_dims());
  return slice;
}

//! Runs fn with the requested output destination: a file, or the process
//! stream when the path is "-".
template <typename Fn>
void with_output(const std::string& path, std::ostream& fallback, Fn&& fn)
{
  if (path == "-") {
    fn(fallback);
    return;
  }
  std::ofstream file(path);
  if (!file)
    throw IoFailure("cannot open file for writing: " + path);
  fn(file);
  file.flush();
  if (!file)
    throw IoFailure("write failed: " + path);
}

} // namespace detail

//! Executes one CLI invocation. args excludes the program name. Returns 0
//! on success, 1 for usage errors (bad flags never reach the model code),
//! and 2 for data or model errors.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
  CLI::App app{"density estimation trees: train, query, combine, sample", "det"};
  app.require_subcommand(1);

  // train ------------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "grow a tree from a delimited dataset");
  std::string train_in, train_out, train_width = "auto", train_box;
  std::string train_weight_col;
  std::vector<std::string> train_columns;
  double train_min_count = 0.0;
  std::uint32_t train_max_depth = 64;
  unsigned train_jobs = 1;
  train_cmd->add_option("--in", train_in, "input dataset path")->required();
  train_cmd->add_option("--weight-col", train_weight_col, "column holding per-row weights");
  train_cmd->add_option("--columns", train_columns, "coordinate columns to use")->delimiter(',');
  train_cmd->add_option("--min-width", train_width, "auto or per-dimension v1,v2,...");
  train_cmd->add_option("--min-count", train_min_count, "minimum weight per leaf")
      ->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--max-depth", train_max_depth, "depth safety bound")
      ->check(CLI::Range(std::uint32_t{1}, std::uint32_t{1000000}));
  train_cmd->add_option("--box", train_box, "explicit root box lo1:hi1,...");
  train_cmd->add_option("--jobs", train_jobs, "worker threads for subtree growth")
      ->check(CLI::Range(1u, 1024u));
  train_cmd->add_option("--out", train_out, "model output path")->required();
  train_cmd->callback([&] {
    TrainConfig cfg;
    if (train_width != "auto") {
      cfg.min_leaf_width = detail::parse_double_list(train_width, "--min-width");
      for (double w : cfg.min_leaf_width) {
        if (!(w > 0.0))
          throw CLI::ValidationError("--min-width", "widths must be positive");
      }
    }
    if (!train_box.empty())
      cfg.root_box = detail::parse_region(train_box, "--box");
    cfg.min_leaf_weight = train_min_count;
    cfg.max_depth = train_max_depth;
    DatasetOptions opts;
    opts.columns = train_columns;
    opts.weight_column = train_weight_col;
    const Dataset data = load_dataset(train_in, opts);
    const DensityTree tree = train(data, cfg, train_jobs);
    detail::with_output(train_out, out, [&](std::ostream& o) { save_tree(tree, o); });
    if (train_out != "-")
      out << "leaves=" << tree.n_leaves() << " depth=" << tree.depth() << '\n';
  });

  // eval -------------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "density at a point");
  std::string eval_model, eval_point;
  eval_cmd->add_option("--model", eval_model, "model path")->required();
  eval_cmd->add_option("--point", eval_point, "coordinates v1,v2,...")->required();
  eval_cmd->callback([&] {
    const std::vector<double> point = detail::parse_double_list(eval_point, "--point");
    const DensityTree tree = load_tree(eval_model);
    out << detail::format_double(tree.evaluate(point)) << '\n';
  });

  // integrate --------------------------------------------------------------
  auto* int_cmd = app.add_subcommand("integrate", "integral over a box (default: whole support)");
  std::string int_model, int_region;
  int_cmd->add_option("--model", int_model, "model path")->required();
  int_cmd->add_option("--region", int_region, "integration box lo1:hi1,...");
  int_cmd->callback([&] {
    std::optional<HyperRect> region;
    if (!int_region.empty())
      region = detail::parse_region(int_region, "--region");
    const DensityTree tree = load_tree(int_model);
    out << detail::format_double(integrate_box(tree, region ? *region : tree.root_box())) << '\n';
  });

  // slice ------------------------------------------------------------------
  auto* slice_cmd = app.add_subcommand("slice", "integral over the free dimensions of a slice");
  std::string slice_model, slice_fix, slice_region;
  slice_cmd->add_option("--model", slice_model, "model path")->required();
  slice_cmd->add_option("--fix", slice_fix, "fixed coordinates name=value,...")->required();
  slice_cmd->add_option("--region", slice_region, "free-dimension restriction lo1:hi1,...");
  slice_cmd->callback([&] {
    const auto fixes = detail::parse_fix_list(slice_fix, "--fix");
    std::optional<HyperRect> free_box;
    if (!slice_region.empty())
      free_box = detail::parse_region(slice_region, "--region");
    const DensityTree tree = load_tree(slice_model);
    const SliceIntegralQuery query{detail::resolve_slice(tree, fixes, "--fix"), free_box};
    out << detail::format_double(integrate_slice(tree, query)) << '\n';
  });

  // combine ----------------------------------------------------------------
  auto* comb_cmd = app.add_subcommand("combine", "leafwise binary operation on two models");
  std::string comb_a, comb_b, comb_op, comb_out;
  double comb_tol = 1e-6;
  comb_cmd->add_option("--a", comb_a, "left operand model")->required();
  comb_cmd->add_option("--b", comb_b, "right operand model")->required();
  comb_cmd->add_option("--op", comb_op, "operation")
      ->required()
      ->check(CLI::IsMember({"add", "sub", "mul", "div"}));
  comb_cmd->add_option("--tol", comb_tol, "relative compaction tolerance")
      ->check(CLI::NonNegativeNumber);
  comb_cmd->add_option("--out", comb_out, "result model path")->required();
  comb_cmd->callback([&] {
    const CombineOp op = comb_op == "add"   ? CombineOp::Add
                         : comb_op == "sub" ? CombineOp::SubtractClamped
                         : comb_op == "mul" ? CombineOp::Multiply
                                            : CombineOp::Divide;
    const DensityTree a = load_tree(comb_a);
    const DensityTree b = load_tree(comb_b);
    const DensityTree result =
        combine(a, b, op, CompactionPolicy{comb_tol, CompactionPolicy::Mode::Relative});
    detail::with_output(comb_out, out, [&](std::ostream& o) { save_tree(result, o); });
    if (comb_out != "-")
      out << "leaves=" << result.n_leaves() << " depth=" << result.depth() << '\n';
  });

  // ratio ------------------------------------------------------------------
  auto* ratio_cmd = app.add_subcommand("ratio", "efficiency model from pass and all trees");
  std::string ratio_pass, ratio_all, ratio_out;
  double ratio_pw = -1.0, ratio_aw = -1.0;
  ratio_cmd->add_option("--pass", ratio_pass, "model trained on passing entries")->required();
  ratio_cmd->add_option("--all", ratio_all, "model trained on all entries")->required();
  ratio_cmd->add_option("--pass-weight", ratio_pw,
                        "total weight of the pass sample (default: stored in the model)");
  ratio_cmd->add_option("--all-weight", ratio_aw,
                        "total weight of the full sample (default: stored in the model)");
  ratio_cmd->add_option("--out", ratio_out, "result model path")->required();
  ratio_cmd->callback([&] {
    const DensityTree pass = load_tree(ratio_pass);
    const DensityTree all = load_tree(ratio_all);
    const double pw = ratio_cmd->count("--pass-weight") ? ratio_pw : pass.total_weight();
    const double aw = ratio_cmd->count("--all-weight") ? ratio_aw : all.total_weight();
    const DensityTree result = efficiency_tree(pass, all, pw, aw);
    detail::with_output(ratio_out, out, [&](std::ostream& o) { save_tree(result, o); });
    if (ratio_out != "-")
      out << "leaves=" << result.n_leaves() << " depth=" << result.depth() << '\n';
  });

  // sample -----------------------------------------------------------------
  auto* sample_cmd = app.add_subcommand("sample", "draw free coordinates conditional on a slice");
  std::string sample_model, sample_fix, sample_out;
  std::uint64_t sample_n = 0, sample_seed = 0;
  bool sample_volume_only = false;
  sample_cmd->add_option("--model", sample_model, "model path")->required();
  sample_cmd->add_option("--fix", sample_fix, "fixed coordinates name=value,...")->required();
  sample_cmd->add_option("--n", sample_n, "number of rows to draw")
      ->required()
      ->check(CLI::Range(std::uint64_t{1}, std::uint64_t{1} << 32));
  sample_cmd->add_option("--seed", sample_seed, "random seed")->required();
  sample_cmd->add_flag("--paper-volume-weights", sample_volume_only,
                       "select leaves by intersection volume alone, ignoring density");
  sample_cmd->add_option("--out", sample_out, "output csv path")->required();
  sample_cmd->callback([&] {
    const auto fixes = detail::parse_fix_list(sample_fix, "--fix");
    const DensityTree tree = load_tree(sample_model);
    const SliceSpec slice = detail::resolve_slice(tree, fixes, "--fix");
    ConditionalSampler sampler =
        build_sampler(tree, slice, sample_seed,
                      sample_volume_only ? SelectionWeighting::VolumeOnly
                                         : SelectionWeighting::DensityTimesVolume);
    const std::vector<double> rows = sampler.draw(sample_n);
    const auto& free_dims = sampler.free_dims();
    detail::with_output(sample_out, out, [&](std::ostream& o) {
      for (std::size_t j = 0; j < free_dims.size(); ++j)
        o << (j ? "," : "") << tree.dims()[free_dims[j]];
      o << '\n';
      for (std::size_t i = 0; i < sample_n; ++i) {
        for (std::size_t j = 0; j < free_dims.size(); ++j)
          o << (j ? "," : "") << detail::format_double(rows[i * free_dims.size() + j]);
        o << '\n';
      }
    });
  });

  // project ----------------------------------------------------------------
  auto* proj_cmd = app.add_subcommand("project", "1D marginal histogram of one dimension");
  std::string proj_model, proj_dim, proj_out;
  std::uint32_t proj_bins = 0;
  proj_cmd->add_option("--model", proj_model, "model path")->required();
  proj_cmd->add_option("--dim", proj_dim, "dimension name")->required();
  proj_cmd->add_option("--bins", proj_bins, "number of bins")
      ->required()
      ->check(CLI::Range(std::uint32_t{1}, std::uint32_t{100000000}));
  proj_cmd->add_option("--out", proj_out, "output csv path")->required();
  proj_cmd->callback([&] {
    const DensityTree tree = load_tree(proj_model);
    const std::vector<HistogramBin> bins =
        project_histogram(tree, tree.dim_index(proj_dim), proj_bins);
    detail::with_output(proj_out, out, [&](std::ostream& o) {
      o << "bin_lo,bin_hi,density\n";
      for (const HistogramBin& b : bins) {
        o << detail::format_double(b.lo) << ',' << detail::format_double(b.hi) << ','
          << detail::format_double(b.density) << '\n';
      }
    });
  });

  // info -------------------------------------------------------------------
  auto* info_cmd = app.add_subcommand("info", "model summary and normalization check");
  std::string info_model;
  info_cmd->add_option("--model", info_model, "model path")->required();
  info_cmd->callback([&] {
    std::map<std::string, std::string> meta;
    const DensityTree tree = load_tree(info_model, &meta);
    out << "dims=" << tree.n_dims() << '\n';
    out << "leaves=" << tree.n_leaves() << '\n';
    out << "depth=" << tree.depth() << '\n';
    out << "total_weight=" << detail::format_double(tree.total_weight()) << '\n';
    for (std::size_t d = 0; d < tree.n_dims(); ++d) {
      out << "box " << tree.dims()[d] << ' ' << detail::format_double(tree.root_box().lo[d])
          << ' ' << detail::format_double(tree.root_box().hi[d]) << '\n';
    }
    for (const auto& [key, value] : meta)
      out << "meta " << key << ' ' << value << '\n';
    out << "normalization=" << detail::format_double(integrate_box(tree, tree.root_box()))
        << '\n';
  });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    const std::vector<CLI::App*> active = app.get_subcommands();
    err << (active.empty() ? app.help() : active.front()->help());
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

} // namespace det::cli
