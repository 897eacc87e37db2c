#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "dataset.hpp"
#include "errors.hpp"
#include "tree.hpp"

namespace det {

namespace detail {

//! Shortest decimal form that parses back to exactly the same double.
inline std::string format_double(double v)
{
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::optional<double> parse_double(std::string_view token)
{
  double v = 0.0;
  const char* end = token.data() + token.size();
  const auto res = std::from_chars(token.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end)
    return std::nullopt;
  return v;
}

inline std::optional<unsigned long long> parse_unsigned(std::string_view token)
{
  unsigned long long v = 0;
  const char* end = token.data() + token.size();
  const auto res = std::from_chars(token.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end)
    return std::nullopt;
  return v;
}

inline std::string_view trim(std::string_view s)
{
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

//! Splits one delimited line into fields, honoring double-quoted fields
//! with doubled-quote escapes. Quotes must not span lines.
inline std::vector<std::string> split_fields(const std::string& line, char delimiter)
{
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          current.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        current.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delimiter) {
      fields.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  fields.push_back(std::move(current));
  for (std::string& f : fields)
    f = std::string(trim(f));
  return fields;
}

} // namespace detail

//! Ingestion options for delimited text datasets.
struct DatasetOptions {
  char delimiter = ',';
  bool has_header = true;          // headerless files get columns col0, col1, ...
  std::vector<std::string> columns; // empty => every column except the weight column
  std::string weight_column;        // empty => unit weights
};

//! Parses a delimited numeric table into a Dataset. Every selected value
//! must be finite; the first offending cell is reported with its 1-based
//! line and field position.
inline Dataset load_dataset(std::istream& in, const DatasetOptions& options = {})
{
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;

  // establish the file's column names
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty())
      continue;
    if (options.has_header) {
      header = detail::split_fields(line, options.delimiter);
      for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i].empty())
          throw ParseError(line_no, i + 1, "empty column name in header");
      }
      line.clear();
    } else {
      const std::size_t n = detail::split_fields(line, options.delimiter).size();
      for (std::size_t i = 0; i < n; ++i)
        header.push_back("col" + std::to_string(i));
      // the current line is data; fall through to parse it below
    }
    break;
  }
  if (header.empty())
    throw ParseError(line_no, 0, "no header or data found");

  auto column_of = [&](const std::string& name) -> std::size_t {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name)
        return i;
    throw MissingColumn("column not found: " + name);
  };

  std::optional<std::size_t> weight_field;
  if (!options.weight_column.empty())
    weight_field = column_of(options.weight_column);

  std::vector<std::size_t> selected;
  std::vector<std::string> names;
  if (!options.columns.empty()) {
    for (const std::string& name : options.columns) {
      selected.push_back(column_of(name));
      names.push_back(name);
    }
  } else {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (weight_field && *weight_field == i)
        continue;
      selected.push_back(i);
      names.push_back(header[i]);
    }
  }
  if (selected.empty())
    throw MissingColumn("no coordinate columns selected");

  std::vector<double> points;
  std::vector<double> weights;
  const bool weighted = weight_field.has_value();

  auto consume_row = [&](const std::string& row_line, std::size_t row_no) {
    const std::vector<std::string> fields = detail::split_fields(row_line, options.delimiter);
    if (fields.size() != header.size())
      throw ParseError(row_no, 0,
                       "expected " + std::to_string(header.size()) + " fields, found " +
                           std::to_string(fields.size()));
    for (std::size_t k = 0; k < selected.size(); ++k) {
      const std::size_t f = selected[k];
      const auto v = detail::parse_double(fields[f]);
      if (!v)
        throw ParseError(row_no, f + 1, "not a number: '" + fields[f] + "'");
      if (!std::isfinite(*v))
        throw ParseError(row_no, f + 1, "non-finite value: '" + fields[f] + "'");
      points.push_back(*v);
    }
    if (weighted) {
      const std::size_t f = *weight_field;
      const auto w = detail::parse_double(fields[f]);
      if (!w)
        throw ParseError(row_no, f + 1, "not a number: '" + fields[f] + "'");
      if (!std::isfinite(*w))
        throw ParseError(row_no, f + 1, "non-finite weight: '" + fields[f] + "'");
      if (*w < 0.0)
        throw NegativeWeight("negative weight " + fields[f] + " in line " + std::to_string(row_no));
      weights.push_back(*w);
    }
  };

  if (!options.has_header && !detail::trim(line).empty())
    consume_row(line, line_no); // first line doubled as the column-count probe
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty())
      continue;
    consume_row(line, line_no);
  }
  return Dataset(std::move(names), std::move(points), std::move(weights));
}

inline Dataset load_dataset(const std::string& path, const DatasetOptions& options = {})
{
  std::ifstream in(path);
  if (!in)
    throw IoFailure("cannot open dataset file: " + path);
  return load_dataset(in, options);
}

//! Writes a tree in the line-oriented text format:
//!   DETv1 dims=<D> leaves=<L> total_weight=<w>
//!   dim <name> <lo> <hi>          (one per dimension)
//!   meta <key> <value>            (optional free-form pairs)
//!   I <dim> <threshold>  |  L <density> [nosupport]   (nodes in preorder)
//! All numbers are rendered in shortest round-trip form, so loading
//! reproduces every double bit-exactly.
inline void save_tree(const DensityTree& tree, std::ostream& out,
                      const std::map<std::string, std::string>& metadata = {})
{
  for (const std::string& name : tree.dims()) {
    if (name.find_first_of(" \t\r\n") != std::string::npos)
      throw std::invalid_argument("dimension name contains whitespace, cannot serialize: '" +
                                  name + "'");
  }
  out << "DETv1 dims=" << tree.n_dims() << " leaves=" << tree.n_leaves()
      << " total_weight=" << detail::format_double(tree.total_weight()) << '\n';
  for (std::size_t d = 0; d < tree.n_dims(); ++d) {
    out << "dim " << tree.dims()[d] << ' ' << detail::format_double(tree.root_box().lo[d]) << ' '
        << detail::format_double(tree.root_box().hi[d]) << '\n';
  }
  for (const auto& [key, value] : metadata) {
    if (key.empty() || key.find_first_of(" \t\r\n") != std::string::npos ||
        value.find_first_of("\r\n") != std::string::npos)
      throw std::invalid_argument("metadata keys must be single tokens and values single lines");
    out << "meta " << key << ' ' << value << '\n';
  }
  for (const TreeNode& n : tree.nodes()) {
    if (n.is_leaf()) {
      out << "L " << detail::format_double(n.value);
      if (n.no_support)
        out << " nosupport";
      out << '\n';
    } else {
      out << "I " << n.split_dim << ' ' << detail::format_double(n.value) << '\n';
    }
  }
  if (!out)
    throw IoFailure("write failed while saving tree");
}

inline void save_tree(const DensityTree& tree, const std::string& path,
                      const std::map<std::string, std::string>& metadata = {})
{
  std::ofstream out(path);
  if (!out)
    throw IoFailure("cannot open file for writing: " + path);
  save_tree(tree, out, metadata);
  out.flush();
  if (!out)
    throw IoFailure("write failed while saving tree: " + path);
}

//! Reads a tree saved by save_tree, reconstructing child indices from the
//! preorder layout, and re-validates every structural invariant before
//! returning. metadata_out, when given, receives the file's meta pairs.
inline DensityTree load_tree(std::istream& in,
                             std::map<std::string, std::string>* metadata_out = nullptr)
{
  std::string line;
  if (!std::getline(in, line))
    throw CorruptFile("empty tree file");
  std::istringstream head(line);
  std::string magic, dims_kv, leaves_kv, weight_kv;
  head >> magic >> dims_kv >> leaves_kv >> weight_kv;
  if (magic.rfind("DET", 0) != 0)
    throw CorruptFile("not a tree file (missing DET header)");
  if (magic != "DETv1")
    throw UnsupportedVersion("unsupported tree format: " + magic);
  if (dims_kv.rfind("dims=", 0) != 0 || leaves_kv.rfind("leaves=", 0) != 0 ||
      weight_kv.rfind("total_weight=", 0) != 0)
    throw CorruptFile("malformed header line");
  const auto n_dims = detail::parse_unsigned(std::string_view(dims_kv).substr(5));
  const auto n_leaves = detail::parse_unsigned(std::string_view(leaves_kv).substr(7));
  const auto total_weight = detail::parse_double(std::string_view(weight_kv).substr(13));
  if (!n_dims || *n_dims == 0 || !n_leaves || *n_leaves == 0 || !total_weight)
    throw CorruptFile("malformed header counts");
  if (*n_leaves > (1ull << 31))
    throw CorruptFile("leaf count exceeds format limits");
  const std::size_t n_nodes = 2 * static_cast<std::size_t>(*n_leaves) - 1;

  std::vector<std::string> names;
  std::vector<double> lo, hi;
  for (std::size_t d = 0; d < *n_dims; ++d) {
    if (!std::getline(in, line))
      throw CorruptFile("truncated file: expected " + std::to_string(*n_dims) + " dim lines");
    std::istringstream ls(line);
    std::string tag, name, lo_s, hi_s;
    ls >> tag >> name >> lo_s >> hi_s;
    const auto lo_v = detail::parse_double(lo_s);
    const auto hi_v = detail::parse_double(hi_s);
    if (tag != "dim" || name.empty() || !lo_v || !hi_v)
      throw CorruptFile("malformed dim line: " + line);
    names.push_back(name);
    lo.push_back(*lo_v);
    hi.push_back(*hi_v);
  }

  std::vector<TreeNode> nodes;
  nodes.reserve(std::min<std::size_t>(n_nodes, 1u << 20));
  std::vector<std::uint32_t> pending; // internal nodes whose right child is ahead
  bool in_meta_prefix = true;
  while (nodes.size() < n_nodes) {
    if (!std::getline(in, line))
      throw CorruptFile("node count mismatch: header claims " + std::to_string(n_nodes) +
                        " nodes, file has " + std::to_string(nodes.size()));
    if (detail::trim(line).empty())
      continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (in_meta_prefix && tag == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      value = std::string(detail::trim(value));
      if (key.empty())
        throw CorruptFile("malformed meta line: " + line);
      if (metadata_out)
        (*metadata_out)[key] = value;
      continue;
    }
    in_meta_prefix = false;
    const auto index = static_cast<std::uint32_t>(nodes.size());
    if (tag == "I") {
      std::string dim_s, thr_s, extra;
      ls >> dim_s >> thr_s;
      const auto dim = detail::parse_unsigned(dim_s);
      const auto thr = detail::parse_double(thr_s);
      if (!dim || !thr || (ls >> extra))
        throw CorruptFile("malformed internal node line: " + line);
      if (*dim >= *n_dims)
        throw CorruptFile("split dimension out of range: " + line);
      TreeNode n = TreeNode::internal(static_cast<std::int32_t>(*dim), *thr);
      n.left = index + 1;
      nodes.push_back(n);
      pending.push_back(index);
    } else if (tag == "L") {
      std::string density_s, flag_s, extra;
      ls >> density_s >> flag_s;
      const auto density = detail::parse_double(density_s);
      if (!density || (!flag_s.empty() && flag_s != "nosupport") || (ls >> extra))
        throw CorruptFile("malformed leaf line: " + line);
      nodes.push_back(TreeNode::leaf(*density, flag_s == "nosupport"));
      // a completed subtree: the next node, if any, is the right child of
      // the innermost pending internal
      if (!pending.empty() && nodes.size() < n_nodes) {
        nodes[pending.back()].right = static_cast<std::uint32_t>(nodes.size());
        pending.pop_back();
      }
    } else {
      throw CorruptFile("unrecognized line in tree file: " + line);
    }
  }
  if (!pending.empty())
    throw CorruptFile("node count mismatch: tree incomplete after " + std::to_string(n_nodes) +
                      " nodes");
  while (std::getline(in, line)) {
    if (!detail::trim(line).empty())
      throw CorruptFile("trailing content after the node list: " + line);
  }

  DensityTree tree = [&] {
    try {
      return DensityTree::from_parts(std::move(names),
                                     HyperRect::create(std::move(lo), std::move(hi)),
                                     *total_weight, std::move(nodes));
    } catch (const CorruptFile&) {
      throw;
    } catch (const Error& e) {
      throw CorruptFile(std::string("invalid tree file: ") + e.what());
    }
  }();
  const std::vector<Violation> violations = validate(tree);
  if (!violations.empty()) {
    const Violation& v = violations.front();
    throw CorruptFile("invalid tree: " + std::string(to_string(v.kind)) + " at " + v.path + ": " +
                      v.detail);
  }
  return tree;
}

inline DensityTree load_tree(const std::string& path,
                             std::map<std::string, std::string>* metadata_out = nullptr)
{
  std::ifstream in(path);
  if (!in)
    throw IoFailure("cannot open tree file: " + path);
  return load_tree(in, metadata_out);
}

} // namespace det
