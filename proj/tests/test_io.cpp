#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <det/io.hpp>
#include <det/train.hpp>

#include "support/test_data.hpp"

using det::Dataset;
using det::DatasetOptions;
using det::DensityTree;
using det::HyperRect;
using det::TreeNode;

namespace {

Dataset parse(const std::string& text, const DatasetOptions& options = {})
{
  std::istringstream in(text);
  return det::load_dataset(in, options);
}

DensityTree two_leaf_tree()
{
  std::vector<TreeNode> nodes(3);
  nodes[0] = TreeNode::internal(0, 0.5);
  nodes[0].left = 1;
  nodes[0].right = 2;
  nodes[1] = TreeNode::leaf(1.5);
  nodes[2] = TreeNode::leaf(0.5);
  return DensityTree::from_parts({"x"}, HyperRect::create({0.0}, {1.0}), 4.0,
                                 std::move(nodes));
}

std::string serialize(const DensityTree& tree,
                      const std::map<std::string, std::string>& metadata = {})
{
  std::ostringstream out;
  det::save_tree(tree, out, metadata);
  return out.str();
}

DensityTree deserialize(const std::string& text,
                        std::map<std::string, std::string>* metadata_out = nullptr)
{
  std::istringstream in(text);
  return det::load_tree(in, metadata_out);
}

} // namespace

TEST_CASE("load_dataset reads a basic table with a header")
{
  const auto data = parse("x,y\n0.5,1\n2,3.5\n");
  REQUIRE(data.columns() == std::vector<std::string>{"x", "y"});
  REQUIRE(data.n_rows() == 2);
  REQUIRE(data.coord(0, 0) == 0.5);
  REQUIRE(data.coord(1, 1) == 3.5);
  REQUIRE(data.weight(0) == 1.0);
  REQUIRE(data.total_weight() == 2.0);
}

TEST_CASE("load_dataset separates the weight column from the coordinates")
{
  DatasetOptions options;
  options.weight_column = "w";
  const auto data = parse("x,w,y\n1,2,10\n3,0.5,30\n", options);
  REQUIRE(data.columns() == std::vector<std::string>{"x", "y"});
  REQUIRE(data.coord(0, 1) == 10.0);
  REQUIRE(data.weight(0) == 2.0);
  REQUIRE(data.weight(1) == 0.5);
  REQUIRE(data.total_weight() == 2.5);
}

TEST_CASE("load_dataset selects and reorders explicit columns")
{
  DatasetOptions options;
  options.columns = {"c", "a"};
  const auto data = parse("a,b,c\n1,2,3\n4,5,6\n", options);
  REQUIRE(data.columns() == std::vector<std::string>{"c", "a"});
  REQUIRE(data.coord(0, 0) == 3.0);
  REQUIRE(data.coord(0, 1) == 1.0);
  REQUIRE(data.coord(1, 0) == 6.0);
}

TEST_CASE("load_dataset names headerless columns positionally")
{
  DatasetOptions options;
  options.has_header = false;
  const auto data = parse("1,2\n3,4\n", options);
  REQUIRE(data.columns() == std::vector<std::string>{"col0", "col1"});
  REQUIRE(data.n_rows() == 2); // the first line is data, not a header
  REQUIRE(data.coord(0, 0) == 1.0);
}

TEST_CASE("load_dataset handles quoting, padding, blank lines, and CRLF")
{
  const auto data = parse("\"x 1\",\"y\"\"q\"\r\n 1.5 , 2 \r\n\n\n-3e-2,\"4\"\r\n");
  REQUIRE(data.columns() == std::vector<std::string>{"x 1", "y\"q"});
  REQUIRE(data.n_rows() == 2);
  REQUIRE(data.coord(0, 0) == 1.5);
  REQUIRE(data.coord(1, 0) == -0.03);
  REQUIRE(data.coord(1, 1) == 4.0);
}

TEST_CASE("load_dataset supports alternative delimiters")
{
  DatasetOptions options;
  options.delimiter = ';';
  const auto data = parse("x;y\n1;2\n", options);
  REQUIRE(data.columns() == std::vector<std::string>{"x", "y"});
  REQUIRE(data.coord(0, 1) == 2.0);
}

TEST_CASE("load_dataset reports the position of the first bad cell")
{
  try {
    parse("x,y\n1,2\n3,oops\n");
    FAIL("expected ParseError");
  } catch (const det::ParseError& e) {
    REQUIRE(e.row == 3);
    REQUIRE(e.column == 2);
  }

  try {
    parse("x,y\n1,2,3\n");
    FAIL("expected ParseError");
  } catch (const det::ParseError& e) {
    REQUIRE(e.row == 2);
    REQUIRE(e.column == 0); // the whole row is malformed
  }

  REQUIRE_THROWS_AS(parse("x,y\n1,inf\n"), det::ParseError);
  REQUIRE_THROWS_AS(parse("x,y\n1,nan\n"), det::ParseError);
  REQUIRE_THROWS_AS(parse("x,,y\n1,2,3\n"), det::ParseError);
  REQUIRE_THROWS_AS(parse(""), det::ParseError);
  REQUIRE_THROWS_AS(parse("\n\n  \n"), det::ParseError);
}

TEST_CASE("load_dataset rejects unknown and negative inputs")
{
  DatasetOptions missing;
  missing.columns = {"zz"};
  REQUIRE_THROWS_AS(parse("x,y\n1,2\n", missing), det::MissingColumn);

  DatasetOptions missing_weight;
  missing_weight.weight_column = "w";
  REQUIRE_THROWS_AS(parse("x,y\n1,2\n", missing_weight), det::MissingColumn);

  DatasetOptions weighted;
  weighted.weight_column = "w";
  REQUIRE_THROWS_AS(parse("x,w\n1,-2\n", weighted), det::NegativeWeight);

  REQUIRE_THROWS_AS(parse("x,x\n1,2\n"), det::DimensionMismatch);
}

TEST_CASE("load_dataset from a missing path fails cleanly")
{
  REQUIRE_THROWS_AS(det::load_dataset("/nonexistent/nowhere.csv"), det::IoFailure);
}

TEST_CASE("save_tree emits the documented line format")
{
  REQUIRE(serialize(two_leaf_tree()) ==
          "DETv1 dims=1 leaves=2 total_weight=4\n"
          "dim x 0 1\n"
          "I 0 0.5\n"
          "L 1.5\n"
          "L 0.5\n");

  const auto flagged = DensityTree::from_parts({"x"}, HyperRect::create({0.0}, {1.0}), 1.0,
                                               {TreeNode::leaf(0.0, true)});
  REQUIRE(serialize(flagged) ==
          "DETv1 dims=1 leaves=1 total_weight=1\n"
          "dim x 0 1\n"
          "L 0 nosupport\n");

  REQUIRE(serialize(two_leaf_tree(), {{"note", "hello world"}, {"a", "1"}}) ==
          "DETv1 dims=1 leaves=2 total_weight=4\n"
          "dim x 0 1\n"
          "meta a 1\n"
          "meta note hello world\n"
          "I 0 0.5\n"
          "L 1.5\n"
          "L 0.5\n");
}

TEST_CASE("save_tree rejects names it cannot round-trip")
{
  const auto bad_dim = DensityTree::from_parts({"a b"}, HyperRect::create({0.0}, {1.0}), 1.0,
                                               {TreeNode::leaf(1.0)});
  std::ostringstream out;
  REQUIRE_THROWS_AS(det::save_tree(bad_dim, out), std::invalid_argument);

  REQUIRE_THROWS_AS(serialize(two_leaf_tree(), {{"bad key", "v"}}), std::invalid_argument);
  REQUIRE_THROWS_AS(serialize(two_leaf_tree(), {{"k", "line\nbreak"}}), std::invalid_argument);
}

TEST_CASE("trees round-trip bit-exactly through the text format")
{
  const auto data = testsupport::make_mixture(700, 3, 424242);
  det::TrainConfig config;
  config.min_leaf_width = {0.05, 0.05, 0.05};
  const auto tree = det::train(data, config);
  REQUIRE(tree.n_leaves() > 10);

  const auto loaded = deserialize(serialize(tree));
  REQUIRE(loaded == tree);
  REQUIRE(loaded.n_leaves() == tree.n_leaves());
  REQUIRE(loaded.depth() == tree.depth());
}

TEST_CASE("awkward doubles survive the round trip")
{
  std::vector<TreeNode> nodes(3);
  nodes[0] = TreeNode::internal(0, 0.1 + 0.2); // 0.30000000000000004
  nodes[0].left = 1;
  nodes[0].right = 2;
  nodes[1] = TreeNode::leaf(1.0 / 3.0);
  nodes[2] = TreeNode::leaf(5e-324); // smallest subnormal
  const auto tree = DensityTree::from_parts(
      {"x"}, HyperRect::create({-1e300}, {1e300}), 12345.6789, std::move(nodes));

  const auto loaded = deserialize(serialize(tree));
  REQUIRE(loaded == tree);
}

TEST_CASE("metadata survives the round trip")
{
  std::map<std::string, std::string> metadata;
  const auto loaded = deserialize(
      serialize(two_leaf_tree(), {{"source", "unit test"}, {"rows", "4"}}), &metadata);
  REQUIRE(loaded == two_leaf_tree());
  REQUIRE(metadata ==
          std::map<std::string, std::string>{{"source", "unit test"}, {"rows", "4"}});
}

TEST_CASE("serialization is deterministic")
{
  const auto data = testsupport::make_mixture(300, 2, 9001);
  det::TrainConfig config;
  config.min_leaf_width = {0.05, 0.05};
  const auto tree = det::train(data, config);
  const std::string first = serialize(tree);
  REQUIRE(first == serialize(tree));
  REQUIRE(first == serialize(deserialize(first)));
}

TEST_CASE("load_tree rejects malformed headers")
{
  REQUIRE_THROWS_AS(deserialize(""), det::CorruptFile);
  REQUIRE_THROWS_AS(deserialize("hello world\n"), det::CorruptFile);
  REQUIRE_THROWS_AS(deserialize("DETv9 dims=1 leaves=1 total_weight=1\ndim x 0 1\nL 1\n"),
                    det::UnsupportedVersion);
  REQUIRE_THROWS_AS(deserialize("DETv1 dims=one leaves=1 total_weight=1\n"),
                    det::CorruptFile);
  REQUIRE_THROWS_AS(deserialize("DETv1 dims=1 leaves=0 total_weight=1\n"), det::CorruptFile);
  REQUIRE_THROWS_AS(deserialize("DETv1 dims=1 total_weight=1\n"), det::CorruptFile);
  REQUIRE_THROWS_AS(
      deserialize("DETv1 dims=1 leaves=4294967297 total_weight=1\ndim x 0 1\n"),
      det::CorruptFile);
}

TEST_CASE("load_tree rejects malformed dim lines")
{
  REQUIRE_THROWS_AS(deserialize("DETv1 dims=2 leaves=1 total_weight=1\ndim x 0 1\nL 1\n"),
                    det::CorruptFile); // second dim line missing
  REQUIRE_THROWS_AS(deserialize("DETv1 dims=1 leaves=1 total_weight=1\ndmi x 0 1\nL 1\n"),
                    det::CorruptFile);
  REQUIRE_THROWS_AS(deserialize("DETv1 dims=1 leaves=1 total_weight=1\ndim x zero 1\nL 1\n"),
                    det::CorruptFile);
}

TEST_CASE("load_tree rejects malformed node lines")
{
  const std::string head = "DETv1 dims=1 leaves=2 total_weight=4\ndim x 0 1\n";
  REQUIRE_THROWS_AS(deserialize(head + "I 0\nL 1\nL 1\n"), det::CorruptFile);
  REQUIRE_THROWS_AS(deserialize(head + "I 0 0.5 junk\nL 1\nL 1\n"), det::CorruptFile);
  REQUIRE_THROWS_AS(deserialize(head + "I 7 0.5\nL 1\nL 1\n"), det::CorruptFile);
  REQUIRE_THROWS_AS(deserialize(head + "I 0 0.5\nL\nL 1\n"), det::CorruptFile);
  REQUIRE_THROWS_AS(deserialize(head + "I 0 0.5\nL 1 nosupprt\nL 1\n"), det::CorruptFile);
  REQUIRE_THROWS_AS(deserialize(head + "I 0 0.5\nL 1 nosupport junk\nL 1\n"),
                    det::CorruptFile);
  REQUIRE_THROWS_AS(deserialize(head + "X 0 0.5\nL 1\nL 1\n"), det::CorruptFile);
}

TEST_CASE("load_tree rejects inconsistent node counts")
{
  const std::string head = "DETv1 dims=1 leaves=2 total_weight=4\ndim x 0 1\n";
  // too few nodes
  REQUIRE_THROWS_AS(deserialize(head + "I 0 0.5\nL 1\n"), det::CorruptFile);
  // too many nodes: the extra line is trailing content
  REQUIRE_THROWS_AS(deserialize(head + "I 0 0.5\nL 1\nL 1\nL 1\n"), det::CorruptFile);
  // three leaves cannot form one binary tree
  REQUIRE_THROWS_AS(deserialize(head + "L 1\nL 1\nL 1\n"), det::CorruptFile);
  // an internal node whose right subtree never arrives
  REQUIRE_THROWS_AS(deserialize(head + "I 0 0.5\nI 0 0.25\nL 1\n"), det::CorruptFile);

  // the nested five-node layout itself is fine
  const auto nested = deserialize("DETv1 dims=1 leaves=3 total_weight=4\ndim x 0 1\n"
                                  "I 0 0.5\nI 0 0.25\nL 2\nL 1\nL 0.5\n");
  REQUIRE(nested.n_leaves() == 3);
  REQUIRE(nested.depth() == 3);
  const double p[] = {0.3};
  REQUIRE(nested.evaluate(p) == 1.0);
}

TEST_CASE("load_tree re-validates value invariants")
{
  REQUIRE_THROWS_AS(deserialize("DETv1 dims=1 leaves=1 total_weight=1\ndim x 0 1\nL -1\n"),
                    det::CorruptFile); // negative density
  REQUIRE_THROWS_AS(deserialize("DETv1 dims=1 leaves=2 total_weight=1\ndim x 0 1\n"
                                "I 0 5\nL 1\nL 1\n"),
                    det::CorruptFile); // threshold outside the box
  REQUIRE_THROWS_AS(deserialize("DETv1 dims=1 leaves=1 total_weight=0\ndim x 0 1\nL 1\n"),
                    det::CorruptFile); // weightless tree
  REQUIRE_THROWS_AS(deserialize("DETv1 dims=1 leaves=1 total_weight=1\ndim x 1 0\nL 1\n"),
                    det::CorruptFile); // inverted root box
}

TEST_CASE("load_tree only accepts metadata before the nodes")
{
  const std::string good = "DETv1 dims=1 leaves=1 total_weight=1\ndim x 0 1\n"
                           "meta k v\nL 1\n";
  std::map<std::string, std::string> metadata;
  REQUIRE(deserialize(good, &metadata).n_leaves() == 1);
  REQUIRE(metadata.at("k") == "v");

  const std::string late = "DETv1 dims=1 leaves=1 total_weight=1\ndim x 0 1\n"
                           "L 1\nmeta k v\n";
  REQUIRE_THROWS_AS(deserialize(late), det::CorruptFile);
}

TEST_CASE("tree files round-trip through the filesystem")
{
  const std::string path = "/tmp/det_io_test_tree.det";
  const auto tree = two_leaf_tree();
  det::save_tree(tree, path, {{"origin", "file test"}});
  std::map<std::string, std::string> metadata;
  const auto loaded = det::load_tree(path, &metadata);
  REQUIRE(loaded == tree);
  REQUIRE(metadata.at("origin") == "file test");
  std::remove(path.c_str());

  REQUIRE_THROWS_AS(det::load_tree("/nonexistent/nowhere.det"), det::IoFailure);
  REQUIRE_THROWS_AS(det::save_tree(tree, "/nonexistent/dir/file.det"), det::IoFailure);
}
