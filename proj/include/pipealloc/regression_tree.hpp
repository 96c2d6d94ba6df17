#pragma once

#include <array>
#include <span>
#include <vector>

#include <json.hpp>

namespace pipealloc {

// CART regression tree over two features, grown with variance-reduction
// (sum of squared error) splits. Thresholds sit halfway between adjacent
// distinct feature values.
class RegressionTree {
 public:
  static constexpr int kNumFeatures = 2;
  using Features = std::array<double, kNumFeatures>;

  struct Params {
    int max_depth = 12;
    int min_leaf = 2;
  };

  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0;
    int left = -1;
    int right = -1;
    double value = 0;
    int count = 0;
    double min_target = 0;
    double max_target = 0;

    bool is_leaf() const { return feature < 0; }
  };

  RegressionTree() = default;

  static RegressionTree fit(std::span<const Features> x, std::span<const double> y,
                            const Params& params);

  double predict(const Features& x) const { return node_for(x).value; }
  const Node& node_for(const Features& x) const;

  bool empty() const { return nodes_.empty(); }
  int depth() const;
  std::size_t leaf_count() const;
  const std::vector<Node>& nodes() const { return nodes_; }

  // Nested records: {"split": {"feature", "threshold"}, "left", "right"} or
  // {"leaf": {"value", "count", "min", "max"}}.
  nlohmann::json to_json() const;
  static RegressionTree from_json(const nlohmann::json& j);

 private:
  int build(std::span<const Features> x, std::span<const double> y,
            std::vector<int>& idx, int begin, int end, int depth, const Params& params);
  nlohmann::json node_to_json(int id) const;
  int node_from_json(const nlohmann::json& j);

  std::vector<Node> nodes_;
};

}  // namespace pipealloc
