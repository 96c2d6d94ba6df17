#include "pipealloc/regression_tree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pipealloc/errors.hpp"

namespace pipealloc {

namespace {

const char* kFeatureNames[RegressionTree::kNumFeatures] = {"batch", "share"};

int feature_index(const std::string& name) {
  for (int f = 0; f < RegressionTree::kNumFeatures; ++f) {
    if (name == kFeatureNames[f]) return f;
  }
  throw InvalidArgument("unknown tree feature: " + name);
}

}  // namespace

RegressionTree RegressionTree::fit(std::span<const Features> x, std::span<const double> y,
                                   const Params& params) {
  if (x.size() != y.size()) throw InvalidArgument("feature/target size mismatch");
  if (x.empty()) throw TrainingError("cannot fit a tree on zero samples");
  if (params.max_depth < 0 || params.min_leaf < 1) throw InvalidArgument("bad tree params");

  RegressionTree tree;
  std::vector<int> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  tree.build(x, y, idx, 0, static_cast<int>(idx.size()), 0, params);
  return tree;
}

int RegressionTree::build(std::span<const Features> x, std::span<const double> y,
                          std::vector<int>& idx, int begin, int end, int depth,
                          const Params& params) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.emplace_back();

  const int n = end - begin;
  double sum = 0, sum_sq = 0;
  double lo = y[idx[begin]], hi = y[idx[begin]];
  for (int i = begin; i < end; ++i) {
    const double v = y[idx[i]];
    sum += v;
    sum_sq += v * v;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  {
    Node& node = nodes_[id];
    node.value = sum / n;
    node.count = n;
    node.min_target = lo;
    node.max_target = hi;
  }

  if (depth >= params.max_depth || n < 2 * params.min_leaf || lo == hi) return id;

  const double parent_sse = sum_sq - sum * sum / n;
  double best_gain = 0;
  int best_feature = -1;
  double best_threshold = 0;

  std::vector<int> order(idx.begin() + begin, idx.begin() + end);
  for (int f = 0; f < kNumFeatures; ++f) {
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return x[a][f] < x[b][f]; });
    double left_sum = 0, left_sq = 0;
    for (int k = 0; k < n - 1; ++k) {
      const double v = y[order[k]];
      left_sum += v;
      left_sq += v * v;
      const int n_left = k + 1;
      const int n_right = n - n_left;
      const double here = x[order[k]][f];
      const double next = x[order[k + 1]][f];
      if (here == next) continue;
      if (n_left < params.min_leaf || n_right < params.min_leaf) continue;
      const double right_sum = sum - left_sum;
      const double right_sq = sum_sq - left_sq;
      const double sse = (left_sq - left_sum * left_sum / n_left) +
                         (right_sq - right_sum * right_sum / n_right);
      const double gain = parent_sse - sse;
      if (gain > best_gain) {
        best_gain = gain;
        best_feature = f;
        best_threshold = 0.5 * (here + next);
      }
    }
  }

  // Gains at rounding-noise level are not worth a split.
  if (best_feature < 0 || best_gain <= 1e-12 * std::max(1.0, std::abs(parent_sse))) return id;

  auto mid = std::partition(idx.begin() + begin, idx.begin() + end,
                            [&](int i) { return x[i][best_feature] < best_threshold; });
  const int split = static_cast<int>(mid - idx.begin());
  // Keep left-to-right sample order stable within each child.
  std::sort(idx.begin() + begin, idx.begin() + split);
  std::sort(idx.begin() + split, idx.begin() + end);

  const int left = build(x, y, idx, begin, split, depth + 1, params);
  const int right = build(x, y, idx, split, end, depth + 1, params);
  Node& node = nodes_[id];
  node.feature = best_feature;
  node.threshold = best_threshold;
  node.left = left;
  node.right = right;
  return id;
}

const RegressionTree::Node& RegressionTree::node_for(const Features& x) const {
  if (nodes_.empty()) throw InvalidArgument("prediction from an untrained tree");
  const Node* node = &nodes_[0];
  while (!node->is_leaf()) {
    node = &nodes_[x[node->feature] < node->threshold ? node->left : node->right];
  }
  return *node;
}

int RegressionTree::depth() const {
  if (nodes_.empty()) return 0;
  int deepest = 0;
  std::vector<std::pair<int, int>> stack{{0, 0}};
  while (!stack.empty()) {
    auto [id, d] = stack.back();
    stack.pop_back();
    deepest = std::max(deepest, d);
    if (!nodes_[id].is_leaf()) {
      stack.push_back({nodes_[id].left, d + 1});
      stack.push_back({nodes_[id].right, d + 1});
    }
  }
  return deepest;
}

std::size_t RegressionTree::leaf_count() const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return n.is_leaf(); }));
}

nlohmann::json RegressionTree::to_json() const {
  if (nodes_.empty()) return nullptr;
  return node_to_json(0);
}

nlohmann::json RegressionTree::node_to_json(int id) const {
  const Node& n = nodes_[id];
  if (n.is_leaf()) {
    return {{"leaf",
             {{"value", n.value}, {"count", n.count}, {"min", n.min_target}, {"max", n.max_target}}}};
  }
  return {{"split", {{"feature", kFeatureNames[n.feature]}, {"threshold", n.threshold}}},
          {"count", n.count},
          {"value", n.value},
          {"left", node_to_json(n.left)},
          {"right", node_to_json(n.right)}};
}

RegressionTree RegressionTree::from_json(const nlohmann::json& j) {
  RegressionTree tree;
  if (!j.is_null()) tree.node_from_json(j);
  return tree;
}

int RegressionTree::node_from_json(const nlohmann::json& j) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  if (j.contains("leaf")) {
    const auto& leaf = j.at("leaf");
    Node& n = nodes_[id];
    n.value = leaf.at("value").get<double>();
    n.count = leaf.at("count").get<int>();
    n.min_target = leaf.at("min").get<double>();
    n.max_target = leaf.at("max").get<double>();
    return id;
  }
  const auto& split = j.at("split");
  const int feature = feature_index(split.at("feature").get<std::string>());
  const double threshold = split.at("threshold").get<double>();
  const int left = node_from_json(j.at("left"));
  const int right = node_from_json(j.at("right"));
  Node& n = nodes_[id];
  n.feature = feature;
  n.threshold = threshold;
  n.left = left;
  n.right = right;
  n.count = j.value("count", 0);
  n.value = j.value("value", 0.0);
  return id;
}

}  // namespace pipealloc
