#ifndef OSR_DECISION_TREE_HPP
#define OSR_DECISION_TREE_HPP

#include <array>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "osr/common.hpp"

namespace osr {

struct DtConfig {
  int max_depth = 8;
  int min_samples_leaf = 5;

  static constexpr int unlimited_depth = std::numeric_limits<int>::max();

  void validate() const;
};

/// Internal nodes send x[feature] <= threshold to `left`. Leaves have feature
/// == -1 and carry the majority label (ties -> 0).
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  int label = 0;
  std::array<std::size_t, 2> counts{};

  bool is_leaf() const { return feature < 0; }
};

/// Binary CART tree stored as a flat node array; node 0 is the root.
struct DecisionTree {
  std::vector<TreeNode> nodes;
  Eigen::Index feature_dim = 0;

  int depth() const;
  std::size_t num_leaves() const;
};

double gini_impurity(std::size_t negatives, std::size_t positives);

/// Greedy Gini CART with midpoint thresholds. Among equal impurity decreases
/// the lower feature index, then the lower threshold, wins, so the result
/// does not depend on sample order.
DecisionTree fit_tree(const Eigen::MatrixXd& X, std::span<const int> labels, const DtConfig& cfg);

int tree_predict(const DecisionTree& tree, const Eigen::Ref<const Eigen::VectorXd>& x);

/// One node per line, indented by depth.
std::string dump_tree(const DecisionTree& tree);

void save_tree(std::ostream& os, const DecisionTree& tree);
DecisionTree load_tree(std::istream& is);

}  // namespace osr

#endif  // OSR_DECISION_TREE_HPP
