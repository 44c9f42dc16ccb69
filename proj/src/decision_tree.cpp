#include "osr/decision_tree.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>

#include "osr/serialize.hpp"

namespace osr {
namespace {

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double decrease = -1.0;
};

class TreeBuilder {
 public:
  TreeBuilder(const Eigen::MatrixXd& X, std::span<const int> labels, const DtConfig& cfg)
      : X_(X), labels_(labels), cfg_(cfg) {}

  DecisionTree build() {
    std::vector<Eigen::Index> all(static_cast<std::size_t>(X_.rows()));
    std::iota(all.begin(), all.end(), Eigen::Index{0});
    tree_.feature_dim = X_.cols();
    grow(all, 0);
    return std::move(tree_);
  }

 private:
  int grow(std::vector<Eigen::Index>& rows, int depth) {
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    std::array<std::size_t, 2> counts{};
    for (auto r : rows) ++counts[static_cast<std::size_t>(labels_[static_cast<std::size_t>(r)])];
    tree_.nodes[id].counts = counts;
    tree_.nodes[id].label = counts[1] > counts[0] ? 1 : 0;

    const bool pure = counts[0] == 0 || counts[1] == 0;
    if (pure || depth >= cfg_.max_depth) return id;
    const Split split = best_split(rows, counts);
    if (split.feature < 0) return id;

    std::vector<Eigen::Index> left;
    std::vector<Eigen::Index> right;
    for (auto r : rows) (X_(r, split.feature) <= split.threshold ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();

    tree_.nodes[id].feature = split.feature;
    tree_.nodes[id].threshold = split.threshold;
    const int l = grow(left, depth + 1);
    const int r = grow(right, depth + 1);
    tree_.nodes[id].left = l;
    tree_.nodes[id].right = r;
    return id;
  }

  // Weighted child impurity never exceeds the parent's (Gini is concave), so
  // any admissible split is accepted; zero-gain splits let XOR-like layouts be
  // separated one level further down.
  Split best_split(const std::vector<Eigen::Index>& rows, const std::array<std::size_t, 2>& counts) {
    const std::size_t n = rows.size();
    const auto min_leaf = static_cast<std::size_t>(cfg_.min_samples_leaf);
    const double parent = gini_impurity(counts[0], counts[1]);
    Split best;
    std::vector<std::pair<double, int>> column(n);
    for (Eigen::Index f = 0; f < X_.cols(); ++f) {
      for (std::size_t i = 0; i < n; ++i) {
        column[i] = {X_(rows[i], f), labels_[static_cast<std::size_t>(rows[i])]};
      }
      std::sort(column.begin(), column.end());
      std::array<std::size_t, 2> left{};
      for (std::size_t i = 0; i + 1 < n; ++i) {
        ++left[static_cast<std::size_t>(column[i].second)];
        const double a = column[i].first;
        const double b = column[i + 1].first;
        if (!(a < b)) continue;
        const std::size_t nl = i + 1;
        const std::size_t nr = n - nl;
        if (nl < min_leaf || nr < min_leaf) continue;
        const std::array<std::size_t, 2> right{counts[0] - left[0], counts[1] - left[1]};
        const double weighted =
            (static_cast<double>(nl) * gini_impurity(left[0], left[1]) +
             static_cast<double>(nr) * gini_impurity(right[0], right[1])) /
            static_cast<double>(n);
        const double decrease = parent - weighted;
        if (decrease > best.decrease) {
          double mid = 0.5 * (a + b);
          if (!(mid < b)) mid = a;
          best = {static_cast<int>(f), mid, decrease};
        }
      }
    }
    return best;
  }

  const Eigen::MatrixXd& X_;
  std::span<const int> labels_;
  const DtConfig& cfg_;
  DecisionTree tree_;
};

}  // namespace

void DtConfig::validate() const {
  if (max_depth < 1) throw InvalidArgument("tree: max_depth must be at least 1");
  if (min_samples_leaf < 1) throw InvalidArgument("tree: min_samples_leaf must be at least 1");
}

int DecisionTree::depth() const {
  if (nodes.empty()) return 0;
  std::function<int(int)> walk = [&](int id) -> int {
    const auto& node = nodes[static_cast<std::size_t>(id)];
    if (node.is_leaf()) return 0;
    return 1 + std::max(walk(node.left), walk(node.right));
  };
  return walk(0);
}

std::size_t DecisionTree::num_leaves() const {
  return static_cast<std::size_t>(
      std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

double gini_impurity(std::size_t negatives, std::size_t positives) {
  const std::size_t n = negatives + positives;
  if (n == 0) return 0.0;
  const double p0 = static_cast<double>(negatives) / static_cast<double>(n);
  const double p1 = static_cast<double>(positives) / static_cast<double>(n);
  return 1.0 - p0 * p0 - p1 * p1;
}

DecisionTree fit_tree(const Eigen::MatrixXd& X, std::span<const int> labels, const DtConfig& cfg) {
  cfg.validate();
  if (X.rows() == 0) throw InvalidArgument("tree: empty training data");
  if (static_cast<std::size_t>(X.rows()) != labels.size()) {
    throw DimensionMismatch("tree: feature rows and labels differ in length");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw InvalidArgument("tree: labels must be 0 or 1");
  }
  return TreeBuilder(X, labels, cfg).build();
}

int tree_predict(const DecisionTree& tree, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != tree.feature_dim) throw DimensionMismatch("tree: input dimension mismatch");
  if (tree.nodes.empty()) throw InvalidArgument("tree: empty tree");
  std::size_t id = 0;
  while (!tree.nodes[id].is_leaf()) {
    const auto& node = tree.nodes[id];
    id = static_cast<std::size_t>(x[node.feature] <= node.threshold ? node.left : node.right);
  }
  return tree.nodes[id].label;
}

std::string dump_tree(const DecisionTree& tree) {
  std::ostringstream os;
  std::function<void(int, int)> walk = [&](int id, int depth) {
    const auto& node = tree.nodes[static_cast<std::size_t>(id)];
    os << std::string(static_cast<std::size_t>(depth) * 2, ' ');
    if (node.is_leaf()) {
      os << "leaf label=" << node.label << " counts=[" << node.counts[0] << ", "
         << node.counts[1] << "]\n";
      return;
    }
    os << "x[" << node.feature << "] <= " << node.threshold << " counts=[" << node.counts[0]
       << ", " << node.counts[1] << "]\n";
    walk(node.left, depth + 1);
    walk(node.right, depth + 1);
  };
  if (!tree.nodes.empty()) walk(0, 0);
  return os.str();
}

void save_tree(std::ostream& os, const DecisionTree& tree) {
  os << "tree " << tree.feature_dim << ' ' << tree.nodes.size() << '\n';
  for (const auto& node : tree.nodes) {
    os << node.feature << ' ';
    io::write_real(os, node.threshold);
    os << ' ' << node.left << ' ' << node.right << ' ' << node.label << ' ' << node.counts[0]
       << ' ' << node.counts[1] << '\n';
  }
}

DecisionTree load_tree(std::istream& is) {
  io::expect_token(is, "tree");
  DecisionTree tree;
  tree.feature_dim = io::read_value<Eigen::Index>(is, "tree feature dim");
  const auto count = io::read_value<std::size_t>(is, "tree node count");
  if (count == 0 || count > 10'000'000) throw ParseError("tree: implausible node count");
  tree.nodes.resize(count);
  for (auto& node : tree.nodes) {
    node.feature = io::read_value<int>(is, "node feature");
    node.threshold = io::read_real(is);
    node.left = io::read_value<int>(is, "node left");
    node.right = io::read_value<int>(is, "node right");
    node.label = io::read_value<int>(is, "node label");
    node.counts[0] = io::read_value<std::size_t>(is, "node count");
    node.counts[1] = io::read_value<std::size_t>(is, "node count");
    const auto in_range = [&](int child) {
      return child > 0 && static_cast<std::size_t>(child) < count;
    };
    if (!node.is_leaf() &&
        (node.feature >= tree.feature_dim || !in_range(node.left) || !in_range(node.right))) {
      throw ParseError("tree: node references out of range");
    }
  }
  return tree;
}

}  // namespace osr
