#include "osr/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <sstream>

namespace osr {

EvalReport evaluate(std::span<const ClassId> truth, std::span<const ClassId> predicted,
                    int num_classes) {
  if (truth.size() != predicted.size()) {
    throw InvalidArgument("evaluate: truth and prediction differ in length");
  }
  if (truth.empty()) throw InvalidArgument("evaluate: no samples");
  if (num_classes < 2) throw InvalidArgument("evaluate: need at least one known class plus unknown");

  EvalReport r;
  r.confusion = Eigen::MatrixXi::Zero(num_classes, num_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 1 || truth[i] > num_classes || predicted[i] < 1 || predicted[i] > num_classes) {
      throw InvalidArgument("evaluate: label outside 1.." + std::to_string(num_classes));
    }
    ++r.confusion(truth[i] - 1, predicted[i] - 1);
  }

  const auto total = static_cast<double>(truth.size());
  r.accuracy = r.confusion.trace() / total;

  double p_sum = 0.0;
  double r_sum = 0.0;
  double f_sum = 0.0;
  int present = 0;
  for (int k = 0; k < num_classes; ++k) {
    const int tp = r.confusion(k, k);
    const int actual = r.confusion.row(k).sum();
    const int called = r.confusion.col(k).sum();
    if (actual == 0 && called == 0) continue;
    ++present;
    const double precision = called > 0 ? static_cast<double>(tp) / called : 0.0;
    const double recall = actual > 0 ? static_cast<double>(tp) / actual : 0.0;
    const double f1 =
        precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    p_sum += precision;
    r_sum += recall;
    f_sum += f1;
  }
  r.precision = p_sum / present;
  r.recall = r_sum / present;
  r.f1 = f_sum / present;

  const int u = num_classes - 1;
  const int unknown_total = r.confusion.row(u).sum();
  r.tdr = unknown_total > 0 ? static_cast<double>(r.confusion(u, u)) / unknown_total : 0.0;
  return r;
}

double separation_auc(std::span<const double> mu_known, std::span<const double> mu_unknown) {
  if (mu_known.empty() || mu_unknown.empty()) {
    throw InvalidArgument("separation_auc: both groups must be non-empty");
  }
  // Mann-Whitney U via midranks of the pooled sample.
  struct Item {
    double value;
    bool known;
  };
  std::vector<Item> pooled;
  pooled.reserve(mu_known.size() + mu_unknown.size());
  for (double v : mu_known) pooled.push_back({v, true});
  for (double v : mu_unknown) pooled.push_back({v, false});
  std::sort(pooled.begin(), pooled.end(),
            [](const Item& a, const Item& b) { return a.value < b.value; });

  double known_rank_sum = 0.0;
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    std::size_t known_in_tie = 0;
    while (j < pooled.size() && pooled[j].value == pooled[i].value) {
      known_in_tie += pooled[j].known;
      ++j;
    }
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    known_rank_sum += midrank * static_cast<double>(known_in_tie);
    i = j;
  }
  const auto nk = static_cast<double>(mu_known.size());
  const auto nu = static_cast<double>(mu_unknown.size());
  const double u_stat = known_rank_sum - nk * (nk + 1.0) / 2.0;
  return u_stat / (nk * nu);
}

std::string format_report_table(const EvalReport& report) {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof line, "%-10s %-10s %-10s %-10s %-10s\n", "Accuracy", "Precision",
                "Recall", "F1", "TDR");
  os << line;
  std::snprintf(line, sizeof line, "%-10.2f %-10.2f %-10.2f %-10.2f %-10.2f\n",
                100.0 * report.accuracy, 100.0 * report.precision, 100.0 * report.recall,
                100.0 * report.f1, 100.0 * report.tdr);
  os << line;
  os << "\nconfusion (rows truth, cols prediction; last class = unknown)\n";
  for (Eigen::Index r = 0; r < report.confusion.rows(); ++r) {
    for (Eigen::Index c = 0; c < report.confusion.cols(); ++c) {
      std::snprintf(line, sizeof line, "%7d", report.confusion(r, c));
      os << line;
    }
    os << '\n';
  }
  return os.str();
}

void write_report_csv(std::ostream& os, const EvalReport& report) {
  char line[160];
  os << "# osr-report v1\n";
  os << "accuracy,precision,recall,f1,tdr\n";
  std::snprintf(line, sizeof line, "%.10f,%.10f,%.10f,%.10f,%.10f\n", report.accuracy,
                report.precision, report.recall, report.f1, report.tdr);
  os << line;
}

}  // namespace osr
