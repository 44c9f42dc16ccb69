#ifndef OSR_METRICS_HPP
#define OSR_METRICS_HPP

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "osr/common.hpp"

namespace osr {

/// Labels 1..K are known classes, K + 1 is the unknown class.
struct EvalReport {
  double accuracy = 0.0;
  double precision = 0.0;  // macro over classes seen in truth or prediction
  double recall = 0.0;
  double f1 = 0.0;
  double tdr = 0.0;        // recall of the unknown class
  Eigen::MatrixXi confusion;  // rows: truth, cols: prediction

  int num_classes() const { return static_cast<int>(confusion.rows()); }
};

/// `num_classes` is K + 1 (unknown included).
EvalReport evaluate(std::span<const ClassId> truth, std::span<const ClassId> predicted,
                    int num_classes);

/// P(mu_known > mu_unknown) over all pairs, ties counting one half.
double separation_auc(std::span<const double> mu_known, std::span<const double> mu_unknown);

/// Columns in the order Accuracy, Precision, Recall, F1, TDR.
std::string format_report_table(const EvalReport& report);
void write_report_csv(std::ostream& os, const EvalReport& report);

}  // namespace osr

#endif  // OSR_METRICS_HPP
