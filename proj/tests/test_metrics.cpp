#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

#include "doctest.h"

#include "osr/metrics.hpp"

using namespace osr;

namespace {

struct Brute {
  double accuracy, precision, recall, f1, tdr;
};

// Per-class counting over sample pairs (truth, prediction).
Brute brute_force(const std::vector<ClassId>& t, const std::vector<ClassId>& p, int classes) {
  Brute b{0, 0, 0, 0, 0};
  int present = 0;
  for (std::size_t i = 0; i < t.size(); ++i) b.accuracy += t[i] == p[i];
  b.accuracy /= static_cast<double>(t.size());
  for (int c = 1; c <= classes; ++c) {
    int tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      tp += t[i] == c && p[i] == c;
      fp += t[i] != c && p[i] == c;
      fn += t[i] == c && p[i] != c;
    }
    if (tp + fp + fn == 0) continue;
    ++present;
    const double prec = tp + fp ? static_cast<double>(tp) / (tp + fp) : 0.0;
    const double rec = tp + fn ? static_cast<double>(tp) / (tp + fn) : 0.0;
    b.precision += prec;
    b.recall += rec;
    b.f1 += prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    if (c == classes) b.tdr = rec;
  }
  b.precision /= present;
  b.recall /= present;
  b.f1 /= present;
  return b;
}

}  // namespace

TEST_CASE("all-correct predictions score 1") {
  const std::vector<ClassId> t{1, 2, 3, 3, 2, 1};
  const EvalReport r = evaluate(t, t, 3);
  CHECK(r.accuracy == 1.0);
  CHECK(r.precision == 1.0);
  CHECK(r.recall == 1.0);
  CHECK(r.f1 == 1.0);
  CHECK(r.tdr == 1.0);
}

TEST_CASE("TDR is the recall of the unknown class") {
  const std::vector<ClassId> t{3, 3, 3, 3, 1};
  const std::vector<ClassId> p{3, 3, 3, 1, 1};
  CHECK(evaluate(t, p, 3).tdr == 0.75);
}

TEST_CASE("hand-computed confusion") {
  // Two known classes plus unknown (3).
  const std::vector<ClassId> t{1, 1, 1, 2, 3, 3};
  const std::vector<ClassId> p{1, 1, 2, 2, 3, 1};
  const EvalReport r = evaluate(t, p, 3);
  Eigen::Matrix3i expected;
  expected << 2, 1, 0,
              0, 1, 0,
              1, 0, 1;
  CHECK(r.confusion == expected);
  CHECK(std::abs(r.accuracy - 4.0 / 6.0) <= 1e-9);
  // Precision per class: 2/3, 1/2, 1; recall: 2/3, 1, 1/2; F1: 2/3 each.
  CHECK(std::abs(r.precision - 13.0 / 18.0) <= 1e-9);
  CHECK(std::abs(r.recall - 13.0 / 18.0) <= 1e-9);
  CHECK(std::abs(r.f1 - 2.0 / 3.0) <= 1e-9);
  CHECK(std::abs(r.tdr - 0.5) <= 1e-9);
  CHECK(r.confusion.rowwise().sum() == Eigen::Vector3i(3, 1, 2));
}

TEST_CASE("classes absent from truth and prediction are excluded") {
  const std::vector<ClassId> t{1, 1, 4};
  const std::vector<ClassId> p{1, 4, 4};
  const EvalReport r = evaluate(t, p, 4);
  // Classes 1 and 4 only: precision (1 + 1/2) / 2, recall (1/2 + 1) / 2.
  CHECK(r.precision == doctest::Approx(0.75));
  CHECK(r.recall == doctest::Approx(0.75));
}

TEST_CASE("evaluate matches brute force on random instances") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const int classes = 2 + static_cast<int>(rng() % 4);
    const std::size_t n = 1 + rng() % 50;
    std::vector<ClassId> t(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = 1 + static_cast<ClassId>(rng() % static_cast<unsigned>(classes));
      p[i] = rng() % 3 == 0 ? t[i] : 1 + static_cast<ClassId>(rng() % static_cast<unsigned>(classes));
    }
    const EvalReport r = evaluate(t, p, classes);
    const Brute b = brute_force(t, p, classes);
    CHECK(std::abs(r.accuracy - b.accuracy) <= 1e-12);
    CHECK(std::abs(r.precision - b.precision) <= 1e-12);
    CHECK(std::abs(r.recall - b.recall) <= 1e-12);
    CHECK(std::abs(r.f1 - b.f1) <= 1e-12);
    CHECK(std::abs(r.tdr - b.tdr) <= 1e-12);
    for (double m : {r.accuracy, r.precision, r.recall, r.f1, r.tdr}) {
      CHECK(m >= 0.0);
      CHECK(m <= 1.0);
    }
  }
}

TEST_CASE("metrics are invariant to relabeling classes") {
  std::mt19937_64 rng(2);
  const int classes = 5;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ClassId> t(40), p(40);
    for (std::size_t i = 0; i < 40; ++i) {
      t[i] = 1 + static_cast<ClassId>(rng() % classes);
      p[i] = rng() % 2 ? t[i] : 1 + static_cast<ClassId>(rng() % classes);
    }
    std::vector<ClassId> perm(classes);
    std::iota(perm.begin(), perm.end(), 1);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<ClassId> tp(40), pp(40);
    for (std::size_t i = 0; i < 40; ++i) {
      tp[i] = perm[static_cast<std::size_t>(t[i] - 1)];
      pp[i] = perm[static_cast<std::size_t>(p[i] - 1)];
    }
    const EvalReport a = evaluate(t, p, classes);
    const EvalReport b = evaluate(tp, pp, classes);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.precision == doctest::Approx(b.precision).epsilon(1e-12));
    CHECK(a.recall == doctest::Approx(b.recall).epsilon(1e-12));
    CHECK(a.f1 == doctest::Approx(b.f1).epsilon(1e-12));
    // The unknown class moved to perm[K]; its recall is the original TDR.
    const int u = perm[classes - 1] - 1;
    const double moved = static_cast<double>(b.confusion(u, u)) / b.confusion.row(u).sum();
    if (b.confusion.row(u).sum() > 0) CHECK(moved == doctest::Approx(a.tdr).epsilon(1e-12));
  }
}

TEST_CASE("evaluate errors") {
  CHECK_THROWS_AS(evaluate(std::vector<ClassId>{1, 2}, std::vector<ClassId>{1}, 2), InvalidArgument);
  CHECK_THROWS_AS(evaluate(std::vector<ClassId>{}, std::vector<ClassId>{}, 2), InvalidArgument);
  CHECK_THROWS_AS(evaluate(std::vector<ClassId>{4}, std::vector<ClassId>{1}, 3), InvalidArgument);
}

TEST_CASE("separation_auc") {
  CHECK(separation_auc(std::vector<double>{5, 6}, std::vector<double>{1, 2, 3}) == 1.0);
  CHECK(separation_auc(std::vector<double>{2, 2}, std::vector<double>{2, 2, 2}) == 0.5);
  CHECK(separation_auc(std::vector<double>{1, 3}, std::vector<double>{2}) == 0.5);
  CHECK(separation_auc(std::vector<double>{1, 4, 4}, std::vector<double>{4, 0}) ==
        doctest::Approx((1 + 0.5 + 1 + 0.5 + 1 + 0) / 6.0));
  CHECK_THROWS_AS(separation_auc(std::vector<double>{}, std::vector<double>{1}), InvalidArgument);

  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(1 + rng() % 30), b(1 + rng() % 30);
    for (auto& v : a) v = std::round(n(rng) * 4) / 4;
    for (auto& v : b) v = std::round(n(rng) * 4) / 4;
    CHECK(separation_auc(a, b) + separation_auc(b, a) == 1.0);
  }
}

TEST_CASE("report formats") {
  const std::vector<ClassId> t{1, 1, 1, 2, 3, 3};
  const std::vector<ClassId> p{1, 1, 2, 2, 3, 1};
  const EvalReport r = evaluate(t, p, 3);
  const std::string table = format_report_table(r);
  const auto acc = table.find("Accuracy"), prec = table.find("Precision"), rec = table.find("Recall"),
             f1 = table.find("F1"), tdr = table.find("TDR");
  CHECK(acc < prec);
  CHECK(prec < rec);
  CHECK(rec < f1);
  CHECK(f1 < tdr);
  std::ostringstream os;
  write_report_csv(os, r);
  std::istringstream in(os.str());
  std::string header, columns, values;
  std::getline(in, header);
  std::getline(in, columns);
  std::getline(in, values);
  CHECK(header.rfind("# osr-report v1", 0) == 0);
  CHECK(columns == "accuracy,precision,recall,f1,tdr");
  CHECK(std::count(values.begin(), values.end(), ',') == 4);
}
