#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "doctest.h"

#include "osr/data.hpp"
#include "test_util.hpp"

using namespace osr;

namespace {

LabeledDataset blob_dataset(const std::vector<int>& per_class, std::uint64_t seed) {
  LabeledDataset ds;
  int total = 0;
  for (int n : per_class) total += n;
  ds.features = test::random_matrix(total, 3, seed);
  int r = 0;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    const auto id = static_cast<ClassId>(c + 1);
    ds.class_names[id] = "c" + std::to_string(id);
    for (int i = 0; i < per_class[c]; ++i, ++r) {
      ds.labels.push_back(id);
      ds.features(r, 0) += 5.0 * static_cast<double>(c);
    }
  }
  ds.feature_names = {"a", "b", "c"};
  return ds;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("osr_test_" + name)).string();
}

}  // namespace

TEST_CASE("parse_csv") {
  std::istringstream in("x,label,y\n1.5,cat,2\n-3,dog,4e-1\n0,cat,7\n");
  const LabeledDataset ds = parse_csv(in, "label");
  CHECK(ds.size() == 3);
  CHECK(ds.feature_dim() == 2);
  CHECK(ds.features(1, 1) == 0.4);
  CHECK(ds.labels == std::vector<ClassId>{1, 2, 1});
  CHECK(ds.class_names.at(2) == "dog");
  CHECK(ds.feature_names == std::vector<std::string>{"x", "y"});

  std::istringstream numeric("f,label\n1,10\n2,9\n3,10\n");
  CHECK(parse_csv(numeric, "label").labels == std::vector<ClassId>{2, 1, 2});

  std::istringstream header_only("x,label\n");
  CHECK_THROWS_AS(parse_csv(header_only, "label"), ParseError);
  std::istringstream bad_cell("x,label\n1,a\nfoo,b\n");
  try {
    parse_csv(bad_cell, "label");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("row 3") != std::string::npos);
  }
  std::istringstream missing_label("x,label\n1,\n");
  CHECK_THROWS_AS(parse_csv(missing_label, "label"), ParseError);
  std::istringstream no_column("x,y\n1,2\n");
  CHECK_THROWS_AS(parse_csv(no_column, "label"), ParseError);
}

TEST_CASE("csv round trip") {
  LabeledDataset ds = blob_dataset({4, 5}, 3);
  ds.features(0, 0) = 0.1 + 0.2;
  const std::string path = temp_path("roundtrip.csv");
  save_csv(ds, path);
  const LabeledDataset back = load_csv(path, "label");
  CHECK((back.features - ds.features).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK(back.features(0, 0) == ds.features(0, 0));
  CHECK(back.labels == ds.labels);
  CHECK(back.class_names == ds.class_names);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_csv(path, "label"), Error);
}

TEST_CASE("split arithmetic") {
  // Three classes of 100 samples; class 2 is unknown.
  const LabeledDataset ds = blob_dataset({100, 100, 100}, 1);
  const OpenSplit s = make_open_split(ds, std::vector<ClassId>{2}, 9);
  CHECK(s.num_known() == 2);
  CHECK(s.unknown_label() == 3);
  CHECK(s.train.size() == 120);
  CHECK(s.val_known.size() == 40);
  CHECK(s.test_known.size() == 40);
  CHECK(s.val_unknown.rows() == 20);
  CHECK(s.test_unknown.rows() == 80);
  for (ClassId k : {1, 2})
    CHECK(std::count(s.train.labels.begin(), s.train.labels.end(), k) == 60);

  // Remainders go to train / test respectively.
  const OpenSplit r = make_open_split(blob_dataset({13, 13}, 2), std::vector<ClassId>{2}, 1);
  CHECK(r.train.size() == 9);
  CHECK(r.val_known.size() == 2);
  CHECK(r.test_known.size() == 2);
  CHECK(r.val_unknown.rows() == 2);
  CHECK(r.test_unknown.rows() == 11);
}

TEST_CASE("split class designation") {
  const LabeledDataset ds = blob_dataset(std::vector<int>(10, 10), 4);
  const OpenSplit s = make_open_split(ds, 0.5, 3);
  CHECK(s.manifest.unknown_class_ids.size() == 5);
  CHECK(s.manifest.known_class_ids.size() == 5);
  std::set<ClassId> all(s.manifest.known_class_ids.begin(), s.manifest.known_class_ids.end());
  for (ClassId id : s.manifest.unknown_class_ids) CHECK(all.insert(id).second);
  CHECK(all.size() == 10);
  CHECK_THROWS_AS(make_open_split(ds, 0.0, 3), InvalidArgument);
  CHECK_THROWS_AS(make_open_split(blob_dataset({10}, 1), 0.5, 3), InvalidArgument);
}

TEST_CASE("splits are disjoint, exhaustive and deterministic") {
  const LabeledDataset ds = blob_dataset({31, 17, 24, 40}, 5);
  const OpenSplit s = make_open_split(ds, 0.5, 12);
  std::vector<Eigen::Index> rows;
  for (const auto* part : {&s.manifest.rows.train, &s.manifest.rows.val_known,
                           &s.manifest.rows.test_known, &s.manifest.rows.val_unknown,
                           &s.manifest.rows.test_unknown})
    rows.insert(rows.end(), part->begin(), part->end());
  std::sort(rows.begin(), rows.end());
  CHECK(std::adjacent_find(rows.begin(), rows.end()) == rows.end());
  CHECK(rows.size() == static_cast<std::size_t>(ds.size()));

  const OpenSplit again = make_open_split(ds, 0.5, 12);
  CHECK(again.manifest.rows.train == s.manifest.rows.train);
  CHECK(again.manifest.unknown_class_ids == s.manifest.unknown_class_ids);
  CHECK((again.test_unknown.array() == s.test_unknown.array()).all());
}

TEST_CASE("small known classes go to train with a warning") {
  WarningCapture cap;
  const OpenSplit s = make_open_split(blob_dataset({3, 20, 20}, 6), std::vector<ClassId>{3}, 1);
  CHECK(cap.contains("only 3 samples"));
  CHECK(std::count(s.train.labels.begin(), s.train.labels.end(), 1) == 3);
}

TEST_CASE("standardization uses training statistics") {
  LabeledDataset ds = blob_dataset({50, 50, 50}, 7);
  ds.features.col(2).setConstant(4.0);
  ds.features.col(1) = ds.features.col(1) * 30.0 + Eigen::VectorXd::Constant(150, 100.0);
  const OpenSplit s = make_open_split(ds, std::vector<ClassId>{3}, 2);
  const Eigen::MatrixXd& X = s.train.features;
  const Eigen::RowVectorXd mean = X.colwise().mean();
  CHECK(mean.cwiseAbs().maxCoeff() <= 1e-9);
  for (Eigen::Index j = 0; j < 2; ++j) {
    const double sd = std::sqrt((X.col(j).array() - mean[j]).square().mean());
    CHECK(std::abs(sd - 1.0) <= 1e-6);
  }
  CHECK(X.col(2).cwiseAbs().maxCoeff() == 0.0);
  CHECK(s.standardizer.scale[2] == 1.0);
  // Validation rows are transformed with the same statistics.
  const Eigen::MatrixXd raw = ds.features.row(s.manifest.rows.val_known[0]);
  CHECK((s.standardizer.apply(raw) - s.val_known.features.row(0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("manifest round trip rebuilds the split exactly") {
  const LabeledDataset ds = blob_dataset({20, 25, 30, 15}, 8);
  const OpenSplit s = make_open_split(ds, 0.5, 77);
  const std::string path = temp_path("manifest.json");
  save_manifest(s.manifest, path);
  const SplitManifest m = load_manifest(path);
  std::filesystem::remove(path);
  CHECK(m.seed == 77);
  CHECK(m.known_class_ids == s.manifest.known_class_ids);
  const OpenSplit r = apply_manifest(ds, m);
  CHECK((r.train.features.array() == s.train.features.array()).all());
  CHECK(r.train.labels == s.train.labels);
  CHECK((r.test_unknown.array() == s.test_unknown.array()).all());

  const OpenSet os = open_set(r, SplitPart::test);
  CHECK(os.features.rows() == r.test_known.size() + r.test_unknown.rows());
  CHECK(os.truth.back() == r.unknown_label());
  CHECK(os.truth.front() == r.test_known.labels.front());
}

TEST_CASE("synthetic blobs") {
  SynthConfig cfg;
  cfg.seed = 3;
  const SynthData a = synth_blobs(cfg);
  CHECK(a.data.size() == 6 * 200);
  CHECK(a.unknown_class_ids == std::vector<ClassId>{4, 5, 6});
  double min_dist = 1e300;
  for (Eigen::Index i = 0; i < a.centers.rows(); ++i)
    for (Eigen::Index j = i + 1; j < a.centers.rows(); ++j)
      min_dist = std::min(min_dist, (a.centers.row(i) - a.centers.row(j)).norm());
  CHECK(min_dist >= 6.0 * cfg.blob_sigma);

  const SynthData b = synth_blobs(cfg);
  CHECK((a.data.features.array() == b.data.features.array()).all());

  cfg.overlap = 1.0;
  const SynthData c = synth_blobs(cfg);
  for (ClassId u : c.unknown_class_ids) {
    double nearest = 1e300;
    for (ClassId k = 1; k <= 3; ++k)
      nearest = std::min(nearest, (c.centers.row(u - 1) - c.centers.row(k - 1)).norm());
    CHECK(nearest <= 1e-9);
  }

  cfg.overlap = 0.4;
  const SynthData d = synth_blobs(cfg);
  for (Eigen::Index i = 0; i < d.centers.rows(); ++i)
    for (Eigen::Index j = i + 1; j < d.centers.rows(); ++j)
      CHECK((d.centers.row(i) - d.centers.row(j)).norm() >= (1 - 0.4) * 6.0 - 1e-9);

  cfg.overlap = 2.0;
  CHECK_THROWS_AS(synth_blobs(cfg), InvalidArgument);
}

TEST_CASE("separated blobs: nearest-centroid probe isolates unknowns") {
  SynthConfig cfg;
  cfg.seed = 5;
  const SynthData sd = synth_blobs(cfg);
  const OpenSplit s = make_open_split(sd.data, sd.unknown_class_ids, 2);
  // Per-class centroids from train and validation rows; each test sample is
  // assigned to its nearest centroid and scored known vs unknown.
  const OpenSet test = open_set(s, SplitPart::test);
  const Eigen::MatrixXd Z = s.standardizer.apply(sd.data.features);
  const int classes = sd.data.num_classes();
  Eigen::MatrixXd centroids = Eigen::MatrixXd::Zero(classes, Z.cols());
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(classes);
  for (auto r : s.manifest.rows.train) {
    centroids.row(sd.data.labels[static_cast<std::size_t>(r)] - 1) += Z.row(r);
    counts[sd.data.labels[static_cast<std::size_t>(r)] - 1] += 1;
  }
  for (auto r : s.manifest.rows.val_unknown) {
    centroids.row(sd.data.labels[static_cast<std::size_t>(r)] - 1) += Z.row(r);
    counts[sd.data.labels[static_cast<std::size_t>(r)] - 1] += 1;
  }
  for (int c = 0; c < classes; ++c) centroids.row(c) /= counts[c];
  const std::set<ClassId> unknown(sd.unknown_class_ids.begin(), sd.unknown_class_ids.end());
  int correct = 0;
  for (Eigen::Index i = 0; i < test.features.rows(); ++i) {
    Eigen::Index best = 0;
    (centroids.rowwise() - test.features.row(i)).rowwise().squaredNorm().minCoeff(&best);
    const bool predicted_unknown = unknown.count(static_cast<ClassId>(best + 1)) > 0;
    correct += predicted_unknown == (test.truth[static_cast<std::size_t>(i)] == s.unknown_label());
  }
  CHECK(correct / static_cast<double>(test.features.rows()) >= 0.99);
}
