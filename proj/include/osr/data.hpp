#ifndef OSR_DATA_HPP
#define OSR_DATA_HPP

#include <cstdint>
#include <istream>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "osr/common.hpp"

namespace osr {

/// Tabular samples, one per row, with dense 1-based class ids.
struct LabeledDataset {
  Eigen::MatrixXd features;
  std::vector<ClassId> labels;
  std::map<ClassId, std::string> class_names;
  std::vector<std::string> feature_names;

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index feature_dim() const { return features.cols(); }
  int num_classes() const { return static_cast<int>(class_names.size()); }

  /// Throws InvalidArgument if shapes disagree or labels are not dense 1..C.
  void validate() const;
};

/// Parses a CSV with a header row. Every column other than `label_column`
/// must be numeric. Labels are mapped to dense ids: numerically when every
/// label is an integer, lexicographically otherwise.
LabeledDataset parse_csv(std::istream& is, const std::string& label_column);
LabeledDataset load_csv(const std::string& path, const std::string& label_column);

/// Writes features with 17 significant digits and the original class names.
void save_csv(const LabeledDataset& ds, const std::string& path,
              const std::string& label_column = "label");

/// Per-dimension z-score. Zero-variance dimensions are centered only.
struct Standardizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;

  static Standardizer fit(const Eigen::MatrixXd& X);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const;
};

/// Row indices into the source dataset for every split.
struct SplitRows {
  std::vector<Eigen::Index> train;
  std::vector<Eigen::Index> val_known;
  std::vector<Eigen::Index> test_known;
  std::vector<Eigen::Index> val_unknown;
  std::vector<Eigen::Index> test_unknown;
};

/// Everything needed to rebuild an OpenSplit from its source dataset.
struct SplitManifest {
  std::uint64_t seed = 0;
  double unknown_fraction = 0.5;
  std::vector<ClassId> known_class_ids;    // source ids, ascending
  std::vector<ClassId> unknown_class_ids;  // source ids, ascending
  SplitRows rows;
};

void save_manifest(const SplitManifest& manifest, const std::string& path);
SplitManifest load_manifest(const std::string& path);

/// Known-class splits use labels 1..K (source ids remapped in ascending
/// order); unknown samples carry the truth tag K + 1. Features are
/// standardized with statistics of the training split.
struct OpenSplit {
  LabeledDataset train;
  LabeledDataset val_known;
  LabeledDataset test_known;
  Eigen::MatrixXd val_unknown;
  Eigen::MatrixXd test_unknown;
  Standardizer standardizer;
  SplitManifest manifest;

  int num_known() const { return static_cast<int>(manifest.known_class_ids.size()); }
  ClassId unknown_label() const { return num_known() + 1; }
};

/// Known and unknown samples of one stage stacked together (knowns first)
/// with truth labels in 1..K+1.
struct OpenSet {
  Eigen::MatrixXd features;
  std::vector<ClassId> truth;
};

enum class SplitPart { validation, test };

OpenSet open_set(const OpenSplit& split, SplitPart part);

/// Designates round(unknown_fraction * C) classes as unknown, then splits
/// known classes 3:1:1 (train/val/test, per class, remainder to train) and
/// unknown classes 1:4 (val/test, remainder to test).
OpenSplit make_open_split(const LabeledDataset& ds, double unknown_fraction, std::uint64_t seed);

/// Same protocol with an explicit set of unknown source class ids.
OpenSplit make_open_split(const LabeledDataset& ds, const std::vector<ClassId>& unknown_ids,
                          std::uint64_t seed);

/// Rebuilds a split exactly from its manifest.
OpenSplit apply_manifest(const LabeledDataset& ds, const SplitManifest& manifest);

struct SynthConfig {
  int num_known = 3;
  int num_unknown = 3;
  int per_class = 200;
  int dim = 8;
  double overlap = 0.0;
  double blob_sigma = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthData {
  LabeledDataset data;
  std::vector<ClassId> unknown_class_ids;
  Eigen::MatrixXd centers;  // one row per class id (row c - 1)
};

/// Isotropic Gaussian blobs. Centers sit on random directions with pairwise
/// distance >= 6 sigma; each unknown center is then moved toward its nearest
/// known center by the overlap factor (0 leaves it, 1 makes them coincide).
SynthData synth_blobs(const SynthConfig& cfg);

}  // namespace osr

#endif  // OSR_DATA_HPP
