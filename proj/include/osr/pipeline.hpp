#ifndef OSR_PIPELINE_HPP
#define OSR_PIPELINE_HPP

// Two-stage unknown detection. Open-set samples are first split by the
// uncertainty threshold; the rejected ones seed a known-vs-unknown training
// pool that trains the subclass-discriminant detector, whose rejections in
// turn extend the pool used by the decision-tree detector. Whatever survives
// both stages gets the base classifier's label.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "osr/decision_tree.hpp"
#include "osr/isda.hpp"
#include "osr/nn.hpp"
#include "osr/perturbation.hpp"
#include "osr/uncertainty.hpp"

namespace osr {

enum class Provenance { P_L, Q_L, R_L, known };
enum class AblationMode { full, perturbation_only, no_isda, no_dt };
enum class Stage2Features { probability_space, raw };
enum class Origin { train, P_L, Q_L };

std::string_view to_string(Provenance p);
std::string_view to_string(AblationMode m);
std::string_view to_string(Stage2Features s);
Provenance parse_provenance(std::string_view text);
AblationMode parse_ablation_mode(std::string_view text);
Stage2Features parse_stage2_features(std::string_view text);

struct PipelineConfig {
  PerturbConfig perturb;
  double mu_star = 4.5;
  int h1 = 2;
  int h2 = 1;
  double gamma = 1e-4;
  DtConfig dt;
  FeatureSource feature_source = FeatureSource::embedding;
  Stage2Features stage2_features = Stage2Features::probability_space;
  std::uint64_t seed = 0;

  void validate() const;
  IsdaConfig isda_config() const;
};

struct DetectionResult {
  Eigen::Index sample_id = 0;
  ClassId final_label = 0;
  Provenance provenance = Provenance::known;
  double mu = 0.0;
};

/// One entry of the binary known(0)/unknown(1) training pool. Entries refer
/// to rows of the training set (origin train) or of the open set.
struct MergedEntry {
  Origin origin = Origin::train;
  Eigen::Index source_index = 0;
  int label = 0;
  ClassId class_id = 0;  // original class for train entries, 0 otherwise
};

/// Append-only; train entries come first, then P_L, then Q_L.
struct MergedDataset {
  std::vector<MergedEntry> entries;

  std::size_t size() const { return entries.size(); }
  std::size_t count(Origin origin) const;
};

/// Binary decision (1 = unknown) for one open-set row.
using OpenSetDetector = std::function<int(Eigen::Index open_row)>;
using DetectorTrainer = std::function<OpenSetDetector(const MergedDataset&)>;

/// Injectable pieces of the two-stage procedure. An empty trainer skips its
/// stage: an empty stage1 sends every candidate straight to stage 2, an empty
/// stage2 hands stage-1 survivors to `known_label`.
struct DetectionStages {
  DetectorTrainer stage1;
  DetectorTrainer stage2;
  std::function<ClassId(Eigen::Index open_row)> known_label;
};

struct DetectionTrace {
  ThresholdSplit threshold;
  std::vector<Eigen::Index> q_left;
  std::vector<Eigen::Index> q_right;
  std::vector<Eigen::Index> r_left;
  MergedDataset stage1_pool;
  MergedDataset stage2_pool;
};

/// The two-stage procedure over precomputed uncertainty scores. Results are
/// ordered by sample id and cover every open sample exactly once.
std::vector<DetectionResult> two_stage_detect(std::span<const double> mu_open,
                                              std::span<const ClassId> train_labels,
                                              double mu_star, ClassId unknown_label,
                                              const DetectionStages& stages,
                                              DetectionTrace* trace = nullptr);

/// Uncertainty scores for the train and open sets under one ensemble.
struct ScoredSets {
  PerturbConfig perturb;
  Eigen::VectorXd mu_train;
  Eigen::VectorXd mu_open;
};

ScoredSets score_sets(const ClassifierModel& model, const Eigen::MatrixXd& X_train,
                      const Eigen::MatrixXd& X_open, const PerturbConfig& perturb);

struct PipelineRun {
  std::vector<DetectionResult> results;
  std::optional<IsdaModel> isda;
  std::optional<DecisionTree> tree;
  /// Set when too few samples were rejected by the threshold to fit the
  /// stage detectors and the run degraded to threshold-only labels.
  bool fell_back = false;
  DetectionTrace trace;
};

/// Full detector wiring with precomputed scores (which must come from
/// cfg.perturb).
PipelineRun run_detection(const ClassifierModel& model, const Eigen::MatrixXd& X_train,
                          std::span<const ClassId> y_train, const Eigen::MatrixXd& X_open,
                          const ScoredSets& scores, const PipelineConfig& cfg, AblationMode mode);

PipelineRun run_detection(const ClassifierModel& model, const Eigen::MatrixXd& X_train,
                          std::span<const ClassId> y_train, const Eigen::MatrixXd& X_open,
                          const PipelineConfig& cfg, AblationMode mode);

std::vector<DetectionResult> run_pipeline(const ClassifierModel& model,
                                          const Eigen::MatrixXd& X_train,
                                          std::span<const ClassId> y_train,
                                          const Eigen::MatrixXd& X_open,
                                          const PipelineConfig& cfg);

std::vector<DetectionResult> ablate(AblationMode mode, const ClassifierModel& model,
                                    const Eigen::MatrixXd& X_train,
                                    std::span<const ClassId> y_train,
                                    const Eigen::MatrixXd& X_open, const PipelineConfig& cfg);

std::vector<ClassId> final_labels(std::span<const DetectionResult> results);

}  // namespace osr

#endif  // OSR_PIPELINE_HPP
