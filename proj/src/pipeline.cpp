#include "osr/pipeline.hpp"

#include <algorithm>
#include <string>

namespace osr {
namespace {

Eigen::MatrixXd stage1_features(const ClassifierModel& model, const Eigen::MatrixXd& X,
                                FeatureSource source) {
  return source == FeatureSource::embedding ? embed(model, X) : X;
}

Eigen::VectorXd max_probability(const ClassifierModel& model, const Eigen::MatrixXd& X) {
  return predict_proba(model, X).rowwise().maxCoeff();
}

// Feature rows for the pool entries, drawn from the train or open tables.
Eigen::MatrixXd gather(const MergedDataset& pool, const Eigen::MatrixXd& train_table,
                       const Eigen::MatrixXd& open_table) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(pool.size()), train_table.cols());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& e = pool.entries[i];
    const Eigen::MatrixXd& table = e.origin == Origin::train ? train_table : open_table;
    out.row(static_cast<Eigen::Index>(i)) = table.row(e.source_index);
  }
  return out;
}

std::vector<int> pool_labels(const MergedDataset& pool) {
  std::vector<int> out;
  out.reserve(pool.size());
  for (const auto& e : pool.entries) out.push_back(e.label);
  return out;
}

}  // namespace

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::P_L: return "P_L";
    case Provenance::Q_L: return "Q_L";
    case Provenance::R_L: return "R_L";
    case Provenance::known: return "known";
  }
  return "known";
}

std::string_view to_string(AblationMode m) {
  switch (m) {
    case AblationMode::full: return "full";
    case AblationMode::perturbation_only: return "perturbation_only";
    case AblationMode::no_isda: return "no_isda";
    case AblationMode::no_dt: return "no_dt";
  }
  return "full";
}

std::string_view to_string(Stage2Features s) {
  return s == Stage2Features::raw ? "raw" : "probability_space";
}

Provenance parse_provenance(std::string_view text) {
  if (text == "P_L") return Provenance::P_L;
  if (text == "Q_L") return Provenance::Q_L;
  if (text == "R_L") return Provenance::R_L;
  if (text == "known") return Provenance::known;
  throw InvalidArgument("unknown provenance '" + std::string(text) + "'");
}

AblationMode parse_ablation_mode(std::string_view text) {
  if (text == "full") return AblationMode::full;
  if (text == "perturbation_only") return AblationMode::perturbation_only;
  if (text == "no_isda") return AblationMode::no_isda;
  if (text == "no_dt") return AblationMode::no_dt;
  throw InvalidArgument("unknown ablation mode '" + std::string(text) +
                        "' (expected full, perturbation_only, no_isda or no_dt)");
}

Stage2Features parse_stage2_features(std::string_view text) {
  if (text == "probability_space") return Stage2Features::probability_space;
  if (text == "raw") return Stage2Features::raw;
  throw InvalidArgument("unknown stage-2 feature set '" + std::string(text) +
                        "' (expected probability_space or raw)");
}

void PipelineConfig::validate() const {
  perturb.validate();
  if (!std::isfinite(mu_star)) throw InvalidArgument("pipeline: mu_star must be finite");
  isda_config().validate();
  dt.validate();
}

IsdaConfig PipelineConfig::isda_config() const {
  return {h1, h2, gamma, derive_seed(seed, 0x15DA), feature_source};
}

std::size_t MergedDataset::count(Origin origin) const {
  return static_cast<std::size_t>(std::count_if(
      entries.begin(), entries.end(), [origin](const MergedEntry& e) { return e.origin == origin; }));
}

std::vector<DetectionResult> two_stage_detect(std::span<const double> mu_open,
                                              std::span<const ClassId> train_labels,
                                              double mu_star, ClassId unknown_label,
                                              const DetectionStages& stages,
                                              DetectionTrace* trace) {
  if (!stages.known_label) throw InvalidArgument("detect: known_label callback is required");
  const auto n = static_cast<Eigen::Index>(mu_open.size());
  std::vector<DetectionResult> results(mu_open.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    results[static_cast<std::size_t>(i)].sample_id = i;
    results[static_cast<std::size_t>(i)].mu = mu_open[static_cast<std::size_t>(i)];
  }
  auto mark_unknown = [&](Eigen::Index id, Provenance p) {
    auto& r = results[static_cast<std::size_t>(id)];
    r.final_label = unknown_label;
    r.provenance = p;
  };

  const auto records = make_records(Eigen::Map<const Eigen::VectorXd>(mu_open.data(), n));
  DetectionTrace local;
  DetectionTrace& t = trace ? *trace : local;
  t = {};
  t.threshold = threshold_split(records, {mu_star});
  for (auto id : t.threshold.rejected) mark_unknown(id, Provenance::P_L);

  MergedDataset pool;
  pool.entries.reserve(train_labels.size() + mu_open.size());
  for (std::size_t i = 0; i < train_labels.size(); ++i) {
    pool.entries.push_back({Origin::train, static_cast<Eigen::Index>(i), 0, train_labels[i]});
  }
  for (auto id : t.threshold.rejected) pool.entries.push_back({Origin::P_L, id, 1, 0});

  if (stages.stage1) {
    t.stage1_pool = pool;
    const OpenSetDetector stage1 = stages.stage1(pool);
    for (auto id : t.threshold.passed) {
      if (stage1(id) == 1) {
        mark_unknown(id, Provenance::Q_L);
        t.q_left.push_back(id);
      } else {
        t.q_right.push_back(id);
      }
    }
  } else {
    t.q_right = t.threshold.passed;
  }

  for (auto id : t.q_left) pool.entries.push_back({Origin::Q_L, id, 1, 0});

  std::vector<Eigen::Index> survivors;
  if (stages.stage2) {
    t.stage2_pool = pool;
    const OpenSetDetector stage2 = stages.stage2(pool);
    for (auto id : t.q_right) {
      if (stage2(id) == 1) {
        mark_unknown(id, Provenance::R_L);
        t.r_left.push_back(id);
      } else {
        survivors.push_back(id);
      }
    }
  } else {
    survivors = t.q_right;
  }

  for (auto id : survivors) {
    auto& r = results[static_cast<std::size_t>(id)];
    r.final_label = stages.known_label(id);
    r.provenance = Provenance::known;
  }
  return results;
}

ScoredSets score_sets(const ClassifierModel& model, const Eigen::MatrixXd& X_train,
                      const Eigen::MatrixXd& X_open, const PerturbConfig& perturb) {
  const PerturbedEnsemble ensemble = make_ensemble(model, perturb);
  return {perturb, score_uncertainty(model, ensemble, X_train),
          score_uncertainty(model, ensemble, X_open)};
}

PipelineRun run_detection(const ClassifierModel& model, const Eigen::MatrixXd& X_train,
                          std::span<const ClassId> y_train, const Eigen::MatrixXd& X_open,
                          const ScoredSets& scores, const PipelineConfig& cfg, AblationMode mode) {
  cfg.validate();
  if (static_cast<std::size_t>(X_train.rows()) != y_train.size()) {
    throw DimensionMismatch("pipeline: training features and labels differ in length");
  }
  if (X_train.cols() != model.spec.input_dim || X_open.cols() != model.spec.input_dim) {
    throw DimensionMismatch("pipeline: feature width does not match the model input");
  }
  if (scores.mu_open.size() != X_open.rows() || scores.mu_train.size() != X_train.rows()) {
    throw DimensionMismatch("pipeline: uncertainty scores do not match the data");
  }
  for (ClassId y : y_train) {
    if (y < 1 || y > model.spec.num_classes) {
      throw InvalidArgument("pipeline: training label outside the model's known classes");
    }
  }

  PipelineRun run;
  const ClassId unknown_label = model.spec.num_classes + 1;

  const auto rejected = static_cast<std::size_t>(
      (scores.mu_open.array() <= cfg.mu_star).count());
  const std::size_t needed = static_cast<std::size_t>(std::max(cfg.h1, 2));
  if (mode != AblationMode::perturbation_only && rejected < needed) {
    warn("pipeline: only " + std::to_string(rejected) + " samples fall at or below mu* = " +
         std::to_string(cfg.mu_star) + " (need " + std::to_string(needed) +
         "); falling back to threshold-only detection");
    run.fell_back = true;
    mode = AblationMode::perturbation_only;
  }

  const std::vector<ClassId> base_pred = predict_all(model, X_open);
  DetectionStages stages;
  stages.known_label = [&base_pred](Eigen::Index row) {
    return base_pred[static_cast<std::size_t>(row)];
  };

  const bool use_isda = mode == AblationMode::full || mode == AblationMode::no_dt;
  const bool use_tree = mode == AblationMode::full || mode == AblationMode::no_isda;

  Eigen::MatrixXd feat_train;
  Eigen::MatrixXd feat_open;
  if (use_isda || (use_tree && cfg.stage2_features == Stage2Features::raw)) {
    feat_train = stage1_features(model, X_train, cfg.feature_source);
    feat_open = stage1_features(model, X_open, cfg.feature_source);
  }

  // Posterior of the unknown class under the stage-1 detector; constant 0.5
  // when stage 1 is ablated.
  Eigen::VectorXd post_train = Eigen::VectorXd::Constant(X_train.rows(), 0.5);
  Eigen::VectorXd post_open = Eigen::VectorXd::Constant(X_open.rows(), 0.5);
  std::vector<int> isda_open_labels;

  if (use_isda) {
    stages.stage1 = [&](const MergedDataset& pool) -> OpenSetDetector {
      std::vector<ClassId> class_ids;
      class_ids.reserve(pool.size());
      for (const auto& e : pool.entries) class_ids.push_back(e.class_id);
      run.isda = fit_isda(gather(pool, feat_train, feat_open), pool_labels(pool), class_ids,
                          cfg.isda_config());
      isda_open_labels.resize(static_cast<std::size_t>(X_open.rows()));
      for (Eigen::Index i = 0; i < X_open.rows(); ++i) {
        const IsdaPrediction p = predict_isda(*run.isda, feat_open.row(i).transpose());
        isda_open_labels[static_cast<std::size_t>(i)] = p.label;
        post_open[i] = p.posterior_unknown;
      }
      for (Eigen::Index i = 0; i < X_train.rows(); ++i) {
        post_train[i] = predict_isda(*run.isda, feat_train.row(i).transpose()).posterior_unknown;
      }
      return [&isda_open_labels](Eigen::Index row) {
        return isda_open_labels[static_cast<std::size_t>(row)];
      };
    };
  }

  Eigen::MatrixXd stage2_train;
  Eigen::MatrixXd stage2_open;
  if (use_tree) {
    stages.stage2 = [&](const MergedDataset& pool) -> OpenSetDetector {
      if (cfg.stage2_features == Stage2Features::probability_space) {
        stage2_train.resize(X_train.rows(), 3);
        stage2_train << post_train, scores.mu_train, max_probability(model, X_train);
        stage2_open.resize(X_open.rows(), 3);
        stage2_open << post_open, scores.mu_open, max_probability(model, X_open);
      } else {
        stage2_train = feat_train;
        stage2_open = feat_open;
      }
      run.tree = fit_tree(gather(pool, stage2_train, stage2_open), pool_labels(pool), cfg.dt);
      return [&](Eigen::Index row) {
        return tree_predict(*run.tree, stage2_open.row(row).transpose());
      };
    };
  }

  const std::span<const double> mu(scores.mu_open.data(),
                                   static_cast<std::size_t>(scores.mu_open.size()));
  run.results = two_stage_detect(mu, y_train, cfg.mu_star, unknown_label, stages, &run.trace);
  return run;
}

PipelineRun run_detection(const ClassifierModel& model, const Eigen::MatrixXd& X_train,
                          std::span<const ClassId> y_train, const Eigen::MatrixXd& X_open,
                          const PipelineConfig& cfg, AblationMode mode) {
  cfg.validate();
  const ScoredSets scores = score_sets(model, X_train, X_open, cfg.perturb);
  return run_detection(model, X_train, y_train, X_open, scores, cfg, mode);
}

std::vector<DetectionResult> run_pipeline(const ClassifierModel& model,
                                          const Eigen::MatrixXd& X_train,
                                          std::span<const ClassId> y_train,
                                          const Eigen::MatrixXd& X_open,
                                          const PipelineConfig& cfg) {
  return run_detection(model, X_train, y_train, X_open, cfg, AblationMode::full).results;
}

std::vector<DetectionResult> ablate(AblationMode mode, const ClassifierModel& model,
                                    const Eigen::MatrixXd& X_train,
                                    std::span<const ClassId> y_train,
                                    const Eigen::MatrixXd& X_open, const PipelineConfig& cfg) {
  return run_detection(model, X_train, y_train, X_open, cfg, mode).results;
}

std::vector<ClassId> final_labels(std::span<const DetectionResult> results) {
  std::vector<ClassId> out;
  out.reserve(results.size());
  for (const auto& r : results) out.push_back(r.final_label);
  return out;
}

}  // namespace osr
