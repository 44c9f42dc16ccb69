#ifndef OSR_EXPERIMENT_HPP
#define OSR_EXPERIMENT_HPP

// Reproducible experiment commands. Each command reads a JSON config plus the
// files written by earlier commands in the output directory, and writes its
// own artifacts and a <command>.meta.json record. No state is shared between
// invocations except through those files.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "osr/data.hpp"
#include "osr/metrics.hpp"
#include "osr/nn.hpp"
#include "osr/pipeline.hpp"

namespace osr {

inline constexpr const char* kVersion = "osr 1.0.0";

/// Invalid configuration; the message starts with the offending field path.
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// Broken internal invariant (exit status 2).
class InternalError : public Error {
 public:
  using Error::Error;
};

struct GridSpec {
  std::vector<int> num_models;
  std::vector<double> noise_scale;
  std::vector<double> mu_star;
  std::vector<int> h2;

  void validate() const;
  std::size_t size() const {
    return num_models.size() * noise_scale.size() * mu_star.size() * h2.size();
  }
};

enum class DataSource { synth, csv };

struct ExperimentConfig {
  DataSource source = DataSource::synth;
  SynthConfig synth;
  std::string csv_path;
  std::string label_column = "label";
  double unknown_fraction = 0.5;

  std::vector<Eigen::Index> hidden_dims{128, 64};
  TrainConfig train;
  PipelineConfig pipeline;
  std::optional<GridSpec> grid;

  std::string output_dir = "osr_out";
  std::uint64_t seed = 0;

  /// Parses and validates; unknown keys are rejected.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);

  /// Re-derives every component seed from `seed`.
  void apply_master_seed(std::uint64_t master);

  nlohmann::json to_json() const;
  std::string hash() const;
};

struct GridCell {
  int num_models = 0;
  double noise_scale = 0.0;
  double mu_star = 0.0;
  int h2 = 0;
  EvalReport report;
  bool fell_back = false;
};

struct GridResult {
  std::vector<GridCell> cells;  // lexicographic order (B, lambda, mu*, H2)
  std::size_t best = 0;
};

/// Exhaustive sweep scored by open-set accuracy on the validation split.
/// The first cell in grid order wins ties.
GridResult grid_search(const ClassifierModel& model, const OpenSplit& split,
                       const PipelineConfig& base, const GridSpec& grid);

/// Runs a single grid cell exactly as grid_search does.
GridCell evaluate_cell(const ClassifierModel& model, const OpenSplit& split,
                       const PipelineConfig& base, int num_models, double noise_scale,
                       double mu_star, int h2);

struct PerturbationChoice {
  int num_models = 0;
  double noise_scale = 0.0;
  double auc = 0.0;
};

/// Picks (B, lambda) maximizing separation_auc on the validation open set.
PerturbationChoice select_perturbation_by_auc(const ClassifierModel& model,
                                              const OpenSplit& split,
                                              std::span<const int> num_models,
                                              std::span<const double> noise_scales,
                                              std::uint64_t master_seed);

/// Splits scores by truth into (known, unknown).
std::pair<std::vector<double>, std::vector<double>> split_by_truth(
    const Eigen::Ref<const Eigen::VectorXd>& mu, std::span<const ClassId> truth,
    ClassId unknown_label);

struct DensityHistogram {
  std::vector<double> edges;  // bins + 1 shared edges
  std::vector<double> known;
  std::vector<double> unknown;

  double bin_width() const { return edges.size() > 1 ? edges[1] - edges[0] : 0.0; }
};

/// Per-group densities over shared equal-width bins. An empty group yields
/// an all-zero density.
DensityHistogram density_histogram(std::span<const double> known, std::span<const double> unknown,
                                   int bins);

/// Fraction of occupied bins (either group) occupied by both groups.
double support_overlap_fraction(const DensityHistogram& h);

std::string density_svg(const DensityHistogram& h);

struct TrainedSetup {
  OpenSplit split;
  ClassifierModel model;
};

/// synth/split + train in memory, using the config's seeds.
TrainedSetup prepare_and_train(const ExperimentConfig& cfg);
LabeledDataset materialize_dataset(const ExperimentConfig& cfg, std::vector<ClassId>* unknown_ids);

// File formats written by the commands.
struct MuRow {
  Eigen::Index sample_id = 0;
  double mu = 0.0;
  ClassId true_label = 0;  // 0 when unknown to the writer
};
void write_mu_csv(const std::string& path, std::span<const MuRow> rows, int num_known);
std::vector<MuRow> read_mu_csv(const std::string& path, int* num_known);

void write_results_csv(const std::string& path, std::span<const DetectionResult> results,
                       std::span<const ClassId> truth, int num_known);
struct ResultRow {
  Eigen::Index sample_id = 0;
  ClassId true_label = 0;
  ClassId final_label = 0;
  Provenance provenance = Provenance::known;
  double mu = 0.0;
};
std::vector<ResultRow> read_results_csv(const std::string& path, int* num_known);

struct CommandOptions {
  AblationMode mode = AblationMode::full;
  SplitPart part = SplitPart::test;
  int bins = 30;
  bool svg = false;
  std::string input;  // overrides the default input file where applicable
};

int cmd_synth(const ExperimentConfig& cfg);
int cmd_train(const ExperimentConfig& cfg);
int cmd_uncertainty(const ExperimentConfig& cfg, const CommandOptions& opt);
int cmd_detect(const ExperimentConfig& cfg, const CommandOptions& opt);
int cmd_eval(const ExperimentConfig& cfg, const CommandOptions& opt);
int cmd_gridsearch(const ExperimentConfig& cfg);
int cmd_plot_density(const ExperimentConfig& cfg, const CommandOptions& opt);

}  // namespace osr

#endif  // OSR_EXPERIMENT_HPP
