#include "osr/experiment.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "osr/isda.hpp"
#include "osr/perturbation.hpp"
#include "osr/uncertainty.hpp"

namespace osr {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Seed streams derived from the master seed.
enum SeedStream : std::uint64_t {
  kSynthSeed = 1,
  kSplitSeed = 2,
  kInitSeed = 3,
  kTrainSeed = 4,
  kPerturbSeed = 5,
  kPipelineSeed = 6,
};

std::string join_path(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

[[noreturn]] void config_fail(const std::string& path, const std::string& message) {
  throw ConfigError(path + ": " + message);
}

// Reads one JSON object, tracking consumed keys so unknown ones can be rejected.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) config_fail(path_.empty() ? "<root>" : path_, "must be an object");
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path(const std::string& key) const { return join_path(path_, key); }

  void read_int(const std::string& key, int& out, int min_value) {
    const json* v = find(key);
    if (!v) return;
    if (!v->is_number_integer()) config_fail(path(key), "must be an integer");
    const auto value = v->get<std::int64_t>();
    if (value < min_value || value > std::numeric_limits<int>::max())
      config_fail(path(key), "must be an integer >= " + std::to_string(min_value) + " (got " +
                                 std::to_string(value) + ")");
    out = static_cast<int>(value);
  }

  void read_double(const std::string& key, double& out, double min_value, bool strict) {
    const json* v = find(key);
    if (!v) return;
    if (!v->is_number()) config_fail(path(key), "must be a number");
    const double value = v->get<double>();
    const bool ok = std::isfinite(value) && (strict ? value > min_value : value >= min_value);
    if (!ok) {
      std::ostringstream msg;
      msg << "must be a finite number " << (strict ? "> " : ">= ") << min_value << " (got "
          << v->dump() << ")";
      config_fail(path(key), msg.str());
    }
    out = value;
  }

  void read_finite(const std::string& key, double& out) {
    const json* v = find(key);
    if (!v) return;
    if (!v->is_number() || !std::isfinite(v->get<double>()))
      config_fail(path(key), "must be a finite number");
    out = v->get<double>();
  }

  void read_string(const std::string& key, std::string& out) {
    const json* v = find(key);
    if (!v) return;
    if (!v->is_string()) config_fail(path(key), "must be a string");
    out = v->get<std::string>();
  }

  void read_seed(const std::string& key, std::uint64_t& out) {
    const json* v = find(key);
    if (!v) return;
    if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0))
      config_fail(path(key), "must be a non-negative integer");
    out = v->get<std::uint64_t>();
  }

  template <typename T, typename Parse>
  void read_list(const std::string& key, std::vector<T>& out, Parse parse) {
    const json* v = find(key);
    if (!v) return;
    if (!v->is_array() || v->empty()) config_fail(path(key), "must be a non-empty array");
    out.clear();
    for (std::size_t i = 0; i < v->size(); ++i)
      out.push_back(parse((*v)[i], path(key) + "[" + std::to_string(i) + "]"));
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) config_fail(path(key), "unknown field");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

int parse_int_at_least(const json& v, const std::string& path, int min_value) {
  if (!v.is_number_integer() || v.get<std::int64_t>() < min_value ||
      v.get<std::int64_t>() > std::numeric_limits<int>::max())
    config_fail(path, "must be an integer >= " + std::to_string(min_value));
  return v.get<int>();
}

double parse_finite(const json& v, const std::string& path, double min_value, bool strict) {
  if (!v.is_number()) config_fail(path, "must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x) || (strict ? !(x > min_value) : !(x >= min_value))) {
    std::ostringstream msg;
    msg << "must be a finite number " << (strict ? "> " : ">= ") << min_value;
    config_fail(path, msg.str());
  }
  return x;
}

template <typename Fn>
void rethrow_as_config(const std::string& path, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    config_fail(path, e.what());
  }
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open config file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("config '" + path + "': " + e.what());
  }
}

std::string out_path(const ExperimentConfig& cfg, const std::string& name) {
  return (fs::path(cfg.output_dir) / name).string();
}

void require_file(const std::string& path, const std::string& producer) {
  if (!fs::exists(path))
    throw InvalidArgument("missing '" + path + "'; run 'osr " + producer + "' first");
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  return out;
}

void write_meta(const ExperimentConfig& cfg, const std::string& command, json extra) {
  json meta;
  meta["format"] = "osr-run-meta";
  meta["format_version"] = 1;
  meta["tool_version"] = kVersion;
  meta["command"] = command;
  meta["config_hash"] = cfg.hash();
  meta["seed"] = cfg.seed;
  meta["config"] = cfg.to_json();
  for (auto& [key, value] : extra.items()) meta[key] = value;
  auto out = open_output(out_path(cfg, command + ".meta.json"));
  out << meta.dump(2) << '\n';
}

std::string format_real(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

LabeledDataset load_source_dataset(const ExperimentConfig& cfg) {
  if (cfg.source == DataSource::synth) {
    const auto path = out_path(cfg, "dataset.csv");
    require_file(path, "synth");
    return load_csv(path, "label");
  }
  return load_csv(cfg.csv_path, cfg.label_column);
}

OpenSplit load_split(const ExperimentConfig& cfg) {
  const auto manifest_path = out_path(cfg, "split.json");
  require_file(manifest_path, "synth");
  return apply_manifest(load_source_dataset(cfg), load_manifest(manifest_path));
}

ClassifierModel load_checked_model(const ExperimentConfig& cfg, const OpenSplit& split) {
  const auto path = out_path(cfg, "model.ckpt");
  require_file(path, "train");
  ClassifierModel model = load_model(path);
  if (model.spec.input_dim != split.train.feature_dim() ||
      model.spec.num_classes != split.num_known())
    throw DimensionMismatch("model.ckpt does not match the dataset (input_dim " +
                            std::to_string(model.spec.input_dim) + " vs " +
                            std::to_string(split.train.feature_dim()) + ", classes " +
                            std::to_string(model.spec.num_classes) + " vs " +
                            std::to_string(split.num_known()) + ")");
  return model;
}

// Parses "# <format> v1 key=value ..." and returns the key/value pairs.
std::map<std::string, std::string> parse_header(const std::string& line, const std::string& format,
                                                const std::string& path) {
  std::istringstream in(line);
  std::string hash, name, version;
  in >> hash >> name >> version;
  if (hash != "#" || name != format)
    throw ParseError(path + ": expected a '# " + format + " v1' header");
  if (version != "v1") throw ParseError(path + ": unsupported " + format + " version " + version);
  std::map<std::string, std::string> fields;
  std::string token;
  while (in >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw ParseError(path + ": malformed header field '" + token + "'");
    fields[token.substr(0, eq)] = token.substr(eq + 1);
  }
  return fields;
}

int header_num_known(const std::map<std::string, std::string>& fields, const std::string& path) {
  auto it = fields.find("num_known");
  if (it == fields.end()) throw ParseError(path + ": header lacks num_known");
  try {
    const int k = std::stoi(it->second);
    if (k < 1) throw std::out_of_range("k");
    return k;
  } catch (const std::exception&) {
    throw ParseError(path + ": invalid num_known '" + it->second + "'");
  }
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <typename T>
T parse_field(const std::string& text, const std::string& where) {
  std::istringstream in(text);
  T value{};
  if (!(in >> value) || !(in >> std::ws).eof()) throw ParseError(where + ": invalid value '" + text + "'");
  return value;
}

double parse_real_field(const std::string& text, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size())
    throw ParseError(where + ": invalid number '" + text + "'");
  return v;
}

Eigen::VectorXd open_scores(const ClassifierModel& model, const Eigen::MatrixXd& X,
                            const PerturbConfig& perturb) {
  return score_uncertainty(model, make_ensemble(model, perturb), X);
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void GridSpec::validate() const {
  if (num_models.empty() || noise_scale.empty() || mu_star.empty() || h2.empty())
    throw ConfigError("grid: every axis must list at least one value");
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig cfg;
  Section root(j, "");
  root.read_seed("seed", cfg.seed);
  root.read_string("output_dir", cfg.output_dir);
  if (cfg.output_dir.empty()) config_fail("output_dir", "must not be empty");

  if (const json* data = root.find("data")) {
    Section s(*data, "data");
    std::string source = "synth";
    s.read_string("source", source);
    if (source == "synth") {
      cfg.source = DataSource::synth;
      s.read_int("num_known", cfg.synth.num_known, 2);
      s.read_int("num_unknown", cfg.synth.num_unknown, 1);
      s.read_int("per_class", cfg.synth.per_class, 5);
      s.read_int("dim", cfg.synth.dim, 1);
      s.read_double("overlap", cfg.synth.overlap, 0.0, false);
      if (cfg.synth.overlap > 1.0) config_fail("data.overlap", "must lie in [0, 1]");
      s.read_double("blob_sigma", cfg.synth.blob_sigma, 0.0, true);
    } else if (source == "csv") {
      cfg.source = DataSource::csv;
      s.read_string("path", cfg.csv_path);
      if (cfg.csv_path.empty()) config_fail("data.path", "is required for a csv source");
      s.read_string("label_column", cfg.label_column);
      s.read_double("unknown_fraction", cfg.unknown_fraction, 0.0, true);
      if (cfg.unknown_fraction >= 1.0) config_fail("data.unknown_fraction", "must lie in (0, 1)");
    } else {
      config_fail("data.source", "must be \"synth\" or \"csv\" (got \"" + source + "\")");
    }
    s.finish();
  }

  if (const json* net = root.find("network")) {
    Section s(*net, "network");
    s.read_list("hidden_dims", cfg.hidden_dims, [](const json& v, const std::string& p) {
      return static_cast<Eigen::Index>(parse_int_at_least(v, p, 1));
    });
    s.finish();
  }

  if (const json* tr = root.find("train")) {
    Section s(*tr, "train");
    s.read_int("epochs", cfg.train.epochs, 1);
    s.read_int("batch_size", cfg.train.batch_size, 1);
    s.read_double("learning_rate", cfg.train.learning_rate, 0.0, true);
    s.finish();
  }

  if (const json* pl = root.find("pipeline")) {
    Section s(*pl, "pipeline");
    PipelineConfig& p = cfg.pipeline;
    s.read_int("num_models", p.perturb.num_models, 1);
    s.read_double("noise_scale", p.perturb.noise_scale, 0.0, false);
    s.read_finite("mu_star", p.mu_star);
    s.read_int("h1", p.h1, 1);
    s.read_int("h2", p.h2, 1);
    s.read_double("gamma", p.gamma, 0.0, false);
    std::string text;
    if (s.find("feature_source")) {
      s.read_string("feature_source", text);
      rethrow_as_config(s.path("feature_source"),
                        [&] { p.feature_source = parse_feature_source(text); });
    }
    if (s.find("stage2_features")) {
      s.read_string("stage2_features", text);
      rethrow_as_config(s.path("stage2_features"),
                        [&] { p.stage2_features = parse_stage2_features(text); });
    }
    if (const json* tree = s.find("tree")) {
      Section t(*tree, "pipeline.tree");
      if (const json* depth = t.find("max_depth"); depth && depth->is_null()) {
        p.dt.max_depth = DtConfig::unlimited_depth;
      } else {
        t.read_int("max_depth", p.dt.max_depth, 1);
      }
      t.read_int("min_samples_leaf", p.dt.min_samples_leaf, 1);
      t.finish();
    }
    s.finish();
  }

  if (const json* grid = root.find("grid")) {
    Section s(*grid, "grid");
    GridSpec g;
    g.num_models = {cfg.pipeline.perturb.num_models};
    g.noise_scale = {cfg.pipeline.perturb.noise_scale};
    g.mu_star = {cfg.pipeline.mu_star};
    g.h2 = {cfg.pipeline.h2};
    s.read_list("num_models", g.num_models,
                [](const json& v, const std::string& p) { return parse_int_at_least(v, p, 1); });
    s.read_list("noise_scale", g.noise_scale, [](const json& v, const std::string& p) {
      return parse_finite(v, p, 0.0, false);
    });
    s.read_list("mu_star", g.mu_star, [](const json& v, const std::string& p) {
      if (!v.is_number() || !std::isfinite(v.get<double>())) config_fail(p, "must be a finite number");
      return v.get<double>();
    });
    s.read_list("h2", g.h2,
                [](const json& v, const std::string& p) { return parse_int_at_least(v, p, 1); });
    s.finish();
    cfg.grid = std::move(g);
  }
  root.finish();

  cfg.apply_master_seed(cfg.seed);
  rethrow_as_config("data", [&] { cfg.synth.validate(); });
  rethrow_as_config("train", [&] { cfg.train.validate(); });
  rethrow_as_config("pipeline", [&] { cfg.pipeline.validate(); });
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  return from_json(read_json_file(path));
}

void ExperimentConfig::apply_master_seed(std::uint64_t master) {
  seed = master;
  synth.seed = derive_seed(master, kSynthSeed);
  train.seed = derive_seed(master, kTrainSeed);
  pipeline.perturb.master_seed = derive_seed(master, kPerturbSeed);
  pipeline.seed = derive_seed(master, kPipelineSeed);
}

json ExperimentConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["output_dir"] = output_dir;
  if (source == DataSource::synth) {
    j["data"] = {{"source", "synth"},         {"num_known", synth.num_known},
                 {"num_unknown", synth.num_unknown}, {"per_class", synth.per_class},
                 {"dim", synth.dim},           {"overlap", synth.overlap},
                 {"blob_sigma", synth.blob_sigma}};
  } else {
    j["data"] = {{"source", "csv"},
                 {"path", csv_path},
                 {"label_column", label_column},
                 {"unknown_fraction", unknown_fraction}};
  }
  j["network"] = {{"hidden_dims", hidden_dims}};
  j["train"] = {{"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"learning_rate", train.learning_rate}};
  json tree = {{"min_samples_leaf", pipeline.dt.min_samples_leaf}};
  if (pipeline.dt.max_depth == DtConfig::unlimited_depth)
    tree["max_depth"] = nullptr;
  else
    tree["max_depth"] = pipeline.dt.max_depth;
  j["pipeline"] = {{"num_models", pipeline.perturb.num_models},
                   {"noise_scale", pipeline.perturb.noise_scale},
                   {"mu_star", pipeline.mu_star},
                   {"h1", pipeline.h1},
                   {"h2", pipeline.h2},
                   {"gamma", pipeline.gamma},
                   {"feature_source", std::string(to_string(pipeline.feature_source))},
                   {"stage2_features", std::string(to_string(pipeline.stage2_features))},
                   {"tree", tree}};
  if (grid) {
    j["grid"] = {{"num_models", grid->num_models},
                 {"noise_scale", grid->noise_scale},
                 {"mu_star", grid->mu_star},
                 {"h2", grid->h2}};
  }
  return j;
}

std::string ExperimentConfig::hash() const {
  // FNV-1a over the canonical serialization.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : to_json().dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

// ---------------------------------------------------------------------------
// Search helpers

GridCell evaluate_cell(const ClassifierModel& model, const OpenSplit& split,
                       const PipelineConfig& base, int num_models, double noise_scale,
                       double mu_star, int h2) {
  PipelineConfig cfg = base;
  cfg.perturb.num_models = num_models;
  cfg.perturb.noise_scale = noise_scale;
  cfg.mu_star = mu_star;
  cfg.h2 = h2;
  const OpenSet os = open_set(split, SplitPart::validation);
  const PipelineRun run = run_detection(model, split.train.features, split.train.labels,
                                        os.features, cfg, AblationMode::full);
  GridCell cell{num_models, noise_scale, mu_star, h2, {}, run.fell_back};
  cell.report = evaluate(os.truth, final_labels(run.results), split.unknown_label());
  return cell;
}

GridResult grid_search(const ClassifierModel& model, const OpenSplit& split,
                       const PipelineConfig& base, const GridSpec& grid) {
  grid.validate();
  base.validate();
  const OpenSet os = open_set(split, SplitPart::validation);
  GridResult result;
  result.cells.reserve(grid.size());
  for (int b : grid.num_models) {
    for (double lambda : grid.noise_scale) {
      PipelineConfig cfg = base;
      cfg.perturb.num_models = b;
      cfg.perturb.noise_scale = lambda;
      // Scores depend only on (B, lambda); reuse them across mu* and H2.
      const ScoredSets scores =
          score_sets(model, split.train.features, os.features, cfg.perturb);
      for (double mu_star : grid.mu_star) {
        for (int h2 : grid.h2) {
          cfg.mu_star = mu_star;
          cfg.h2 = h2;
          const PipelineRun run = run_detection(model, split.train.features, split.train.labels,
                                                os.features, scores, cfg, AblationMode::full);
          GridCell cell{b, lambda, mu_star, h2, {}, run.fell_back};
          cell.report = evaluate(os.truth, final_labels(run.results), split.unknown_label());
          if (result.cells.empty() ||
              cell.report.accuracy > result.cells[result.best].report.accuracy)
            result.best = result.cells.size();
          result.cells.push_back(std::move(cell));
        }
      }
    }
  }
  return result;
}

std::pair<std::vector<double>, std::vector<double>> split_by_truth(
    const Eigen::Ref<const Eigen::VectorXd>& mu, std::span<const ClassId> truth,
    ClassId unknown_label) {
  if (static_cast<std::size_t>(mu.size()) != truth.size())
    throw DimensionMismatch("split_by_truth: score and label counts differ");
  std::vector<double> known, unknown;
  for (std::size_t i = 0; i < truth.size(); ++i)
    (truth[i] == unknown_label ? unknown : known).push_back(mu[static_cast<Eigen::Index>(i)]);
  return {std::move(known), std::move(unknown)};
}

PerturbationChoice select_perturbation_by_auc(const ClassifierModel& model,
                                              const OpenSplit& split,
                                              std::span<const int> num_models,
                                              std::span<const double> noise_scales,
                                              std::uint64_t master_seed) {
  if (num_models.empty() || noise_scales.empty())
    throw InvalidArgument("select_perturbation_by_auc: empty candidate list");
  const OpenSet os = open_set(split, SplitPart::validation);
  PerturbationChoice best;
  bool first = true;
  for (int b : num_models) {
    for (double lambda : noise_scales) {
      const Eigen::VectorXd mu = open_scores(model, os.features, {b, lambda, master_seed});
      const auto [known, unknown] = split_by_truth(mu, os.truth, split.unknown_label());
      const double auc = separation_auc(known, unknown);
      if (first || auc > best.auc) best = {b, lambda, auc};
      first = false;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Density histogram

DensityHistogram density_histogram(std::span<const double> known, std::span<const double> unknown,
                                   int bins) {
  if (bins < 1) throw InvalidArgument("density_histogram: bins must be >= 1");
  if (known.empty() && unknown.empty()) throw InvalidArgument("density_histogram: no scores");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (auto group : {known, unknown}) {
    for (double v : group) {
      if (!std::isfinite(v)) throw InvalidArgument("density_histogram: non-finite score");
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double width = (hi - lo) / bins;
  DensityHistogram h;
  h.edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int i = 0; i <= bins; ++i) h.edges[static_cast<std::size_t>(i)] = lo + i * width;
  h.edges.back() = hi;

  auto fill = [&](std::span<const double> values, std::vector<double>& density) {
    density.assign(static_cast<std::size_t>(bins), 0.0);
    if (values.empty()) return;
    for (double v : values) {
      auto idx = static_cast<int>(std::floor((v - lo) / width));
      idx = std::clamp(idx, 0, bins - 1);
      density[static_cast<std::size_t>(idx)] += 1.0;
    }
    for (double& d : density) d /= static_cast<double>(values.size()) * width;
  };
  fill(known, h.known);
  fill(unknown, h.unknown);
  return h;
}

double support_overlap_fraction(const DensityHistogram& h) {
  std::size_t either = 0, both = 0;
  for (std::size_t i = 0; i < h.known.size(); ++i) {
    const bool k = h.known[i] > 0.0, u = h.unknown[i] > 0.0;
    either += (k || u);
    both += (k && u);
  }
  return either == 0 ? 0.0 : static_cast<double>(both) / static_cast<double>(either);
}

std::string density_svg(const DensityHistogram& h) {
  constexpr double kW = 640, kH = 360, kPad = 40;
  double peak = 0.0;
  for (double d : h.known) peak = std::max(peak, d);
  for (double d : h.unknown) peak = std::max(peak, d);
  if (peak <= 0.0) peak = 1.0;
  const double lo = h.edges.front(), hi = h.edges.back();
  auto px = [&](double x) { return kPad + (x - lo) / (hi - lo) * (kW - 2 * kPad); };
  auto py = [&](double y) { return kH - kPad - y / peak * (kH - 2 * kPad); };
  auto steps = [&](const std::vector<double>& density) {
    std::ostringstream pts;
    pts << px(lo) << ',' << py(0.0);
    for (std::size_t i = 0; i < density.size(); ++i)
      pts << ' ' << px(h.edges[i]) << ',' << py(density[i]) << ' ' << px(h.edges[i + 1]) << ','
          << py(density[i]);
    pts << ' ' << px(hi) << ',' << py(0.0);
    return pts.str();
  };
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<line x1=\"" << kPad << "\" y1=\"" << kH - kPad << "\" x2=\"" << kW - kPad << "\" y2=\""
      << kH - kPad << "\" stroke=\"black\"/>\n"
      << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\""
      << steps(h.known) << "\"/>\n"
      << "<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\" points=\""
      << steps(h.unknown) << "\"/>\n"
      << "<text x=\"" << kPad << "\" y=\"20\" fill=\"#1f77b4\">known</text>\n"
      << "<text x=\"" << kPad + 70 << "\" y=\"20\" fill=\"#d62728\">unknown</text>\n"
      << "<text x=\"" << kPad << "\" y=\"" << kH - 10 << "\">" << format_real(lo) << "</text>\n"
      << "<text x=\"" << kW - kPad - 60 << "\" y=\"" << kH - 10 << "\">" << format_real(hi)
      << "</text>\n"
      << "</svg>\n";
  return svg.str();
}

// ---------------------------------------------------------------------------
// In-memory preparation

LabeledDataset materialize_dataset(const ExperimentConfig& cfg, std::vector<ClassId>* unknown_ids) {
  if (cfg.source == DataSource::synth) {
    SynthData sd = synth_blobs(cfg.synth);
    if (unknown_ids) *unknown_ids = sd.unknown_class_ids;
    return std::move(sd.data);
  }
  if (unknown_ids) unknown_ids->clear();
  return load_csv(cfg.csv_path, cfg.label_column);
}

namespace {

OpenSplit make_split(const ExperimentConfig& cfg, const LabeledDataset& ds,
                     const std::vector<ClassId>& unknown_ids) {
  const std::uint64_t seed = derive_seed(cfg.seed, kSplitSeed);
  if (cfg.source == DataSource::synth) return make_open_split(ds, unknown_ids, seed);
  return make_open_split(ds, cfg.unknown_fraction, seed);
}

ClassifierModel train_model(const ExperimentConfig& cfg, const OpenSplit& split) {
  NetworkSpec spec;
  spec.input_dim = split.train.feature_dim();
  spec.hidden_dims = cfg.hidden_dims;
  spec.num_classes = split.num_known();
  ClassifierModel model = init_network(spec, derive_seed(cfg.seed, kInitSeed));
  return train(std::move(model), split.train.features, split.train.labels, cfg.train);
}

}  // namespace

TrainedSetup prepare_and_train(const ExperimentConfig& cfg) {
  std::vector<ClassId> unknown_ids;
  const LabeledDataset ds = materialize_dataset(cfg, &unknown_ids);
  OpenSplit split = make_split(cfg, ds, unknown_ids);
  ClassifierModel model = train_model(cfg, split);
  return {std::move(split), std::move(model)};
}

// ---------------------------------------------------------------------------
// File formats

void write_mu_csv(const std::string& path, std::span<const MuRow> rows, int num_known) {
  auto out = open_output(path);
  out << "# osr-mu v1 num_known=" << num_known << "\n";
  out << "sample_id,mu,true_label\n";
  for (const MuRow& r : rows) out << r.sample_id << ',' << format_real(r.mu) << ',' << r.true_label << '\n';
}

std::vector<MuRow> read_mu_csv(const std::string& path, int* num_known) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file");
  const int k = header_num_known(parse_header(line, "osr-mu", path), path);
  if (num_known) *num_known = k;
  if (!std::getline(in, line) || line != "sample_id,mu,true_label")
    throw ParseError(path + ": expected column header 'sample_id,mu,true_label'");
  std::vector<MuRow> rows;
  std::size_t lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    const auto f = split_fields(line);
    if (f.size() != 3) throw ParseError(where + ": expected 3 fields");
    if (f[2].empty()) throw ParseError(where + ": missing true_label tag");
    MuRow r{parse_field<Eigen::Index>(f[0], where), parse_real_field(f[1], where),
            parse_field<ClassId>(f[2], where)};
    if (r.true_label < 1 || r.true_label > k + 1)
      throw ParseError(where + ": true_label " + f[2] + " outside 1.." + std::to_string(k + 1));
    rows.push_back(r);
  }
  return rows;
}

void write_results_csv(const std::string& path, std::span<const DetectionResult> results,
                       std::span<const ClassId> truth, int num_known) {
  if (results.size() != truth.size())
    throw DimensionMismatch("write_results_csv: result and truth counts differ");
  auto out = open_output(path);
  out << "# osr-results v1 num_known=" << num_known << "\n";
  out << "sample_id,true_label,final_label,provenance,mu\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    const DetectionResult& r = results[i];
    out << r.sample_id << ',' << truth[i] << ',' << r.final_label << ',' << to_string(r.provenance)
        << ',' << format_real(r.mu) << '\n';
  }
}

std::vector<ResultRow> read_results_csv(const std::string& path, int* num_known) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file");
  const int k = header_num_known(parse_header(line, "osr-results", path), path);
  if (num_known) *num_known = k;
  if (!std::getline(in, line) || line != "sample_id,true_label,final_label,provenance,mu")
    throw ParseError(path + ": unexpected column header");
  std::vector<ResultRow> rows;
  std::size_t lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    const auto f = split_fields(line);
    if (f.size() != 5) throw ParseError(where + ": expected 5 fields");
    ResultRow r;
    r.sample_id = parse_field<Eigen::Index>(f[0], where);
    r.true_label = parse_field<ClassId>(f[1], where);
    r.final_label = parse_field<ClassId>(f[2], where);
    try {
      r.provenance = parse_provenance(f[3]);
    } catch (const InvalidArgument& e) {
      throw ParseError(where + ": " + e.what());
    }
    r.mu = parse_real_field(f[4], where);
    for (ClassId c : {r.true_label, r.final_label})
      if (c < 1 || c > k + 1) throw ParseError(where + ": label outside 1.." + std::to_string(k + 1));
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_synth(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  std::vector<ClassId> unknown_ids;
  const LabeledDataset ds = materialize_dataset(cfg, &unknown_ids);
  json outputs = json::array();
  if (cfg.source == DataSource::synth) {
    save_csv(ds, out_path(cfg, "dataset.csv"));
    outputs.push_back("dataset.csv");
  }
  const OpenSplit split = make_split(cfg, ds, unknown_ids);
  save_manifest(split.manifest, out_path(cfg, "split.json"));
  outputs.push_back("split.json");
  std::cout << "samples " << ds.size() << ", known classes " << split.num_known()
            << ", unknown classes " << split.manifest.unknown_class_ids.size() << "\n";
  write_meta(cfg, "synth", {{"outputs", outputs}});
  return 0;
}

int cmd_train(const ExperimentConfig& cfg) {
  const OpenSplit split = load_split(cfg);
  const ClassifierModel model = train_model(cfg, split);
  save_model(out_path(cfg, "model.ckpt"), model);
  const double train_acc = accuracy(model, split.train.features, split.train.labels);
  const double val_acc = accuracy(model, split.val_known.features, split.val_known.labels);
  std::cout << "train accuracy " << train_acc << ", validation accuracy " << val_acc << "\n";
  write_meta(cfg, "train", {{"outputs", {"model.ckpt"}}});
  return 0;
}

namespace {
std::string part_name(SplitPart part) { return part == SplitPart::test ? "test" : "validation"; }
}  // namespace

int cmd_uncertainty(const ExperimentConfig& cfg, const CommandOptions& opt) {
  const OpenSplit split = load_split(cfg);
  const ClassifierModel model = load_checked_model(cfg, split);
  const OpenSet os = open_set(split, opt.part);
  const Eigen::VectorXd mu = open_scores(model, os.features, cfg.pipeline.perturb);
  std::vector<MuRow> rows(os.truth.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    rows[i] = {static_cast<Eigen::Index>(i), mu[static_cast<Eigen::Index>(i)], os.truth[i]};
  write_mu_csv(out_path(cfg, "mu.csv"), rows, split.num_known());
  const auto [known, unknown] = split_by_truth(mu, os.truth, split.unknown_label());
  std::cout << "scored " << rows.size() << " samples (" << part_name(opt.part)
            << "), separation AUC " << separation_auc(known, unknown) << "\n";
  write_meta(cfg, "uncertainty", {{"part", part_name(opt.part)}, {"outputs", {"mu.csv"}}});
  return 0;
}

int cmd_detect(const ExperimentConfig& cfg, const CommandOptions& opt) {
  const OpenSplit split = load_split(cfg);
  const ClassifierModel model = load_checked_model(cfg, split);
  const OpenSet os = open_set(split, opt.part);
  const PipelineRun run = run_detection(model, split.train.features, split.train.labels,
                                        os.features, cfg.pipeline, opt.mode);
  if (run.results.size() != os.truth.size())
    throw InternalError("detect: result count does not cover the open set");
  for (std::size_t i = 0; i < run.results.size(); ++i)
    if (run.results[i].sample_id != static_cast<Eigen::Index>(i))
      throw InternalError("detect: results are not a permutation of the open set");

  write_results_csv(out_path(cfg, "results.csv"), run.results, os.truth, split.num_known());
  {
    auto out = open_output(out_path(cfg, "detector.ckpt"));
    out << "osr-detector 1\n";
    out << "mode " << to_string(opt.mode) << "\n";
    out << "fell_back " << (run.fell_back ? 1 : 0) << "\n";
    out << "isda " << (run.isda ? 1 : 0) << "\n";
    if (run.isda) save_isda(out, *run.isda);
    out << "tree " << (run.tree ? 1 : 0) << "\n";
    if (run.tree) save_tree(out, *run.tree);
  }
  std::size_t counts[4] = {0, 0, 0, 0};
  for (const auto& r : run.results) ++counts[static_cast<int>(r.provenance)];
  std::cout << "P_L " << counts[0] << ", Q_L " << counts[1] << ", R_L " << counts[2] << ", known "
            << counts[3] << (run.fell_back ? " (fell back to threshold-only)" : "") << "\n";
  write_meta(cfg, "detect",
             {{"mode", std::string(to_string(opt.mode))},
              {"part", part_name(opt.part)},
              {"fell_back", run.fell_back},
              {"outputs", {"results.csv", "detector.ckpt"}}});
  return 0;
}

int cmd_eval(const ExperimentConfig& cfg, const CommandOptions& opt) {
  const std::string input = opt.input.empty() ? out_path(cfg, "results.csv") : opt.input;
  if (opt.input.empty()) require_file(input, "detect");
  int k = 0;
  const auto rows = read_results_csv(input, &k);
  std::vector<ClassId> truth, pred;
  for (const auto& r : rows) {
    truth.push_back(r.true_label);
    pred.push_back(r.final_label);
  }
  const EvalReport report = evaluate(truth, pred, k + 1);
  const std::string table = format_report_table(report);
  {
    auto out = open_output(out_path(cfg, "report.txt"));
    out << table;
  }
  {
    auto out = open_output(out_path(cfg, "report.csv"));
    write_report_csv(out, report);
  }
  std::cout << table;
  write_meta(cfg, "eval", {{"outputs", {"report.txt", "report.csv"}}});
  return 0;
}

int cmd_gridsearch(const ExperimentConfig& cfg) {
  if (!cfg.grid) throw ConfigError("grid: section is required for gridsearch");
  const OpenSplit split = load_split(cfg);
  const ClassifierModel model = load_checked_model(cfg, split);
  const GridResult result = grid_search(model, split, cfg.pipeline, *cfg.grid);
  {
    auto out = open_output(out_path(cfg, "gridsearch.csv"));
    out << "# osr-gridsearch v1\n";
    out << "index,num_models,noise_scale,mu_star,h2,accuracy,precision,recall,f1,tdr,fell_back\n";
    for (std::size_t i = 0; i < result.cells.size(); ++i) {
      const GridCell& c = result.cells[i];
      out << i << ',' << c.num_models << ',' << format_real(c.noise_scale) << ','
          << format_real(c.mu_star) << ',' << c.h2 << ',' << format_real(c.report.accuracy) << ','
          << format_real(c.report.precision) << ',' << format_real(c.report.recall) << ','
          << format_real(c.report.f1) << ',' << format_real(c.report.tdr) << ','
          << (c.fell_back ? 1 : 0) << '\n';
    }
  }
  const GridCell& best = result.cells[result.best];
  const json best_json = {{"format", "osr-gridsearch-best"},
                          {"format_version", 1},
                          {"index", result.best},
                          {"num_models", best.num_models},
                          {"noise_scale", best.noise_scale},
                          {"mu_star", best.mu_star},
                          {"h2", best.h2},
                          {"validation_accuracy", best.report.accuracy}};
  {
    auto out = open_output(out_path(cfg, "best.json"));
    out << best_json.dump(2) << '\n';
  }
  std::cout << "best cell " << result.best << ": B=" << best.num_models
            << " lambda=" << best.noise_scale << " mu*=" << best.mu_star << " H2=" << best.h2
            << " validation accuracy " << best.report.accuracy << "\n";
  write_meta(cfg, "gridsearch", {{"outputs", {"gridsearch.csv", "best.json"}}});
  return 0;
}

int cmd_plot_density(const ExperimentConfig& cfg, const CommandOptions& opt) {
  const std::string input = opt.input.empty() ? out_path(cfg, "mu.csv") : opt.input;
  if (opt.input.empty()) require_file(input, "uncertainty");
  int k = 0;
  const auto rows = read_mu_csv(input, &k);
  std::vector<double> known, unknown;
  for (const auto& r : rows) (r.true_label == k + 1 ? unknown : known).push_back(r.mu);
  const DensityHistogram h = density_histogram(known, unknown, opt.bins);
  {
    auto out = open_output(out_path(cfg, "density.csv"));
    out << "# osr-density v1 bins=" << opt.bins << " known=" << known.size()
        << " unknown=" << unknown.size() << "\n";
    out << "bin_left,bin_right,known_density,unknown_density\n";
    for (std::size_t i = 0; i < h.known.size(); ++i)
      out << format_real(h.edges[i]) << ',' << format_real(h.edges[i + 1]) << ','
          << format_real(h.known[i]) << ',' << format_real(h.unknown[i]) << '\n';
  }
  json outputs = {"density.csv"};
  if (opt.svg) {
    auto out = open_output(out_path(cfg, "density.svg"));
    out << density_svg(h);
    outputs.push_back("density.svg");
  }
  std::cout << "support overlap " << support_overlap_fraction(h) << "\n";
  write_meta(cfg, "plot-density", {{"bins", opt.bins}, {"outputs", outputs}});
  return 0;
}

}  // namespace osr
