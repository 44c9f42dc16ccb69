#include "osr/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

namespace osr {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  std::string out(s.substr(b, e - b + 1));
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
  return out;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
      cell.push_back(ch);
    } else if (ch == ',' && !quoted) {
      cells.push_back(trim(cell));
      cell.clear();
    } else {
      cell.push_back(ch);
    }
  }
  cells.push_back(trim(cell));
  return cells;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

bool parse_integer(const std::string& s, long long& out) {
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& X, const std::vector<Eigen::Index>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = X.row(rows[i]);
  return out;
}

nlohmann::json rows_json(const std::vector<Eigen::Index>& rows) {
  auto arr = nlohmann::json::array();
  for (auto r : rows) arr.push_back(r);
  return arr;
}

std::vector<Eigen::Index> rows_from_json(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ParseError(std::string("manifest: missing rows.") + key);
  return j.at(key).get<std::vector<Eigen::Index>>();
}

}  // namespace

void LabeledDataset::validate() const {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw InvalidArgument("dataset: feature rows and labels differ in length");
  }
  const int c = num_classes();
  for (ClassId y : labels) {
    if (y < 1 || y > c) throw InvalidArgument("dataset: labels must be dense in 1..C");
  }
  for (int k = 1; k <= c; ++k) {
    if (!class_names.count(k)) throw InvalidArgument("dataset: class ids must be dense");
  }
}

LabeledDataset parse_csv(std::istream& is, const std::string& label_column) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError("csv: missing header row");
  const auto header = split_line(line);
  const auto label_it = std::find(header.begin(), header.end(), label_column);
  if (label_it == header.end()) {
    throw ParseError("csv: label column '" + label_column + "' not found in header");
  }
  const auto label_col = static_cast<std::size_t>(label_it - header.begin());

  LabeledDataset ds;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c != label_col) ds.feature_names.push_back(header[c]);
  }

  std::vector<std::vector<double>> rows;
  std::vector<std::string> raw_labels;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size()) {
      throw ParseError("csv: row " + std::to_string(line_no) + " has " +
                       std::to_string(cells.size()) + " cells, expected " +
                       std::to_string(header.size()));
    }
    std::vector<double> values;
    values.reserve(header.size() - 1);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c == label_col) continue;
      double v = 0.0;
      if (!parse_double(cells[c], v)) {
        throw ParseError("csv: non-numeric value '" + cells[c] + "' at row " +
                         std::to_string(line_no) + ", column '" + header[c] + "'");
      }
      values.push_back(v);
    }
    if (cells[label_col].empty()) {
      throw ParseError("csv: missing label at row " + std::to_string(line_no));
    }
    rows.push_back(std::move(values));
    raw_labels.push_back(cells[label_col]);
  }
  if (rows.empty()) throw ParseError("csv: no data rows");

  std::vector<std::string> names(raw_labels.begin(), raw_labels.end());
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  const bool numeric = std::all_of(names.begin(), names.end(), [](const std::string& s) {
    long long v = 0;
    return parse_integer(s, v);
  });
  if (numeric) {
    std::sort(names.begin(), names.end(), [](const std::string& a, const std::string& b) {
      long long x = 0, y = 0;
      parse_integer(a, x);
      parse_integer(b, y);
      return x < y;
    });
  }
  std::map<std::string, ClassId> ids;
  for (std::size_t i = 0; i < names.size(); ++i) {
    ids[names[i]] = static_cast<ClassId>(i + 1);
    ds.class_names[static_cast<ClassId>(i + 1)] = names[i];
  }

  ds.features.resize(static_cast<Eigen::Index>(rows.size()),
                     static_cast<Eigen::Index>(header.size() - 1));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      ds.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
    ds.labels.push_back(ids.at(raw_labels[r]));
  }
  return ds;
}

LabeledDataset load_csv(const std::string& path, const std::string& label_column) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open CSV '" + path + "'");
  return parse_csv(is, label_column);
}

void save_csv(const LabeledDataset& ds, const std::string& path, const std::string& label_column) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  for (Eigen::Index c = 0; c < ds.feature_dim(); ++c) {
    os << (static_cast<std::size_t>(c) < ds.feature_names.size() ? ds.feature_names[c]
                                                                 : "f" + std::to_string(c))
       << ',';
  }
  os << label_column << '\n';
  for (Eigen::Index r = 0; r < ds.size(); ++r) {
    for (Eigen::Index c = 0; c < ds.feature_dim(); ++c) os << format_real(ds.features(r, c)) << ',';
    const ClassId y = ds.labels[static_cast<std::size_t>(r)];
    const auto it = ds.class_names.find(y);
    os << (it != ds.class_names.end() ? it->second : std::to_string(y)) << '\n';
  }
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& X) {
  Standardizer s;
  const auto n = static_cast<double>(X.rows());
  s.mean = X.colwise().mean();
  const Eigen::RowVectorXd var =
      (X.rowwise() - s.mean).array().square().colwise().sum().matrix() / n;
  s.scale = var.unaryExpr([](double v) { return v > 0.0 ? std::sqrt(v) : 1.0; });
  return s;
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& X) const {
  return ((X.rowwise() - mean).array().rowwise() / scale.array()).matrix();
}

void save_manifest(const SplitManifest& m, const std::string& path) {
  nlohmann::json j;
  j["format"] = "osr-split-manifest";
  j["version"] = 1;
  j["seed"] = m.seed;
  j["unknown_fraction"] = m.unknown_fraction;
  j["known_class_ids"] = m.known_class_ids;
  j["unknown_class_ids"] = m.unknown_class_ids;
  j["rows"] = {{"train", rows_json(m.rows.train)},
               {"val_known", rows_json(m.rows.val_known)},
               {"test_known", rows_json(m.rows.test_known)},
               {"val_unknown", rows_json(m.rows.val_unknown)},
               {"test_unknown", rows_json(m.rows.test_unknown)}};
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os << j.dump(1) << '\n';
}

SplitManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open split manifest '" + path + "'");
  nlohmann::json j;
  try {
    is >> j;
    if (j.value("format", "") != "osr-split-manifest" || j.value("version", 0) != 1) {
      throw ParseError("manifest: unsupported format or version");
    }
    SplitManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.unknown_fraction = j.at("unknown_fraction").get<double>();
    m.known_class_ids = j.at("known_class_ids").get<std::vector<ClassId>>();
    m.unknown_class_ids = j.at("unknown_class_ids").get<std::vector<ClassId>>();
    const auto& rows = j.at("rows");
    m.rows.train = rows_from_json(rows, "train");
    m.rows.val_known = rows_from_json(rows, "val_known");
    m.rows.test_known = rows_from_json(rows, "test_known");
    m.rows.val_unknown = rows_from_json(rows, "val_unknown");
    m.rows.test_unknown = rows_from_json(rows, "test_unknown");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("manifest: ") + e.what());
  }
}

OpenSet open_set(const OpenSplit& split, SplitPart part) {
  const LabeledDataset& known = part == SplitPart::validation ? split.val_known : split.test_known;
  const Eigen::MatrixXd& unknown =
      part == SplitPart::validation ? split.val_unknown : split.test_unknown;
  OpenSet out;
  out.features.resize(known.size() + unknown.rows(), known.feature_dim());
  out.features << known.features, unknown;
  out.truth = known.labels;
  out.truth.insert(out.truth.end(), static_cast<std::size_t>(unknown.rows()), split.unknown_label());
  return out;
}

OpenSplit make_open_split(const LabeledDataset& ds, double unknown_fraction, std::uint64_t seed) {
  ds.validate();
  const int c = ds.num_classes();
  if (c < 2) throw InvalidArgument("split: at least two classes are required");
  if (!(unknown_fraction > 0.0 && unknown_fraction < 1.0)) {
    throw InvalidArgument("split: unknown_fraction must lie in (0, 1)");
  }
  const int n_unknown = static_cast<int>(std::lround(unknown_fraction * c));
  if (n_unknown < 1 || n_unknown >= c) {
    throw InvalidArgument("split: unknown_fraction leaves no known or no unknown class");
  }
  std::vector<ClassId> ids(static_cast<std::size_t>(c));
  std::iota(ids.begin(), ids.end(), 1);
  std::mt19937_64 rng(derive_seed(seed, 0xC1A55));
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(static_cast<std::size_t>(n_unknown));
  OpenSplit split = make_open_split(ds, ids, seed);
  split.manifest.unknown_fraction = unknown_fraction;
  return split;
}

OpenSplit make_open_split(const LabeledDataset& ds, const std::vector<ClassId>& unknown_ids,
                          std::uint64_t seed) {
  ds.validate();
  const int c = ds.num_classes();
  const std::set<ClassId> unknown(unknown_ids.begin(), unknown_ids.end());
  for (ClassId id : unknown) {
    if (id < 1 || id > c) throw InvalidArgument("split: unknown class id out of range");
  }
  if (unknown.empty() || static_cast<int>(unknown.size()) >= c) {
    throw InvalidArgument("split: need at least one known and one unknown class");
  }

  SplitManifest m;
  m.seed = seed;
  m.unknown_fraction = static_cast<double>(unknown.size()) / c;
  std::map<ClassId, std::vector<Eigen::Index>> by_class;
  for (std::size_t i = 0; i < ds.labels.size(); ++i) {
    by_class[ds.labels[i]].push_back(static_cast<Eigen::Index>(i));
  }
  for (ClassId id = 1; id <= c; ++id) {
    auto rows = by_class[id];
    std::mt19937_64 rng(derive_seed(seed, 0x5A11, static_cast<std::uint64_t>(id)));
    std::shuffle(rows.begin(), rows.end(), rng);
    const std::size_t n = rows.size();
    const std::size_t fifth = n / 5;
    if (unknown.count(id)) {
      m.unknown_class_ids.push_back(id);
      m.rows.val_unknown.insert(m.rows.val_unknown.end(), rows.begin(), rows.begin() + fifth);
      m.rows.test_unknown.insert(m.rows.test_unknown.end(), rows.begin() + fifth, rows.end());
    } else {
      m.known_class_ids.push_back(id);
      if (n < 5) {
        warn("split: known class " + std::to_string(id) + " has only " + std::to_string(n) +
             " samples; all go to the training split");
      }
      m.rows.val_known.insert(m.rows.val_known.end(), rows.begin(), rows.begin() + fifth);
      m.rows.test_known.insert(m.rows.test_known.end(), rows.begin() + fifth,
                               rows.begin() + 2 * fifth);
      m.rows.train.insert(m.rows.train.end(), rows.begin() + 2 * fifth, rows.end());
    }
  }
  return apply_manifest(ds, m);
}

OpenSplit apply_manifest(const LabeledDataset& ds, const SplitManifest& manifest) {
  ds.validate();
  auto check = [&](const std::vector<Eigen::Index>& rows) {
    for (auto r : rows) {
      if (r < 0 || r >= ds.size()) throw InvalidArgument("split: manifest row out of range");
    }
  };
  const auto& rows = manifest.rows;
  check(rows.train);
  check(rows.val_known);
  check(rows.test_known);
  check(rows.val_unknown);
  check(rows.test_unknown);
  if (rows.train.empty()) throw InvalidArgument("split: empty training split");

  std::map<ClassId, ClassId> remap;
  for (std::size_t k = 0; k < manifest.known_class_ids.size(); ++k) {
    remap[manifest.known_class_ids[k]] = static_cast<ClassId>(k + 1);
  }

  OpenSplit split;
  split.manifest = manifest;
  split.standardizer = Standardizer::fit(take_rows(ds.features, rows.train));

  auto known_part = [&](const std::vector<Eigen::Index>& idx) {
    LabeledDataset part;
    part.features = split.standardizer.apply(take_rows(ds.features, idx));
    part.feature_names = ds.feature_names;
    for (auto r : idx) {
      const auto it = remap.find(ds.labels[static_cast<std::size_t>(r)]);
      if (it == remap.end()) throw InvalidArgument("split: known split holds an unknown-class row");
      part.labels.push_back(it->second);
    }
    for (const auto& [source, dense] : remap) part.class_names[dense] = ds.class_names.at(source);
    return part;
  };
  split.train = known_part(rows.train);
  split.val_known = known_part(rows.val_known);
  split.test_known = known_part(rows.test_known);
  split.val_unknown = split.standardizer.apply(take_rows(ds.features, rows.val_unknown));
  split.test_unknown = split.standardizer.apply(take_rows(ds.features, rows.test_unknown));
  return split;
}

void SynthConfig::validate() const {
  if (num_known < 2) throw InvalidArgument("synth: num_known must be at least 2");
  if (num_unknown < 1) throw InvalidArgument("synth: num_unknown must be at least 1");
  if (per_class < 1) throw InvalidArgument("synth: per_class must be positive");
  if (dim < 1) throw InvalidArgument("synth: dim must be positive");
  if (!(overlap >= 0.0 && overlap <= 1.0)) throw InvalidArgument("synth: overlap must lie in [0, 1]");
  if (!(blob_sigma > 0.0)) throw InvalidArgument("synth: blob_sigma must be positive");
}

SynthData synth_blobs(const SynthConfig& cfg) {
  cfg.validate();
  const int total = cfg.num_known + cfg.num_unknown;
  const double min_gap = 6.0 * cfg.blob_sigma;
  std::mt19937_64 rng(derive_seed(cfg.seed, 0xCE47E5));
  std::normal_distribution<double> normal(0.0, 1.0);

  SynthData out;
  out.centers.resize(total, cfg.dim);
  double radius = min_gap;
  int failures = 0;
  for (int k = 0; k < total;) {
    Eigen::RowVectorXd u(cfg.dim);
    for (int d = 0; d < cfg.dim; ++d) u[d] = normal(rng);
    if (u.norm() == 0.0) continue;
    const Eigen::RowVectorXd c = radius * u.normalized();
    bool ok = true;
    for (int j = 0; j < k && ok; ++j) ok = (out.centers.row(j) - c).norm() >= min_gap;
    if (!ok) {
      if (++failures % 200 == 0) radius *= 1.1;
      continue;
    }
    out.centers.row(k++) = c;
  }
  for (int u = cfg.num_known; u < total; ++u) {
    Eigen::Index nearest = 0;
    (out.centers.topRows(cfg.num_known).rowwise() - out.centers.row(u))
        .rowwise()
        .squaredNorm()
        .minCoeff(&nearest);
    out.centers.row(u) =
        (1.0 - cfg.overlap) * out.centers.row(u) + cfg.overlap * out.centers.row(nearest);
    out.unknown_class_ids.push_back(u + 1);
  }

  LabeledDataset& ds = out.data;
  ds.features.resize(static_cast<Eigen::Index>(total) * cfg.per_class, cfg.dim);
  Eigen::Index row = 0;
  for (int k = 0; k < total; ++k) {
    ds.class_names[k + 1] = std::to_string(k + 1);
    for (int i = 0; i < cfg.per_class; ++i, ++row) {
      for (int d = 0; d < cfg.dim; ++d) {
        ds.features(row, d) = out.centers(k, d) + cfg.blob_sigma * normal(rng);
      }
      ds.labels.push_back(k + 1);
    }
  }
  for (int d = 0; d < cfg.dim; ++d) ds.feature_names.push_back("f" + std::to_string(d));
  return out;
}

}  // namespace osr
