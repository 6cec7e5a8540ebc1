#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "fabmix/errors.hpp"
#include "fabmix/gaussian.hpp"
#include "fabmix/incremental_em.hpp"
#include "fabmix/mixture.hpp"
#include "fabmix/trace.hpp"

namespace fabmix {

// Reals in every text format: 17 significant digits, which round-trips.
inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_real(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw FormatError("cannot parse real '" + std::string(s) + "'");
  }
  return v;
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

// FNV-1a over the raw bytes of a sequence of doubles.
class Fnv1a {
 public:
  void add(double v) {
    unsigned char bytes[sizeof v];
    std::memcpy(bytes, &v, sizeof v);
    for (unsigned char b : bytes) {
      h_ ^= b;
      h_ *= 0x100000001b3ULL;
    }
  }
  template <typename Derived>
  void add(const Eigen::DenseBase<Derived>& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) add(static_cast<double>(m(i, j)));
  }
  std::uint64_t value() const { return h_; }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h_));
    return buf;
  }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::string hash_dataset(const Dataset& data) {
  Fnv1a h;
  h.add(data.points);
  return h.hex();
}

inline std::string hash_model(const MixtureModel& model) {
  Fnv1a h;
  for (const auto& c : model.components) {
    h.add(c.weight);
    h.add(c.mean);
    h.add(c.cov.entries());
  }
  h.add(model.soft_counts);
  return h.hex();
}

// ---------------------------------------------------------------------------
// Dataset CSV: header x0,...,x{D-1}[,label]

inline void write_dataset_csv(std::ostream& out, const Dataset& data,
                              const std::vector<int>* labels = nullptr) {
  for (Eigen::Index j = 0; j < data.dim(); ++j) out << (j ? ",x" : "x") << j;
  if (labels) out << ",label";
  out << '\n';
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    for (Eigen::Index j = 0; j < data.dim(); ++j) out << (j ? "," : "") << format_real(data.points(i, j));
    if (labels) out << ',' << (*labels)[static_cast<std::size_t>(i)];
    out << '\n';
  }
}

inline void write_dataset_csv(const std::filesystem::path& path, const Dataset& data,
                              const std::vector<int>* labels = nullptr) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_dataset_csv(out, data, labels);
}

struct LoadedDataset {
  Dataset data;
  std::optional<std::vector<int>> labels;
};

inline LoadedDataset read_dataset_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("dataset: empty input");
  const auto header = split(line, ',');
  std::size_t dim = header.size();
  bool has_label = false;
  if (!header.empty() && header.back().substr(0, 5) == "label") {
    has_label = true;
    --dim;
  }
  for (std::size_t j = 0; j < dim; ++j) {
    if (header[j] != "x" + std::to_string(j)) {
      throw FormatError("dataset: unexpected header column '" + std::string(header[j]) + "'");
    }
  }
  if (dim == 0) throw FormatError("dataset: no data columns");
  std::vector<double> values;
  std::vector<int> labels;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto fields = split(line, ',');
    if (fields.size() != dim + (has_label ? 1 : 0)) {
      throw FormatError("dataset: row " + std::to_string(rows + 1) + " has " +
                        std::to_string(fields.size()) + " fields");
    }
    for (std::size_t j = 0; j < dim; ++j) values.push_back(parse_real(fields[j]));
    if (has_label) labels.push_back(static_cast<int>(parse_real(fields[dim])));
    ++rows;
  }
  if (rows == 0) throw FormatError("dataset: no rows");
  RowMatrix points = Eigen::Map<RowMatrix>(values.data(), static_cast<Eigen::Index>(rows),
                                           static_cast<Eigen::Index>(dim));
  LoadedDataset out{Dataset(std::move(points)), std::nullopt};
  if (has_label) out.labels = std::move(labels);
  return out;
}

inline LoadedDataset read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return read_dataset_csv(in);
}

// ---------------------------------------------------------------------------
// Trace CSV: optional '#' comment lines, then
// iteration,fic,loglik,n_components,wall_ms

inline constexpr std::string_view kTraceHeader = "iteration,fic,loglik,n_components,wall_ms";

// Wall time is written as 0 unless requested; reruns then compare byte-equal.
inline void write_trace_csv(std::ostream& out, const FicTrace& trace, bool include_wall_time = false,
                            const std::vector<std::string>& comments = {}) {
  for (const auto& c : comments) out << "# " << c << '\n';
  out << kTraceHeader << '\n';
  for (const auto& r : trace.rows) {
    out << r.iteration << ',' << format_real(r.fic) << ',' << format_real(r.loglik) << ','
        << r.n_components << ',' << format_real(include_wall_time ? r.wall_ms : 0.0) << '\n';
  }
}

inline void write_trace_csv(const std::filesystem::path& path, const FicTrace& trace,
                            bool include_wall_time = false, const std::vector<std::string>& comments = {}) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_trace_csv(out, trace, include_wall_time, comments);
}

inline FicTrace read_trace_csv(std::istream& in) {
  std::string line;
  bool seen_header = false;
  FicTrace trace;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (!seen_header) {
      if (line != kTraceHeader) throw FormatError("trace: unexpected header '" + line + "'");
      seen_header = true;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 5) throw FormatError("trace: malformed row '" + line + "'");
    trace.rows.push_back({static_cast<int>(parse_real(f[0])), parse_real(f[1]), parse_real(f[2]),
                          static_cast<int>(parse_real(f[3])), parse_real(f[4])});
  }
  if (!seen_header) throw FormatError("trace: missing header");
  return trace;
}

inline FicTrace read_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return read_trace_csv(in);
}

// ---------------------------------------------------------------------------
// Model checkpoint (JSON, format_version 1). Covariances are stored as their
// lower triangle in row-major order. Online learners may add their
// responsibility table, sufficient statistics, order RNG state and FIC
// accumulator for exact resume.

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline std::vector<double> lower_triangle(const Matrix& m) {
  std::vector<double> out;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j <= i; ++j) out.push_back(m(i, j));
  return out;
}

inline Matrix from_lower_triangle(const std::vector<double>& v, Eigen::Index dim) {
  if (static_cast<Eigen::Index>(v.size()) != dim * (dim + 1) / 2) {
    throw FormatError("checkpoint: covariance has " + std::to_string(v.size()) + " entries, expected " +
                      std::to_string(dim * (dim + 1) / 2));
  }
  Matrix m(dim, dim);
  std::size_t p = 0;
  for (Eigen::Index i = 0; i < dim; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) m(i, j) = m(j, i) = v[p++];
  return m;
}

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

inline Vector to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

template <typename M>
nlohmann::json rows_json(const M& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> r(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index j = 0; j < m.cols(); ++j) r[static_cast<std::size_t>(j)] = m(i, j);
    rows.push_back(std::move(r));
  }
  return rows;
}

template <typename M>
M rows_from_json(const nlohmann::json& j, Eigen::Index cols, const char* what) {
  M m(static_cast<Eigen::Index>(j.size()), cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const auto r = j.at(static_cast<std::size_t>(i)).get<std::vector<double>>();
    if (static_cast<Eigen::Index>(r.size()) != cols) {
      throw FormatError(std::string("checkpoint: ") + what + " row has wrong length");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = r[static_cast<std::size_t>(c)];
  }
  return m;
}

}  // namespace detail

inline nlohmann::json model_to_json(const MixtureModel& model) {
  nlohmann::json j;
  j["format_version"] = kCheckpointVersion;
  j["dim"] = model.dim;
  j["n_components"] = model.size();
  auto& w = j["weights"] = nlohmann::json::array();
  auto& means = j["means"] = nlohmann::json::array();
  auto& covs = j["covariances"] = nlohmann::json::array();
  for (const auto& c : model.components) {
    w.push_back(c.weight);
    means.push_back(detail::to_std(c.mean));
    covs.push_back(detail::lower_triangle(c.cov.entries()));
  }
  j["soft_counts"] = detail::to_std(model.soft_counts);
  return j;
}

inline MixtureModel model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kCheckpointVersion) {
      throw FormatError("checkpoint: unsupported format_version");
    }
    MixtureModel model;
    model.dim = j.at("dim").get<Eigen::Index>();
    const auto c = j.at("n_components").get<std::size_t>();
    const auto weights = j.at("weights").get<std::vector<double>>();
    const auto& means = j.at("means");
    const auto& covs = j.at("covariances");
    if (weights.size() != c || means.size() != c || covs.size() != c) {
      throw FormatError("checkpoint: component arrays disagree with n_components");
    }
    for (std::size_t k = 0; k < c; ++k) {
      const auto mean = means.at(k).get<std::vector<double>>();
      if (static_cast<Eigen::Index>(mean.size()) != model.dim) throw FormatError("checkpoint: mean length");
      model.components.push_back(
          {weights[k], detail::to_eigen(mean),
           repair_covariance(detail::from_lower_triangle(covs.at(k).get<std::vector<double>>(), model.dim))});
    }
    model.soft_counts = detail::to_eigen(j.at("soft_counts").get<std::vector<double>>());
    if (model.soft_counts.size() != static_cast<Eigen::Index>(c)) {
      throw FormatError("checkpoint: soft_counts length");
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
}

inline nlohmann::json state_to_json(const LearnerState& st) {
  nlohmann::json j = model_to_json(st.model);
  j["gamma"] = detail::rows_json(st.table.gamma);
  auto& stats = j["sufficient_stats"];
  stats["s0"] = detail::to_std(st.stats.s0);
  stats["s1"] = detail::rows_json(st.stats.s1);
  auto& s2 = stats["s2"] = nlohmann::json::array();
  for (const auto& m : st.stats.s2) s2.push_back(detail::lower_triangle(m));
  j["order_rng_state"] = st.order_rng;
  j["sweeps"] = st.sweeps;
  if (st.fic_entropy_total) {
    j["fic_accumulator"] = {{"entropy_total", *st.fic_entropy_total}, {"entropies", st.fic_entropies}};
  }
  return j;
}

inline LearnerState state_from_json(const nlohmann::json& j) {
  LearnerState st;
  st.model = model_from_json(j);
  try {
    const auto c = st.model.size();
    const auto d = st.model.dim;
    st.table.gamma = detail::rows_from_json<RowMatrix>(j.at("gamma"), c, "gamma");
    st.table.visited.assign(static_cast<std::size_t>(st.table.gamma.rows()), 1);
    const auto& stats = j.at("sufficient_stats");
    st.stats.s0 = detail::to_eigen(stats.at("s0").get<std::vector<double>>());
    st.stats.s1 = detail::rows_from_json<Matrix>(stats.at("s1"), d, "s1");
    for (const auto& m : stats.at("s2")) {
      st.stats.s2.push_back(detail::from_lower_triangle(m.get<std::vector<double>>(), d));
    }
    if (st.stats.s0.size() != c || st.stats.s1.rows() != c ||
        static_cast<Eigen::Index>(st.stats.s2.size()) != c) {
      throw FormatError("checkpoint: sufficient statistics disagree with n_components");
    }
    st.order_rng = j.at("order_rng_state").get<Rng::State>();
    st.sweeps = j.at("sweeps").get<int>();
    if (j.contains("fic_accumulator")) {
      const auto& acc = j.at("fic_accumulator");
      st.fic_entropy_total = acc.at("entropy_total").get<double>();
      st.fic_entropies = acc.at("entropies").get<std::vector<double>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  return st;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << j.dump(1) << '\n';
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace fabmix
