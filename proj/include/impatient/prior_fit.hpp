#pragma once

// Empirical-Bayes estimates of the per-class prior (mu1, Sigma1) and noise
// covariance V from historical per-arm traces.

#include "impatient/csv.hpp"
#include "impatient/environments.hpp"
#include "impatient/gaussian.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace impatient {

namespace detail {

inline std::vector<std::size_t> class_members(const TraceDataset& data, const std::string& z) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < data.arms.size(); ++i)
    if (data.arms[i].z == z) out.push_back(i);
  return out;
}

inline Vector arm_mean(const TraceDataset::Arm& arm) { return arm.traces.colwise().mean().transpose(); }

}  // namespace detail

/// Per-arm V^(a) = (1/N) sum (Y - Ybar)(Y - Ybar)^T, averaged over the class
/// without weighting.
inline Matrix fit_noise_cov(const TraceDataset& data, const std::string& z) {
  const auto members = detail::class_members(data, z);
  if (members.empty()) throw InsufficientData("fit_noise_cov: class '" + z + "' has no arms");
  const int j = data.j_outcomes;
  Matrix total = Matrix::Zero(j, j);
  for (std::size_t i : members) {
    const auto& arm = data.arms[i];
    if (arm.traces.rows() < 2)
      throw InsufficientData("fit_noise_cov: arm '" + arm.id + "' has fewer than 2 traces");
    const Matrix centered = arm.traces.rowwise() - arm.traces.colwise().mean();
    total += (centered.transpose() * centered) / static_cast<double>(arm.traces.rows());
  }
  return symmetrized(total / static_cast<double>(members.size()));
}

/// Unweighted mean of the per-arm trace means.
inline Vector fit_prior_mean(const TraceDataset& data, const std::string& z) {
  const auto members = detail::class_members(data, z);
  if (members.empty()) throw InsufficientData("fit_prior_mean: class '" + z + "' has no arms");
  Vector total = Vector::Zero(data.j_outcomes);
  for (std::size_t i : members) total += detail::arm_mean(data.arms[i]);
  return total / static_cast<double>(members.size());
}

/// Mean over the class of (Ybar - mu)(Ybar - mu)^T.
inline Matrix fit_prior_cov(const TraceDataset& data, const std::string& z, const Vector& mu) {
  const auto members = detail::class_members(data, z);
  if (members.size() < 2)
    throw InsufficientData("fit_prior_cov: class '" + z + "' needs at least 2 arms");
  require_dim(mu.size() == data.j_outcomes, "fit_prior_cov: mean has wrong length");
  Matrix total = Matrix::Zero(data.j_outcomes, data.j_outcomes);
  for (std::size_t i : members) {
    const Vector d = detail::arm_mean(data.arms[i]) - mu;
    total += d * d.transpose();
  }
  return symmetrized(total / static_cast<double>(members.size()));
}

/// sum over arms of log det(S_a) + (Ybar_a - mu)^T S_a^{-1} (Ybar_a - mu),
/// with S_a = Sigma + V / N_a.
inline double marginal_nll(const TraceDataset& data, const std::string& z, const Vector& mu, const Matrix& sigma,
                           const Matrix& v) {
  const auto members = detail::class_members(data, z);
  if (members.empty()) throw InsufficientData("marginal_nll: class '" + z + "' has no arms");
  const int j = data.j_outcomes;
  require_dim(mu.size() == j && sigma.rows() == j && sigma.cols() == j && v.rows() == j && v.cols() == j,
              "marginal_nll: dimension mismatch");
  double total = 0.0;
  for (std::size_t i : members) {
    const auto& arm = data.arms[i];
    const Matrix s = sigma + v / static_cast<double>(arm.traces.rows());
    Eigen::LLT<Matrix> llt(s);
    if (llt.info() != Eigen::Success)
      throw DefinitenessError("marginal_nll: Sigma + V/N is not positive definite for arm '" + arm.id + "'", 0);
    const Vector d = detail::arm_mean(arm) - mu;
    const Matrix l = llt.matrixL();
    total += 2.0 * l.diagonal().array().log().sum() + d.dot(llt.solve(d));
  }
  return total;
}

/// Raw per-class estimates. Fitted covariances are only PSD (e.g. binary
/// traces with a constant first outcome), so conversion to PriorParams goes
/// through the jitter repair.
struct FittedClass {
  Vector mu1;
  Matrix sigma1;
  Matrix v;
  int num_arms = 0;
  long num_traces = 0;
};

struct FittedPrior {
  std::map<std::string, FittedClass> classes;
  std::vector<std::string> warnings;

  std::map<std::string, PriorParams> to_prior_params() const {
    std::map<std::string, PriorParams> out;
    for (const auto& [z, c] : classes) out.emplace(z, PriorParams::repaired(c.mu1, c.sigma1, c.v));
    return out;
  }
};

/// Fits every class. A class with a single arm takes the pooled covariance
/// over all arms.
inline FittedPrior fit_prior(const TraceDataset& data) {
  data.validate();
  FittedPrior out;
  std::optional<Matrix> pooled;
  for (const auto& z : data.classes()) {
    FittedClass c;
    const auto members = detail::class_members(data, z);
    c.num_arms = static_cast<int>(members.size());
    for (std::size_t i : members) c.num_traces += data.arms[i].traces.rows();
    c.mu1 = fit_prior_mean(data, z);
    c.v = fit_noise_cov(data, z);
    if (members.size() >= 2) {
      c.sigma1 = fit_prior_cov(data, z, c.mu1);
    } else {
      if (!pooled) {
        if (data.arms.size() < 2) throw InsufficientData("fit_prior: need at least 2 arms in total");
        Vector mu = Vector::Zero(data.j_outcomes);
        for (const auto& a : data.arms) mu += detail::arm_mean(a);
        mu /= static_cast<double>(data.arms.size());
        Matrix s = Matrix::Zero(data.j_outcomes, data.j_outcomes);
        for (const auto& a : data.arms) {
          const Vector d = detail::arm_mean(a) - mu;
          s += d * d.transpose();
        }
        pooled = symmetrized(s / static_cast<double>(data.arms.size()));
      }
      c.sigma1 = *pooled;
      out.warnings.push_back("class '" + z + "' has one arm; using the pooled prior covariance");
    }
    out.classes.emplace(z, std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV bundle: prior_mean.csv (z,j,value), prior_cov.csv and noise_cov.csv
// (z,i,j,value). Indices are 1-based in files.

inline void write_prior_bundle(const FittedPrior& prior, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream mean(dir / "prior_mean.csv"), cov(dir / "prior_cov.csv"), noise(dir / "noise_cov.csv");
  if (!mean || !cov || !noise) throw Error("cannot write prior bundle to '" + dir.string() + "'");
  mean << "z,j,value\n";
  cov << "z,i,j,value\n";
  noise << "z,i,j,value\n";
  for (const auto& [z, c] : prior.classes) {
    const auto n = c.mu1.size();
    for (Eigen::Index i = 0; i < n; ++i) mean << z << ',' << i + 1 << ',' << csv::format_double(c.mu1(i)) << '\n';
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        cov << z << ',' << i + 1 << ',' << j + 1 << ',' << csv::format_double(c.sigma1(i, j)) << '\n';
        noise << z << ',' << i + 1 << ',' << j + 1 << ',' << csv::format_double(c.v(i, j)) << '\n';
      }
  }
}

namespace detail {

struct BundleRow {
  std::string z;
  int i = 0;
  int j = 0;
  double value = 0.0;
};

inline std::vector<BundleRow> read_bundle_file(const std::filesystem::path& path, bool matrix) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  const std::string expected = matrix ? "z,i,j,value" : "z,j,value";
  if (std::string(csv::trim(line)) != expected)
    throw Error("'" + path.string() + "': expected header " + expected);
  std::vector<BundleRow> rows;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    const auto f = csv::split(csv::trim(line));
    const std::size_t width = matrix ? 4 : 3;
    auto bad = [&] { return Error("'" + path.string() + "' line " + std::to_string(line_no) + ": malformed row"); };
    if (f.size() != width) throw bad();
    BundleRow r;
    r.z = f[0];
    const auto a = csv::parse_double(f[1]);
    const auto b = matrix ? csv::parse_double(f[2]) : std::optional<double>(0.0);
    const auto v = csv::parse_double(f[width - 1]);
    if (!a || !b || !v || *a < 1 || (matrix && *b < 1)) throw bad();
    r.i = static_cast<int>(*a);
    r.j = static_cast<int>(*b);
    r.value = *v;
    rows.push_back(r);
  }
  return rows;
}

}  // namespace detail

inline FittedPrior read_prior_bundle(const std::filesystem::path& dir) {
  FittedPrior out;
  for (const auto& r : detail::read_bundle_file(dir / "prior_mean.csv", false)) {
    auto& c = out.classes[r.z];
    if (c.mu1.size() < r.i) c.mu1.conservativeResize(r.i);
    c.mu1(r.i - 1) = r.value;
  }
  for (auto& [z, c] : out.classes) {
    const auto n = c.mu1.size();
    c.sigma1 = Matrix::Zero(n, n);
    c.v = Matrix::Zero(n, n);
  }
  auto fill = [&](const std::filesystem::path& p, Matrix FittedClass::*field) {
    for (const auto& r : detail::read_bundle_file(p, true)) {
      auto it = out.classes.find(r.z);
      if (it == out.classes.end()) throw Error("'" + p.string() + "': class '" + r.z + "' missing from prior_mean.csv");
      auto& m = it->second.*field;
      if (r.i > m.rows() || r.j > m.cols()) throw DimensionError("'" + p.string() + "': index out of range");
      m(r.i - 1, r.j - 1) = r.value;
    }
  };
  fill(dir / "prior_cov.csv", &FittedClass::sigma1);
  fill(dir / "noise_cov.csv", &FittedClass::v);
  return out;
}

}  // namespace impatient
