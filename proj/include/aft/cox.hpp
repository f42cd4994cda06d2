#pragma once

// Log Gaussian Cox process posterior on an M x M lattice (d = M^2 latent
// sites). Cells are indexed row-major; the covariance uses Euclidean distance
// between integer grid indices scaled by M*beta_len, i.e. cell centers on the
// unit square with correlation length beta_len.

#include <aft/common.hpp>
#include <aft/targets.hpp>

#include <Eigen/Cholesky>
#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace aft {

struct CoxModel {
  int grid_m = 0;
  double sigma_sq = 1.91;
  double beta_len = 1.0 / 33.0;
  double mu0 = 0.0;      // constant prior mean, log(126) - sigma_sq
  double cell_area = 0;  // a = 1/M^2
  Mat chol_lower;        // L with L L^T = K
  double log_det_cov = 0;
};

inline CoxModel make_cox_model(int grid_m, double sigma_sq = 1.91, double beta_len = 1.0 / 33.0) {
  require(grid_m >= 1, "cox: grid size M must be >= 1");
  require(sigma_sq > 0.0, "cox: sigma_sq must be positive");
  require(beta_len > 0.0, "cox: beta_len must be positive");
  CoxModel model;
  model.grid_m = grid_m;
  model.sigma_sq = sigma_sq;
  model.beta_len = beta_len;
  model.mu0 = std::log(126.0) - sigma_sq;
  model.cell_area = 1.0 / double(grid_m) / double(grid_m);
  const int d = grid_m * grid_m;
  Mat cov(d, d);
  const double inv_len = 1.0 / (grid_m * beta_len);
  for (int p = 0; p < d; ++p) {
    const double r1 = p / grid_m, c1 = p % grid_m;
    for (int q = 0; q < d; ++q) {
      const double r2 = q / grid_m, c2 = q % grid_m;
      cov(p, q) = sigma_sq * std::exp(-std::hypot(r1 - r2, c1 - c2) * inv_len);
    }
  }
  Eigen::LLT<Mat> llt(cov);
  require(llt.info() == Eigen::Success, "cox: covariance is not positive definite");
  model.chol_lower = llt.matrixL();
  model.log_det_cov = 0.0;
  for (int i = 0; i < d; ++i) model.log_det_cov += 2.0 * std::log(model.chol_lower(i, i));
  return model;
}

// Draws a latent field from the prior and Poisson counts from it.
inline std::vector<long> cox_synthetic_counts(const CoxModel& model, std::uint64_t seed) {
  const int d = model.grid_m * model.grid_m;
  RngStream rng(seed, StreamUse::data, SplitTag::none, 0, 0);
  Vec z(d);
  for (int i = 0; i < d; ++i) z[i] = rng.normal();
  Vec x = model.mu0 + (model.chol_lower * z).array();
  std::vector<long> counts(d);
  for (int i = 0; i < d; ++i) counts[i] = rng.poisson(model.cell_area * std::exp(x[i]));
  return counts;
}

// M^2 nonnegative integers, row-major, comma/whitespace separated, no header.
inline std::vector<long> load_cox_counts_csv(const std::string& path, int grid_m) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cox_counts_csv: cannot open '" + path + "'");
  std::vector<long> counts;
  std::string tok;
  auto consume = [&](const std::string& cell) {
    if (cell.empty()) return;
    std::size_t used = 0;
    long v = 0;
    try {
      v = std::stol(cell, &used);
    } catch (const std::exception&) {
      throw ConfigError("cox_counts_csv: non-integer entry '" + cell + "' in '" + path + "'");
    }
    if (used != cell.size())
      throw ConfigError("cox_counts_csv: non-integer entry '" + cell + "' in '" + path + "'");
    if (v < 0) throw ConfigError("cox_counts_csv: negative count in '" + path + "'");
    counts.push_back(v);
  };
  std::string line;
  while (std::getline(in, line)) {
    std::string cell;
    for (char ch : line) {
      if (ch == ',' || ch == ' ' || ch == '\t' || ch == '\r') {
        consume(cell);
        cell.clear();
      } else {
        cell.push_back(ch);
      }
    }
    consume(cell);
  }
  const std::size_t want = std::size_t(grid_m) * std::size_t(grid_m);
  if (counts.size() != want)
    throw ConfigError("cox_counts_csv: expected " + std::to_string(want) + " entries, got " +
                      std::to_string(counts.size()) + " in '" + path + "'");
  return counts;
}

// Posterior potential -log[N(x; mu, K) * prod_i Poisson(y_i | a exp(x_i))];
// log Z under this family is the log marginal likelihood of the counts.
inline AnnealedFamily make_cox_family(const CoxModel& model, std::vector<long> counts) {
  const int d = model.grid_m * model.grid_m;
  require(int(counts.size()) == d, "cox: counts size must equal M^2");
  auto shared = std::make_shared<CoxModel>(model);
  auto y = std::make_shared<std::vector<long>>(std::move(counts));
  double const_terms = 0.5 * (d * kLog2Pi + model.log_det_cov);
  const double log_a = std::log(model.cell_area);
  for (long yi : *y) {
    require(yi >= 0, "cox: counts must be nonnegative");
    const_terms += std::lgamma(double(yi) + 1.0) - double(yi) * log_a;
  }
  AnnealedFamily fam;
  fam.dim = d;
  fam.base = std_normal_potential(d);
  fam.target.dim = d;
  fam.target.eval = [shared, y, const_terms](CVecRef x) {
    Vec dev = x.array() - shared->mu0;
    Vec z = shared->chol_lower.triangularView<Eigen::Lower>().solve(dev);
    double v = 0.5 * z.squaredNorm() + const_terms;
    const auto& counts = *y;
    for (Eigen::Index i = 0; i < x.size(); ++i)
      v += shared->cell_area * std::exp(x[i]) - double(counts[std::size_t(i)]) * x[i];
    return v;
  };
  fam.target.grad = [shared, y](CVecRef x, VecRef out) {
    Vec dev = x.array() - shared->mu0;
    Vec z = shared->chol_lower.triangularView<Eigen::Lower>().solve(dev);
    out = shared->chol_lower.transpose().triangularView<Eigen::Upper>().solve(z);
    const auto& counts = *y;
    for (Eigen::Index i = 0; i < x.size(); ++i)
      out[i] += shared->cell_area * std::exp(x[i]) - double(counts[std::size_t(i)]);
  };
  fam.sample_base = sample_std_normal;
  return fam;
}

}  // namespace aft
