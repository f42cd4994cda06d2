#pragma once

// Annealed potential families V_k = (1-beta_k) V_0 + beta_k V_K. The base
// potential includes its normalizer (pi_0 is an exact standard normal), the
// final potential is the unnormalized target, so the telescoped weights
// estimate log Z of the target relative to the base.

#include <aft/common.hpp>
#include <aft/rng.hpp>

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

namespace aft {

struct Potential {
  int dim = 0;
  std::function<double(CVecRef)> eval;
  std::function<void(CVecRef, VecRef)> grad;
};

struct AnnealedFamily {
  int dim = 0;
  Potential base;
  Potential target;
  std::function<void(RngStream&, VecRef)> sample_base;
};

inline constexpr double kLog2Pi = 1.8378770664093454836;

// beta_k = k/K for k = 0..K.
inline std::vector<double> linear_schedule(int num_temps) {
  require(num_temps >= 1, "schedule needs at least one temperature step");
  std::vector<double> betas(num_temps + 1);
  for (int k = 0; k <= num_temps; ++k) betas[k] = double(k) / num_temps;
  betas.back() = 1.0;
  return betas;
}

inline void validate_schedule(const std::vector<double>& betas) {
  require(betas.size() >= 2, "schedule must contain beta_0 and beta_K");
  require(betas.front() == 0.0, "schedule must start at beta = 0");
  require(betas.back() == 1.0, "schedule must end at beta = 1");
  for (std::size_t k = 1; k < betas.size(); ++k)
    require(betas[k] >= betas[k - 1], "schedule must be nondecreasing");
}

// V_k and its gradient at a fixed temperature; the bridge object kernels see.
struct TemperedPotential {
  const AnnealedFamily* family = nullptr;
  double beta = 0.0;

  double eval(CVecRef x) const {
    if (beta == 0.0) return family->base.eval(x);
    if (beta == 1.0) return family->target.eval(x);
    return (1.0 - beta) * family->base.eval(x) + beta * family->target.eval(x);
  }

  void grad(CVecRef x, VecRef out) const {
    if (beta == 0.0) {
      family->base.grad(x, out);
      return;
    }
    if (beta == 1.0) {
      family->target.grad(x, out);
      return;
    }
    Vec gt(x.size());
    family->base.grad(x, out);
    family->target.grad(x, gt);
    out = (1.0 - beta) * out + beta * gt;
  }
};

inline double log_gamma(const AnnealedFamily& family, double beta, CVecRef x) {
  return -TemperedPotential{&family, beta}.eval(x);
}

inline void grad_log_gamma(const AnnealedFamily& family, double beta, CVecRef x, VecRef out) {
  TemperedPotential{&family, beta}.grad(x, out);
  out = -out;
}

inline Potential std_normal_potential(int dim) {
  Potential p;
  p.dim = dim;
  p.eval = [dim](CVecRef x) { return 0.5 * x.squaredNorm() + 0.5 * dim * kLog2Pi; };
  p.grad = [](CVecRef x, VecRef out) { out = x; };
  return p;
}

inline void sample_std_normal(RngStream& rng, VecRef out) {
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = rng.normal();
}

// Isotropic Gaussian with scale sigma, left unnormalized so that
// log Z = (d/2) log(2 pi sigma^2).
inline AnnealedFamily make_gaussian_scale(int dim, double sigma) {
  require(dim >= 1, "gaussian_scale: d must be >= 1");
  require(sigma > 0.0, "gaussian_scale: sigma must be positive");
  AnnealedFamily fam;
  fam.dim = dim;
  fam.base = std_normal_potential(dim);
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  fam.target.dim = dim;
  fam.target.eval = [inv2s2](CVecRef x) { return x.squaredNorm() * inv2s2; };
  fam.target.grad = [inv2s2](CVecRef x, VecRef out) { out = (2.0 * inv2s2) * x; };
  fam.sample_base = sample_std_normal;
  return fam;
}

inline constexpr int kFunnelDim = 10;

// Neal's funnel: x0 ~ N(0, 9), x_i | x0 ~ N(0, exp(x0)) for i = 1..9.
// Normalized, so the true log Z is 0.
inline AnnealedFamily make_funnel() {
  constexpr int d = kFunnelDim;
  AnnealedFamily fam;
  fam.dim = d;
  fam.base = std_normal_potential(d);
  const double log18pi = std::log(18.0 * 3.14159265358979323846);
  fam.target.dim = d;
  fam.target.eval = [log18pi](CVecRef x) {
    double rest = x.tail(d - 1).squaredNorm();
    return x[0] * x[0] / 18.0 + 0.5 * log18pi + 0.5 * rest * std::exp(-x[0]) +
           0.5 * (d - 1) * x[0] + 0.5 * (d - 1) * kLog2Pi;
  };
  fam.target.grad = [](CVecRef x, VecRef out) {
    double e = std::exp(-x[0]);
    out[0] = x[0] / 9.0 - 0.5 * x.tail(d - 1).squaredNorm() * e + 0.5 * (d - 1);
    out.tail(d - 1) = e * x.tail(d - 1);
  };
  fam.sample_base = sample_std_normal;
  return fam;
}

struct MixtureComponent {
  double weight = 1.0;
  Vec mean;
  Eigen::Matrix2d cov;
};

// Two-dimensional Gaussian mixture; weights are normalized, so log Z = 0.
inline AnnealedFamily make_mixture2d(std::vector<MixtureComponent> comps) {
  require(!comps.empty(), "mixture2d: at least one component required");
  double wsum = 0.0;
  for (const auto& c : comps) {
    require(c.weight > 0.0, "mixture2d: component weights must be positive");
    require(c.mean.size() == 2, "mixture2d: component means must be 2-dimensional");
    wsum += c.weight;
  }
  struct Prepared {
    double log_w;
    Eigen::Vector2d mean;
    Eigen::Matrix2d prec;
    double log_norm;
  };
  auto prepared = std::make_shared<std::vector<Prepared>>();
  for (const auto& c : comps) {
    Eigen::Matrix2d cov = 0.5 * (c.cov + c.cov.transpose());
    Eigen::LLT<Eigen::Matrix2d> llt(cov);
    require(llt.info() == Eigen::Success, "mixture2d: component covariance must be positive definite");
    Eigen::Matrix2d L = llt.matrixL();
    double logdet = 2.0 * std::log(L(0, 0)) + 2.0 * std::log(L(1, 1));
    prepared->push_back({std::log(c.weight / wsum), c.mean, cov.inverse(),
                         -kLog2Pi - 0.5 * logdet});
  }
  auto log_pdf_terms = [prepared](CVecRef x, Vec& terms) {
    terms.resize(Eigen::Index(prepared->size()));
    for (std::size_t j = 0; j < prepared->size(); ++j) {
      const auto& c = (*prepared)[j];
      Eigen::Vector2d dev = x - c.mean;
      terms[Eigen::Index(j)] = c.log_w + c.log_norm - 0.5 * dev.dot(c.prec * dev);
    }
  };
  AnnealedFamily fam;
  fam.dim = 2;
  fam.base = std_normal_potential(2);
  fam.target.dim = 2;
  fam.target.eval = [log_pdf_terms](CVecRef x) {
    Vec terms;
    log_pdf_terms(x, terms);
    double m = terms.maxCoeff();
    return -(m + std::log((terms.array() - m).exp().sum()));
  };
  fam.target.grad = [prepared, log_pdf_terms](CVecRef x, VecRef out) {
    Vec terms;
    log_pdf_terms(x, terms);
    double m = terms.maxCoeff();
    Vec resp = (terms.array() - m).exp();
    resp /= resp.sum();
    Eigen::Vector2d g = Eigen::Vector2d::Zero();
    for (std::size_t j = 0; j < prepared->size(); ++j) {
      const auto& c = (*prepared)[j];
      g += resp[Eigen::Index(j)] * (c.prec * (x - c.mean));
    }
    out = g;
  };
  fam.sample_base = sample_std_normal;
  return fam;
}

}  // namespace aft
