#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <aft/flows.hpp>
#include <aft/targets.hpp>

#include <Eigen/LU>

#include "test_util.hpp"

using namespace aft;

namespace {

Mat random_points(RngStream& rng, Eigen::Index n, int d, double scale = 1.5) {
  Mat x(n, d);
  for (Eigen::Index r = 0; r < n; ++r)
    for (int j = 0; j < d; ++j) x(r, j) = scale * rng.normal();
  return x;
}

FlowParams random_params(FlowFamily family, int d, RngStream& rng, int hidden_per_dim = 30,
                         double raw_scale = 0.5) {
  FlowParams p = init_flow_params(family, d, rng, hidden_per_dim);
  for (Eigen::Index i = 0; i < p.theta.size(); ++i) p.theta[i] += raw_scale * rng.normal();
  if (family == FlowFamily::affine_iaf) {
    // shrink the output layer until every test-range scale stays positive
    const Eigen::Index nout = 2 * Eigen::Index(d) * iaf_hidden_width(d, hidden_per_dim) +
                              2 * Eigen::Index(d);
    Mat probe(64, d);
    for (Eigen::Index r = 0; r < probe.rows(); ++r)
      for (int j = 0; j < d; ++j) probe(r, j) = 3.0 * rng.normal();
    for (;;) {
      FlowEval flow(p);
      Mat a1, a2, a3, o;
      flow.iaf_net_batch(probe, a1, a2, a3, o);
      if (o.rightCols(d).cwiseAbs().maxCoeff() < 0.9) break;
      p.theta.tail(nout) *= 0.5;
    }
  }
  return p;
}

double batch_loss(const FlowParams& p, const Mat& x, const Vec& w, const TemperedPotential& cur,
                  const TemperedPotential* prev) {
  FlowEval flow(p);
  Vec h = flow_loss_terms(flow, x, cur, prev);
  return w.dot(h);
}

}  // namespace

TEST_CASE("every family is the identity map at initialization") {
  RngStream rng(99, StreamUse::flow_init, SplitTag::none, 0, 0);
  for (FlowFamily fam : {FlowFamily::identity, FlowFamily::diag_affine, FlowFamily::rq_spline_mf,
                         FlowFamily::affine_iaf}) {
    const int d = 6;
    FlowParams p = init_flow_params(fam, d, rng);
    FlowEval flow(p);
    Mat x = random_points(rng, 40, d, 3.0);
    Mat y;
    Vec ld;
    flow.forward_batch(x, y, ld);
    CHECK((y - x).cwiseAbs().maxCoeff() == 0.0);
    CHECK(ld.cwiseAbs().maxCoeff() == 0.0);
    for (Eigen::Index r = 0; r < 5; ++r) {
      FlowOutput out = flow.forward(x.row(r).transpose());
      CHECK((out.y - x.row(r).transpose()).cwiseAbs().maxCoeff() == 0.0);
      CHECK(out.log_det == 0.0);
    }
  }
}

TEST_CASE("diag_affine matches hand-computed values") {
  FlowParams p;
  p.family = FlowFamily::diag_affine;
  p.dim = 1;
  p.theta = Vec(2);
  p.theta << std::log(2.0), 1.0;
  FlowEval flow(p);
  Vec x(1);
  x << 3.0;
  FlowOutput out = flow.forward(x);
  CHECK(out.y[0] == doctest::Approx(7.0).epsilon(1e-14));
  CHECK(out.log_det == doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("batch evaluation agrees with per-particle evaluation") {
  RngStream rng(7, StreamUse::flow_init, SplitTag::none, 0, 0);
  for (FlowFamily fam : {FlowFamily::identity, FlowFamily::diag_affine, FlowFamily::rq_spline_mf,
                         FlowFamily::affine_iaf}) {
    const int d = 4;
    FlowParams p = random_params(fam, d, rng, 5);
    FlowEval flow(p);
    Mat x = random_points(rng, 23, d, 2.5);
    Mat y;
    Vec ld;
    flow.forward_batch(x, y, ld);
    // identity and the spline run the same scalar code in both paths; the
    // affine families differ by rounding order only
    const bool exact =
        fam == FlowFamily::identity || fam == FlowFamily::rq_spline_mf;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      FlowOutput out = flow.forward(x.row(r).transpose());
      double ydiff = (out.y - y.row(r).transpose()).cwiseAbs().maxCoeff();
      double ldiff = std::abs(out.log_det - ld[r]);
      if (exact) {
        CHECK(ydiff == 0.0);
        CHECK(ldiff == 0.0);
      } else {
        CHECK(ydiff < 1e-12);
        CHECK(ldiff < 1e-12);
      }
    }
  }
}

TEST_CASE("spline is monotone, fixes the boundary, and is identity outside") {
  RngStream rng(11, StreamUse::flow_init, SplitTag::none, 0, 0);
  for (int rep = 0; rep < 5; ++rep) {
    FlowParams p = random_params(FlowFamily::rq_spline_mf, 1, rng, 30, 1.0);
    FlowEval flow(p);
    double prev_y = -1e300;
    for (int i = 0; i <= 4000; ++i) {
      Vec x(1);
      x << -kSplineRange + 2.0 * kSplineRange * i / 4000.0;
      FlowOutput out = flow.forward(x);
      CHECK(out.y[0] > prev_y);
      CHECK(std::isfinite(out.log_det));
      prev_y = out.y[0];
    }
    for (double edge : {-kSplineRange, kSplineRange}) {
      Vec x(1);
      x << edge;
      CHECK(flow.forward(x).y[0] == doctest::Approx(edge).epsilon(1e-12));
    }
    for (double outside : {-5.3, 4.0001, 17.0, -100.0}) {
      Vec x(1);
      x << outside;
      FlowOutput out = flow.forward(x);
      CHECK(out.y[0] == outside);
      CHECK(out.log_det == 0.0);
    }
  }
}

TEST_CASE("log_det matches the numerically evaluated Jacobian determinant") {
  RngStream rng(13, StreamUse::flow_init, SplitTag::none, 0, 0);
  for (FlowFamily fam :
       {FlowFamily::diag_affine, FlowFamily::rq_spline_mf, FlowFamily::affine_iaf}) {
    const int d = 5;
    for (int rep = 0; rep < 8; ++rep) {
      FlowParams p = random_params(fam, d, rng, 4);
      FlowEval flow(p);
      Vec x(d);
      for (int j = 0; j < d; ++j) x[j] = 2.0 * rng.normal();
      Mat jac(d, d);
      const double h = 1e-6;
      for (int j = 0; j < d; ++j) {
        Vec xp = x, xm = x;
        double step = h * std::max(1.0, std::abs(x[j]));
        xp[j] += step;
        xm[j] -= step;
        jac.col(j) = (flow.forward(xp).y - flow.forward(xm).y) / (2.0 * step);
      }
      double want = std::log(std::abs(jac.fullPivLu().determinant()));
      CHECK(flow.forward(x).log_det == doctest::Approx(want).epsilon(1e-5));
    }
  }
}

TEST_CASE("autoregressive flow outputs ignore later coordinates") {
  RngStream rng(17, StreamUse::flow_init, SplitTag::none, 0, 0);
  const int d = 5;
  FlowParams p = random_params(FlowFamily::affine_iaf, d, rng, 6);
  FlowEval flow(p);
  Vec x(d);
  for (int j = 0; j < d; ++j) x[j] = rng.normal();
  FlowOutput base = flow.forward(x);
  for (int j = 1; j < d; ++j) {
    Vec xp = x;
    xp[j] += 0.37;
    FlowOutput out = flow.forward(xp);
    for (int i = 0; i < j; ++i) CHECK(out.y[i] == base.y[i]);
  }
  // first output is an affine reparameterization of x0 alone
  Vec x2 = x;
  x2[0] += 0.5;
  FlowOutput out2 = flow.forward(x2);
  CHECK(out2.y[0] != base.y[0]);
}

TEST_CASE("autoregressive flow rejects a non-positive scale") {
  RngStream rng(1, StreamUse::flow_init, SplitTag::none, 0, 0);
  FlowParams p = init_flow_params(FlowFamily::affine_iaf, 2, rng);
  // output bias for sigma_0 is d entries into the final 2d-entry bias block
  const Eigen::Index bout_off = p.theta.size() - 2 * 2 + 2;
  p.theta[bout_off] = -2.0;
  FlowEval flow(p);
  Vec x = Vec::Zero(2);
  CHECK_THROWS_AS((void)flow.forward(x), std::domain_error);
}

TEST_CASE("malformed flow parameters are rejected") {
  RngStream rng(3, StreamUse::flow_init, SplitTag::none, 0, 0);
  FlowParams p = init_flow_params(FlowFamily::diag_affine, 3, rng);
  p.theta.conservativeResize(5);
  CHECK_THROWS_AS(FlowEval{p}, std::invalid_argument);
  FlowParams q = init_flow_params(FlowFamily::rq_spline_mf, 2, rng);
  q.theta[4] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(FlowEval{q}, std::invalid_argument);
}

TEST_CASE("transport loss terms match a direct computation") {
  RngStream rng(23, StreamUse::flow_init, SplitTag::none, 0, 0);
  auto family = make_gaussian_scale(3, 2.0);
  TemperedPotential cur{&family, 0.8};
  TemperedPotential prev{&family, 0.5};
  FlowParams p = random_params(FlowFamily::diag_affine, 3, rng);
  FlowEval flow(p);
  Mat x = random_points(rng, 10, 3);
  Vec terms = flow_loss_terms(flow, x, cur, &prev);
  Vec terms_nop = flow_loss_terms(flow, x, cur, nullptr);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    FlowOutput out = flow.forward(x.row(r).transpose());
    double want = cur.eval(out.y) - prev.eval(x.row(r).transpose()) - out.log_det;
    CHECK(terms[r] == doctest::Approx(want).epsilon(1e-13));
    CHECK(terms_nop[r] == doctest::Approx(want + prev.eval(x.row(r).transpose())).epsilon(1e-13));
  }
}

TEST_CASE("loss gradients match central finite differences") {
  RngStream rng(29, StreamUse::flow_init, SplitTag::none, 0, 0);
  auto gauss = make_gaussian_scale(2, 2.0);
  std::vector<MixtureComponent> comps(2);
  comps[0].weight = 0.3;
  comps[0].mean = (Vec(2) << -1.0, 0.5).finished();
  comps[0].cov << 1.0, 0.2, 0.2, 0.8;
  comps[1].weight = 0.7;
  comps[1].mean = (Vec(2) << 1.2, -0.4).finished();
  comps[1].cov << 0.7, -0.1, -0.1, 1.1;
  auto mix = make_mixture2d(comps);

  auto check_family = [&](FlowFamily fam, const AnnealedFamily& family, int hidden, int reps,
                          double tol) {
    const int d = family.dim;
    TemperedPotential cur{&family, 0.7};
    TemperedPotential prev{&family, 0.4};
    for (int rep = 0; rep < reps; ++rep) {
      FlowParams p = random_params(fam, d, rng, hidden);
      Mat x = random_points(rng, 6, d);
      Vec w(6);
      for (int i = 0; i < 6; ++i) w[i] = rng.uniform_pos();
      w /= w.sum();
      Vec grad;
      double loss = flow_loss_and_grad(p, x, w, cur, &prev, grad);
      CHECK(loss == doctest::Approx(batch_loss(p, x, w, cur, &prev)).epsilon(1e-11));
      auto f = [&](const Vec& th) {
        FlowParams q = p;
        q.theta = th;
        return batch_loss(q, x, w, cur, &prev);
      };
      Vec fd = testutil::fd_gradient(f, p.theta, 1e-6);
      CHECK(testutil::rel_err(grad, fd) < tol);
    }
  };

  check_family(FlowFamily::diag_affine, gauss, 30, 20, 1e-6);
  check_family(FlowFamily::diag_affine, mix, 30, 10, 1e-6);
  check_family(FlowFamily::rq_spline_mf, gauss, 30, 20, 1e-6);
  check_family(FlowFamily::rq_spline_mf, mix, 10, 10, 1e-6);
  check_family(FlowFamily::affine_iaf, gauss, 4, 10, 1e-6);
  check_family(FlowFamily::affine_iaf, mix, 3, 6, 1e-6);
  // default-width network once; the quadratic FD cost keeps the count low
  check_family(FlowFamily::affine_iaf, gauss, 30, 1, 1e-6);
}

TEST_CASE("gradient of the variational objective drops the base term") {
  RngStream rng(31, StreamUse::flow_init, SplitTag::none, 0, 0);
  auto family = make_gaussian_scale(2, 2.0);
  TemperedPotential cur{&family, 1.0};
  FlowParams p = random_params(FlowFamily::diag_affine, 2, rng);
  Mat x = random_points(rng, 8, 2);
  Vec w = Vec::Constant(8, 1.0 / 8.0);
  Vec grad;
  flow_loss_and_grad(p, x, w, cur, nullptr, grad);
  auto f = [&](const Vec& th) {
    FlowParams q = p;
    q.theta = th;
    return batch_loss(q, x, w, cur, nullptr);
  };
  CHECK(testutil::rel_err(grad, testutil::fd_gradient(f, p.theta, 1e-6)) < 1e-6);
}

TEST_CASE("chunked reduction matches the unchunked loss") {
  RngStream rng(37, StreamUse::flow_init, SplitTag::none, 0, 0);
  auto family = make_gaussian_scale(2, 2.0);
  TemperedPotential cur{&family, 1.0};
  TemperedPotential prev{&family, 0.6};
  FlowParams p = random_params(FlowFamily::affine_iaf, 2, rng, 3);
  const Eigen::Index n = 2050;  // crosses the internal chunk boundary
  Mat x = random_points(rng, n, 2);
  Vec w = Vec::Constant(n, 1.0 / double(n));
  Vec grad;
  double loss = flow_loss_and_grad(p, x, w, cur, &prev, grad);
  CHECK(loss == doctest::Approx(batch_loss(p, x, w, cur, &prev)).epsilon(1e-10));
  CHECK(grad.allFinite());
}
