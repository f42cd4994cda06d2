#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <aft/sampler.hpp>

#include <cmath>

#include "test_util.hpp"

using namespace aft;

namespace {

RunConfig small_smc() {
  RunConfig cfg;
  cfg.algorithm = Algorithm::smc;
  cfg.target = "gaussian_scale";
  cfg.dim = 2;
  cfg.sigma = 2.0;
  cfg.num_temps = 5;
  cfg.n_test = 64;
  cfg.kernel.kind = KernelKind::hmc;
  cfg.kernel.step = {{0.0}, {0.3}};
  cfg.kernel.num_outer = 3;
  cfg.kernel.num_leapfrog = 5;
  cfg.seed = 99;
  return cfg;
}

void check_test_split_identical(const RepeatReport& a, const RepeatReport& b) {
  const int s = int(SplitTag::test);
  CHECK(a.log_z[s] == b.log_z[s]);
  REQUIRE(a.temps.size() == b.temps.size());
  for (std::size_t k = 0; k < a.temps.size(); ++k) {
    const SplitDiag& da = a.temps[k].splits[s];
    const SplitDiag& db = b.temps[k].splits[s];
    CHECK(da.log_z_after == db.log_z_after);
    CHECK(da.ess_fraction == db.ess_fraction);
    CHECK(da.resampled == db.resampled);
    const bool both_nan = std::isnan(da.accept_rate) && std::isnan(db.accept_rate);
    CHECK((both_nan || da.accept_rate == db.accept_rate));
  }
}

}  // namespace

TEST_CASE("one temperature with equal base and target yields exactly zero on every split") {
  RunConfig cfg;
  cfg.algorithm = Algorithm::aft;
  cfg.target = "std_normal";
  cfg.dim = 2;
  cfg.num_temps = 1;
  cfg.flow = FlowFamily::identity;
  cfg.opt.iterations = 5;
  cfg.n_train = cfg.n_val = cfg.n_test = 32;
  cfg.kernel.kind = KernelKind::rwmh;
  cfg.kernel.step = {{0.0}, {0.5}};
  cfg.seed = 7;

  RepeatReport rep = run_single(cfg, 0);
  CHECK(!rep.aborted);
  CHECK(rep.log_z[int(SplitTag::train)] == 0.0);
  CHECK(rep.log_z[int(SplitTag::val)] == 0.0);
  CHECK(rep.log_z[int(SplitTag::test)] == 0.0);
  REQUIRE(rep.temps.size() == 1);
  for (int s = 0; s < 3; ++s) {
    CHECK(rep.temps[0].splits[s].ess_fraction == doctest::Approx(1.0));
    CHECK(!rep.temps[0].splits[s].resampled);
  }
}

TEST_CASE("equal base and target stays near zero through intermediate temperatures") {
  RunConfig cfg;
  cfg.algorithm = Algorithm::smc;
  cfg.target = "std_normal";
  cfg.dim = 3;
  cfg.num_temps = 4;
  cfg.n_test = 64;
  cfg.kernel.kind = KernelKind::rwmh;
  cfg.kernel.step = {{0.0}, {0.8}};
  cfg.seed = 3;

  RepeatReport rep = run_single(cfg, 0);
  CHECK(!rep.aborted);
  CHECK(std::abs(rep.log_z[int(SplitTag::test)]) < 1e-12);
}

TEST_CASE("smc baseline matches the untrained three-split run bit for bit on the test split") {
  RunConfig smc = small_smc();
  RunConfig aft = smc;
  aft.algorithm = Algorithm::aft;
  aft.flow = FlowFamily::diag_affine;
  aft.opt.iterations = 0;
  aft.n_train = 32;
  aft.n_val = 32;

  SUBCASE("gaussian with hmc") {}
  SUBCASE("funnel with slice") {
    for (RunConfig* c : {&smc, &aft}) {
      c->target = "funnel";
      c->kernel.kind = KernelKind::slice;
      c->kernel.step = {{0.0}, {1.0}};
      c->kernel.num_outer = 2;
    }
  }

  for (int repeat : {0, 1}) {
    RepeatReport a = run_single(smc, repeat);
    RepeatReport b = run_single(aft, repeat);
    REQUIRE(!a.aborted);
    REQUIRE(!b.aborted);
    check_test_split_identical(a, b);
    CHECK(std::isnan(a.log_z[int(SplitTag::train)]));
    CHECK(std::isfinite(b.log_z[int(SplitTag::train)]));
  }
}

TEST_CASE("smc ignores flow and optimizer settings") {
  RunConfig plain = small_smc();
  RunConfig decorated = plain;
  decorated.flow = FlowFamily::affine_iaf;
  decorated.opt.iterations = 500;
  decorated.opt.learning_rate = 0.1;
  check_test_split_identical(run_single(plain, 0), run_single(decorated, 0));
}

TEST_CASE("test split trajectory is unaffected by the train and val splits") {
  RunConfig base = small_smc();
  base.algorithm = Algorithm::aft;
  base.opt.iterations = 0;
  base.flow = FlowFamily::diag_affine;
  base.n_train = 32;
  base.n_val = 32;

  RunConfig wider = base;
  wider.n_train = 48;
  wider.n_val = 16;
  wider.a_train = 0.9;

  check_test_split_identical(run_single(base, 0), run_single(wider, 0));
}

TEST_CASE("repeats are deterministic and distinct") {
  RunConfig cfg = small_smc();
  RepeatReport a = run_single(cfg, 0);
  RepeatReport b = run_single(cfg, 0);
  RepeatReport c = run_single(cfg, 1);

  CHECK(a.derived_seed == derive_repeat_seed(cfg.seed, 0));
  CHECK(c.derived_seed == derive_repeat_seed(cfg.seed, 1));
  check_test_split_identical(a, b);
  CHECK(a.log_z[int(SplitTag::test)] != c.log_z[int(SplitTag::test)]);
}

TEST_CASE("trained scale flow reaches high ess and a sane estimate") {
  RunConfig cfg;
  cfg.algorithm = Algorithm::aft;
  cfg.target = "gaussian_scale";
  cfg.dim = 2;
  cfg.sigma = 2.0;
  cfg.num_temps = 3;
  cfg.flow = FlowFamily::diag_affine;
  cfg.opt.iterations = 300;
  cfg.opt.learning_rate = 1e-2;
  cfg.n_train = cfg.n_val = cfg.n_test = 256;
  cfg.kernel.kind = KernelKind::hmc;
  cfg.kernel.step = {{0.0}, {0.4}};
  cfg.kernel.num_outer = 3;
  cfg.kernel.num_leapfrog = 5;
  cfg.seed = 11;

  RepeatReport rep = run_single(cfg, 0);
  REQUIRE(!rep.aborted);
  CHECK(std::abs(rep.log_z[int(SplitTag::test)] - std::log(8.0 * M_PI)) < 0.3);
  for (const TemperatureDiag& td : rep.temps) {
    CHECK(td.splits[int(SplitTag::test)].ess_fraction > 0.9);
    CHECK(std::isfinite(td.val_loss));
  }
}

TEST_CASE("low threshold forces resampling on a hard first jump") {
  RunConfig cfg = small_smc();
  cfg.sigma = 4.0;
  cfg.num_temps = 1;
  cfg.a_test = 0.99;
  RepeatReport rep = run_single(cfg, 0);
  REQUIRE(!rep.aborted);
  CHECK(rep.temps[0].splits[int(SplitTag::test)].resampled);
}

TEST_CASE("weight collapse aborts the repeat with a diagnostic") {
  RunConfig cfg = small_smc();
  cfg.sigma = 1e-300;
  cfg.num_temps = 1;
  RepeatReport rep = run_single(cfg, 0);
  CHECK(rep.aborted);
  CHECK(rep.abort_reason.find("collapsed") != std::string::npos);
}

TEST_CASE("variational run with identity flow on the self-target is exactly zero") {
  RunConfig cfg;
  cfg.algorithm = Algorithm::vi;
  cfg.target = "std_normal";
  cfg.dim = 2;
  cfg.flow = FlowFamily::identity;
  cfg.opt.iterations = 0;
  cfg.n_test = 128;
  cfg.seed = 21;
  RepeatReport rep = run_single(cfg, 0);
  CHECK(!rep.aborted);
  CHECK(rep.log_z[int(SplitTag::test)] == 0.0);
  CHECK(rep.temps.empty());
}

TEST_CASE("variational scale flow recovers the gaussian normalizer") {
  RunConfig cfg;
  cfg.algorithm = Algorithm::vi;
  cfg.target = "gaussian_scale";
  cfg.dim = 2;
  cfg.sigma = 2.0;
  cfg.flow = FlowFamily::diag_affine;
  cfg.opt.iterations = 400;
  cfg.opt.learning_rate = 1e-2;
  cfg.n_test = 512;
  cfg.seed = 5;
  RepeatReport rep = run_single(cfg, 0);
  REQUIRE(!rep.aborted);
  CHECK(std::isfinite(rep.vi_final_loss));
  CHECK(std::abs(rep.log_z[int(SplitTag::test)] - std::log(8.0 * M_PI)) < 0.05);
}

TEST_CASE("config validation rejects bad settings") {
  RunConfig cfg = small_smc();
  CHECK_NOTHROW(validate_run_config(cfg));

  RunConfig bad = cfg;
  bad.a_test = 1.0;
  CHECK_THROWS_AS(validate_run_config(bad), std::invalid_argument);

  bad = cfg;
  bad.a_test = 1.0 / double(bad.n_test) / 2.0;
  CHECK_THROWS_AS(validate_run_config(bad), std::invalid_argument);

  bad = cfg;
  bad.n_test = 1;
  CHECK_THROWS_AS(validate_run_config(bad), std::invalid_argument);

  bad = cfg;
  bad.target = "unknown";
  CHECK_THROWS_AS(validate_run_config(bad), ConfigError);

  bad = cfg;
  bad.algorithm = Algorithm::vi;
  bad.opt.iterations = 70000;
  CHECK_THROWS_AS(validate_run_config(bad), std::invalid_argument);

  bad = cfg;
  bad.schedule = {0.0, 0.5};
  CHECK_THROWS_AS(validate_run_config(bad), std::invalid_argument);

  bad = cfg;
  bad.schedule = {0.0, 0.2, 0.5, 0.4, 0.8, 1.0};
  CHECK_THROWS_AS(validate_run_config(bad), std::invalid_argument);

  RunConfig custom = cfg;
  custom.schedule = {0.0, 0.1, 0.3, 0.6, 0.8, 1.0};
  CHECK_NOTHROW(validate_run_config(custom));
  RepeatReport rep = run_single(custom, 0);
  CHECK(rep.temps[2].beta == 0.6);
}

TEST_CASE("per-temperature diagnostics carry the annealing exponent") {
  RunConfig cfg = small_smc();
  RepeatReport rep = run_single(cfg, 0);
  REQUIRE(rep.temps.size() == 5);
  CHECK(rep.temps[0].beta == doctest::Approx(0.2));
  CHECK(rep.temps[4].beta == 1.0);
  CHECK(rep.wall_seconds > 0.0);
}
