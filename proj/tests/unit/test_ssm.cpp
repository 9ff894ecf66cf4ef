#include <cmath>
#include <random>
#include <vector>

#include "catch_amalgamated.hpp"
#include "sslalm/errors.hpp"
#include "sslalm/ssm.hpp"
#include "support.hpp"

using namespace sslalm;
using Catch::Approx;
using sslalm::testing::max_abs_diff;
using sslalm::testing::random_vector;

namespace {

ssm::SsmParams scalar_ssm(double a, double b, double delta) {
  ssm::SsmParams p;
  p.A = Eigen::MatrixXd::Constant(1, 1, a);
  p.B = Eigen::VectorXd::Constant(1, b);
  p.C = Eigen::RowVectorXd::Constant(1, 1.0);
  p.delta = delta;
  return p;
}

ssm::DiscreteSsm scalar_discrete(double a_bar, double b_bar, double c) {
  return {Eigen::MatrixXd::Constant(1, 1, a_bar), Eigen::VectorXd::Constant(1, b_bar),
          Eigen::RowVectorXd::Constant(1, c)};
}

// Integrates h' = A h + B x over one step with x held at 1 from h = 0
// (classic RK4). The result is B̄ for a zero-order hold.
Eigen::VectorXd integrate_hold(const ssm::SsmParams& p, int steps) {
  const double dt = p.delta / steps;
  Eigen::VectorXd h = Eigen::VectorXd::Zero(p.B.size());
  auto f = [&](const Eigen::VectorXd& s) -> Eigen::VectorXd { return p.A * s + p.B; };
  for (int i = 0; i < steps; ++i) {
    const Eigen::VectorXd k1 = f(h);
    const Eigen::VectorXd k2 = f(h + 0.5 * dt * k1);
    const Eigen::VectorXd k3 = f(h + 0.5 * dt * k2);
    const Eigen::VectorXd k4 = f(h + dt * k3);
    h += dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return h;
}

ssm::DiscreteSsm random_stable(std::mt19937_64& rng, std::size_t N) {
  ssm::DiscreteSsm d;
  const auto a = random_vector(N * N, rng);
  d.A_bar = Eigen::Map<const Eigen::MatrixXd>(a.data(), N, N);
  const double radius = d.A_bar.eigenvalues().cwiseAbs().maxCoeff();
  d.A_bar *= 0.95 / radius;
  d.B_bar = Eigen::VectorXd::Random(N);
  d.C = Eigen::RowVectorXd::Random(N);
  return d;
}

}  // namespace

TEST_CASE("zoh of a = -1 over ln 2 halves the state") {
  const auto d = ssm::discretize_zoh(scalar_ssm(-1.0, 1.0, std::log(2.0)));
  CHECK(d.A_bar(0, 0) == Approx(0.5).epsilon(1e-14));
  CHECK(d.B_bar(0) == Approx(0.5).epsilon(1e-14));
  const Eigen::VectorXd ode = integrate_hold(scalar_ssm(-1.0, 1.0, std::log(2.0)), 1000);
  CHECK(ode(0) == Approx(0.5).epsilon(1e-12));
}

TEST_CASE("zoh limit branch for a zero system matrix") {
  const auto d = ssm::discretize_zoh(scalar_ssm(0.0, 1.0, 0.1));
  CHECK(d.A_bar(0, 0) == 1.0);
  CHECK(d.B_bar(0) == Approx(0.1).epsilon(1e-15));
}

TEST_CASE("zoh of a diagonal matrix exponentiates elementwise") {
  ssm::SsmParams p;
  p.A = Eigen::Vector2d(-1.0, -2.0).asDiagonal();
  p.B = Eigen::Vector2d(1.0, 1.0);
  p.C = Eigen::RowVector2d(1.0, 1.0);
  p.delta = 1.0;
  const auto d = ssm::discretize_zoh(p);
  CHECK(d.A_bar(0, 0) == Approx(std::exp(-1.0)).epsilon(1e-15));
  CHECK(d.A_bar(1, 1) == Approx(std::exp(-2.0)).epsilon(1e-15));
  CHECK(d.A_bar(0, 1) == 0.0);
  CHECK(d.A_bar(1, 0) == 0.0);
  const Eigen::VectorXd ode = integrate_hold(p, 2000);
  CHECK(max_abs_diff(std::span(d.B_bar.data(), 2), std::span(ode.data(), 2)) < 1e-12);
}

TEST_CASE("zoh of a dense stable matrix agrees with ODE integration") {
  ssm::SsmParams p;
  p.A.resize(3, 3);
  p.A << -1.0, 0.5, 0.0, -0.3, -2.0, 0.4, 0.1, 0.0, -0.7;
  p.B = Eigen::Vector3d(1.0, -0.5, 0.25);
  p.C = Eigen::RowVector3d(1.0, 1.0, 1.0);
  p.delta = 0.7;
  const auto d = ssm::discretize_zoh(p);
  const Eigen::VectorXd ode = integrate_hold(p, 4000);
  CHECK((d.B_bar - ode).cwiseAbs().maxCoeff() < 1e-11);
}

TEST_CASE("zoh rejects bad inputs") {
  CHECK_THROWS_AS(ssm::discretize_zoh(scalar_ssm(-1.0, 1.0, 0.0)), ContractError);
  CHECK_THROWS_AS(ssm::discretize_zoh(scalar_ssm(0.5, 1.0, 1.0)), ContractError);
  ssm::SsmParams p;
  p.A.resize(2, 2);
  p.A << 0.0, 1.0, 0.0, 0.0;  // nilpotent: singular, not diagonal, norm 1
  p.B = Eigen::Vector2d(1.0, 1.0);
  p.C = Eigen::RowVector2d(1.0, 0.0);
  p.delta = 1.0;
  try {
    ssm::discretize_zoh(p);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("singular") != std::string::npos);
  }
}

TEST_CASE("stable diagonal systems give contracting transitions for any step up to 10") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    ssm::SsmParams p;
    const auto a = random_vector(4, rng, -50.0, -1e-6);
    p.A = Eigen::Map<const Eigen::Vector4d>(a.data()).asDiagonal();
    p.B = Eigen::Vector4d::Ones();
    p.C = Eigen::RowVector4d::Ones();
    p.delta = std::uniform_real_distribution<double>(1e-9, 10.0)(rng);
    const auto d = ssm::discretize_zoh(p);
    CHECK(d.A_bar.cwiseAbs().maxCoeff() <= 1.0);
  }
}

TEST_CASE("recurrent scan unrolls by hand") {
  const auto d = scalar_discrete(0.5, 0.5, 1.0);
  const std::vector<double> x{1, 0, 0};
  const auto r = ssm::recurrent_scan(d, x);
  CHECK(r.y == std::vector<double>{0.5, 0.25, 0.125});

  const std::vector<double> zeros(5, 0.0);
  for (double v : ssm::recurrent_scan(d, zeros).y) CHECK(v == 0.0);
}

TEST_CASE("recurrent scan resumes from a carried state") {
  std::mt19937_64 rng(7);
  const auto d = random_stable(rng, 4);
  const auto x = random_vector(20, rng);
  const auto whole = ssm::recurrent_scan(d, x);
  const auto first = ssm::recurrent_scan(d, std::span(x).first(9));
  const auto second = ssm::recurrent_scan(d, std::span(x).subspan(9), first.h_last);
  std::vector<double> joined = first.y;
  joined.insert(joined.end(), second.y.begin(), second.y.end());
  CHECK(joined == whole.y);
  CHECK(second.h_last == whole.h_last);
  CHECK_THROWS_AS(ssm::recurrent_scan(d, std::vector<double>{}), ContractError);
}

TEST_CASE("conv kernel examples") {
  CHECK(ssm::conv_kernel(scalar_discrete(0.5, 0.5, 1.0), 3) == std::vector<double>{0.5, 0.25, 0.125});
  CHECK(ssm::conv_kernel(scalar_discrete(1.0, 0.3, 2.0), 6) == std::vector<double>(6, 0.6));
  std::mt19937_64 rng(8);
  const auto d = random_stable(rng, 3);
  const auto k1 = ssm::conv_kernel(d, 1);
  REQUIRE(k1.size() == 1);
  CHECK(k1[0] == Approx((d.C * d.B_bar)(0)).epsilon(1e-15));
  CHECK_THROWS_AS(ssm::conv_kernel(d, 0), ContractError);
}

TEST_CASE("conv apply examples") {
  const std::vector<double> x{0.3, -1.0, 2.0, 0.5};
  CHECK(ssm::conv_apply(std::vector<double>{1.0}, x) == x);
  const std::vector<double> k{0.5, 0.25, 0.125};
  CHECK(ssm::conv_apply(k, std::vector<double>{1, 0, 0}) == k);
  const std::vector<double> impulse{0, 0, 1, 0, 0};
  CHECK(ssm::conv_apply(k, impulse) == std::vector<double>{0, 0, 0.5, 0.25, 0.125});
}

TEST_CASE("convolutional and recurrent views agree") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t N = 1 + rng() % 6, L = 1 + rng() % 64;
    const auto d = random_stable(rng, N);
    const auto x = random_vector(L, rng);
    const auto conv = ssm::conv_apply(ssm::conv_kernel(d, L), x);
    const auto rec = ssm::recurrent_scan(d, x).y;
    CHECK(max_abs_diff(conv, rec) < 1e-9);
  }
}

TEST_CASE("selective scan with constant parameters reduces to an LTI system") {
  std::mt19937_64 rng(10);
  const std::size_t L = 12, N = 3, D = 2;
  ssm::SelectiveParams p;
  p.L = L;
  p.N = N;
  p.A = {-0.5, -1.0, -2.0};
  const auto b = random_vector(N, rng), c = random_vector(N, rng);
  const double delta = 0.3;
  for (std::size_t t = 0; t < L; ++t) {
    p.delta.push_back(delta);
    p.B.insert(p.B.end(), b.begin(), b.end());
    p.C.insert(p.C.end(), c.begin(), c.end());
  }
  const auto x = random_vector(L * D, rng);
  const auto y = ssm::selective_scan(p, x, D);

  ssm::DiscreteSsm lti;
  lti.A_bar = Eigen::MatrixXd::Zero(N, N);
  lti.B_bar.resize(N);
  lti.C.resize(N);
  for (std::size_t n = 0; n < N; ++n) {
    lti.A_bar(n, n) = std::exp(delta * p.A[n]);
    lti.B_bar(n) = delta * b[n];
    lti.C(n) = c[n];
  }
  for (std::size_t ch = 0; ch < D; ++ch) {
    std::vector<double> xc(L), yc(L);
    for (std::size_t t = 0; t < L; ++t) {
      xc[t] = x[t * D + ch];
      yc[t] = y[t * D + ch];
    }
    CHECK(max_abs_diff(ssm::recurrent_scan(lti, xc).y, yc) < 1e-13);
  }
}

TEST_CASE("selective scan with vanishing steps passes only the skip path") {
  std::mt19937_64 rng(11);
  const std::size_t L = 6, N = 2, D = 3;
  ssm::SelectiveParams p;
  p.L = L;
  p.N = N;
  p.A = {-1.0, -3.0};
  p.delta.assign(L, 1e-300);
  p.B = random_vector(L * N, rng);
  p.C = random_vector(L * N, rng);
  const auto x = random_vector(L * D, rng);
  const std::vector<double> skip{0.5, -1.0, 2.0};
  const auto y = ssm::selective_scan(p, x, D, skip);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t ch = 0; ch < D; ++ch) {
      CHECK(y[t * D + ch] == Approx(skip[ch] * x[t * D + ch]).margin(1e-290));
    }
  }
}

TEST_CASE("selective scan of a single step") {
  ssm::SelectiveParams p;
  p.L = 1;
  p.N = 2;
  p.A = {-1.0, -2.0};
  p.delta = {0.5};
  p.B = {1.0, -2.0};
  p.C = {0.25, 0.5};
  const std::vector<double> x{2.0}, skip{0.1};
  const auto y = ssm::selective_scan(p, x, 1, skip);
  const double expected = (0.25 * 0.5 * 1.0 + 0.5 * 0.5 * -2.0) * 2.0 + 0.1 * 2.0;
  CHECK(y[0] == Approx(expected).epsilon(1e-15));
}

TEST_CASE("selective scan rejects a non-positive step") {
  ssm::SelectiveParams p;
  p.L = 2;
  p.N = 1;
  p.A = {-1.0};
  p.delta = {0.5, 0.0};
  p.B = {1.0, 1.0};
  p.C = {1.0, 1.0};
  CHECK_THROWS_AS(ssm::selective_scan(p, std::vector<double>{1.0, 1.0}, 1), ContractError);
}

TEST_CASE("chunked selective scan agrees with the reference") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t L = 1 + rng() % 128, N = 1 + rng() % 4, D = 1 + rng() % 5;
    ssm::SelectiveParams p;
    p.L = L;
    p.N = N;
    p.A = random_vector(N, rng, -2.0, -0.1);
    p.delta = random_vector(L, rng, 0.01, 1.0);
    p.B = random_vector(L * N, rng);
    p.C = random_vector(L * N, rng);
    const auto x = random_vector(L * D, rng);
    const auto skip = random_vector(D, rng);
    const auto ref = ssm::selective_scan(p, x, D, skip);
    for (std::size_t chunk : {1u, 4u, 16u}) {
      CHECK(max_abs_diff(ref, ssm::selective_scan_chunked(p, x, D, chunk, skip)) < 1e-9);
    }
  }
}
