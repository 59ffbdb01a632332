#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mimofb/capacity.hpp"
#include "mimofb/codebook.hpp"
#include "mimofb/lloyd.hpp"
#include "support.hpp"

using namespace mimofb;

namespace {

double eig_oracle_uniform(const CMatrix& h, double rho, double sigma_n2) {
  const CMatrix g = h * h.adjoint();
  Eigen::SelfAdjointEigenSolver<CMatrix> es(g);
  const int n_tx = static_cast<int>(h.cols());
  double bits = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
    bits += std::log2(1.0 + es.eigenvalues()(i) * rho / (n_tx * sigma_n2));
  return bits;
}

/// Maximizes sum log2(1 + g_i p_i / s2) over p1 + p2 = rho by a grid and a
/// golden-section refinement.
double grid_best_p1(double g1, double g2, double rho, double s2) {
  auto f = [&](double p) { return std::log2(1 + g1 * p / s2) + std::log2(1 + g2 * (rho - p) / s2); };
  double best = 0.0;
  double best_val = f(0.0);
  const int n = 20000;
  for (int i = 1; i <= n; ++i) {
    const double p = rho * i / n;
    if (f(p) > best_val) {
      best_val = f(p);
      best = p;
    }
  }
  double a = std::max(0.0, best - rho / n);
  double b = std::min(rho, best + rho / n);
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int it = 0; it < 200; ++it) {
    const double c = b - phi * (b - a);
    const double d = a + phi * (b - a);
    if (f(c) > f(d)) b = d;
    else a = c;
  }
  return 0.5 * (a + b);
}

}  // namespace

TEST_CASE("spectral efficiency reference values") {
  CHECK(spectral_efficiency(CMatrix::Zero(2, 4), CMatrix::Identity(4, 4), 1.0) == 0.0);
  CHECK(spectral_efficiency(CMatrix::Identity(2, 2), CMatrix::Identity(2, 2), 1.0) ==
        doctest::Approx(2.0).epsilon(1e-14));
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    const CMatrix h = testing::random_complex(2, 4, rng);
    const double rho = 3.0;
    const double s2 = 0.7;
    const CMatrix q = CMatrix::Identity(4, 4) * (rho / 4.0);
    CHECK(spectral_efficiency(h, q, s2) == doctest::Approx(eig_oracle_uniform(h, rho, s2)).epsilon(1e-12));
  }
}

TEST_CASE("non-PSD covariances are rejected") {
  CMatrix q = CMatrix::Identity(2, 2);
  q(1, 1) = -0.5;
  CHECK_THROWS_AS(spectral_efficiency(CMatrix::Identity(2, 2), q, 1.0), DomainError);
  CHECK_THROWS_AS(check_covariance(q, 2.0), DomainError);
  CHECK_THROWS_AS(check_covariance(CMatrix::Identity(2, 2) * 2.0, 2.0), DomainError);
}

TEST_CASE("water-filling special cases") {
  // One nonzero singular value: all power on it.
  CMatrix h = CMatrix::Zero(2, 4);
  h(0, 1) = Complex(0.0, 3.0);
  const auto one = waterfilling_solution(h, 2.0, 0.1);
  CHECK(one.powers(0) == doctest::Approx(2.0));
  CHECK(std::abs(one.powers(1)) < 1e-12);
  CHECK(std::abs(one.q(1, 1) - Complex(2.0, 0.0)) < 1e-12);

  // Equal singular values split evenly.
  CMatrix h2 = CMatrix::Zero(2, 4);
  h2(0, 0) = 1.0;
  h2(1, 2) = 1.0;
  const auto two = waterfilling_solution(h2, 2.0, 0.3);
  CHECK(two.powers(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(two.powers(1) == doctest::Approx(1.0).epsilon(1e-12));

  // s^2 = (1, 0.1), rho = 1, sigma^2 = 1 against a grid search.
  CMatrix h3 = CMatrix::Zero(2, 4);
  h3(0, 0) = 1.0;
  h3(1, 1) = std::sqrt(0.1);
  const auto wf = waterfilling_solution(h3, 1.0, 1.0);
  CHECK(std::abs(wf.powers(0) - grid_best_p1(1.0, 0.1, 1.0, 1.0)) < 1e-6);
  CHECK(std::abs(wf.powers.sum() - 1.0) < 1e-12);

  CHECK_THROWS_AS(waterfilling_cov(CMatrix::Zero(2, 4), 1.0, 1.0), DegenerateChannelError);
}

TEST_CASE("water-filling grid oracle on random gain pairs") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.01, 3.0);
  for (int t = 0; t < 25; ++t) {
    const double g1 = u(rng), g2 = u(rng), rho = u(rng), s2 = u(rng);
    CMatrix h = CMatrix::Zero(2, 3);
    h(0, 0) = std::sqrt(g1);
    h(1, 2) = std::sqrt(g2);
    const auto wf = waterfilling_solution(h, rho, s2);
    // gains are sorted descending; map back to the channel's own streams
    const double p_first = g1 >= g2 ? wf.powers(0) : wf.powers(1);
    CHECK(std::abs(p_first - grid_best_p1(g1, g2, rho, s2)) < 1e-6);
  }
}

TEST_CASE("water-filling exact power and KKT conditions") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 100; ++t) {
    const CMatrix h = testing::random_complex(2, 8, rng, 0.5);
    const double rho = 0.5 + t * 0.05;
    const double s2 = 0.2;
    const auto wf = waterfilling_solution(h, rho, s2);
    CHECK(std::abs(wf.q.trace().real() - rho) <= 1e-9 * rho);
    for (Eigen::Index i = 0; i < wf.gains.size(); ++i) {
      const double floor = s2 / wf.gains(i);
      if (wf.powers(i) > 0.0) CHECK(std::abs(floor + wf.powers(i) - wf.level) <= 1e-8);
      else CHECK(floor >= wf.level - 1e-8);
    }
    Eigen::SelfAdjointEigenSolver<CMatrix> es(wf.q);
    CHECK(es.eigenvalues()(5) < 1e-12);  // rank <= n_rx
  }
}

TEST_CASE("water-filling dominates other covariances") {
  std::mt19937_64 rng(4);
  SystemConfig c;
  c.rho = 1.0;
  c.sigma_n2 = 0.1;
  for (int t = 0; t < 30; ++t) {
    const CMatrix h = testing::random_complex(2, 8, rng);
    const double best = spectral_efficiency(h, waterfilling_cov(h, c.rho, c.sigma_n2), c.sigma_n2);
    CHECK(best >= spectral_efficiency(h, uniform_power_cov(c), c.sigma_n2) - 1e-12);
    CHECK(best >= spectral_efficiency(h, uniform_eigenspace_cov(h, c.rho), c.sigma_n2) - 1e-12);
    for (int r = 0; r < 10; ++r)
      CHECK(best >= spectral_efficiency(h, testing::random_psd(8, 1 + r % 8, c.rho, rng), c.sigma_n2) - 1e-12);
  }
}

TEST_CASE("uniform power covariance") {
  SystemConfig c;
  c.n_tx = 16;
  c.n_rx = 4;
  c.rho = 16.0;
  CHECK(uniform_power_cov(c).isApprox(CMatrix::Identity(16, 16)));
  c.n_tx = 4;
  c.n_rx = 2;
  c.rho = 2.0;
  const auto q = uniform_power_cov(c);
  CHECK(q == CMatrix::Identity(4, 4) * 0.5);
  CHECK(q.trace().real() == 2.0);
}

TEST_CASE("uniform power over the eigenspace") {
  std::mt19937_64 rng(5);
  const CMatrix h1 = testing::random_complex(1, 4, rng);
  const auto q1 = uniform_eigenspace_cov(h1, 3.0);
  Eigen::SelfAdjointEigenSolver<CMatrix> e1(q1);
  CHECK(e1.eigenvalues()(3) == doctest::Approx(3.0));
  CHECK(std::abs(e1.eigenvalues()(2)) < 1e-12);
  // dominant direction is the channel itself
  CHECK(std::abs((h1 * q1 * h1.adjoint())(0, 0).real() - 3.0 * h1.squaredNorm()) < 1e-10);

  // Orthonormal rows: eigenvalues rho / n_rx repeated.
  const CMatrix u = testing::random_complex(4, 4, rng).householderQr().householderQ();
  const CMatrix rows = u.topRows(2);
  Eigen::SelfAdjointEigenSolver<CMatrix> e2(uniform_eigenspace_cov(rows, 2.0));
  CHECK(e2.eigenvalues()(3) == doctest::Approx(1.0));
  CHECK(e2.eigenvalues()(2) == doctest::Approx(1.0));
  CHECK(std::abs(e2.eigenvalues()(1)) < 1e-12);

  // Rank-deficient: all power on the single usable direction.
  CMatrix rd(2, 4);
  rd.row(0) = h1.row(0);
  rd.row(1) = h1.row(0) * 2.0;
  Eigen::SelfAdjointEigenSolver<CMatrix> e3(uniform_eigenspace_cov(rd, 2.0));
  CHECK(e3.eigenvalues()(3) == doctest::Approx(2.0));

  for (int t = 0; t < 20; ++t) {
    const CMatrix h = testing::random_complex(2, 4, rng);
    CHECK(spectral_efficiency(h, uniform_eigenspace_cov(h, 1.0), 0.5) <=
          spectral_efficiency(h, waterfilling_cov(h, 1.0, 0.5), 0.5) + 1e-12);
  }
}

TEST_CASE("spectral efficiency is monotone in the Loewner order") {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 50; ++t) {
    const CMatrix h = testing::random_complex(2, 4, rng);
    const CMatrix a = testing::random_psd(4, 3, 1.0, rng);
    const CMatrix b = a + testing::random_psd(4, 2, 0.5, rng);
    CHECK(spectral_efficiency(h, a, 0.3) <= spectral_efficiency(h, b, 0.3) + 1e-12);
  }
}

TEST_CASE("all-train-data codebook") {
  SystemConfig c;
  const auto ds = generate_paired_dataset(c, 10, 3);
  Dataset one;
  one.config = c;
  one.samples = {ds.samples[0]};
  const auto cb1 = all_train_data_codebook(one);
  REQUIRE(cb1.size() == 1);
  CHECK(cb1.entries[0] == waterfilling_cov(ds.samples[0].h_dl, c.rho, c.sigma_n2));

  const auto cb = all_train_data_codebook(ds);
  REQUIRE(cb.size() == 10);
  CHECK(cb.m_bits == 4);
  for (const auto& q : cb.entries) CHECK(std::abs(q.trace().real() - c.rho) <= 1e-9 * c.rho);
  CHECK_NOTHROW(cb.validate());

  // Containment: on its own training set it matches or beats any smaller learned codebook.
  const auto train = generate_paired_dataset(c, 40, 8);
  const auto full = all_train_data_codebook(train);
  const auto chans = train.channels(Link::kDownlink);
  const auto learned = learn_codebook(train, Link::kDownlink, 3, LloydOptions{}, PgdOptions{});
  for (const auto& h : chans)
    CHECK(select_best(h, full, c.sigma_n2).se >= select_best(h, learned.codebook, c.sigma_n2).se - 1e-9);
}
