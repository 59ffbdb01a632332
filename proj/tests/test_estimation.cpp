#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mimofb/estimation.hpp"
#include "support.hpp"

using namespace mimofb;

namespace {

// Textbook OMP written directly against the sensing matrix, with normal
// equations in place of an orthogonal decomposition. Columns that vanish up to
// rounding (pilot aliasing) are skipped.
std::vector<CMatrix> naive_omp(const PilotObservation& obs, const SparseDictionary& dict, int s_max) {
  const CMatrix a = sensing_matrix(obs.p, dict);
  const CVector y = vec_rows(obs.y);
  std::vector<Eigen::Index> support;
  CVector r = y;
  std::vector<CMatrix> out;
  const double dead = 1e-10 * a.colwise().norm().maxCoeff();
  for (int s = 0; s < s_max; ++s) {
    Eigen::Index best = 0;
    double score = -1.0;
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      if (a.col(j).norm() <= dead || std::find(support.begin(), support.end(), j) != support.end()) continue;
      const double v = std::abs(a.col(j).dot(r)) / a.col(j).norm();
      if (v > score) {
        score = v;
        best = j;
      }
    }
    support.push_back(best);
    CMatrix as(a.rows(), static_cast<Eigen::Index>(support.size()));
    for (std::size_t k = 0; k < support.size(); ++k) as.col(static_cast<Eigen::Index>(k)) = a.col(support[k]);
    const CVector c = (as.adjoint() * as).ldlt().solve(as.adjoint() * y);
    r = y - as * c;
    CMatrix h = CMatrix::Zero(obs.y.rows(), obs.p.rows());
    for (std::size_t k = 0; k < support.size(); ++k) h += c(static_cast<Eigen::Index>(k)) * dict.atom(support[k]);
    out.push_back(h);
  }
  return out;
}

}  // namespace

TEST_CASE("pilot matrix power and orthogonality") {
  for (int n_p : {1, 2, 4, 8, 12}) {
    const CMatrix p = pilot_matrix(8, n_p, 3.0);
    for (int c = 0; c < n_p; ++c) CHECK(p.col(c).squaredNorm() == doctest::Approx(3.0).epsilon(1e-13));
    if (n_p >= 8) {
      const CMatrix g = p * p.adjoint();
      CHECK((g - CMatrix::Identity(8, 8) * (3.0 * n_p / 8.0)).norm() < 1e-12);
    }
  }
  CHECK_THROWS_AS(pilot_matrix(8, 0, 1.0), ConfigError);
}

TEST_CASE("observation noise statistics and determinism") {
  const CMatrix p = pilot_matrix(4, 4, 1.0);
  const CMatrix zero = CMatrix::Zero(2, 4);
  const double s2 = 0.3;
  double re2 = 0.0, im2 = 0.0, cross = 0.0, mean_re = 0.0;
  const int trials = 4000;
  for (int t = 0; t < trials; ++t) {
    const auto obs = observe(zero, p, s2, 5, static_cast<std::uint64_t>(t));
    for (Eigen::Index i = 0; i < obs.y.size(); ++i) {
      re2 += obs.y(i).real() * obs.y(i).real();
      im2 += obs.y(i).imag() * obs.y(i).imag();
      cross += obs.y(i).real() * obs.y(i).imag();
      mean_re += obs.y(i).real();
    }
  }
  const double n = trials * 8.0;
  CHECK(re2 / n == doctest::Approx(s2 / 2).epsilon(0.05));
  CHECK(im2 / n == doctest::Approx(s2 / 2).epsilon(0.05));
  CHECK(std::abs(cross / n) < 0.01);
  CHECK(std::abs(mean_re / n) < 0.01);

  std::mt19937_64 rng(1);
  const CMatrix h = testing::random_complex(2, 4, rng);
  CHECK(observe(h, p, s2, 9, 3).y == observe(h, p, s2, 9, 3).y);
  CHECK(observe(h, p, s2, 9, 3).y != observe(h, p, s2, 9, 4).y);
  CHECK(observe(h, p, 0.0, 9, 3).y == h * p);
  CHECK_THROWS_AS(observe(h, pilot_matrix(8, 8, 1.0), s2, 1), ShapeError);
}

TEST_CASE("least squares is exact without noise and needs enough pilots") {
  std::mt19937_64 rng(2);
  for (int n_p : {8, 10, 16}) {
    const CMatrix h = testing::random_complex(2, 8, rng);
    const auto obs = observe(h, pilot_matrix(8, n_p, 2.0), 0.0, 1);
    CHECK((ls_estimate(obs) - h).norm() < 1e-12 * h.norm());
  }
  const CMatrix h = testing::random_complex(2, 8, rng);
  for (int n_p : {1, 2, 4, 7}) CHECK_THROWS_AS(ls_estimate(observe(h, pilot_matrix(8, n_p, 1.0), 0.1, 1)), RankError);
}

TEST_CASE("least squares error matches its closed form") {
  std::mt19937_64 rng(3);
  const int n_tx = 8, n_rx = 2, n_p = 8;
  const double rho = 2.0, s2 = 0.5;
  const CMatrix h = testing::random_complex(n_rx, n_tx, rng);
  const CMatrix p = pilot_matrix(n_tx, n_p, rho);
  const int trials = 3000;
  double mse = 0.0;
  CMatrix bias = CMatrix::Zero(n_rx, n_tx);
  for (int t = 0; t < trials; ++t) {
    const CMatrix e = ls_estimate(observe(h, p, s2, 11, static_cast<std::uint64_t>(t))) - h;
    mse += e.squaredNorm();
    bias += e;
  }
  mse /= trials;
  bias /= trials;
  const double expected = s2 * n_rx * (p * p.adjoint()).inverse().trace().real();
  CHECK(expected == doctest::Approx(s2 * n_rx * n_tx * n_tx / (rho * n_p)));
  CHECK(mse == doctest::Approx(expected).epsilon(0.05));
  CHECK(bias.norm() < 0.05 * std::sqrt(expected));
}

TEST_CASE("dictionary columns and the sensing matrix") {
  const auto d1 = build_dictionary(2, 8, 1);
  CHECK((d1.d_tx * d1.d_tx.adjoint() - CMatrix::Identity(8, 8)).norm() < 1e-12);
  const auto d2 = build_dictionary(2, 8, 2);
  CHECK(d2.atoms() == 16 * 4);
  for (Eigen::Index j = 0; j < d2.d_tx.cols(); ++j) CHECK(d2.d_tx.col(j).norm() == doctest::Approx(1.0));
  CHECK((d2.d_tx * d2.d_tx.adjoint() - 2.0 * CMatrix::Identity(8, 8)).norm() < 1e-12);
  CHECK_THROWS_AS(build_dictionary(2, 8, 0), ConfigError);

  std::mt19937_64 rng(4);
  const CMatrix p = pilot_matrix(8, 3, 1.0);
  const CVector t = testing::random_complex(static_cast<int>(d2.atoms()), 1, rng);
  CMatrix h = CMatrix::Zero(2, 8);
  for (Eigen::Index k = 0; k < d2.atoms(); ++k) h += t(k) * d2.atom(k);
  CHECK((sensing_matrix(p, d2) * t - vec_rows(h * p)).norm() < 1e-10 * t.norm());
  CHECK(unvec_rows(vec_rows(h), 2, 8) == h);
}

TEST_CASE("OMP recovers sparse on-grid channels") {
  std::mt19937_64 rng(5);
  const auto d1 = build_dictionary(2, 8, 1);
  const CMatrix p = pilot_matrix(8, 8, 1.0);
  for (int t = 0; t < 20; ++t) {
    std::vector<Eigen::Index> atoms(static_cast<std::size_t>(d1.atoms()));
    std::iota(atoms.begin(), atoms.end(), 0);
    std::shuffle(atoms.begin(), atoms.end(), rng);
    CMatrix h = CMatrix::Zero(2, 8);
    for (int k = 0; k < 3; ++k) h += testing::random_complex(1, 1, rng)(0, 0) * d1.atom(atoms[k]);
    const auto res = omp_solve(observe(h, p, 0.0, 1), d1, 3);
    CHECK((res.h - h).norm() < 1e-10 * h.norm());
    std::vector<Eigen::Index> got = res.support, want(atoms.begin(), atoms.begin() + 3);
    std::sort(got.begin(), got.end());
    std::sort(want.begin(), want.end());
    CHECK(got == want);
  }

  const auto d2 = build_dictionary(2, 8, 2);
  const CMatrix h = Complex(0.3, -1.2) * d2.atom(37);
  const auto one = omp_solve(observe(h, pilot_matrix(8, 4, 1.0), 0.0, 1), d2, 1);
  CHECK(one.support.front() == 37);
  CHECK((one.h - h).norm() < 1e-10);
}

TEST_CASE("OMP matches a textbook implementation") {
  std::mt19937_64 rng(6);
  const auto dict = build_dictionary(2, 8, 2);
  for (int t = 0; t < 100; ++t) {
    const int n_p = 1 + t % 8;
    const CMatrix h = testing::random_complex(2, 8, rng);
    const auto obs = observe(h, pilot_matrix(8, n_p, 1.0), 0.1, 7, static_cast<std::uint64_t>(t));
    const int s = std::min(6, n_p);
    const auto res = omp_solve(obs, dict, s);
    const auto oracle = naive_omp(obs, dict, s);
    REQUIRE(res.estimates.size() == static_cast<std::size_t>(s));
    for (int k = 0; k < s; ++k) CHECK((res.estimates[k] - oracle[k]).norm() <= 1e-8 * (1.0 + oracle[k].norm()));
    for (std::size_t k = 1; k < res.residual_norms.size(); ++k)
      CHECK(res.residual_norms[k] <= res.residual_norms[k - 1] + 1e-12);
  }
}

TEST_CASE("OMP ignores atoms aliased away by short pilots") {
  std::mt19937_64 rng(9);
  const auto dict = build_dictionary(2, 8, 2);
  for (int t = 0; t < 200; ++t) {
    const int n_p = 1 + t % 2;
    const CMatrix h = testing::random_complex(2, 8, rng);
    const auto res = omp_solve(observe(h, pilot_matrix(8, n_p, 1.0), 0.1, 8, static_cast<std::uint64_t>(t)), dict, 6);
    for (const auto& e : res.estimates) CHECK(e.norm() < 100.0 * (h.norm() + 1.0));
    for (std::size_t k = 1; k < res.residual_norms.size(); ++k)
      CHECK(res.residual_norms[k] <= res.residual_norms[k - 1] + 1e-12);
  }
}

TEST_CASE("OMP argument checks") {
  const auto dict = build_dictionary(2, 8, 2);
  const auto obs = observe(CMatrix::Zero(2, 8), pilot_matrix(8, 2, 1.0), 0.0, 1);
  CHECK_THROWS_AS(omp_solve(obs, dict, 0), SizeError);
  CHECK_THROWS_AS(omp_solve(obs, dict, 65), SizeError);
  CHECK_THROWS_AS(omp_solve(obs, build_dictionary(2, 4, 2), 1), ShapeError);
  // A zero observation leaves the estimate at zero.
  CHECK(omp_estimate(obs, dict, 3).norm() == 0.0);
}

TEST_CASE("genie OMP picks the best sparsity") {
  std::mt19937_64 rng(7);
  const auto dict = build_dictionary(2, 8, 2);
  for (int t = 0; t < 100; ++t) {
    const CMatrix h = testing::random_complex(2, 8, rng);
    const auto obs = observe(h, pilot_matrix(8, 4, 1.0), 0.2, 3, static_cast<std::uint64_t>(t));
    const auto g = genie_omp(obs, dict, h, 8);
    CHECK(g.error == doctest::Approx((g.h - h).norm()));
    CHECK(g.sparsity >= 1);
    CHECK(g.sparsity <= 8);
    for (int s = 1; s <= 8; ++s) CHECK(g.error <= (omp_estimate(obs, dict, s) - h).norm() + 1e-12);
    CHECK(genie_omp_estimate(obs, dict, h, 8) == g.h);
    for (int s = 2; s <= 8; ++s) CHECK(genie_omp(obs, dict, h, s).error <= genie_omp(obs, dict, h, s - 1).error);
  }
  const CMatrix h = testing::random_complex(2, 2, rng);
  const auto tiny = build_dictionary(2, 2, 1);
  CHECK(genie_omp(observe(h, pilot_matrix(2, 2, 1.0), 0.0, 1), tiny, h, 50).sparsity <= 4);
  CHECK_THROWS_AS(genie_omp(observe(h, pilot_matrix(2, 2, 1.0), 0.0, 1), tiny, h, 0), SizeError);
}

TEST_CASE("genie OMP with the rate metric") {
  std::mt19937_64 rng(8);
  const auto dict = build_dictionary(2, 4, 2);
  Codebook cb;
  cb.rho = 1.0;
  cb.rank_cap = 2;
  for (int k = 0; k < 4; ++k) cb.entries.push_back(testing::random_psd(4, 2, 1.0, rng));
  cb.m_bits = 2;
  for (int t = 0; t < 100; ++t) {
    const CMatrix h = testing::random_complex(2, 4, rng);
    const auto obs = observe(h, pilot_matrix(4, 2, 1.0), 0.3, 4, static_cast<std::uint64_t>(t));
    const auto g = genie_omp(obs, dict, h, 6, GenieMetric::kSpectralEfficiency, &cb);
    const double got = spectral_efficiency(h, cb.entries[select_index(g.h, cb, 0.3)], 0.3);
    for (int s = 1; s <= 6; ++s) {
      const CMatrix e = omp_estimate(obs, dict, s);
      CHECK(got >= spectral_efficiency(h, cb.entries[select_index(e, cb, 0.3)], 0.3) - 1e-12);
    }
  }
  const auto obs = observe(CMatrix::Zero(2, 4), pilot_matrix(4, 2, 1.0), 0.3, 1);
  CHECK_THROWS_AS(genie_omp(obs, dict, CMatrix::Zero(2, 4), 3, GenieMetric::kSpectralEfficiency), ConfigError);
}
