#include "mimofb/estimation.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "mimofb/parallel.hpp"

namespace mimofb {

namespace {

CMatrix kron(const CMatrix& a, const CMatrix& b) {
  CMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

CMatrix oversampled_dft(int n, int oversampling) {
  const int cols = n * oversampling;
  CMatrix d(n, cols);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (int g = 0; g < cols; ++g)
    for (int m = 0; m < n; ++m) {
      // Reduce the exponent modulo one period before forming the angle.
      const long turns = (static_cast<long>(g) * m) % cols;
      d(m, g) = std::polar(scale, 2.0 * std::numbers::pi * static_cast<double>(turns) / cols);
    }
  return d;
}

}  // namespace

CMatrix SparseDictionary::atom(Eigen::Index index) const {
  const auto i_rx = index / d_tx.cols();
  const auto i_tx = index % d_tx.cols();
  return d_rx.col(i_rx) * d_tx.col(i_tx).transpose();
}

CMatrix pilot_matrix(int n_tx, int n_p, double rho) {
  if (n_tx <= 0 || n_p <= 0) throw ConfigError("pilot_matrix: counts must be positive");
  CMatrix p(n_tx, n_p);
  const double scale = std::sqrt(rho / n_tx);
  for (int m = 0; m < n_tx; ++m)
    for (int c = 0; c < n_p; ++c) {
      const long turns = (static_cast<long>(m) * c) % n_p;
      p(m, c) = std::polar(scale, 2.0 * std::numbers::pi * static_cast<double>(turns) / n_p);
    }
  return p;
}

PilotObservation observe(const CMatrix& h, const CMatrix& p, double sigma_n2,
                         std::uint64_t seed, std::uint64_t stream) {
  if (h.cols() != p.rows()) throw ShapeError("observe: channel and pilot sizes differ");
  PilotObservation obs;
  obs.p = p;
  obs.sigma_n2 = sigma_n2;
  obs.y = h * p;
  if (sigma_n2 > 0.0) {
    auto rng = stream_rng(seed, stream, 0x6f6273);
    std::normal_distribution<double> gauss(0.0, std::sqrt(sigma_n2 / 2.0));
    for (Eigen::Index c = 0; c < obs.y.cols(); ++c)
      for (Eigen::Index r = 0; r < obs.y.rows(); ++r) {
        const double re = gauss(rng);
        const double im = gauss(rng);
        obs.y(r, c) += Complex(re, im);
      }
  }
  return obs;
}

CMatrix ls_estimate(const PilotObservation& obs) {
  if (obs.p.cols() < obs.p.rows())
    throw RankError("ls_estimate: fewer pilots than transmit antennas");
  const CMatrix gram = obs.p * obs.p.adjoint();
  // H = Y P^H G^{-1}  <=>  H^H = G^{-1} P Y^H  (G Hermitian).
  return gram.ldlt().solve(obs.p * obs.y.adjoint()).adjoint();
}

SparseDictionary build_dictionary(int n_rx, int n_tx, int oversampling) {
  if (oversampling < 1) throw ConfigError("dictionary oversampling must be >= 1");
  SparseDictionary d;
  d.d_tx = oversampled_dft(n_tx, oversampling);
  d.d_rx = oversampled_dft(n_rx, oversampling);
  d.oversampling = oversampling;
  return d;
}

CVector vec_rows(const CMatrix& m) {
  CVector v(m.size());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) v(r * m.cols() + c) = m(r, c);
  return v;
}

CMatrix unvec_rows(const CVector& v, Eigen::Index rows, Eigen::Index cols) {
  CMatrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = v(r * cols + c);
  return m;
}

CMatrix sensing_matrix(const CMatrix& pilots, const SparseDictionary& dict) {
  // vec_rows(H P) = (I_rx (x) P^T) vec_rows(H) and vec_rows(H) = (D_rx (x) D_tx) t.
  return kron(dict.d_rx, pilots.transpose() * dict.d_tx);
}

OmpResult omp_solve(const PilotObservation& obs, const SparseDictionary& dict, int sparsity) {
  if (sparsity < 1) throw SizeError("omp: sparsity must be at least 1");
  if (sparsity > dict.atoms()) throw SizeError("omp: sparsity exceeds the number of atoms");
  if (dict.d_tx.rows() != obs.p.rows() || dict.d_rx.rows() != obs.y.rows())
    throw ShapeError("omp: dictionary does not match the observation");

  const CMatrix a = sensing_matrix(obs.p, dict);
  const CVector y = vec_rows(obs.y);
  const RVector col_norms = a.colwise().norm().transpose();
  // Columns at rounding level (pilot aliasing) carry no information.
  const double dead = 1e-10 * col_norms.maxCoeff();
  const Eigen::Index n_rx = obs.y.rows();
  const Eigen::Index n_tx = obs.p.rows();
  const CMatrix d_full = kron(dict.d_rx, dict.d_tx);

  OmpResult out;
  CVector residual = y;
  out.residual_norms.push_back(residual.norm());
  std::vector<bool> used(static_cast<std::size_t>(a.cols()), false);
  CVector coeffs;
  CMatrix a_support(a.rows(), 0);
  const double floor = 1e-14 * std::max(y.norm(), std::numeric_limits<double>::min());

  for (int s = 0; s < sparsity; ++s) {
    if (residual.norm() > floor) {
      const CVector corr = a.adjoint() * residual;
      Eigen::Index best = -1;
      double best_score = -1.0;
      for (Eigen::Index j = 0; j < a.cols(); ++j) {
        if (used[static_cast<std::size_t>(j)] || col_norms(j) <= dead) continue;
        const double score = std::abs(corr(j)) / col_norms(j);
        if (score > best_score) {
          best_score = score;
          best = j;
        }
      }
      // A pick already in the span of the support would only add round-off.
      if (best >= 0 && best_score > 1e-10 * residual.norm()) {
        used[static_cast<std::size_t>(best)] = true;
        out.support.push_back(best);
        a_support.conservativeResize(Eigen::NoChange, a_support.cols() + 1);
        a_support.col(a_support.cols() - 1) = a.col(best);
        coeffs = a_support.completeOrthogonalDecomposition().solve(y);
        residual = y - a_support * coeffs;
      }
    }
    out.residual_norms.push_back(residual.norm());
    CVector h_vec = CVector::Zero(d_full.rows());
    for (std::size_t k = 0; k < out.support.size(); ++k)
      h_vec += coeffs(static_cast<Eigen::Index>(k)) * d_full.col(out.support[k]);
    out.estimates.push_back(unvec_rows(h_vec, n_rx, n_tx));
  }
  out.h = out.estimates.back();
  return out;
}

CMatrix omp_estimate(const PilotObservation& obs, const SparseDictionary& dict, int sparsity) {
  return omp_solve(obs, dict, sparsity).h;
}

GenieResult genie_omp(const PilotObservation& obs, const SparseDictionary& dict,
                      const CMatrix& h_true, int s_max, GenieMetric metric,
                      const Codebook* cb) {
  if (s_max < 1) throw SizeError("genie_omp: s_max must be at least 1");
  if (metric == GenieMetric::kSpectralEfficiency && cb == nullptr)
    throw ConfigError("genie_omp: spectral-efficiency metric needs a codebook");
  const int s_cap = static_cast<int>(std::min<Eigen::Index>(s_max, dict.atoms()));
  // OMP is greedy, so the run with s_max picks contains every shorter run.
  const auto run = omp_solve(obs, dict, s_cap);

  GenieResult best;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < run.estimates.size(); ++s) {
    const auto& est = run.estimates[s];
    const double err = (est - h_true).norm();
    double score = -err;
    if (metric == GenieMetric::kSpectralEfficiency) {
      const int k = select_index(est, *cb, obs.sigma_n2);
      score = spectral_efficiency_unchecked(h_true, cb->entries[static_cast<std::size_t>(k)],
                                            obs.sigma_n2);
    }
    if (score > best_score) {
      best_score = score;
      best.h = est;
      best.sparsity = static_cast<int>(s) + 1;
      best.error = err;
    }
  }
  return best;
}

CMatrix genie_omp_estimate(const PilotObservation& obs, const SparseDictionary& dict,
                           const CMatrix& h_true, int s_max) {
  return genie_omp(obs, dict, h_true, s_max).h;
}

}  // namespace mimofb
