#include "mimofb/capacity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace mimofb {

namespace {

constexpr double kRelativeRankTol = 1e-12;

struct RightSingular {
  RVector gains;  // descending
  CMatrix vectors;  // columns matching gains
};

/// Top-k right singular pairs of h via the eigendecomposition of H^H H.
RightSingular top_right_singular(const CMatrix& h, int k) {
  Eigen::SelfAdjointEigenSolver<CMatrix> eig(h.adjoint() * h);
  const auto n = eig.eigenvalues().size();
  RightSingular out;
  out.gains.resize(k);
  out.vectors.resize(h.cols(), k);
  for (int i = 0; i < k; ++i) {
    out.gains(i) = std::max(0.0, eig.eigenvalues()(n - 1 - i));
    out.vectors.col(i) = eig.eigenvectors().col(n - 1 - i);
  }
  return out;
}

}  // namespace

void check_covariance(const Covariance& q, double rho) {
  if (q.rows() != q.cols()) throw DomainError("covariance must be square");
  if ((q - q.adjoint()).cwiseAbs().maxCoeff() > 1e-10)
    throw DomainError("covariance is not Hermitian");
  Eigen::SelfAdjointEigenSolver<CMatrix> eig(hermitian_part(q), Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -1e-9) throw DomainError("covariance is not PSD");
  if (q.trace().real() > rho * (1.0 + 1e-9) + 1e-12)
    throw DomainError("covariance exceeds the power budget");
}

double log2_det_hpd(const CMatrix& a) {
  Eigen::LLT<CMatrix> llt(a);
  if (llt.info() == Eigen::Success) {
    double acc = 0.0;
    const auto& l = llt.matrixLLT();
    for (Eigen::Index i = 0; i < a.rows(); ++i) acc += std::log(l(i, i).real());
    return 2.0 * acc / std::numbers::ln2;
  }
  Eigen::SelfAdjointEigenSolver<CMatrix> eig(hermitian_part(a), Eigen::EigenvaluesOnly);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    acc += std::log(std::max(eig.eigenvalues()(i), 1e-300));
  return acc / std::numbers::ln2;
}

double spectral_efficiency_unchecked(const CMatrix& h, const Covariance& q,
                                     double sigma_n2) {
  CMatrix a = h * q * h.adjoint() / sigma_n2;
  a.diagonal().array() += 1.0;
  return std::max(0.0, log2_det_hpd(a));
}

double spectral_efficiency(const CMatrix& h, const Covariance& q, double sigma_n2) {
  if (h.cols() != q.rows() || q.rows() != q.cols())
    throw ShapeError("spectral_efficiency: dimension mismatch");
  if (!(sigma_n2 > 0.0)) throw DomainError("sigma_n2 must be positive");
  Eigen::SelfAdjointEigenSolver<CMatrix> eig(hermitian_part(q), Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -1e-9) throw DomainError("covariance is not PSD");
  return spectral_efficiency_unchecked(h, q, sigma_n2);
}

PowerAllocation waterfill(const RVector& floors, double total_power) {
  const auto n = floors.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](auto a, auto b) { return floors(a) < floors(b); });

  // Largest active set whose water level stays above its highest floor.
  double prefix = 0.0;
  double level = 0.0;
  Eigen::Index active = 0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double f = floors(order[static_cast<std::size_t>(k)]);
    if (!std::isfinite(f)) break;
    const double candidate = (total_power + prefix + f) / static_cast<double>(k + 1);
    if (candidate <= f) break;
    prefix += f;
    level = candidate;
    active = k + 1;
  }

  PowerAllocation out;
  out.level = level;
  out.powers = RVector::Zero(n);
  for (Eigen::Index k = 0; k < active; ++k) {
    const auto i = order[static_cast<std::size_t>(k)];
    out.powers(i) = level - floors(i);
  }
  // Renormalize so the budget is used exactly despite rounding.
  const double sum = out.powers.sum();
  if (sum > 0.0) out.powers *= total_power / sum;
  return out;
}

WaterfillingResult waterfilling_solution(const CMatrix& h, double rho,
                                         double sigma_n2) {
  const int streams = static_cast<int>(std::min(h.rows(), h.cols()));
  auto sv = top_right_singular(h, streams);
  if (!(sv.gains(0) > 0.0)) throw DegenerateChannelError("water-filling on a zero channel");

  RVector floors(streams);
  for (int i = 0; i < streams; ++i) {
    floors(i) = sv.gains(i) > kRelativeRankTol * sv.gains(0)
                    ? sigma_n2 / sv.gains(i)
                    : std::numeric_limits<double>::infinity();
  }
  auto alloc = waterfill(floors, rho);

  WaterfillingResult out;
  out.q = sv.vectors * alloc.powers.cast<Complex>().asDiagonal() * sv.vectors.adjoint();
  out.q = hermitian_part(out.q);
  out.gains = sv.gains;
  out.powers = alloc.powers;
  out.level = alloc.level;
  return out;
}

Covariance waterfilling_cov(const CMatrix& h, double rho, double sigma_n2) {
  return waterfilling_solution(h, rho, sigma_n2).q;
}

Covariance uniform_power_cov(const SystemConfig& config) {
  return CMatrix::Identity(config.n_tx, config.n_tx) *
         Complex(config.rho / config.n_tx, 0.0);
}

Covariance uniform_eigenspace_cov(const CMatrix& h, double rho) {
  const int streams = static_cast<int>(std::min(h.rows(), h.cols()));
  auto sv = top_right_singular(h, streams);
  if (!(sv.gains(0) > 0.0))
    throw DegenerateChannelError("uniform eigenspace covariance on a zero channel");
  int usable = 0;
  while (usable < streams && sv.gains(usable) > kRelativeRankTol * sv.gains(0)) ++usable;
  const CMatrix v = sv.vectors.leftCols(usable);
  return hermitian_part(v * v.adjoint() * Complex(rho / usable, 0.0));
}

}  // namespace mimofb
