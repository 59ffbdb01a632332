#pragma once

#include <vector>

#include "mimofb/channel_model.hpp"
#include "mimofb/types.hpp"

namespace mimofb {

/// Hermitian PSD transmit covariance. Stored as a plain matrix; use
/// check_covariance() where the invariants need to be asserted.
using Covariance = CMatrix;

/// Throws DomainError unless q is Hermitian (1e-10), PSD (-1e-9) and has
/// trace <= rho + 1e-9 (relative to rho).
void check_covariance(const Covariance& q, double rho);

/// log2 det(I + H Q H^H / sigma_n2). Throws DomainError for non-PSD q.
double spectral_efficiency(const CMatrix& h, const Covariance& q, double sigma_n2);

/// Same as spectral_efficiency() without the PSD check; hot loops use this.
double spectral_efficiency_unchecked(const CMatrix& h, const Covariance& q,
                                     double sigma_n2);

/// log2 det of a Hermitian positive definite matrix (Cholesky, eigen fallback).
double log2_det_hpd(const CMatrix& a);

/// Water-filling over parallel channels with the given per-stream floors
/// sigma_n2 / s_i^2. Returns the powers and the water level.
struct PowerAllocation {
  RVector powers;
  double level = 0.0;
};
PowerAllocation waterfill(const RVector& floors, double total_power);

struct WaterfillingResult {
  Covariance q;
  RVector gains;   // squared singular values, descending, n_rx of them
  RVector powers;  // per-stream power, same order as gains
  double level = 0.0;
};

WaterfillingResult waterfilling_solution(const CMatrix& h, double rho,
                                         double sigma_n2);

/// Capacity-achieving covariance. Throws DegenerateChannelError for h = 0.
Covariance waterfilling_cov(const CMatrix& h, double rho, double sigma_n2);

Covariance uniform_power_cov(const SystemConfig& config);

/// Equal power over the usable right singular directions (at most n_rx).
Covariance uniform_eigenspace_cov(const CMatrix& h, double rho);

}  // namespace mimofb
