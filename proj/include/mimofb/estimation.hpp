#pragma once

#include <cstdint>
#include <vector>

#include "mimofb/codebook.hpp"
#include "mimofb/types.hpp"

namespace mimofb {

/// Received pilot block Y = H P + N together with the pilots that produced it.
struct PilotObservation {
  CMatrix y;  // n_rx x n_p
  CMatrix p;  // n_tx x n_p
  double sigma_n2 = 0.0;
};

/// Oversampled DFT dictionaries for both array ends.
///
/// Channels are vectorized row by row, so an atom (i, j) of the Kronecker
/// dictionary D = D_rx (x) D_tx corresponds to the matrix d_rx_i d_tx_j^T.
struct SparseDictionary {
  CMatrix d_tx;  // n_tx x (o n_tx)
  CMatrix d_rx;  // n_rx x (o n_rx)
  int oversampling = 1;

  Eigen::Index atoms() const { return d_tx.cols() * d_rx.cols(); }
  /// Atom `index` as an n_rx x n_tx matrix (index = i_rx * cols(d_tx) + i_tx).
  CMatrix atom(Eigen::Index index) const;
};

/// Scaled DFT submatrix: sqrt(rho / n_tx) exp(j 2 pi m p / n_p).
CMatrix pilot_matrix(int n_tx, int n_p, double rho);

/// Y = H P + N with N ~ CN(0, sigma_n2 I) column-wise, seeded.
PilotObservation observe(const CMatrix& h, const CMatrix& p, double sigma_n2,
                         std::uint64_t seed, std::uint64_t stream = 0);

/// Y P^H (P P^H)^{-1}. Throws RankError when n_p < n_tx.
CMatrix ls_estimate(const PilotObservation& obs);

SparseDictionary build_dictionary(int n_rx, int n_tx, int oversampling);

struct OmpResult {
  CMatrix h;                            // estimate at the final sparsity
  std::vector<Eigen::Index> support;    // atoms in selection order
  std::vector<double> residual_norms;   // ||r|| before the first pick and after each
  std::vector<CMatrix> estimates;       // estimate after each pick (s = 1..)
};

/// Orthogonal matching pursuit with `sparsity` greedy picks and a full
/// least-squares refit on the support after every pick.
OmpResult omp_solve(const PilotObservation& obs, const SparseDictionary& dict, int sparsity);
CMatrix omp_estimate(const PilotObservation& obs, const SparseDictionary& dict, int sparsity);

enum class GenieMetric { kChannelError, kSpectralEfficiency };

struct GenieResult {
  CMatrix h;
  int sparsity = 1;
  double error = 0.0;  // Frobenius error to the true channel
};

/// Runs OMP for s = 1..s_max and keeps the estimate closest to h_true (or,
/// for kSpectralEfficiency, the one whose codebook choice scores best on h_true).
GenieResult genie_omp(const PilotObservation& obs, const SparseDictionary& dict,
                      const CMatrix& h_true, int s_max,
                      GenieMetric metric = GenieMetric::kChannelError,
                      const Codebook* cb = nullptr);
CMatrix genie_omp_estimate(const PilotObservation& obs, const SparseDictionary& dict,
                           const CMatrix& h_true, int s_max);

/// Row-major vectorization used by the sensing model.
CVector vec_rows(const CMatrix& m);
CMatrix unvec_rows(const CVector& v, Eigen::Index rows, Eigen::Index cols);

/// Effective sensing matrix A with vec_rows(Y) = A t + noise.
CMatrix sensing_matrix(const CMatrix& pilots, const SparseDictionary& dict);

}  // namespace mimofb
