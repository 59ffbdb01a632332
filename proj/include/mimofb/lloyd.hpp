#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mimofb/codebook.hpp"

namespace mimofb {

/// member_indices[k] lists the training channels whose best entry is k.
struct ClusterAssignment {
  std::vector<std::vector<std::size_t>> member_indices;
};

struct PgdOptions {
  int max_pgd_iters = 500;
  double armijo_beta = 0.5;
  double armijo_sigma = 0.1;
  /// Initial step, in units where the power budget and noise are 1.
  double alpha_init = 1.0;
  int max_backtracks = 30;
  double grad_tol = 1e-9;
  double obj_tol = 1e-7;

  void validate() const;
};

enum class EmptyClusterPolicy { kRespawnAtWorstChannel, kKeepPrevious };

struct LloydOptions {
  int max_lloyd_iters = 50;
  double conv_tol = 1e-5;
  EmptyClusterPolicy empty_cluster_policy = EmptyClusterPolicy::kRespawnAtWorstChannel;
  std::uint64_t seed = 0;

  void validate() const;
};

ClusterAssignment assign_clusters(std::span<const CMatrix> channels, const Codebook& cb,
                                  double sigma_n2);

/// Mean spectral efficiency of the cluster under q.
double cluster_objective(std::span<const CMatrix> cluster, const Covariance& q,
                         double sigma_n2);

/// Gradient of cluster_objective() with respect to q:
/// (1 / (|V| sigma_n2 ln 2)) sum_H H^H (I + H q H^H / sigma_n2)^{-1} H.
CMatrix pgd_gradient(const Covariance& q, std::span<const CMatrix> cluster,
                     double sigma_n2);

/// Projection onto {Q PSD, trace Q <= rho, rank Q <= rank_cap}.
Covariance project_trace_rank(const CMatrix& q, double rho, int rank_cap);

struct CenterUpdate {
  Covariance q;
  double objective = 0.0;
  /// Objective after every accepted iterate, starting with the initial point.
  std::vector<double> objective_trace;
  int iterations = 0;
};

/// Projected gradient ascent with Armijo backtracking on the cluster
/// objective. q_init need not be feasible: an infeasible start is first moved
/// by one plain projected gradient step.
CenterUpdate update_center(std::span<const CMatrix> cluster, const Covariance& q_init,
                           const PgdOptions& opts, double rho, int rank_cap,
                           double sigma_n2);

struct LloydHistory {
  /// Mean selected spectral efficiency after each assignment, iteration 0
  /// being the initial codebook.
  std::vector<double> mean_objective;
  int iterations = 0;
  bool converged = false;
  int respawned = 0;
};

struct LearnedCodebook {
  Codebook codebook;
  ClusterAssignment assignment;
  LloydHistory history;
};

/// Seeded k-means++-style choice of `k` distinct training channels.
std::vector<std::size_t> seed_centers(std::span<const CMatrix> channels, std::size_t k,
                                      std::uint64_t seed);

LearnedCodebook learn_codebook(std::span<const CMatrix> train, int m_bits,
                               const LloydOptions& lloyd, const PgdOptions& pgd,
                               double rho, int rank_cap, double sigma_n2);

LearnedCodebook learn_codebook(const Dataset& train, Link link, int m_bits,
                               const LloydOptions& lloyd, const PgdOptions& pgd);

namespace reference {
ClusterAssignment assign_clusters(std::span<const CMatrix> channels, const Codebook& cb,
                                  double sigma_n2);
CMatrix pgd_gradient(const Covariance& q, std::span<const CMatrix> cluster,
                     double sigma_n2);
}  // namespace reference

}  // namespace mimofb
