#include "mimofb/lloyd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

#include "mimofb/parallel.hpp"

namespace mimofb {

void PgdOptions::validate() const {
  if (max_pgd_iters <= 0 || max_backtracks <= 0)
    throw ConfigError("PGD iteration limits must be positive");
  if (!(armijo_beta > 0.0 && armijo_beta < 1.0)) throw ConfigError("armijo_beta must be in (0,1)");
  if (!(armijo_sigma > 0.0 && armijo_sigma < 1.0))
    throw ConfigError("armijo_sigma must be in (0,1)");
  if (!(alpha_init > 0.0) || !(grad_tol > 0.0) || !(obj_tol > 0.0))
    throw ConfigError("PGD step and tolerances must be positive");
}

void LloydOptions::validate() const {
  if (max_lloyd_iters <= 0) throw ConfigError("max_lloyd_iters must be positive");
  if (!(conv_tol > 0.0)) throw ConfigError("conv_tol must be positive");
}

namespace {

/// Per-channel log2 det and, optionally, H^H A^{-1} H / ln 2.
struct ChannelTerm {
  double se = 0.0;
  CMatrix grad;
};

ChannelTerm channel_term(const CMatrix& h, const CMatrix& q, double sigma_n2, bool with_grad) {
  CMatrix a = h * q * h.adjoint() / sigma_n2;
  a.diagonal().array() += 1.0;
  ChannelTerm t;
  Eigen::LLT<CMatrix> llt(a);
  if (llt.info() == Eigen::Success) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) acc += std::log(llt.matrixLLT()(i, i).real());
    t.se = 2.0 * acc / std::numbers::ln2;
    if (with_grad) t.grad = h.adjoint() * llt.solve(h) / (sigma_n2 * std::numbers::ln2);
  } else {
    t.se = log2_det_hpd(a);
    if (with_grad)
      t.grad = h.adjoint() * a.ldlt().solve(h) / (sigma_n2 * std::numbers::ln2);
  }
  return t;
}

struct Evaluation {
  double objective = 0.0;
  CMatrix grad;
};

/// Mean objective (and gradient) over the cluster. Per-channel terms are
/// computed in parallel and reduced in channel order.
Evaluation evaluate_cluster(std::span<const CMatrix> cluster, const CMatrix& q,
                            double sigma_n2, bool with_grad) {
  const auto n = static_cast<std::int64_t>(cluster.size());
  std::vector<ChannelTerm> terms(cluster.size());
#pragma omp parallel for schedule(static) if (n >= 256)
  for (std::int64_t i = 0; i < n; ++i)
    terms[static_cast<std::size_t>(i)] =
        channel_term(cluster[static_cast<std::size_t>(i)], q, sigma_n2, with_grad);

  Evaluation e;
  if (with_grad) e.grad = CMatrix::Zero(q.rows(), q.cols());
  for (const auto& t : terms) {
    e.objective += t.se;
    if (with_grad) e.grad += t.grad;
  }
  const double inv = 1.0 / static_cast<double>(cluster.size());
  e.objective *= inv;
  if (with_grad) e.grad = hermitian_part(e.grad * inv);
  return e;
}

/// Projection of a real spectrum (descending) onto {p >= 0, sum p <= budget}.
RVector project_spectrum(const RVector& lambda, double budget) {
  RVector clipped = lambda.cwiseMax(0.0);
  if (clipped.sum() <= budget) return clipped;
  // Find theta >= 0 with sum max(lambda - theta, 0) = budget.
  double prefix = 0.0;
  double theta = 0.0;
  for (Eigen::Index k = 0; k < lambda.size(); ++k) {
    prefix += lambda(k);
    const double candidate = (prefix - budget) / static_cast<double>(k + 1);
    const double next = k + 1 < lambda.size() ? lambda(k + 1) : -std::numeric_limits<double>::infinity();
    if (candidate >= next) {
      theta = candidate;
      break;
    }
  }
  return (lambda.array() - theta).cwiseMax(0.0).matrix();
}

bool is_feasible(const CMatrix& q, double rho, int rank_cap) {
  Eigen::SelfAdjointEigenSolver<CMatrix> eig(hermitian_part(q), Eigen::EigenvaluesOnly);
  const auto& ev = eig.eigenvalues();
  if (ev.minCoeff() < -1e-9 * rho) return false;
  if (q.trace().real() > rho * (1.0 + 1e-9)) return false;
  for (Eigen::Index i = 0; i + rank_cap < ev.size(); ++i)
    if (ev(i) > 1e-9 * rho) return false;
  return true;
}

double real_inner(const CMatrix& a, const CMatrix& b) {
  return (a.adjoint() * b).trace().real();
}

}  // namespace

ClusterAssignment assign_clusters(std::span<const CMatrix> channels, const Codebook& cb,
                                  double sigma_n2) {
  const auto sel = kernels::select_all(channels, cb, sigma_n2);
  ClusterAssignment out;
  out.member_indices.resize(cb.size());
  for (std::size_t i = 0; i < sel.size(); ++i)
    out.member_indices[static_cast<std::size_t>(sel[i].index)].push_back(i);
  return out;
}

double cluster_objective(std::span<const CMatrix> cluster, const Covariance& q,
                         double sigma_n2) {
  if (cluster.empty()) throw SizeError("cluster_objective: empty cluster");
  return evaluate_cluster(cluster, q, sigma_n2, false).objective;
}

CMatrix pgd_gradient(const Covariance& q, std::span<const CMatrix> cluster,
                     double sigma_n2) {
  if (cluster.empty()) throw SizeError("pgd_gradient: empty cluster");
  return evaluate_cluster(cluster, q, sigma_n2, true).grad;
}

Covariance project_trace_rank(const CMatrix& q, double rho, int rank_cap) {
  const CMatrix herm = hermitian_part(q);
  Eigen::SelfAdjointEigenSolver<CMatrix> eig(herm);
  const auto n = herm.rows();
  const auto keep = std::min<Eigen::Index>(rank_cap, n);
  RVector top(keep);
  CMatrix vecs(n, keep);
  for (Eigen::Index i = 0; i < keep; ++i) {
    top(i) = eig.eigenvalues()(n - 1 - i);
    vecs.col(i) = eig.eigenvectors().col(n - 1 - i);
  }
  const RVector p = project_spectrum(top, rho);
  return hermitian_part(vecs * p.cast<Complex>().asDiagonal() * vecs.adjoint());
}

CenterUpdate update_center(std::span<const CMatrix> cluster, const Covariance& q_init,
                           const PgdOptions& opts, double rho, int rank_cap,
                           double sigma_n2) {
  if (cluster.empty()) throw SizeError("update_center: empty cluster");
  opts.validate();

  // Work in units where rho = sigma_n2 = 1 so alpha_init is scale free.
  const double gain = std::sqrt(rho / sigma_n2);
  std::vector<CMatrix> scaled(cluster.size());
  for (std::size_t i = 0; i < cluster.size(); ++i) scaled[i] = cluster[i] * gain;
  const std::span<const CMatrix> hs(scaled);

  CMatrix q = hermitian_part(q_init) / rho;
  if (!is_feasible(q, 1.0, rank_cap)) {
    const auto e = evaluate_cluster(hs, q, 1.0, true);
    q = project_trace_rank(q + opts.alpha_init * e.grad, 1.0, rank_cap);
  }

  CenterUpdate out;
  double f = evaluate_cluster(hs, q, 1.0, false).objective;
  out.objective_trace.push_back(f);
  double alpha = opts.alpha_init;

  for (int it = 0; it < opts.max_pgd_iters; ++it) {
    const CMatrix g = evaluate_cluster(hs, q, 1.0, true).grad;
    double step = std::min(opts.alpha_init, alpha / opts.armijo_beta);
    bool accepted = false;
    CMatrix q_next;
    double f_next = f;
    for (int b = 0; b < opts.max_backtracks; ++b) {
      q_next = project_trace_rank(q + step * g, 1.0, rank_cap);
      f_next = evaluate_cluster(hs, q_next, 1.0, false).objective;
      const double predicted = std::max(0.0, real_inner(g, q_next - q));
      if (f_next >= f + opts.armijo_sigma * predicted) {
        accepted = true;
        break;
      }
      step *= opts.armijo_beta;
    }
    if (!accepted) break;

    const double moved = (q_next - q).norm();
    const double rel = (f_next - f) / std::max(std::abs(f), 1e-12);
    q = q_next;
    f = f_next;
    alpha = step;
    out.objective_trace.push_back(f);
    ++out.iterations;
    if (moved / step < opts.grad_tol || rel < opts.obj_tol) break;
  }

  out.q = hermitian_part(q * rho);
  out.objective = f;
  return out;
}

std::vector<std::size_t> seed_centers(std::span<const CMatrix> channels, std::size_t k,
                                      std::uint64_t seed) {
  const std::size_t n = channels.size();
  if (k > n) throw SizeError("seed_centers: more centers than channels");
  std::vector<CMatrix> grams(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double nrm = channels[i].squaredNorm();
    grams[i] = nrm > 0.0 ? CMatrix(channels[i].adjoint() * channels[i] / nrm)
                         : CMatrix::Zero(channels[i].cols(), channels[i].cols());
  }
  auto rng = stream_rng(seed, 0, 0x6b6d7070);
  std::vector<std::size_t> chosen;
  chosen.push_back(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (chosen.size() < k) {
    const auto& last = grams[chosen.back()];
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      dist[i] = std::min(dist[i], (grams[i] - last).squaredNorm());
      total += dist[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = unit(rng) * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += dist[i];
        if (acc > target && dist[i] > 0.0) {
          pick = i;
          break;
        }
      }
    }
    // Degenerate data (all remaining distances zero): take unused indices in order.
    if (dist[pick] == 0.0) {
      pick = 0;
      while (std::find(chosen.begin(), chosen.end(), pick) != chosen.end()) ++pick;
    }
    chosen.push_back(pick);
  }
  return chosen;
}

LearnedCodebook learn_codebook(std::span<const CMatrix> train, int m_bits,
                               const LloydOptions& lloyd, const PgdOptions& pgd,
                               double rho, int rank_cap, double sigma_n2) {
  lloyd.validate();
  pgd.validate();
  if (m_bits < 0 || m_bits > 30) throw ConfigError("m_bits out of range");
  const std::size_t k = std::size_t{1} << m_bits;
  if (train.size() < k) throw SizeError("learn_codebook: fewer training channels than 2^M");
  const auto n_tx = train.front().cols();

  LearnedCodebook out;
  Codebook& cb = out.codebook;
  cb.m_bits = m_bits;
  cb.rho = rho;
  cb.rank_cap = rank_cap;
  for (auto idx : seed_centers(train, k, lloyd.seed))
    cb.entries.push_back(waterfilling_cov(train[idx], rho, sigma_n2));

  const Covariance scaled_identity =
      CMatrix::Identity(n_tx, n_tx) * Complex(rho / static_cast<double>(n_tx), 0.0);

  auto selection = kernels::select_all(train, cb, sigma_n2);
  auto mean_of = [&](const std::vector<Selection>& sel) {
    double acc = 0.0;
    for (const auto& s : sel) acc += s.se;
    return acc / static_cast<double>(sel.size());
  };
  double current = mean_of(selection);
  out.history.mean_objective.push_back(current);
  std::vector<std::vector<std::size_t>> previous_members(k);

  for (int it = 0; it < lloyd.max_lloyd_iters; ++it) {
    ClusterAssignment assignment;
    assignment.member_indices.resize(k);
    for (std::size_t i = 0; i < selection.size(); ++i)
      assignment.member_indices[static_cast<std::size_t>(selection[i].index)].push_back(i);

    // Channels with the worst selected SE, used to respawn empty clusters.
    std::vector<std::size_t> worst(selection.size());
    std::iota(worst.begin(), worst.end(), std::size_t{0});
    std::stable_sort(worst.begin(), worst.end(), [&](auto a, auto b) {
      return selection[a].se < selection[b].se;
    });
    std::size_t next_worst = 0;

    std::vector<Covariance> updated = cb.entries;
    std::vector<std::size_t> active;
    for (std::size_t c = 0; c < k; ++c) {
      if (!assignment.member_indices[c].empty()) {
        active.push_back(c);
      } else if (lloyd.empty_cluster_policy == EmptyClusterPolicy::kRespawnAtWorstChannel &&
                 next_worst < worst.size()) {
        updated[c] = waterfilling_cov(train[worst[next_worst++]], rho, sigma_n2);
        ++out.history.respawned;
      }
    }

    const auto n_active = static_cast<std::int64_t>(active.size());
#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t a = 0; a < n_active; ++a) {
      const std::size_t c = active[static_cast<std::size_t>(a)];
      const auto& members = assignment.member_indices[c];
      std::vector<CMatrix> cluster;
      cluster.reserve(members.size());
      for (auto i : members) cluster.push_back(train[i]);

      auto warm = update_center(cluster, cb.entries[c], pgd, rho, rank_cap, sigma_n2);
      if (members != previous_members[c]) {
        // Restart from the scaled identity as well; keep the better center.
        auto cold = update_center(cluster, scaled_identity, pgd, rho, rank_cap, sigma_n2);
        if (cold.objective > warm.objective) warm = std::move(cold);
      }
      updated[c] = std::move(warm.q);
    }
    previous_members = assignment.member_indices;
    cb.entries = std::move(updated);

    selection = kernels::select_all(train, cb, sigma_n2);
    const double next = mean_of(selection);
    out.history.mean_objective.push_back(next);
    out.history.iterations = it + 1;
    const double rel = (next - current) / std::max(std::abs(current), 1e-12);
    current = next;
    if (rel < lloyd.conv_tol) {
      out.history.converged = true;
      break;
    }
  }

  out.assignment.member_indices.assign(k, {});
  for (std::size_t i = 0; i < selection.size(); ++i)
    out.assignment.member_indices[static_cast<std::size_t>(selection[i].index)].push_back(i);
  return out;
}

LearnedCodebook learn_codebook(const Dataset& train, Link link, int m_bits,
                               const LloydOptions& lloyd, const PgdOptions& pgd) {
  const auto channels = train.channels(link);
  return learn_codebook(channels, m_bits, lloyd, pgd, train.config.rho, train.config.n_rx,
                        train.config.sigma_n2);
}

namespace reference {

ClusterAssignment assign_clusters(std::span<const CMatrix> channels, const Codebook& cb,
                                  double sigma_n2) {
  const auto sel = mimofb::reference::select_all(channels, cb, sigma_n2);
  ClusterAssignment out;
  out.member_indices.resize(cb.size());
  for (std::size_t i = 0; i < sel.size(); ++i)
    out.member_indices[static_cast<std::size_t>(sel[i].index)].push_back(i);
  return out;
}

CMatrix pgd_gradient(const Covariance& q, std::span<const CMatrix> cluster,
                     double sigma_n2) {
  CMatrix g = CMatrix::Zero(q.rows(), q.cols());
  for (const auto& h : cluster) g += channel_term(h, q, sigma_n2, true).grad;
  return hermitian_part(g / static_cast<double>(cluster.size()));
}

}  // namespace reference

}  // namespace mimofb
