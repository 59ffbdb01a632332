#include "mimofb/codebook.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"

namespace mimofb {

int bits_for(std::size_t k) {
  int m = 0;
  while ((std::size_t{1} << m) < k) ++m;
  return m;
}

void Codebook::validate() const {
  if (entries.empty()) throw SizeError("codebook is empty");
  if (entries.size() > (std::size_t{1} << m_bits))
    throw SizeError("codebook has more entries than 2^m_bits");
  for (const auto& q : entries) {
    if (q.rows() != n_tx() || q.cols() != n_tx())
      throw ShapeError("codebook entries differ in dimension");
    check_covariance(q, rho);
    Eigen::SelfAdjointEigenSolver<CMatrix> eig(hermitian_part(q), Eigen::EigenvaluesOnly);
    const auto& ev = eig.eigenvalues();
    for (Eigen::Index i = 0; i + rank_cap < ev.size(); ++i)
      if (ev(i) > 1e-9 * rho) throw DomainError("codebook entry exceeds the rank cap");
  }
}

Codebook all_train_data_codebook(const Dataset& ds, Link link) {
  if (ds.empty()) throw SizeError("all_train_data_codebook: empty dataset");
  Codebook cb;
  cb.rho = ds.config.rho;
  cb.rank_cap = ds.config.n_rx;
  cb.entries.resize(ds.size());
  const auto n = static_cast<std::int64_t>(ds.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& s = ds.samples[static_cast<std::size_t>(i)];
    cb.entries[static_cast<std::size_t>(i)] =
        waterfilling_cov(link == Link::kUplink ? s.h_ul : s.h_dl, ds.config.rho,
                         ds.config.sigma_n2);
  }
  cb.m_bits = bits_for(cb.entries.size());
  return cb;
}

Selection select_best(const CMatrix& h, const Codebook& cb, double sigma_n2) {
  if (cb.entries.empty()) throw SizeError("select_index: empty codebook");
  Selection best{0, spectral_efficiency_unchecked(h, cb.entries[0], sigma_n2)};
  for (std::size_t k = 1; k < cb.entries.size(); ++k) {
    const double se = spectral_efficiency_unchecked(h, cb.entries[k], sigma_n2);
    if (se > best.se) best = {static_cast<int>(k), se};
  }
  return best;
}

int select_index(const CMatrix& h, const Codebook& cb, double sigma_n2) {
  return select_best(h, cb, sigma_n2).index;
}

namespace kernels {
std::vector<Selection> select_all(std::span<const CMatrix> channels, const Codebook& cb,
                                  double sigma_n2) {
  std::vector<Selection> out(channels.size());
  const auto n = static_cast<std::int64_t>(channels.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::int64_t i = 0; i < n; ++i)
    out[static_cast<std::size_t>(i)] =
        select_best(channels[static_cast<std::size_t>(i)], cb, sigma_n2);
  return out;
}
}  // namespace kernels

namespace reference {
std::vector<Selection> select_all(std::span<const CMatrix> channels, const Codebook& cb,
                                  double sigma_n2) {
  std::vector<Selection> out;
  out.reserve(channels.size());
  for (const auto& h : channels) out.push_back(select_best(h, cb, sigma_n2));
  return out;
}
}  // namespace reference

void write_cbk1(const std::filesystem::path& path, const Codebook& cb) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open for writing: " + path.string());
  char rho[40];
  std::snprintf(rho, sizeof rho, "%.17g", cb.rho);
  os << "CBK1\n" << cb.size() << ' ' << cb.n_tx() << ' ' << cb.m_bits << ' ' << rho << '\n';
  for (const auto& q : cb.entries) io::put_cmatrix(os, q);
  if (!os) throw ConfigError("write failed: " + path.string());
}

Codebook read_cbk1(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open codebook: " + path.string());
  io::expect_magic(is, "CBK1");
  std::string header;
  if (!std::getline(is, header)) throw FormatError("CBK1: missing header");
  std::istringstream hs(header);
  std::size_t k = 0;
  int n_tx = 0;
  Codebook cb;
  std::string rho;
  if (!(hs >> k >> n_tx >> cb.m_bits >> rho)) throw FormatError("CBK1: malformed header");
  cb.rho = std::stod(rho);
  cb.entries.reserve(k);
  for (std::size_t i = 0; i < k; ++i) cb.entries.push_back(io::get_cmatrix(is, n_tx, n_tx));
  // Rank cap is not persisted; recover it from the entries.
  int rank = 1;
  for (const auto& q : cb.entries) {
    Eigen::SelfAdjointEigenSolver<CMatrix> eig(hermitian_part(q), Eigen::EigenvaluesOnly);
    int r = 0;
    for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i)
      if (eig.eigenvalues()(i) > 1e-9 * cb.rho) ++r;
    rank = std::max(rank, r);
  }
  cb.rank_cap = rank;
  return cb;
}

}  // namespace mimofb
