#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "mimofb/capacity.hpp"
#include "mimofb/channel_model.hpp"

namespace mimofb {

/// Ordered set of transmit covariances shared by both link ends.
///
/// Learned codebooks hold exactly 2^m_bits entries. The all-train-data
/// codebook holds one entry per training channel, and m_bits is then the
/// number of bits needed to index it.
struct Codebook {
  std::vector<Covariance> entries;
  int m_bits = 0;
  double rho = 1.0;
  int rank_cap = 1;

  std::size_t size() const { return entries.size(); }
  int n_tx() const { return entries.empty() ? 0 : static_cast<int>(entries.front().rows()); }

  /// Throws DomainError/SizeError when an invariant is violated.
  void validate() const;
};

/// Smallest M with 2^M >= k.
int bits_for(std::size_t k);

/// One water-filling covariance per training channel, order preserving.
Codebook all_train_data_codebook(const Dataset& ds, Link link = Link::kDownlink);

struct Selection {
  int index = 0;
  double se = 0.0;
};

/// Entry with the highest spectral efficiency, lowest index on ties.
Selection select_best(const CMatrix& h, const Codebook& cb, double sigma_n2);
int select_index(const CMatrix& h, const Codebook& cb, double sigma_n2);

namespace kernels {
/// select_best() for every channel; OpenMP over channels.
std::vector<Selection> select_all(std::span<const CMatrix> channels, const Codebook& cb,
                                  double sigma_n2);
}  // namespace kernels

namespace reference {
std::vector<Selection> select_all(std::span<const CMatrix> channels, const Codebook& cb,
                                  double sigma_n2);
}  // namespace reference

void write_cbk1(const std::filesystem::path& path, const Codebook& cb);
Codebook read_cbk1(const std::filesystem::path& path);

}  // namespace mimofb
