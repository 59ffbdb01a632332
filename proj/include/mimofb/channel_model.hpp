#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mimofb/types.hpp"

namespace mimofb {

struct SystemConfig {
  int n_tx = 8;
  int n_rx = 2;
  double rho = 0.0316227766016838;       // 15 dBm in W
  double sigma_n2 = 3.981071705534969e-15;  // -114 dBm in W
  double f_ul = 2.53e9;
  double f_dl = 2.73e9;
  int n_p = 8;

  /// Throws ConfigError when an invariant is violated.
  void validate() const;
};

double dbm_to_watt(double dbm);

enum class LosClass { kLos, kNlos };

struct PathDescriptor {
  double delay = 0.0;  // seconds
  double aod = 0.0;    // radians, transmitter side
  double aoa = 0.0;    // radians, receiver side
  Complex gain{1.0, 0.0};
};

struct PropagationGeometry {
  std::vector<PathDescriptor> paths;
  LosClass los_class = LosClass::kNlos;
};

/// Parameters of the synthetic geometric model.
struct GeometryModel {
  int paths_los = 37;
  int paths_nlos = 61;
  double p_los = 0.5;
  double max_delay = 1e-6;
  double sector_width = 2.0943951023931953;  // 120 degrees
  double angular_spread = 0.1745329251994330;  // 10 degrees (per-path std)
  double delay_decay = 2e-7;                   // power profile time constant
  double los_k_factor = 5.0;                   // linear
  double path_gain_db_mean = -125.0;
  double path_gain_db_std = 12.0;
};

struct ChannelSample {
  CMatrix h_ul;  // n_rx x n_tx
  CMatrix h_dl;  // n_rx x n_tx
  std::uint64_t geometry_id = 0;
};

enum class Link { kUplink, kDownlink };

struct Dataset {
  std::vector<ChannelSample> samples;
  SystemConfig config;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  /// Channels of one link, in sample order.
  std::vector<CMatrix> channels(Link link) const;
};

/// Unit-modulus half-wavelength ULA response e^{j pi m sin(theta)}.
CVector ula_response(int n, double theta);

/// Sum of planar-wave path contributions at carrier frequency `freq`.
CMatrix synthesize_channel(const PropagationGeometry& geo, double freq, int n_rx,
                           int n_tx);

PropagationGeometry draw_geometry(const GeometryModel& model, std::uint64_t seed,
                                  std::uint64_t index);

Dataset generate_paired_dataset(const SystemConfig& config, std::size_t count,
                                std::uint64_t seed,
                                const GeometryModel& model = {});

/// SNR of `h` under uniform power allocation, in dB (-inf for h = 0).
double snr_db(const CMatrix& h, const SystemConfig& config);

Dataset filter_by_snr(const Dataset& ds, double lo_db, double hi_db,
                      Link side = Link::kDownlink);

struct DatasetSplit {
  Dataset train;
  Dataset val;
  Dataset test;
};

DatasetSplit split_dataset(const Dataset& ds, std::size_t n_train,
                           std::size_t n_val, std::uint64_t seed);

/// CMX1 container: magic, ASCII header, little-endian complex128 payload.
void write_cmx1(const std::filesystem::path& path, const Dataset& ds);
Dataset read_cmx1(const std::filesystem::path& path, const SystemConfig& config);

}  // namespace mimofb
