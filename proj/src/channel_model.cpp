#include "mimofb/channel_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "binary_io.hpp"
#include "mimofb/parallel.hpp"

namespace mimofb {

void SystemConfig::validate() const {
  if (n_tx <= 0 || n_rx <= 0) throw ConfigError("antenna counts must be positive");
  if (n_rx >= n_tx) throw ConfigError("n_rx must be smaller than n_tx");
  if (!(rho > 0.0)) throw ConfigError("rho must be positive");
  if (!(sigma_n2 > 0.0)) throw ConfigError("sigma_n2 must be positive");
  if (!(f_dl > f_ul)) throw ConfigError("f_dl must exceed f_ul");
  if (n_p <= 0) throw ConfigError("n_p must be positive");
}

double dbm_to_watt(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }

std::vector<CMatrix> Dataset::channels(Link link) const {
  std::vector<CMatrix> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(link == Link::kUplink ? s.h_ul : s.h_dl);
  return out;
}

CVector ula_response(int n, double theta) {
  CVector a(n);
  const double phase = std::numbers::pi * std::sin(theta);
  for (int m = 0; m < n; ++m) a(m) = std::polar(1.0, phase * m);
  return a;
}

CMatrix synthesize_channel(const PropagationGeometry& geo, double freq, int n_rx,
                           int n_tx) {
  CMatrix h = CMatrix::Zero(n_rx, n_tx);
  for (const auto& p : geo.paths) {
    // Reduce the phase modulo one period before scaling to keep it exact.
    const double cycles = std::fmod(freq * p.delay, 1.0);
    const Complex rot = std::polar(1.0, -2.0 * std::numbers::pi * cycles);
    h.noalias() += (p.gain * rot) * ula_response(n_rx, p.aoa) *
                   ula_response(n_tx, p.aod).adjoint();
  }
  return h;
}

PropagationGeometry draw_geometry(const GeometryModel& model, std::uint64_t seed,
                                  std::uint64_t index) {
  auto rng = stream_rng(seed, index, 0x67656f);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  PropagationGeometry geo;
  geo.los_class = unit(rng) < model.p_los ? LosClass::kLos : LosClass::kNlos;
  const bool los = geo.los_class == LosClass::kLos;
  const int n_paths = los ? model.paths_los : model.paths_nlos;

  const double half = 0.5 * model.sector_width;
  const double mean_aod = -half + model.sector_width * unit(rng);
  const double mean_aoa = std::numbers::pi * (unit(rng) - 0.5);
  const double gain_db = model.path_gain_db_mean + model.path_gain_db_std * gauss(rng);
  const double total_power = std::pow(10.0, gain_db / 10.0);

  geo.paths.resize(static_cast<std::size_t>(n_paths));
  std::vector<double> power(geo.paths.size());
  for (std::size_t l = 0; l < geo.paths.size(); ++l) {
    auto& p = geo.paths[l];
    if (los && l == 0) {
      p.delay = 0.0;
      p.aod = mean_aod;
      p.aoa = mean_aoa;
    } else {
      p.delay = model.max_delay * unit(rng);
      p.aod = mean_aod + model.angular_spread * gauss(rng);
      p.aoa = std::numbers::pi * (unit(rng) - 0.5);
    }
    power[l] = std::exp(-p.delay / model.delay_decay);
  }

  const std::size_t first_scattered = los ? 1 : 0;
  const double scattered_sum =
      std::accumulate(power.begin() + static_cast<std::ptrdiff_t>(first_scattered),
                      power.end(), 0.0);
  const double scattered_share = los ? 1.0 / (model.los_k_factor + 1.0) : 1.0;
  for (std::size_t l = 0; l < geo.paths.size(); ++l) {
    auto& p = geo.paths[l];
    if (los && l == 0) {
      const double share = model.los_k_factor / (model.los_k_factor + 1.0);
      p.gain = std::polar(std::sqrt(share * total_power),
                          2.0 * std::numbers::pi * unit(rng));
    } else {
      const double pw = total_power * scattered_share * power[l] / scattered_sum;
      const double re = gauss(rng);
      const double im = gauss(rng);
      p.gain = std::sqrt(pw / 2.0) * Complex(re, im);
    }
  }
  return geo;
}

Dataset generate_paired_dataset(const SystemConfig& config, std::size_t count,
                                std::uint64_t seed, const GeometryModel& model) {
  config.validate();
  if (count == 0) throw SizeError("dataset count must be positive");
  Dataset ds;
  ds.config = config;
  ds.samples.resize(count);
  const auto n = static_cast<std::int64_t>(count);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto geo = draw_geometry(model, seed, static_cast<std::uint64_t>(i));
    auto& s = ds.samples[static_cast<std::size_t>(i)];
    s.h_ul = synthesize_channel(geo, config.f_ul, config.n_rx, config.n_tx);
    s.h_dl = synthesize_channel(geo, config.f_dl, config.n_rx, config.n_tx);
    s.geometry_id = static_cast<std::uint64_t>(i);
  }
  return ds;
}

double snr_db(const CMatrix& h, const SystemConfig& config) {
  const double ratio = (config.rho / config.n_tx) * h.squaredNorm() /
                       (config.sigma_n2 * config.n_rx);
  return 10.0 * std::log10(ratio);
}

Dataset filter_by_snr(const Dataset& ds, double lo_db, double hi_db, Link side) {
  if (lo_db > hi_db) throw ConfigError("filter_by_snr: lo must not exceed hi");
  Dataset out;
  out.config = ds.config;
  for (const auto& s : ds.samples) {
    const double snr = snr_db(side == Link::kUplink ? s.h_ul : s.h_dl, ds.config);
    if (snr >= lo_db && snr <= hi_db) out.samples.push_back(s);
  }
  return out;
}

DatasetSplit split_dataset(const Dataset& ds, std::size_t n_train, std::size_t n_val,
                           std::uint64_t seed) {
  if (n_train + n_val > ds.size())
    throw SizeError("split_dataset: train + val exceeds dataset size");
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = stream_rng(seed, 0, 0x73706c);
  std::shuffle(order.begin(), order.end(), rng);

  DatasetSplit split;
  split.train.config = split.val.config = split.test.config = ds.config;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& s = ds.samples[order[i]];
    if (i < n_train)
      split.train.samples.push_back(s);
    else if (i < n_train + n_val)
      split.val.samples.push_back(s);
    else
      split.test.samples.push_back(s);
  }
  return split;
}

void write_cmx1(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open for writing: " + path.string());
  os << "CMX1\n"
     << ds.size() << ' ' << ds.config.n_rx << ' ' << ds.config.n_tx << '\n';
  for (const auto& s : ds.samples) {
    io::put_cmatrix(os, s.h_ul);
    io::put_cmatrix(os, s.h_dl);
  }
  if (!os) throw ConfigError("write failed: " + path.string());
}

Dataset read_cmx1(const std::filesystem::path& path, const SystemConfig& config) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open dataset: " + path.string());
  io::expect_magic(is, "CMX1");
  std::string header;
  if (!std::getline(is, header)) throw FormatError("CMX1: missing header");
  std::istringstream hs(header);
  std::size_t n = 0;
  int n_rx = 0;
  int n_tx = 0;
  if (!(hs >> n >> n_rx >> n_tx)) throw FormatError("CMX1: malformed header");
  if (n_rx != config.n_rx || n_tx != config.n_tx)
    throw ConfigError("CMX1: file dimensions do not match the configuration: " +
                      path.string());
  Dataset ds;
  ds.config = config;
  ds.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.samples[i].h_ul = io::get_cmatrix(is, n_rx, n_tx);
    ds.samples[i].h_dl = io::get_cmatrix(is, n_rx, n_tx);
    ds.samples[i].geometry_id = i;
  }
  return ds;
}

}  // namespace mimofb
