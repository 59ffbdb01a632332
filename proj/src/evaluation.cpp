#include "mimofb/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mimofb/capacity.hpp"

namespace mimofb {

namespace {

struct KindName {
  StrategyKind kind;
  const char* name;
};

constexpr KindName kKindNames[] = {
    {StrategyKind::kUniformPower, "uniform-power"}, {StrategyKind::kWfTrue, "wf-true"},
    {StrategyKind::kUniEigspTrue, "uni-eigsp-true"}, {StrategyKind::kCbTrueCsi, "cb-true-csi"},
    {StrategyKind::kCbLs, "cb-ls"},                 {StrategyKind::kCbOmp, "cb-omp"},
    {StrategyKind::kWfLs, "wf-ls"},                 {StrategyKind::kWfOmp, "wf-omp"},
    {StrategyKind::kDnn, "dnn"},                    {StrategyKind::kAllTrainCb, "all-train-cb"},
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string part;
  std::istringstream is(s);
  while (std::getline(is, part, sep)) out.push_back(part);
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Water-filling on an estimate; a vanishing estimate falls back to uniform power.
Covariance wf_or_uniform(const CMatrix& h_est, const SystemConfig& config) {
  if (h_est.squaredNorm() == 0.0) return uniform_power_cov(config);
  return waterfilling_cov(h_est, config.rho, config.sigma_n2);
}

double type7_quantile(const std::vector<double>& sorted, double p) {
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

std::string to_string(StrategyKind k) {
  for (const auto& e : kKindNames)
    if (e.kind == k) return e.name;
  return "?";
}

std::string to_string(CodebookSource s) {
  switch (s) {
    case CodebookSource::kUplink: return "ul";
    case CodebookSource::kDownlink: return "dl";
    case CodebookSource::kNone: return "none";
  }
  return "none";
}

CodebookSource source_from_string(const std::string& s) {
  if (s == "ul" || s == "UL") return CodebookSource::kUplink;
  if (s == "dl" || s == "DL") return CodebookSource::kDownlink;
  if (s == "none" || s.empty()) return CodebookSource::kNone;
  throw ConfigError("unknown codebook source: " + s);
}

Link link_of(CodebookSource s) {
  if (s == CodebookSource::kNone) throw ConfigError("strategy has no codebook link");
  return s == CodebookSource::kUplink ? Link::kUplink : Link::kDownlink;
}

std::string codebook_key(CodebookSource source, int m_bits, bool all_train) {
  return to_string(source) + (all_train ? std::string("_all") : "_m" + std::to_string(m_bits));
}

std::string encoder_key(CodebookSource source, int m_bits, int n_p) {
  return codebook_key(source, m_bits) + "_np" + std::to_string(n_p);
}

bool StrategySpec::needs_codebook() const {
  switch (kind) {
    case StrategyKind::kCbTrueCsi:
    case StrategyKind::kCbLs:
    case StrategyKind::kCbOmp:
    case StrategyKind::kDnn:
    case StrategyKind::kAllTrainCb:
      return true;
    default:
      return false;
  }
}

bool StrategySpec::needs_pilots() const {
  switch (kind) {
    case StrategyKind::kCbLs:
    case StrategyKind::kCbOmp:
    case StrategyKind::kWfLs:
    case StrategyKind::kWfOmp:
    case StrategyKind::kDnn:
      return true;
    default:
      return false;
  }
}

void StrategySpec::validate() const {
  if (needs_codebook() && source == CodebookSource::kNone)
    throw ConfigError("strategy " + to_string(kind) + " needs a codebook source (ul or dl)");
  if (!needs_codebook() && source != CodebookSource::kNone)
    throw ConfigError("strategy " + to_string(kind) + " takes no codebook");
  if (needs_codebook() && kind != StrategyKind::kAllTrainCb && m_bits < 0)
    throw ConfigError("codebook bits must be non-negative");
}

std::string StrategySpec::name() const {
  std::string s = to_string(kind);
  if (kind == StrategyKind::kAllTrainCb) return s + ":" + to_string(source);
  if (needs_codebook()) return s + ":" + to_string(source) + ":" + std::to_string(m_bits);
  return s;
}

StrategySpec parse_strategy(const std::string& text) {
  const auto parts = split(text, ':');
  if (parts.empty()) throw ConfigError("empty strategy");
  StrategySpec spec;
  bool found = false;
  for (const auto& e : kKindNames)
    if (parts[0] == e.name) {
      spec.kind = e.kind;
      found = true;
    }
  if (!found) throw ConfigError("unknown strategy: " + text);
  if (parts.size() > 1) spec.source = source_from_string(parts[1]);
  if (parts.size() > 2) {
    try {
      spec.m_bits = std::stoi(parts[2]);
    } catch (const std::exception&) {
      throw ConfigError("bad codebook bits in strategy: " + text);
    }
  }
  if (parts.size() > 3) throw ConfigError("malformed strategy: " + text);
  spec.validate();
  return spec;
}

const Codebook& EvalAssets::codebook_for(const StrategySpec& spec) const {
  const auto key = codebook_key(spec.source, spec.m_bits, spec.kind == StrategyKind::kAllTrainCb);
  const auto it = codebooks.find(key);
  if (it == codebooks.end()) throw ConfigError("missing codebook asset " + key + " for " + spec.name());
  return it->second;
}

const EncoderModel& EvalAssets::encoder_for(const StrategySpec& spec, int n_p) const {
  const auto key = encoder_key(spec.source, spec.m_bits, n_p);
  const auto it = encoders.find(key);
  if (it == encoders.end()) throw ConfigError("missing encoder asset " + key + " for " + spec.name());
  return it->second;
}

std::vector<double> evaluate_strategy(const StrategySpec& spec, const Dataset& eval_ds,
                                      const EvalAssets& assets, const SystemConfig& config,
                                      const EvalSettings& settings) {
  spec.validate();
  const Codebook* cb = spec.needs_codebook() ? &assets.codebook_for(spec) : nullptr;
  const EncoderModel* enc = spec.kind == StrategyKind::kDnn ? &assets.encoder_for(spec, config.n_p) : nullptr;
  const bool uses_ls = spec.kind == StrategyKind::kCbLs || spec.kind == StrategyKind::kWfLs;
  if (uses_ls && config.n_p < config.n_tx)
    throw RankError("LS strategies need at least n_tx pilots");
  const bool uses_omp = spec.kind == StrategyKind::kCbOmp || spec.kind == StrategyKind::kWfOmp;

  CMatrix pilots;
  if (spec.needs_pilots()) pilots = pilot_matrix(config.n_tx, config.n_p, config.rho);
  SparseDictionary dict;
  if (uses_omp) dict = build_dictionary(config.n_rx, config.n_tx, settings.oversampling);
  const Covariance q_uniform = uniform_power_cov(config);

  const auto n = static_cast<std::int64_t>(eval_ds.size());
  std::vector<double> se(eval_ds.size(), 0.0);
  std::vector<std::string> errors(eval_ds.size());

#pragma omp parallel for schedule(dynamic, 8)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    try {
      const CMatrix& h = eval_ds.samples[idx].h_dl;
      Covariance q;
      std::optional<PilotObservation> obs;
      if (spec.needs_pilots())
        obs = observe(h, pilots, config.sigma_n2, settings.seed, static_cast<std::uint64_t>(i));
      switch (spec.kind) {
        case StrategyKind::kUniformPower:
          q = q_uniform;
          break;
        case StrategyKind::kWfTrue:
          q = h.squaredNorm() == 0.0 ? q_uniform : waterfilling_cov(h, config.rho, config.sigma_n2);
          break;
        case StrategyKind::kUniEigspTrue:
          q = uniform_eigenspace_cov(h, config.rho);
          break;
        case StrategyKind::kCbTrueCsi:
        case StrategyKind::kAllTrainCb:
          q = cb->entries[static_cast<std::size_t>(select_index(h, *cb, config.sigma_n2))];
          break;
        case StrategyKind::kCbLs:
          q = cb->entries[static_cast<std::size_t>(select_index(ls_estimate(*obs), *cb, config.sigma_n2))];
          break;
        case StrategyKind::kWfLs:
          q = wf_or_uniform(ls_estimate(*obs), config);
          break;
        case StrategyKind::kCbOmp:
        case StrategyKind::kWfOmp: {
          const auto g = genie_omp(*obs, dict, h, settings.omp_s_max, settings.genie_metric, cb);
          q = spec.kind == StrategyKind::kCbOmp
                  ? cb->entries[static_cast<std::size_t>(select_index(g.h, *cb, config.sigma_n2))]
                  : wf_or_uniform(g.h, config);
          break;
        }
        case StrategyKind::kDnn:
          q = cb->entries[static_cast<std::size_t>(predict_index(*enc, obs->y))];
          break;
      }
      se[idx] = spectral_efficiency_unchecked(h, q, config.sigma_n2);
    } catch (const std::exception& e) {
      errors[idx] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw Error(spec.name() + ": " + e);
  return se;
}

BoxplotStats boxplot_stats(std::vector<double> values) {
  if (values.empty()) throw SizeError("boxplot_stats: no values");
  std::sort(values.begin(), values.end());
  BoxplotStats s;
  s.q1 = type7_quantile(values, 0.25);
  s.median = type7_quantile(values, 0.5);
  s.q3 = type7_quantile(values, 0.75);
  const double iqr = s.q3 - s.q1;
  const double lo_fence = s.q1 - 1.5 * iqr;
  const double hi_fence = s.q3 + 1.5 * iqr;
  s.whisker_lo = *std::lower_bound(values.begin(), values.end(), lo_fence);
  s.whisker_hi = *(std::upper_bound(values.begin(), values.end(), hi_fence) - 1);
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  return s;
}

SweepTable pilot_sweep(const std::vector<StrategySpec>& specs, const Dataset& eval_ds,
                       const EvalAssets& assets, const std::vector<int>& pilot_counts,
                       const SystemConfig& config, const EvalSettings& settings) {
  SweepTable table;
  table.pilot_counts = pilot_counts;
  for (int n_p : pilot_counts)
    if (n_p < 1 || n_p > config.n_tx) throw ConfigError("pilot counts must lie in [1, n_tx]");
  for (const auto& spec : specs) {
    std::vector<std::optional<double>> row;
    std::optional<double> fixed;
    for (int n_p : pilot_counts) {
      const bool uses_ls = spec.kind == StrategyKind::kCbLs || spec.kind == StrategyKind::kWfLs;
      if (uses_ls && n_p < config.n_tx) {
        row.emplace_back();
        continue;
      }
      // Pilot-free strategies give the same row at every count.
      if (!spec.needs_pilots() && fixed) {
        row.push_back(fixed);
        continue;
      }
      SystemConfig c = config;
      c.n_p = n_p;
      const auto values = evaluate_strategy(spec, eval_ds, assets, c, settings);
      double sum = 0.0;
      for (double v : values) sum += v;
      const double mean = values.empty() ? 0.0 : sum / static_cast<double>(values.size());
      if (!spec.needs_pilots()) fixed = mean;
      row.push_back(mean);
    }
    table.rows.emplace_back(spec.name(), std::move(row));
  }
  return table;
}

EvalReport evaluate_all(const std::vector<StrategySpec>& specs, const Dataset& eval_ds,
                        const EvalAssets& assets, const SystemConfig& config,
                        const EvalSettings& settings) {
  EvalReport report;
  for (const auto& spec : specs) {
    StrategyResult r;
    r.name = spec.name();
    r.values = evaluate_strategy(spec, eval_ds, assets, config, settings);
    r.stats = boxplot_stats(r.values);
    report.strategies.push_back(std::move(r));
  }
  return report;
}

void write_box_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open for writing: " + path.string());
  os << "strategy,n,mean,median,q1,q3,whisker_lo,whisker_hi\n";
  for (const auto& r : report.strategies) {
    const auto& s = r.stats;
    os << r.name << ',' << r.values.size() << ',' << fmt(s.mean) << ',' << fmt(s.median) << ','
       << fmt(s.q1) << ',' << fmt(s.q3) << ',' << fmt(s.whisker_lo) << ',' << fmt(s.whisker_hi)
       << '\n';
  }
}

void write_sweep_csv(const std::filesystem::path& path, const SweepTable& sweep) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open for writing: " + path.string());
  os << "strategy";
  for (int n_p : sweep.pilot_counts) os << ",np" << n_p;
  os << '\n';
  for (const auto& [name, row] : sweep.rows) {
    os << name;
    for (const auto& v : row) os << ',' << (v ? fmt(*v) : std::string());
    os << '\n';
  }
}

std::string format_report(const EvalReport& report) {
  std::ostringstream os;
  char line[256];
  if (!report.strategies.empty()) {
    os << "Spectral efficiency on the evaluation set [bit/s/Hz]\n";
    std::snprintf(line, sizeof line, "%-22s %9s %9s %9s %9s %9s %9s\n", "strategy", "mean",
                  "median", "q1", "q3", "wlo", "whi");
    os << line;
    for (const auto& r : report.strategies) {
      const auto& s = r.stats;
      std::snprintf(line, sizeof line, "%-22s %9.4f %9.4f %9.4f %9.4f %9.4f %9.4f\n",
                    r.name.c_str(), s.mean, s.median, s.q1, s.q3, s.whisker_lo, s.whisker_hi);
      os << line;
    }
  }
  if (report.sweep) {
    os << "\nMean spectral efficiency over the number of pilots\n";
    std::snprintf(line, sizeof line, "%-22s", "strategy");
    os << line;
    for (int n_p : report.sweep->pilot_counts) {
      std::snprintf(line, sizeof line, " %9s", ("n_p=" + std::to_string(n_p)).c_str());
      os << line;
    }
    os << '\n';
    for (const auto& [name, row] : report.sweep->rows) {
      std::snprintf(line, sizeof line, "%-22s", name.c_str());
      os << line;
      for (const auto& v : row) {
        if (v) std::snprintf(line, sizeof line, " %9.4f", *v);
        else std::snprintf(line, sizeof line, " %9s", "-");
        os << line;
      }
      os << '\n';
    }
  }
  return os.str();
}

}  // namespace mimofb
