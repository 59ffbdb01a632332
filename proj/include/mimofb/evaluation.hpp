#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mimofb/channel_model.hpp"
#include "mimofb/codebook.hpp"
#include "mimofb/encoder.hpp"
#include "mimofb/estimation.hpp"

namespace mimofb {

enum class StrategyKind {
  kUniformPower,
  kWfTrue,
  kUniEigspTrue,
  kCbTrueCsi,
  kCbLs,
  kCbOmp,
  kWfLs,
  kWfOmp,
  kDnn,
  kAllTrainCb,
};

enum class CodebookSource { kNone, kUplink, kDownlink };

/// A transmit strategy. Codebook strategies name the link their codebook was
/// trained on and its size; all-train-cb ignores m_bits.
struct StrategySpec {
  StrategyKind kind = StrategyKind::kUniformPower;
  CodebookSource source = CodebookSource::kNone;
  int m_bits = 0;

  bool needs_codebook() const;
  bool needs_pilots() const;
  void validate() const;
  /// Canonical text form, e.g. "cb-omp:dl:3", "all-train-cb:ul", "wf-true".
  std::string name() const;
};

/// Parses the canonical text form produced by StrategySpec::name().
StrategySpec parse_strategy(const std::string& text);

std::string to_string(StrategyKind k);
std::string to_string(CodebookSource s);
CodebookSource source_from_string(const std::string& s);
Link link_of(CodebookSource s);

/// Key under which a codebook is stored in EvalAssets ("dl_m3", "ul_all").
std::string codebook_key(CodebookSource source, int m_bits, bool all_train = false);
std::string encoder_key(CodebookSource source, int m_bits, int n_p);

struct EvalAssets {
  std::map<std::string, Codebook> codebooks;
  std::map<std::string, EncoderModel> encoders;

  const Codebook& codebook_for(const StrategySpec& spec) const;
  const EncoderModel& encoder_for(const StrategySpec& spec, int n_p) const;
};

struct EvalSettings {
  std::uint64_t seed = 0;      // observation noise seed, shared by all strategies
  int oversampling = 2;        // OMP dictionary
  int omp_s_max = 16;          // genie sparsity search range
  GenieMetric genie_metric = GenieMetric::kChannelError;
};

/// Spectral efficiency on the true DL channel of every evaluation sample, in
/// sample order. Uses config.n_p pilots for estimate-based strategies.
std::vector<double> evaluate_strategy(const StrategySpec& spec, const Dataset& eval_ds,
                                      const EvalAssets& assets, const SystemConfig& config,
                                      const EvalSettings& settings);

struct BoxplotStats {
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double whisker_lo = 0.0;
  double whisker_hi = 0.0;
  double mean = 0.0;
};

/// Linear-interpolation quartiles; whiskers are the most extreme data points
/// within 1.5 IQR of the quartiles.
BoxplotStats boxplot_stats(std::vector<double> values);

struct StrategyResult {
  std::string name;
  std::vector<double> values;
  BoxplotStats stats;
};

struct SweepTable {
  std::vector<int> pilot_counts;
  /// Row per strategy; empty entries where the strategy is undefined.
  std::vector<std::pair<std::string, std::vector<std::optional<double>>>> rows;
};

SweepTable pilot_sweep(const std::vector<StrategySpec>& specs, const Dataset& eval_ds,
                       const EvalAssets& assets, const std::vector<int>& pilot_counts,
                       const SystemConfig& config, const EvalSettings& settings);

struct EvalReport {
  std::vector<StrategyResult> strategies;
  std::optional<SweepTable> sweep;
};

EvalReport evaluate_all(const std::vector<StrategySpec>& specs, const Dataset& eval_ds,
                        const EvalAssets& assets, const SystemConfig& config,
                        const EvalSettings& settings);

void write_box_csv(const std::filesystem::path& path, const EvalReport& report);
void write_sweep_csv(const std::filesystem::path& path, const SweepTable& sweep);
/// Human-readable tables for both parts of the report.
std::string format_report(const EvalReport& report);

}  // namespace mimofb
