#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mimofb/channel_model.hpp"
#include "mimofb/encoder.hpp"
#include "mimofb/evaluation.hpp"
#include "mimofb/lloyd.hpp"

namespace mimofb {

enum class Stage { kGenerate, kFilter, kSplit, kCodebooks, kLabel, kTrain, kEvaluate, kSweep };

std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);
/// All stages in pipeline order.
std::vector<Stage> all_stages();

/// Raised when a pipeline stage fails; what() starts with "stage <name>: ".
class StageError : public Error {
 public:
  StageError(Stage stage, const std::string& message);
  Stage stage() const { return stage_; }

 private:
  Stage stage_;
};

struct ExperimentConfig {
  SystemConfig system;
  GeometryModel geometry;

  // Seeds. Every stage seed defaults to an offset of the master seed.
  std::uint64_t seed = 1;
  std::optional<std::uint64_t> data_seed, split_seed, lloyd_seed, label_seed, search_seed,
      eval_seed;

  // Data
  std::size_t count = 4000;
  double snr_lo_db = -10.0;
  double snr_hi_db = 20.0;
  Link filter_side = Link::kDownlink;
  std::size_t n_train = 1000;
  std::size_t n_val = 250;

  // Codebooks
  std::vector<int> codebook_bits{3};
  std::vector<CodebookSource> codebook_links{CodebookSource::kUplink, CodebookSource::kDownlink};
  bool all_train_codebook = true;
  LloydOptions lloyd;
  PgdOptions pgd;

  // Encoder
  std::vector<CodebookSource> encoder_links{CodebookSource::kDownlink};
  int encoder_bits = 3;
  std::vector<int> encoder_pilots{1, 2, 4, 8};
  int search_budget = 10;
  SearchSpace search;

  // Evaluation
  std::vector<StrategySpec> strategies;
  std::vector<StrategySpec> sweep_strategies;
  std::vector<int> sweep_pilots{1, 2, 4, 8};
  int oversampling = 2;
  int omp_s_max = 16;
  GenieMetric genie_metric = GenieMetric::kChannelError;

  // Pipeline
  std::vector<Stage> stages = all_stages();

  /// Explicit artifact inputs, used when the producing stage is not run.
  /// Keys: "dataset", "filtered", "train", "val", "test", "codebook.<key>",
  /// "encoder.<key>". Unlisted inputs are looked up in the output directory.
  std::map<std::string, std::filesystem::path> inputs;

  std::uint64_t stage_seed(Stage s) const;
  void validate() const;
};

/// Parses an INI file (see README for the schema). Unknown keys are errors.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
ExperimentConfig parse_experiment_config(const std::string& ini_text);

/// File names of the persisted artifacts inside the output directory.
namespace artifact {
std::string codebook_file(const std::string& key);
std::string encoder_file(const std::string& key);
inline constexpr const char* kDataset = "dataset.cmx1";
inline constexpr const char* kFiltered = "filtered.cmx1";
inline constexpr const char* kTrain = "train.cmx1";
inline constexpr const char* kVal = "val.cmx1";
inline constexpr const char* kTest = "test.cmx1";
inline constexpr const char* kBoxCsv = "fig2_box.csv";
inline constexpr const char* kSweepCsv = "fig3_sweep.csv";
inline constexpr const char* kReport = "report.txt";
}  // namespace artifact

struct ExperimentResult {
  std::vector<Stage> executed;
  std::vector<std::filesystem::path> written;
  EvalReport report;
};

/// Runs the configured stages in pipeline order. Stages read the outputs of
/// earlier stages from memory when they ran in the same call, otherwise from
/// `inputs` or the output directory. Throws StageError.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace mimofb
