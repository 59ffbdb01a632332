#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mimofb/channel_model.hpp"
#include "mimofb/codebook.hpp"
#include "mimofb/types.hpp"

namespace mimofb {

// ---------------------------------------------------------------------------
// Inputs and labels

/// Real and imaginary planes of a pilot observation, jointly scaled to unit
/// Frobenius norm.
struct ObservationTensor {
  RMatrix re;
  RMatrix im;

  /// Plane-major flattening: index = plane * (rows * cols) + row * cols + col.
  RVector flatten() const;
};

ObservationTensor normalize_observation(const CMatrix& y);

/// Inputs stored column-wise (features x samples), labels are 0-based.
struct LabeledSet {
  int n_rx = 0;
  int n_p = 0;
  RMatrix inputs;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  LabeledSet subset(std::span<const std::size_t> idx) const;
};

/// One noisy observation per channel (stream = sample index) labelled with
/// the best codebook entry for the true channel.
LabeledSet build_labels(const Dataset& ds, Link link, const Codebook& cb,
                        const CMatrix& pilots, double sigma_n2, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Architecture

enum class Activation { kRelu, kSigmoid, kPrelu, kLeakyRelu, kTanh, kSwish, kLinear };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct EncoderArchitecture {
  int n_rx = 2;
  int n_p = 2;
  int conv_depth = 1;
  int kernels = 8;
  int kernel_h = 3;
  int kernel_w = 3;
  bool max_pool = false;
  Activation activation = Activation::kRelu;
  std::vector<int> dense_tail{512, 256, 128, 64};
  int classes = 8;
  bool batch_norm = true;

  int input_features() const { return 2 * n_rx * n_p; }
  int flat_features() const;
  void validate() const;
};

enum class Mode { kTrain, kInfer };

struct ParamSlice {
  std::string name;
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;
  bool trainable = true;
  bool regularized = false;  // weights only

  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

class Layer;

/// Convolutional modules, optional pooling and a dense tail, over a flat
/// parameter store with named slices.
class EncoderModel {
 public:
  EncoderModel();
  explicit EncoderModel(const EncoderArchitecture& arch);
  EncoderModel(const EncoderModel& other);
  EncoderModel& operator=(const EncoderModel& other);
  EncoderModel(EncoderModel&&) noexcept;
  EncoderModel& operator=(EncoderModel&&) noexcept;
  ~EncoderModel();

  const EncoderArchitecture& architecture() const { return arch_; }

  /// Glorot-uniform weights, zero biases, unit batch-norm scale.
  void initialize(std::uint64_t seed);

  std::vector<double>& parameters() { return params_; }
  const std::vector<double>& parameters() const { return params_; }
  const std::vector<ParamSlice>& slices() const { return slices_; }
  const ParamSlice& slice(const std::string& name) const;
  std::span<double> view(const std::string& name);

  /// Inputs are features x batch; returns classes x batch logits. Train mode
  /// uses batch statistics, updates running statistics and caches what
  /// backward() needs.
  RMatrix forward_train(const RMatrix& x);
  RMatrix forward_infer(const RMatrix& x) const;
  RMatrix forward(const RMatrix& x, Mode mode);
  RVector forward(const ObservationTensor& x, Mode mode);

  /// Gradient of a loss with respect to every parameter, given dL/dlogits of
  /// the last forward_train() call. Output has the parameter store layout.
  std::vector<double> backward(const RMatrix& dlogits);

 private:
  void build();

  EncoderArchitecture arch_;
  std::vector<double> params_;
  std::vector<ParamSlice> slices_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  int epochs = 50;
  int early_stop_patience = 5;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double l1 = 0.0;
  double l2 = 0.0;
  double lr_decay = 1.0;
  std::uint64_t seed = 0;
  /// Multiply every training observation by a fresh Haar-random receive-side
  /// unitary. Labels are invariant to it and U N has the law of N.
  bool augment_rx_unitary = false;

  void validate() const;
};

struct LossBreakdown {
  double cross_entropy = 0.0;
  double penalty = 0.0;
  double total() const { return cross_entropy + penalty; }
};

/// Mean softmax cross-entropy of logits (classes x batch) and its gradient.
double softmax_cross_entropy(const RMatrix& logits, std::span<const int> labels,
                             RMatrix* dlogits);

/// Regularization l1 |w|_1 + l2 |w|_2^2 over weight slices; adds its
/// gradient to `grad` when given.
double weight_penalty(const EncoderModel& model, double l1, double l2,
                      std::vector<double>* grad);

/// Full training loss in train mode (batch statistics) and its gradient.
LossBreakdown loss_and_gradient(EncoderModel& model, const RMatrix& x,
                                std::span<const int> labels, double l1, double l2,
                                std::vector<double>* grad);

struct EpochRecord {
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  EncoderModel model;  // best-validation snapshot
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  double best_val_accuracy = 0.0;
};

/// Applies the receive-side unitary u to every column of a flattened
/// observation batch (n_rx x n_p planes).
void rotate_observations(RMatrix& x, int n_rx, int n_p, const CMatrix& u, Eigen::Index col);

/// Haar-distributed n x n unitary.
CMatrix haar_unitary(int n, std::mt19937_64& rng);

TrainResult train(const EncoderModel& init, const LabeledSet& train_set,
                  const LabeledSet& val_set, const TrainConfig& cfg);

struct Metrics {
  double loss = 0.0;      // mean cross-entropy
  double accuracy = 0.0;
};
Metrics evaluate(const EncoderModel& model, const LabeledSet& set);

/// Hyperparameter ranges for random search. Learning rate and penalty
/// weights are drawn log-uniformly, everything else uniformly.
struct SearchSpace {
  int conv_depth_min = 1;
  int conv_depth_max = 3;
  int kernels_min = 4;
  int kernels_max = 16;
  std::vector<Activation> activations{Activation::kRelu,      Activation::kSigmoid,
                                      Activation::kPrelu,     Activation::kLeakyRelu,
                                      Activation::kTanh,      Activation::kSwish};
  int batch_min = 20;
  int batch_max = 200;
  double lr_min = 1e-4;
  double lr_max = 3e-3;
  double l1_min = 1e-6;
  double l1_max = 1e-3;
  double l2_min = 1e-6;
  double l2_max = 1e-3;
  double decay_min = 0.94;
  double decay_max = 1.0;
  int epochs = 50;
  int early_stop_patience = 5;
  bool max_pool = false;
  bool batch_norm = true;
  std::vector<int> dense_tail{512, 256, 128, 64};
  bool augment_rx_unitary = true;

  void validate() const;
};

struct TrialRecord {
  EncoderArchitecture arch;
  TrainConfig cfg;
  double val_accuracy = 0.0;
  double val_loss = 0.0;
  int epochs_run = 0;
};

struct SearchResult {
  EncoderModel best;
  std::size_t best_trial = 0;
  std::vector<TrialRecord> trials;
};

/// Draws the architecture and training config of trial `index`.
std::pair<EncoderArchitecture, TrainConfig> sample_trial(const SearchSpace& space,
                                                          int n_rx, int n_p, int classes,
                                                          std::uint64_t seed,
                                                          std::size_t index);

SearchResult random_search(const SearchSpace& space, int budget, const LabeledSet& train_set,
                           const LabeledSet& val_set, int classes, std::uint64_t seed);

/// Argmax of infer-mode logits on the normalized observation, lowest index on ties.
int predict_index(const EncoderModel& model, const CMatrix& y);

void save_encoder(const std::filesystem::path& path, const EncoderModel& model);
EncoderModel load_encoder(const std::filesystem::path& path);

}  // namespace mimofb
