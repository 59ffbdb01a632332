#include "mimofb/encoder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "binary_io.hpp"
#include "mimofb/estimation.hpp"
#include "mimofb/parallel.hpp"

namespace mimofb {

namespace {

constexpr double kBnEpsilon = 1e-5;
constexpr double kBnMomentum = 0.1;
constexpr double kPreluInit = 0.25;
constexpr double kLeakySlope = 0.01;
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEpsilon = 1e-8;

using ConstMap = Eigen::Map<const RMatrix>;
using MutMap = Eigen::Map<RMatrix>;

// Reads go through an owned copy: Eigen's vectorized products and reductions
// peel loops according to address alignment, and the parameter store is only
// malloc-aligned, so computing on a Map would make results depend on where
// the heap placed the buffer.
RMatrix load(std::span<const double> p, const ParamSlice& s) {
  return ConstMap(p.data() + s.offset, s.rows, s.cols);
}
MutMap mmap(std::span<double> p, const ParamSlice& s) {
  return MutMap(p.data() + s.offset, s.rows, s.cols);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

// ---------------------------------------------------------------------------
// Layers. Conv-stack tensors are channels x (batch * height * width) with the
// column index b * (h * w) + row * w + col; dense tensors are features x batch.

class Layer {
 public:
  virtual ~Layer() = default;
  virtual RMatrix forward(const RMatrix& x, std::span<double> params, bool train) = 0;
  virtual RMatrix infer(const RMatrix& x, std::span<const double> params) const = 0;
  virtual RMatrix backward(const RMatrix& dy, std::span<const double> params,
                           std::span<double> grad) = 0;
};

namespace {

class ToConvLayout final : public Layer {
 public:
  ToConvLayout(int channels, int spatial) : c_(channels), hw_(spatial) {}
  RMatrix forward(const RMatrix& x, std::span<double>, bool) override { return apply(x); }
  RMatrix infer(const RMatrix& x, std::span<const double>) const override { return apply(x); }
  RMatrix backward(const RMatrix& dy, std::span<const double>, std::span<double>) override {
    const auto batch = dy.cols() / hw_;
    RMatrix dx(c_ * hw_, batch);
    for (Eigen::Index b = 0; b < batch; ++b)
      for (int c = 0; c < c_; ++c)
        dx.col(b).segment(c * hw_, hw_) = dy.row(c).segment(b * hw_, hw_).transpose();
    return dx;
  }

 private:
  RMatrix apply(const RMatrix& x) const {
    const auto batch = x.cols();
    RMatrix y(c_, batch * hw_);
    for (Eigen::Index b = 0; b < batch; ++b)
      for (int c = 0; c < c_; ++c)
        y.row(c).segment(b * hw_, hw_) = x.col(b).segment(c * hw_, hw_).transpose();
    return y;
  }
  int c_;
  int hw_;
};

class Flatten final : public Layer {
 public:
  Flatten(int channels, int spatial) : c_(channels), hw_(spatial) {}
  RMatrix forward(const RMatrix& x, std::span<double>, bool) override { return apply(x); }
  RMatrix infer(const RMatrix& x, std::span<const double>) const override { return apply(x); }
  RMatrix backward(const RMatrix& dy, std::span<const double>, std::span<double>) override {
    const auto batch = dy.cols();
    RMatrix dx(c_, batch * hw_);
    for (Eigen::Index b = 0; b < batch; ++b)
      for (int c = 0; c < c_; ++c)
        dx.row(c).segment(b * hw_, hw_) = dy.col(b).segment(c * hw_, hw_).transpose();
    return dx;
  }

 private:
  RMatrix apply(const RMatrix& x) const {
    const auto batch = x.cols() / hw_;
    RMatrix y(c_ * hw_, batch);
    for (Eigen::Index b = 0; b < batch; ++b)
      for (int c = 0; c < c_; ++c)
        y.col(b).segment(c * hw_, hw_) = x.row(c).segment(b * hw_, hw_).transpose();
    return y;
  }
  int c_;
  int hw_;
};

/// Stride-1 convolution with zero "same" padding, via im2col.
class Conv2d final : public Layer {
 public:
  Conv2d(ParamSlice w, ParamSlice b, int in_c, int h, int w_sp, int kh, int kw)
      : weight_(std::move(w)), bias_(std::move(b)), in_c_(in_c), h_(h), w_(w_sp), kh_(kh), kw_(kw) {}

  RMatrix forward(const RMatrix& x, std::span<double> params, bool train) override {
    RMatrix cols = im2col(x);
    RMatrix y = load(params, weight_) * cols;
    y.colwise() += load(params, bias_).col(0);
    if (train) cols_ = std::move(cols);
    return y;
  }
  RMatrix infer(const RMatrix& x, std::span<const double> params) const override {
    RMatrix y = load(params, weight_) * im2col(x);
    y.colwise() += load(params, bias_).col(0);
    return y;
  }
  RMatrix backward(const RMatrix& dy, std::span<const double> params,
                   std::span<double> grad) override {
    mmap(grad, weight_) += RMatrix(dy * cols_.transpose());
    mmap(grad, bias_).col(0) += RVector(dy.rowwise().sum());
    const RMatrix dcols = load(params, weight_).transpose() * dy;
    return col2im(dcols);
  }

 private:
  RMatrix im2col(const RMatrix& x) const {
    const int hw = h_ * w_;
    const auto batch = x.cols() / hw;
    const int ph = (kh_ - 1) / 2;
    const int pw = (kw_ - 1) / 2;
    RMatrix cols = RMatrix::Zero(in_c_ * kh_ * kw_, batch * hw);
    for (Eigen::Index b = 0; b < batch; ++b)
      for (int r = 0; r < h_; ++r)
        for (int c = 0; c < w_; ++c) {
          const auto col = b * hw + r * w_ + c;
          for (int ci = 0; ci < in_c_; ++ci)
            for (int dr = 0; dr < kh_; ++dr) {
              const int rr = r + dr - ph;
              if (rr < 0 || rr >= h_) continue;
              for (int dc = 0; dc < kw_; ++dc) {
                const int cc = c + dc - pw;
                if (cc < 0 || cc >= w_) continue;
                cols((ci * kh_ + dr) * kw_ + dc, col) = x(ci, b * hw + rr * w_ + cc);
              }
            }
        }
    return cols;
  }
  RMatrix col2im(const RMatrix& dcols) const {
    const int hw = h_ * w_;
    const auto batch = dcols.cols() / hw;
    const int ph = (kh_ - 1) / 2;
    const int pw = (kw_ - 1) / 2;
    RMatrix dx = RMatrix::Zero(in_c_, batch * hw);
    for (Eigen::Index b = 0; b < batch; ++b)
      for (int r = 0; r < h_; ++r)
        for (int c = 0; c < w_; ++c) {
          const auto col = b * hw + r * w_ + c;
          for (int ci = 0; ci < in_c_; ++ci)
            for (int dr = 0; dr < kh_; ++dr) {
              const int rr = r + dr - ph;
              if (rr < 0 || rr >= h_) continue;
              for (int dc = 0; dc < kw_; ++dc) {
                const int cc = c + dc - pw;
                if (cc < 0 || cc >= w_) continue;
                dx(ci, b * hw + rr * w_ + cc) += dcols((ci * kh_ + dr) * kw_ + dc, col);
              }
            }
        }
    return dx;
  }

  ParamSlice weight_, bias_;
  int in_c_, h_, w_, kh_, kw_;
  RMatrix cols_;
};

/// Normalizes every row over the columns (batch, and positions for conv).
class BatchNorm final : public Layer {
 public:
  BatchNorm(ParamSlice gamma, ParamSlice beta, ParamSlice mean, ParamSlice var)
      : gamma_(std::move(gamma)), beta_(std::move(beta)), mean_(std::move(mean)), var_(std::move(var)) {}

  RMatrix forward(const RMatrix& x, std::span<double> params, bool train) override {
    if (!train) return infer(x, params);
    const auto n = static_cast<double>(x.cols());
    const RVector mu = x.rowwise().mean();
    RMatrix centered = x.colwise() - mu;
    const RVector var = centered.rowwise().squaredNorm() / n;
    inv_std_ = (var.array() + kBnEpsilon).rsqrt().matrix();
    xhat_ = inv_std_.asDiagonal() * centered;

    auto rm = mmap(params, mean_).col(0);
    auto rv = mmap(params, var_).col(0);
    const double unbias = n > 1.0 ? n / (n - 1.0) : 1.0;
    rm = (1.0 - kBnMomentum) * rm + kBnMomentum * mu;
    rv = (1.0 - kBnMomentum) * rv + kBnMomentum * unbias * var;

    RMatrix y = load(params, gamma_).col(0).asDiagonal() * xhat_;
    y.colwise() += load(params, beta_).col(0);
    return y;
  }
  RMatrix infer(const RMatrix& x, std::span<const double> params) const override {
    const RVector scale = load(params, gamma_).col(0).array() *
                          (load(params, var_).col(0).array() + kBnEpsilon).rsqrt();
    const RVector shift = load(params, beta_).col(0).array() -
                          load(params, mean_).col(0).array() * scale.array();
    RMatrix y = scale.asDiagonal() * x;
    y.colwise() += shift;
    return y;
  }
  RMatrix backward(const RMatrix& dy, std::span<const double> params,
                   std::span<double> grad) override {
    const auto n = static_cast<double>(dy.cols());
    const RVector dbeta = dy.rowwise().sum();
    const RVector dgamma = dy.cwiseProduct(xhat_).rowwise().sum();
    mmap(grad, gamma_).col(0) += dgamma;
    mmap(grad, beta_).col(0) += dbeta;
    const RVector g = load(params, gamma_).col(0);
    RMatrix dx = (dy * n).colwise() - dbeta;
    dx -= dgamma.asDiagonal() * xhat_;
    dx = (g.cwiseProduct(inv_std_) / n).asDiagonal() * dx;
    return dx;
  }

 private:
  ParamSlice gamma_, beta_, mean_, var_;
  RVector inv_std_;
  RMatrix xhat_;
};

class ActivationLayer final : public Layer {
 public:
  ActivationLayer(Activation kind, std::optional<ParamSlice> slope)
      : kind_(kind), slope_(std::move(slope)) {}

  RMatrix forward(const RMatrix& x, std::span<double> params, bool train) override {
    RMatrix y = infer(x, params);
    if (train) x_ = x;
    return y;
  }
  RMatrix infer(const RMatrix& x, std::span<const double> params) const override {
    switch (kind_) {
      case Activation::kRelu:
        return x.cwiseMax(0.0);
      case Activation::kSigmoid:
        return x.unaryExpr([](double v) { return sigmoid(v); });
      case Activation::kPrelu: {
        const RVector a = load(params, *slope_).col(0);
        RMatrix y = x;
        for (Eigen::Index c = 0; c < y.cols(); ++c)
          for (Eigen::Index r = 0; r < y.rows(); ++r)
            if (y(r, c) <= 0.0) y(r, c) *= a(r);
        return y;
      }
      case Activation::kLeakyRelu:
        return x.unaryExpr([](double v) { return v > 0.0 ? v : kLeakySlope * v; });
      case Activation::kTanh:
        return x.array().tanh().matrix();
      case Activation::kSwish:
        return x.unaryExpr([](double v) { return v * sigmoid(v); });
      case Activation::kLinear:
        return x;
    }
    return x;
  }
  RMatrix backward(const RMatrix& dy, std::span<const double> params,
                   std::span<double> grad) override {
    const RMatrix& x = x_;
    switch (kind_) {
      case Activation::kRelu:
        return dy.cwiseProduct(x.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
      case Activation::kSigmoid:
        return dy.cwiseProduct(x.unaryExpr([](double v) {
          const double s = sigmoid(v);
          return s * (1.0 - s);
        }));
      case Activation::kPrelu: {
        const RVector a = load(params, *slope_).col(0);
        auto da = mmap(grad, *slope_).col(0);
        RMatrix dx = dy;
        for (Eigen::Index c = 0; c < dx.cols(); ++c)
          for (Eigen::Index r = 0; r < dx.rows(); ++r)
            if (x(r, c) <= 0.0) {
              da(r) += x(r, c) * dy(r, c);
              dx(r, c) *= a(r);
            }
        return dx;
      }
      case Activation::kLeakyRelu:
        return dy.cwiseProduct(x.unaryExpr([](double v) { return v > 0.0 ? 1.0 : kLeakySlope; }));
      case Activation::kTanh:
        return dy.cwiseProduct(x.unaryExpr([](double v) {
          const double t = std::tanh(v);
          return 1.0 - t * t;
        }));
      case Activation::kSwish:
        return dy.cwiseProduct(x.unaryExpr([](double v) {
          const double s = sigmoid(v);
          return s + v * s * (1.0 - s);
        }));
      case Activation::kLinear:
        return dy;
    }
    return dy;
  }

 private:
  Activation kind_;
  std::optional<ParamSlice> slope_;
  RMatrix x_;
};

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
class MaxPool final : public Layer {
 public:
  MaxPool(int h, int w) : h_(h), w_(w) {}
  RMatrix forward(const RMatrix& x, std::span<double>, bool train) override {
    std::vector<Eigen::Index> arg;
    RMatrix y = pool(x, &arg);
    if (train) {
      argmax_ = std::move(arg);
      in_rows_ = x.rows();
      in_cols_ = x.cols();
    }
    return y;
  }
  RMatrix infer(const RMatrix& x, std::span<const double>) const override {
    return pool(x, nullptr);
  }
  RMatrix backward(const RMatrix& dy, std::span<const double>, std::span<double>) override {
    RMatrix dx = RMatrix::Zero(in_rows_, in_cols_);
    for (Eigen::Index c = 0; c < dy.cols(); ++c)
      for (Eigen::Index r = 0; r < dy.rows(); ++r)
        dx(r, argmax_[static_cast<std::size_t>(c * dy.rows() + r)]) += dy(r, c);
    return dx;
  }

 private:
  RMatrix pool(const RMatrix& x, std::vector<Eigen::Index>* arg) const {
    const int h2 = h_ / 2;
    const int w2 = w_ / 2;
    const auto batch = x.cols() / (h_ * w_);
    RMatrix y(x.rows(), batch * h2 * w2);
    if (arg) arg->assign(static_cast<std::size_t>(y.size()), 0);
    for (Eigen::Index b = 0; b < batch; ++b)
      for (int r = 0; r < h2; ++r)
        for (int c = 0; c < w2; ++c) {
          const auto out_col = b * h2 * w2 + r * w2 + c;
          for (Eigen::Index ch = 0; ch < x.rows(); ++ch) {
            Eigen::Index best = b * h_ * w_ + (2 * r) * w_ + 2 * c;
            for (int dr = 0; dr < 2; ++dr)
              for (int dc = 0; dc < 2; ++dc) {
                const auto in_col = b * h_ * w_ + (2 * r + dr) * w_ + 2 * c + dc;
                if (x(ch, in_col) > x(ch, best)) best = in_col;
              }
            y(ch, out_col) = x(ch, best);
            if (arg) (*arg)[static_cast<std::size_t>(out_col * x.rows() + ch)] = best;
          }
        }
    return y;
  }
  int h_, w_;
  std::vector<Eigen::Index> argmax_;
  Eigen::Index in_rows_ = 0, in_cols_ = 0;
};

class Dense final : public Layer {
 public:
  Dense(ParamSlice w, ParamSlice b) : weight_(std::move(w)), bias_(std::move(b)) {}
  RMatrix forward(const RMatrix& x, std::span<double> params, bool train) override {
    if (train) x_ = x;
    return infer(x, params);
  }
  RMatrix infer(const RMatrix& x, std::span<const double> params) const override {
    RMatrix y = load(params, weight_) * x;
    y.colwise() += load(params, bias_).col(0);
    return y;
  }
  RMatrix backward(const RMatrix& dy, std::span<const double> params,
                   std::span<double> grad) override {
    mmap(grad, weight_) += RMatrix(dy * x_.transpose());
    mmap(grad, bias_).col(0) += RVector(dy.rowwise().sum());
    return load(params, weight_).transpose() * dy;
  }

 private:
  ParamSlice weight_, bias_;
  RMatrix x_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Observation tensors and labels

RVector ObservationTensor::flatten() const {
  const auto n = re.size();
  RVector v(2 * n);
  for (Eigen::Index r = 0; r < re.rows(); ++r)
    for (Eigen::Index c = 0; c < re.cols(); ++c) {
      v(r * re.cols() + c) = re(r, c);
      v(n + r * re.cols() + c) = im(r, c);
    }
  return v;
}

ObservationTensor normalize_observation(const CMatrix& y) {
  ObservationTensor t;
  const double nrm = y.norm();
  t.re = y.real();
  t.im = y.imag();
  if (nrm > 0.0) {
    t.re /= nrm;
    t.im /= nrm;
  }
  return t;
}

LabeledSet LabeledSet::subset(std::span<const std::size_t> idx) const {
  LabeledSet out;
  out.n_rx = n_rx;
  out.n_p = n_p;
  out.inputs.resize(inputs.rows(), static_cast<Eigen::Index>(idx.size()));
  out.labels.reserve(idx.size());
  for (std::size_t j = 0; j < idx.size(); ++j) {
    out.inputs.col(static_cast<Eigen::Index>(j)) = inputs.col(static_cast<Eigen::Index>(idx[j]));
    out.labels.push_back(labels[idx[j]]);
  }
  return out;
}

LabeledSet build_labels(const Dataset& ds, Link link, const Codebook& cb,
                        const CMatrix& pilots, double sigma_n2, std::uint64_t seed) {
  if (cb.n_tx() != ds.config.n_tx) throw ShapeError("build_labels: codebook size mismatch");
  LabeledSet set;
  set.n_rx = ds.config.n_rx;
  set.n_p = static_cast<int>(pilots.cols());
  set.inputs.resize(2 * set.n_rx * set.n_p, static_cast<Eigen::Index>(ds.size()));
  set.labels.resize(ds.size());
  const auto n = static_cast<std::int64_t>(ds.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& s = ds.samples[static_cast<std::size_t>(i)];
    const CMatrix& h = link == Link::kUplink ? s.h_ul : s.h_dl;
    const auto obs = observe(h, pilots, sigma_n2, seed, static_cast<std::uint64_t>(i));
    set.inputs.col(i) = normalize_observation(obs.y).flatten();
    set.labels[static_cast<std::size_t>(i)] = select_index(h, cb, ds.config.sigma_n2);
  }
  return set;
}

// ---------------------------------------------------------------------------
// Architecture and model

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kRelu: return "relu";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kPrelu: return "prelu";
    case Activation::kLeakyRelu: return "leaky_relu";
    case Activation::kTanh: return "tanh";
    case Activation::kSwish: return "swish";
    case Activation::kLinear: return "linear";
  }
  return "relu";
}

Activation activation_from_string(const std::string& s) {
  for (auto a : {Activation::kRelu, Activation::kSigmoid, Activation::kPrelu,
                 Activation::kLeakyRelu, Activation::kTanh, Activation::kSwish,
                 Activation::kLinear})
    if (to_string(a) == s) return a;
  throw ConfigError("unknown activation: " + s);
}

int EncoderArchitecture::flat_features() const {
  const int h = max_pool ? n_rx / 2 : n_rx;
  const int w = max_pool ? n_p / 2 : n_p;
  return kernels * h * w;
}

void EncoderArchitecture::validate() const {
  if (n_rx < 1 || n_p < 1) throw ConfigError("encoder input dimensions must be positive");
  if (conv_depth < 1 || kernels < 1) throw ConfigError("conv depth and kernel count must be >= 1");
  if (kernel_h < 1 || kernel_w < 1 || kernel_h % 2 == 0 || kernel_w % 2 == 0)
    throw ConfigError("kernel extents must be odd and positive");
  if (max_pool && (n_rx < 2 || n_p < 2)) throw ConfigError("max pooling needs at least 2x2 inputs");
  if (classes < 1) throw ConfigError("encoder needs at least one class");
  for (int w : dense_tail)
    if (w < 1) throw ConfigError("dense widths must be positive");
}

EncoderModel::EncoderModel() = default;
EncoderModel::EncoderModel(const EncoderArchitecture& arch) : arch_(arch) {
  arch_.validate();
  build();
}
EncoderModel::EncoderModel(const EncoderModel& other) : arch_(other.arch_) {
  build();
  params_ = other.params_;
}
EncoderModel& EncoderModel::operator=(const EncoderModel& other) {
  if (this != &other) {
    arch_ = other.arch_;
    build();
    params_ = other.params_;
  }
  return *this;
}
EncoderModel::EncoderModel(EncoderModel&&) noexcept = default;
EncoderModel& EncoderModel::operator=(EncoderModel&&) noexcept = default;
EncoderModel::~EncoderModel() = default;

void EncoderModel::build() {
  slices_.clear();
  layers_.clear();
  std::size_t offset = 0;
  auto add = [&](const std::string& name, int rows, int cols, bool trainable, bool reg) {
    ParamSlice s{name, offset, rows, cols, trainable, reg};
    offset += s.size();
    slices_.push_back(s);
    return s;
  };
  auto add_norm_and_act = [&](const std::string& tag, int width) {
    if (arch_.batch_norm) {
      auto g = add(tag + ".bn.gamma", width, 1, true, false);
      auto b = add(tag + ".bn.beta", width, 1, true, false);
      auto m = add(tag + ".bn.running_mean", width, 1, false, false);
      auto v = add(tag + ".bn.running_var", width, 1, false, false);
      layers_.push_back(std::make_unique<BatchNorm>(g, b, m, v));
    }
    std::optional<ParamSlice> slope;
    if (arch_.activation == Activation::kPrelu) slope = add(tag + ".prelu.slope", width, 1, true, false);
    layers_.push_back(std::make_unique<ActivationLayer>(arch_.activation, slope));
  };

  int channels = 2;
  int h = arch_.n_rx;
  int w = arch_.n_p;
  layers_.push_back(std::make_unique<ToConvLayout>(channels, h * w));
  for (int d = 0; d < arch_.conv_depth; ++d) {
    const std::string tag = "conv" + std::to_string(d);
    auto wt = add(tag + ".weight", arch_.kernels, channels * arch_.kernel_h * arch_.kernel_w, true, true);
    auto bs = add(tag + ".bias", arch_.kernels, 1, true, false);
    layers_.push_back(std::make_unique<Conv2d>(wt, bs, channels, h, w, arch_.kernel_h, arch_.kernel_w));
    add_norm_and_act(tag, arch_.kernels);
    channels = arch_.kernels;
  }
  if (arch_.max_pool) {
    layers_.push_back(std::make_unique<MaxPool>(h, w));
    h /= 2;
    w /= 2;
  }
  layers_.push_back(std::make_unique<Flatten>(channels, h * w));
  int features = channels * h * w;
  for (std::size_t i = 0; i < arch_.dense_tail.size(); ++i) {
    const std::string tag = "dense" + std::to_string(i);
    const int width = arch_.dense_tail[i];
    auto wt = add(tag + ".weight", width, features, true, true);
    auto bs = add(tag + ".bias", width, 1, true, false);
    layers_.push_back(std::make_unique<Dense>(wt, bs));
    add_norm_and_act(tag, width);
    features = width;
  }
  auto wt = add("out.weight", arch_.classes, features, true, true);
  auto bs = add("out.bias", arch_.classes, 1, true, false);
  layers_.push_back(std::make_unique<Dense>(wt, bs));

  params_.assign(offset, 0.0);
  for (const auto& s : slices_) {
    if (s.name.ends_with(".bn.gamma") || s.name.ends_with(".bn.running_var"))
      std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(s.offset), s.size(), 1.0);
    if (s.name.ends_with(".prelu.slope"))
      std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(s.offset), s.size(), kPreluInit);
  }
}

void EncoderModel::initialize(std::uint64_t seed) {
  build();
  auto rng = stream_rng(seed, 0, 0x696e6974);
  for (const auto& s : slices_) {
    if (!s.regularized) continue;
    // Rows are output units, columns the fan-in (kernel taps included).
    const double limit = std::sqrt(6.0 / (s.cols + s.rows));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (std::size_t i = 0; i < s.size(); ++i) params_[s.offset + i] = dist(rng);
  }
}

const ParamSlice& EncoderModel::slice(const std::string& name) const {
  for (const auto& s : slices_)
    if (s.name == name) return s;
  throw ConfigError("no parameter slice named " + name);
}

std::span<double> EncoderModel::view(const std::string& name) {
  const auto& s = slice(name);
  return std::span<double>(params_).subspan(s.offset, s.size());
}

RMatrix EncoderModel::forward_train(const RMatrix& x) {
  if (x.rows() != arch_.input_features()) throw ShapeError("encoder input has the wrong size");
  RMatrix a = x;
  for (auto& layer : layers_) a = layer->forward(a, params_, true);
  return a;
}

RMatrix EncoderModel::forward_infer(const RMatrix& x) const {
  if (x.rows() != arch_.input_features()) throw ShapeError("encoder input has the wrong size");
  RMatrix a = x;
  for (const auto& layer : layers_) a = layer->infer(a, params_);
  return a;
}

RMatrix EncoderModel::forward(const RMatrix& x, Mode mode) {
  return mode == Mode::kTrain ? forward_train(x) : forward_infer(x);
}

RVector EncoderModel::forward(const ObservationTensor& x, Mode mode) {
  if (x.re.rows() != arch_.n_rx || x.re.cols() != arch_.n_p)
    throw ShapeError("observation does not match the encoder input");
  RMatrix in = x.flatten();
  return forward(in, mode).col(0);
}

std::vector<double> EncoderModel::backward(const RMatrix& dlogits) {
  std::vector<double> grad(params_.size(), 0.0);
  RMatrix d = dlogits;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) d = (*it)->backward(d, params_, grad);
  return grad;
}

// ---------------------------------------------------------------------------
// Loss and training

void TrainConfig::validate() const {
  if (epochs < 1 || early_stop_patience < 1 || batch_size < 1)
    throw ConfigError("epochs, patience and batch size must be positive");
  if (!(learning_rate >= 0.0) || l1 < 0.0 || l2 < 0.0)
    throw ConfigError("learning rate and penalties must be non-negative");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must be in (0, 1]");
}

double softmax_cross_entropy(const RMatrix& logits, std::span<const int> labels,
                             RMatrix* dlogits) {
  const auto batch = logits.cols();
  if (static_cast<std::size_t>(batch) != labels.size()) throw ShapeError("label count mismatch");
  double loss = 0.0;
  if (dlogits) dlogits->resize(logits.rows(), batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const double mx = logits.col(b).maxCoeff();
    const RVector e = (logits.col(b).array() - mx).exp().matrix();
    const double z = e.sum();
    const auto label = labels[static_cast<std::size_t>(b)];
    loss += std::log(z) - (logits(label, b) - mx);
    if (dlogits) {
      dlogits->col(b) = e / z;
      (*dlogits)(label, b) -= 1.0;
    }
  }
  if (dlogits) *dlogits /= static_cast<double>(batch);
  return loss / static_cast<double>(batch);
}

double weight_penalty(const EncoderModel& model, double l1, double l2,
                      std::vector<double>* grad) {
  if (l1 == 0.0 && l2 == 0.0) return 0.0;
  const auto& p = model.parameters();
  double pen = 0.0;
  for (const auto& s : model.slices()) {
    if (!s.regularized) continue;
    for (std::size_t i = s.offset; i < s.offset + s.size(); ++i) {
      const double w = p[i];
      pen += l1 * std::abs(w) + l2 * w * w;
      if (grad) (*grad)[i] += l1 * ((w > 0.0) - (w < 0.0)) + 2.0 * l2 * w;
    }
  }
  return pen;
}

LossBreakdown loss_and_gradient(EncoderModel& model, const RMatrix& x,
                                std::span<const int> labels, double l1, double l2,
                                std::vector<double>* grad) {
  const RMatrix logits = model.forward_train(x);
  RMatrix dlogits;
  LossBreakdown out;
  out.cross_entropy = softmax_cross_entropy(logits, labels, grad ? &dlogits : nullptr);
  if (grad) *grad = model.backward(dlogits);
  out.penalty = weight_penalty(model, l1, l2, grad);
  return out;
}

Metrics evaluate(const EncoderModel& model, const LabeledSet& set) {
  Metrics m;
  if (set.size() == 0) return m;
  constexpr Eigen::Index kChunk = 1024;
  const auto n = static_cast<Eigen::Index>(set.size());
  double loss = 0.0;
  std::size_t hits = 0;
  for (Eigen::Index start = 0; start < n; start += kChunk) {
    const auto len = std::min(kChunk, n - start);
    const RMatrix logits = model.forward_infer(set.inputs.middleCols(start, len));
    const std::span<const int> lab(set.labels.data() + start, static_cast<std::size_t>(len));
    loss += softmax_cross_entropy(logits, lab, nullptr) * static_cast<double>(len);
    for (Eigen::Index b = 0; b < len; ++b) {
      Eigen::Index arg = 0;
      logits.col(b).maxCoeff(&arg);
      if (arg == lab[static_cast<std::size_t>(b)]) ++hits;
    }
  }
  m.loss = loss / static_cast<double>(n);
  m.accuracy = static_cast<double>(hits) / static_cast<double>(n);
  return m;
}

CMatrix haar_unitary(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  CMatrix z(n, n);
  for (int c = 0; c < n; ++c)
    for (int r = 0; r < n; ++r) {
      const double re = g(rng);
      z(r, c) = Complex(re, g(rng));
    }
  Eigen::HouseholderQR<CMatrix> qr(z);
  CMatrix q = qr.householderQ() * CMatrix::Identity(n, n);
  const CMatrix rr = qr.matrixQR().triangularView<Eigen::Upper>();
  // Fix the column phases so the distribution is exactly Haar.
  for (int c = 0; c < n; ++c) {
    const double a = std::abs(rr(c, c));
    if (a > 0.0) q.col(c) *= rr(c, c) / a;
  }
  return q;
}

void rotate_observations(RMatrix& x, int n_rx, int n_p, const CMatrix& u, Eigen::Index col) {
  const int plane = n_rx * n_p;
  CMatrix y(n_rx, n_p);
  for (int r = 0; r < n_rx; ++r)
    for (int c = 0; c < n_p; ++c)
      y(r, c) = Complex(x(r * n_p + c, col), x(plane + r * n_p + c, col));
  const CMatrix rotated = u * y;
  for (int r = 0; r < n_rx; ++r)
    for (int c = 0; c < n_p; ++c) {
      x(r * n_p + c, col) = rotated(r, c).real();
      x(plane + r * n_p + c, col) = rotated(r, c).imag();
    }
}

TrainResult train(const EncoderModel& init, const LabeledSet& train_set,
                  const LabeledSet& val_set, const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.size() == 0 || val_set.size() == 0)
    throw SizeError("train: training and validation sets must be nonempty");

  EncoderModel model = init;
  const auto& slices = model.slices();
  const std::size_t n_params = model.parameters().size();
  std::vector<double> m(n_params, 0.0), v(n_params, 0.0);
  std::vector<char> trainable(n_params, 0);
  for (const auto& s : slices)
    if (s.trainable) std::fill_n(trainable.begin() + static_cast<std::ptrdiff_t>(s.offset), s.size(), 1);

  TrainResult result;
  result.model = model;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  double lr = cfg.learning_rate;
  long step = 0;
  int since_best = 0;
  const std::size_t n = train_set.size();
  std::vector<std::size_t> order(n);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = stream_rng(cfg.seed, static_cast<std::uint64_t>(epoch), 0x6570);
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n - start);
      RMatrix x(train_set.inputs.rows(), static_cast<Eigen::Index>(len));
      std::vector<int> labels(len);
      for (std::size_t j = 0; j < len; ++j) {
        x.col(static_cast<Eigen::Index>(j)) = train_set.inputs.col(static_cast<Eigen::Index>(order[start + j]));
        labels[j] = train_set.labels[order[start + j]];
      }
      if (cfg.augment_rx_unitary) {
        auto aug = stream_rng(cfg.seed, static_cast<std::uint64_t>(step), 0x617567);
        for (std::size_t j = 0; j < len; ++j)
          rotate_observations(x, train_set.n_rx, train_set.n_p, haar_unitary(train_set.n_rx, aug),
                              static_cast<Eigen::Index>(j));
      }
      std::vector<double> grad;
      const auto loss = loss_and_gradient(model, x, labels, cfg.l1, cfg.l2, &grad);
      epoch_loss += loss.total() * static_cast<double>(len);

      ++step;
      const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(step));
      auto& p = model.parameters();
      for (std::size_t i = 0; i < n_params; ++i) {
        if (!trainable[i]) continue;
        m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * grad[i];
        v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * grad[i] * grad[i];
        p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + kAdamEpsilon);
      }
    }

    EpochRecord rec;
    rec.train_loss = epoch_loss / static_cast<double>(n);
    const auto val = evaluate(model, val_set);
    rec.val_loss = val.loss;
    rec.val_accuracy = val.accuracy;
    result.history.push_back(rec);

    if (val.loss < result.best_val_loss) {
      result.best_val_loss = val.loss;
      result.best_val_accuracy = val.accuracy;
      result.best_epoch = epoch;
      result.model = model;
      since_best = 0;
    } else if (++since_best >= cfg.early_stop_patience) {
      break;
    }
    lr *= cfg.lr_decay;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Random search

void SearchSpace::validate() const {
  if (conv_depth_min < 1 || conv_depth_max < conv_depth_min) throw ConfigError("bad conv depth range");
  if (kernels_min < 1 || kernels_max < kernels_min) throw ConfigError("bad kernel count range");
  if (batch_min < 1 || batch_max < batch_min) throw ConfigError("bad batch size range");
  if (!(lr_min > 0.0 && lr_max >= lr_min)) throw ConfigError("bad learning rate range");
  if (!(l1_min > 0.0 && l1_max >= l1_min && l2_min > 0.0 && l2_max >= l2_min))
    throw ConfigError("bad penalty range");
  if (!(decay_min > 0.0 && decay_max <= 1.0 && decay_max >= decay_min))
    throw ConfigError("bad lr decay range");
  if (activations.empty()) throw ConfigError("no activation to choose from");
  if (epochs < 1 || early_stop_patience < 1) throw ConfigError("bad epoch settings");
}

std::pair<EncoderArchitecture, TrainConfig> sample_trial(const SearchSpace& space, int n_rx,
                                                          int n_p, int classes,
                                                          std::uint64_t seed,
                                                          std::size_t index) {
  auto rng = stream_rng(seed, index, 0x7472);
  auto uint_in = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto log_uniform = [&](double lo, double hi) {
    return std::exp(std::uniform_real_distribution<double>(std::log(lo), std::log(hi))(rng));
  };
  EncoderArchitecture arch;
  arch.n_rx = n_rx;
  arch.n_p = n_p;
  arch.classes = classes;
  arch.conv_depth = uint_in(space.conv_depth_min, space.conv_depth_max);
  arch.kernels = uint_in(space.kernels_min, space.kernels_max);
  arch.activation = space.activations[static_cast<std::size_t>(
      uint_in(0, static_cast<int>(space.activations.size()) - 1))];
  arch.max_pool = space.max_pool;
  arch.batch_norm = space.batch_norm;
  arch.dense_tail = space.dense_tail;

  TrainConfig cfg;
  cfg.epochs = space.epochs;
  cfg.early_stop_patience = space.early_stop_patience;
  cfg.batch_size = uint_in(space.batch_min, space.batch_max);
  cfg.learning_rate = log_uniform(space.lr_min, space.lr_max);
  cfg.l1 = log_uniform(space.l1_min, space.l1_max);
  cfg.l2 = log_uniform(space.l2_min, space.l2_max);
  cfg.lr_decay = std::uniform_real_distribution<double>(space.decay_min, space.decay_max)(rng);
  cfg.seed = rng();
  cfg.augment_rx_unitary = space.augment_rx_unitary;
  return {arch, cfg};
}

SearchResult random_search(const SearchSpace& space, int budget, const LabeledSet& train_set,
                           const LabeledSet& val_set, int classes, std::uint64_t seed) {
  space.validate();
  if (budget < 1) throw ConfigError("random search budget must be >= 1");
  std::vector<TrialRecord> trials(static_cast<std::size_t>(budget));
  std::vector<EncoderModel> models(static_cast<std::size_t>(budget));

#pragma omp parallel for schedule(dynamic, 1)
  for (int t = 0; t < budget; ++t) {
    auto [arch, cfg] = sample_trial(space, train_set.n_rx, train_set.n_p, classes, seed,
                                    static_cast<std::size_t>(t));
    EncoderModel init(arch);
    init.initialize(cfg.seed);
    auto res = train(init, train_set, val_set, cfg);
    auto& rec = trials[static_cast<std::size_t>(t)];
    rec.arch = arch;
    rec.cfg = cfg;
    rec.val_accuracy = res.best_val_accuracy;
    rec.val_loss = res.best_val_loss;
    rec.epochs_run = static_cast<int>(res.history.size());
    models[static_cast<std::size_t>(t)] = std::move(res.model);
  }

  SearchResult out;
  for (std::size_t t = 1; t < trials.size(); ++t)
    if (trials[t].val_accuracy > trials[out.best_trial].val_accuracy) out.best_trial = t;
  out.best = std::move(models[out.best_trial]);
  out.trials = std::move(trials);
  return out;
}

int predict_index(const EncoderModel& model, const CMatrix& y) {
  const RMatrix in = normalize_observation(y).flatten();
  const RVector logits = model.forward_infer(in).col(0);
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < logits.size(); ++k)
    if (logits(k) > logits(best)) best = k;
  return static_cast<int>(best);
}

// ---------------------------------------------------------------------------
// ENC1 files

void save_encoder(const std::filesystem::path& path, const EncoderModel& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open for writing: " + path.string());
  const auto& a = model.architecture();
  os << "ENC1\n"
     << "n_rx " << a.n_rx << '\n'
     << "n_p " << a.n_p << '\n'
     << "conv_depth " << a.conv_depth << '\n'
     << "kernels " << a.kernels << '\n'
     << "kernel_size " << a.kernel_h << ' ' << a.kernel_w << '\n'
     << "max_pool " << (a.max_pool ? 1 : 0) << '\n'
     << "activation " << to_string(a.activation) << '\n'
     << "batch_norm " << (a.batch_norm ? 1 : 0) << '\n'
     << "dense";
  for (int w : a.dense_tail) os << ' ' << w;
  os << '\n' << "classes " << a.classes << '\n';
  os << "blocks " << model.slices().size() << '\n';
  for (const auto& s : model.slices()) os << "block " << s.name << ' ' << s.rows << ' ' << s.cols << '\n';
  os << "end\n";
  for (const auto& s : model.slices())
    for (std::size_t i = 0; i < s.size(); ++i) io::put_f64(os, model.parameters()[s.offset + i]);
  if (!os) throw ConfigError("write failed: " + path.string());
}

EncoderModel load_encoder(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open encoder: " + path.string());
  io::expect_magic(is, "ENC1");
  EncoderArchitecture a;
  struct Block {
    std::string name;
    int rows, cols;
  };
  std::vector<Block> blocks;
  std::string line;
  bool done = false;
  while (!done && std::getline(is, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    int flag = 0;
    if (key == "n_rx") ls >> a.n_rx;
    else if (key == "n_p") ls >> a.n_p;
    else if (key == "conv_depth") ls >> a.conv_depth;
    else if (key == "kernels") ls >> a.kernels;
    else if (key == "kernel_size") ls >> a.kernel_h >> a.kernel_w;
    else if (key == "max_pool") { ls >> flag; a.max_pool = flag != 0; }
    else if (key == "activation") { std::string s; ls >> s; a.activation = activation_from_string(s); }
    else if (key == "batch_norm") { ls >> flag; a.batch_norm = flag != 0; }
    else if (key == "dense") { a.dense_tail.clear(); int w; while (ls >> w) a.dense_tail.push_back(w); }
    else if (key == "classes") ls >> a.classes;
    else if (key == "blocks") {}
    else if (key == "block") { Block b; ls >> b.name >> b.rows >> b.cols; blocks.push_back(b); }
    else if (key == "end") done = true;
    else throw FormatError("ENC1: unknown header key " + key);
    if (ls.fail() && key != "dense") throw FormatError("ENC1: malformed line: " + line);
  }
  if (!done) throw FormatError("ENC1: header not terminated");
  EncoderModel model(a);
  const auto& slices = model.slices();
  if (blocks.size() != slices.size()) throw FormatError("ENC1: block count does not match architecture");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& s = slices[i];
    if (blocks[i].name != s.name || blocks[i].rows != s.rows || blocks[i].cols != s.cols)
      throw FormatError("ENC1: block " + blocks[i].name + " does not match architecture");
    for (std::size_t j = 0; j < s.size(); ++j) model.parameters()[s.offset + j] = io::get_f64(is);
  }
  return model;
}

}  // namespace mimofb
