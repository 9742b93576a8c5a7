// Copyright 2026 The DAVI Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Change detectors: the model interface shared by the frozen source model and
// the adapting target model, a small siamese reference network with exact
// hand-written gradients, its optimizer and schedule, checkpoints, and
// supervised source training.

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "davi/data_io.hpp"
#include "davi/errors.hpp"
#include "davi/grid.hpp"
#include "davi/image.hpp"
#include "davi/label_algebra.hpp"
#include "davi/util.hpp"

namespace davi {

class ChangeDetector {
 public:
  virtual ~ChangeDetector() = default;
  virtual std::string architecture() const = 0;
  /// Dense change probability in [0,1], same spatial shape as the pair.
  virtual ProbabilityMap predict(const ImagePair& pair) const = 0;
};

/// Activations retained by a forward pass for the matching backward pass.
struct ForwardTrace {
  virtual ~ForwardTrace() = default;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> logits;
  std::vector<double> probs;
};

class TrainableChangeDetector : public ChangeDetector {
 public:
  virtual std::unique_ptr<ForwardTrace> forward(const ImagePair& pair) const = 0;
  /// Accumulates parameter gradients given dLoss/dlogit per pixel.
  virtual void backward(const ForwardTrace& trace, std::span<const double> dlogits) = 0;
  virtual std::span<double> parameters() = 0;
  virtual std::span<const double> parameters() const = 0;
  virtual std::span<double> gradients() = 0;
  virtual std::unique_ptr<TrainableChangeDetector> clone() const = 0;

  void zero_grad() {
    auto g = gradients();
    std::fill(g.begin(), g.end(), 0.0);
  }

  ProbabilityMap predict(const ImagePair& pair) const override {
    auto trace = forward(pair);
    ProbabilityMap out(trace->height, trace->width);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(trace->probs[i]);
    return out;
  }
};

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace nn {

/// Feature map, channel-major (C x H x W).
struct Tensor {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t c, std::size_t h, std::size_t w) : channels(c), height(h), width(w), data(c * h * w, 0.0) {}

  double* plane(std::size_t c) { return data.data() + c * height * width; }
  const double* plane(std::size_t c) const { return data.data() + c * height * width; }
};

inline Tensor to_chw(const ImageTile& img) {
  Tensor t(3, img.height(), img.width());
  const auto v = img.values();
  const std::size_t hw = img.pixels();
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t c = 0; c < 3; ++c) t.data[c * hw + i] = v[i * 3 + c];
  }
  return t;
}

/// Zero-padded "same" convolution with square odd kernel. Weights are laid
/// out [out][in][ky][kx], followed by one bias per output channel.
struct Conv {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t k = 3;
  std::size_t offset = 0;  // into the flat parameter vector

  std::size_t weight_count() const { return out * in * k * k; }
  std::size_t param_count() const { return weight_count() + out; }

  void forward(const double* params, const Tensor& x, Tensor& y) const {
    const std::size_t h = x.height, w = x.width;
    y = Tensor(out, h, w);
    const double* wt = params + offset;
    const double* bias = wt + weight_count();
    const auto r = static_cast<std::ptrdiff_t>(k / 2);
    for (std::size_t o = 0; o < out; ++o) {
      double* yo = y.plane(o);
      std::fill(yo, yo + h * w, bias[o]);
      for (std::size_t i = 0; i < in; ++i) {
        const double* xi = x.plane(i);
        for (std::size_t ky = 0; ky < k; ++ky) {
          const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - r;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - r;
            const double wv = wt[((o * in + i) * k + ky) * k + kx];
            const std::size_t y0 = dy < 0 ? static_cast<std::size_t>(-dy) : 0;
            const std::size_t y1 = dy > 0 ? h - static_cast<std::size_t>(dy) : h;
            const std::size_t x0 = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
            const std::size_t x1 = dx > 0 ? w - static_cast<std::size_t>(dx) : w;
            for (std::size_t yy = y0; yy < y1; ++yy) {
              double* yrow = yo + yy * w;
              const double* xrow = xi + (yy + dy) * w + dx;
              for (std::size_t xx = x0; xx < x1; ++xx) yrow[xx] += wv * xrow[xx];
            }
          }
        }
      }
    }
  }

  /// Accumulates weight/bias gradients; writes dx when requested.
  void backward(const double* params, double* grads, const Tensor& x, const Tensor& dy,
                Tensor* dx) const {
    const std::size_t h = x.height, w = x.width;
    const double* wt = params + offset;
    double* gw = grads + offset;
    double* gb = gw + weight_count();
    if (dx != nullptr) *dx = Tensor(in, h, w);
    const auto r = static_cast<std::ptrdiff_t>(k / 2);
    for (std::size_t o = 0; o < out; ++o) {
      const double* go = dy.plane(o);
      double sb = 0.0;
      for (std::size_t p = 0; p < h * w; ++p) sb += go[p];
      gb[o] += sb;
      for (std::size_t i = 0; i < in; ++i) {
        const double* xi = x.plane(i);
        double* dxi = dx != nullptr ? dx->plane(i) : nullptr;
        for (std::size_t ky = 0; ky < k; ++ky) {
          const std::ptrdiff_t ddy = static_cast<std::ptrdiff_t>(ky) - r;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::ptrdiff_t ddx = static_cast<std::ptrdiff_t>(kx) - r;
            const std::size_t widx = ((o * in + i) * k + ky) * k + kx;
            const double wv = wt[widx];
            const std::size_t y0 = ddy < 0 ? static_cast<std::size_t>(-ddy) : 0;
            const std::size_t y1 = ddy > 0 ? h - static_cast<std::size_t>(ddy) : h;
            const std::size_t x0 = ddx < 0 ? static_cast<std::size_t>(-ddx) : 0;
            const std::size_t x1 = ddx > 0 ? w - static_cast<std::size_t>(ddx) : w;
            double acc = 0.0;
            for (std::size_t yy = y0; yy < y1; ++yy) {
              const double* grow = go + yy * w;
              const double* xrow = xi + (yy + ddy) * w + ddx;
              for (std::size_t xx = x0; xx < x1; ++xx) acc += grow[xx] * xrow[xx];
              if (dxi != nullptr) {
                double* dxrow = dxi + (yy + ddy) * w + ddx;
                for (std::size_t xx = x0; xx < x1; ++xx) dxrow[xx] += wv * grow[xx];
              }
            }
            gw[widx] += acc;
          }
        }
      }
    }
  }
};

inline void relu_inplace(Tensor& t) {
  for (auto& v : t.data) v = v > 0.0 ? v : 0.0;
}

/// dy masked by (activation > 0).
inline void relu_backward(const Tensor& activation, Tensor& grad) {
  for (std::size_t i = 0; i < grad.data.size(); ++i) {
    if (activation.data[i] <= 0.0) grad.data[i] = 0.0;
  }
}

}  // namespace nn

/// Reference siamese change network.
///
///   shared encoder   conv3x3(3->C) ReLU, conv3x3(C->C) ReLU   on pre and post
///   fusion           (e_pre - e_post)^2, channel-wise
///   decoder          conv3x3(C->C) ReLU, conv1x1(C->1), sigmoid
///
/// Full resolution throughout; identical inputs give a feature difference of
/// exactly zero.
class SiameseChangeNet final : public TrainableChangeDetector {
 public:
  static constexpr const char* kFamily = "siamese-sqdiff";

  explicit SiameseChangeNet(std::size_t channels = 8) : channels_(channels) {
    if (channels == 0) throw ValidationError("SiameseChangeNet: channels must be positive");
    enc1_ = {3, channels, 3, 0};
    enc2_ = {channels, channels, 3, enc1_.offset + enc1_.param_count()};
    dec1_ = {channels, channels, 3, enc2_.offset + enc2_.param_count()};
    head_ = {channels, 1, 1, dec1_.offset + dec1_.param_count()};
    params_.assign(head_.offset + head_.param_count(), 0.0);
    grads_.assign(params_.size(), 0.0);
  }

  static std::string architecture_id(std::size_t channels) {
    return std::string(kFamily) + "-c" + std::to_string(channels);
  }

  std::string architecture() const override { return architecture_id(channels_); }
  std::size_t channels() const noexcept { return channels_; }

  /// He-normal weights, zero biases, head bias set to a low prior change rate.
  void initialize(std::uint64_t seed) {
    Rng rng(seed);
    for (const nn::Conv* c : {&enc1_, &enc2_, &dec1_, &head_}) {
      const double std = std::sqrt(2.0 / static_cast<double>(c->in * c->k * c->k));
      for (std::size_t i = 0; i < c->weight_count(); ++i) params_[c->offset + i] = rng.normal() * std;
      for (std::size_t i = 0; i < c->out; ++i) params_[c->offset + c->weight_count() + i] = 0.0;
    }
    params_[head_.offset + head_.weight_count()] = kInitialHeadBias;
  }

  std::unique_ptr<ForwardTrace> forward(const ImagePair& pair) const override {
    pair.validate();
    auto t = std::make_unique<Trace>();
    t->height = pair.height();
    t->width = pair.width();
    t->x_pre = nn::to_chw(pair.pre);
    t->x_post = nn::to_chw(pair.post);
    encode(t->x_pre, t->a1_pre, t->a2_pre);
    encode(t->x_post, t->a1_post, t->a2_post);
    t->diff = nn::Tensor(channels_, t->height, t->width);
    for (std::size_t i = 0; i < t->diff.data.size(); ++i) {
      const double d = t->a2_pre.data[i] - t->a2_post.data[i];
      t->diff.data[i] = d * d;
    }
    dec1_.forward(params_.data(), t->diff, t->h1);
    nn::relu_inplace(t->h1);
    nn::Tensor z;
    head_.forward(params_.data(), t->h1, z);
    t->logits = std::move(z.data);
    t->probs.resize(t->logits.size());
    for (std::size_t i = 0; i < t->logits.size(); ++i) t->probs[i] = sigmoid(t->logits[i]);
    return t;
  }

  void backward(const ForwardTrace& base, std::span<const double> dlogits) override {
    const auto& t = dynamic_cast<const Trace&>(base);
    if (dlogits.size() != t.logits.size()) throw ShapeMismatch("backward: gradient size mismatch");
    nn::Tensor dz(1, t.height, t.width);
    std::copy(dlogits.begin(), dlogits.end(), dz.data.begin());

    nn::Tensor dh1;
    head_.backward(params_.data(), grads_.data(), t.h1, dz, &dh1);
    nn::relu_backward(t.h1, dh1);
    nn::Tensor ddiff;
    dec1_.backward(params_.data(), grads_.data(), t.diff, dh1, &ddiff);

    nn::Tensor da2_pre(channels_, t.height, t.width), da2_post(channels_, t.height, t.width);
    for (std::size_t i = 0; i < ddiff.data.size(); ++i) {
      const double g = 2.0 * (t.a2_pre.data[i] - t.a2_post.data[i]) * ddiff.data[i];
      da2_pre.data[i] = g;
      da2_post.data[i] = -g;
    }
    encode_backward(t.x_pre, t.a1_pre, t.a2_pre, da2_pre);
    encode_backward(t.x_post, t.a1_post, t.a2_post, da2_post);
  }

  std::span<double> parameters() override { return params_; }
  std::span<const double> parameters() const override { return params_; }
  std::span<double> gradients() override { return grads_; }

  std::unique_ptr<TrainableChangeDetector> clone() const override {
    return std::make_unique<SiameseChangeNet>(*this);
  }

 private:
  static constexpr double kInitialHeadBias = -2.0;

  struct Trace : ForwardTrace {
    nn::Tensor x_pre, x_post, a1_pre, a1_post, a2_pre, a2_post, diff, h1;
  };

  void encode(const nn::Tensor& x, nn::Tensor& a1, nn::Tensor& a2) const {
    enc1_.forward(params_.data(), x, a1);
    nn::relu_inplace(a1);
    enc2_.forward(params_.data(), a1, a2);
    nn::relu_inplace(a2);
  }

  void encode_backward(const nn::Tensor& x, const nn::Tensor& a1, const nn::Tensor& a2,
                       nn::Tensor da2) {
    nn::relu_backward(a2, da2);
    nn::Tensor da1;
    enc2_.backward(params_.data(), grads_.data(), a1, da2, &da1);
    nn::relu_backward(a1, da1);
    enc1_.backward(params_.data(), grads_.data(), x, da1, nullptr);
  }

  std::size_t channels_;
  nn::Conv enc1_, enc2_, dec1_, head_;
  std::vector<double> params_;
  std::vector<double> grads_;
};

/// Builds an uninitialized detector from its architecture id.
inline std::unique_ptr<TrainableChangeDetector> make_detector(const std::string& arch) {
  const std::string prefix = std::string(SiameseChangeNet::kFamily) + "-c";
  if (arch.rfind(prefix, 0) == 0) {
    const auto digits = arch.substr(prefix.size());
    if (!digits.empty() && std::all_of(digits.begin(), digits.end(), ::isdigit) && digits.size() < 5) {
      return std::make_unique<SiameseChangeNet>(std::stoul(digits));
    }
  }
  throw ValidationError("unknown architecture id '" + arch + "'");
}

// --- Optimization -----------------------------------------------------------

/// Adam with decoupled weight decay.
class AdamW {
 public:
  struct Options {
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  AdamW(std::size_t n, Options opt) : opt_(opt), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      params[i] *= 1.0 - lr * opt_.weight_decay;
      m_[i] = opt_.beta1 * m_[i] + (1.0 - opt_.beta1) * grads[i];
      v_[i] = opt_.beta2 * v_[i] + (1.0 - opt_.beta2) * grads[i] * grads[i];
      const double mhat = m_[i] / bc1;
      const double vhat = v_[i] / bc2;
      params[i] -= lr * mhat / (std::sqrt(vhat) + opt_.eps);
    }
  }

 private:
  Options opt_;
  std::vector<double> m_, v_;
  std::uint64_t t_ = 0;
};

/// Learning rate for a zero-based epoch under step decay.
inline double step_lr(double base_lr, std::size_t epoch, std::size_t step_size, double gamma) {
  if (step_size == 0) return base_lr;
  return base_lr * std::pow(gamma, static_cast<double>(epoch / step_size));
}

// --- Checkpoints ------------------------------------------------------------

struct ModelCheckpoint {
  std::string architecture;
  std::vector<double> weights;
  nlohmann::json metadata = nlohmann::json::object();

  bool operator==(const ModelCheckpoint&) const = default;
};

inline ModelCheckpoint snapshot(const TrainableChangeDetector& model, nlohmann::json metadata = {}) {
  const auto p = model.parameters();
  return {model.architecture(), std::vector<double>(p.begin(), p.end()),
          metadata.is_null() ? nlohmann::json::object() : std::move(metadata)};
}

/// Target model initialized to the checkpoint's weights; it owns an
/// independent copy.
inline std::unique_ptr<TrainableChangeDetector> clone_for_target(const ModelCheckpoint& ckpt) {
  auto model = make_detector(ckpt.architecture);
  auto p = model->parameters();
  if (p.size() != ckpt.weights.size()) {
    throw ValidationError("checkpoint has " + std::to_string(ckpt.weights.size()) +
                          " weights but architecture '" + ckpt.architecture + "' expects " +
                          std::to_string(p.size()));
  }
  std::copy(ckpt.weights.begin(), ckpt.weights.end(), p.begin());
  return model;
}

inline constexpr std::string_view kCheckpointMagic = "DAVI";
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: "DAVI" | u32 version | u32 arch length | arch bytes |
///         u64 weight count | f64 weights | u32 metadata length | metadata JSON
inline std::string encode_checkpoint(const ModelCheckpoint& c) {
  ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.architecture.size()));
  w.bytes(c.architecture);
  w.put<std::uint64_t>(c.weights.size());
  for (double v : c.weights) w.put<double>(v);
  const auto meta = c.metadata.dump();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(meta.size()));
  w.bytes(meta);
  return w.str();
}

inline ModelCheckpoint decode_checkpoint(std::string_view bytes, const std::string& context) {
  ByteReader r(bytes, context);
  if (r.bytes(4) != kCheckpointMagic) throw ValidationError(context + ": not a DAVI checkpoint");
  if (auto v = r.get<std::uint32_t>(); v != kCheckpointVersion) {
    throw ValidationError(context + ": unsupported checkpoint version " + std::to_string(v));
  }
  ModelCheckpoint c;
  c.architecture = std::string(r.bytes(r.get<std::uint32_t>()));
  const auto n = r.get<std::uint64_t>();
  if (n > r.remaining() / sizeof(double)) throw ValidationError(context + ": truncated weights");
  c.weights.resize(n);
  for (auto& v : c.weights) v = r.get<double>();
  const auto meta = r.bytes(r.get<std::uint32_t>());
  c.metadata = nlohmann::json::parse(meta, nullptr, false);
  if (c.metadata.is_discarded()) throw ValidationError(context + ": corrupt metadata");
  return c;
}

inline std::filesystem::path checkpoint_sidecar(const std::filesystem::path& path) {
  auto p = path;
  p += ".json";
  return p;
}

inline void save_checkpoint(const ModelCheckpoint& c, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(c));
  nlohmann::json side = c.metadata;
  side["architecture"] = c.architecture;
  side["weight_count"] = c.weights.size();
  side["format_version"] = kCheckpointVersion;
  write_file_bytes(checkpoint_sidecar(path), side.dump(2) + "\n");
}

inline ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw UpstreamMissing("checkpoint not found: " + path.string());
  return decode_checkpoint(read_file_bytes(path), path.string());
}

// --- Source training ----------------------------------------------------------

struct SourceTrainingConfig {
  std::size_t channels = 8;
  std::size_t epochs = 50;
  std::size_t batch_size = 8;
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  std::size_t lr_step = 8;
  double lr_gamma = 0.5;
  std::uint64_t seed = 0;
};

struct LabeledPair {
  ImagePair pair;
  BinaryMap label;
};

/// Fisher-Yates with the library RNG so orderings are reproducible.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

/// Supervised pixel cross-entropy with AdamW and step decay.
inline ModelCheckpoint train_source(const std::vector<LabeledPair>& data,
                                    const SourceTrainingConfig& cfg,
                                    const std::string& manifest_hash = {}) {
  if (data.empty()) throw ValidationError("train_source: empty training set");
  if (cfg.batch_size == 0) throw ValidationError("train_source: batch_size must be >= 1");
  for (const auto& d : data) {
    d.pair.validate();
    if (d.label.height() != d.pair.height() || d.label.width() != d.pair.width()) {
      throw ShapeMismatch("train_source: label shape differs from pair '" + d.pair.id + "'");
    }
  }

  SiameseChangeNet model(cfg.channels);
  model.initialize(mix_seed(cfg.seed, 0x5eed));
  AdamW opt(model.parameters().size(), {cfg.weight_decay});
  Rng order_rng(mix_seed(cfg.seed, 0x0dde));
  nlohmann::json curve = nlohmann::json::array();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = step_lr(cfg.learning_rate, epoch, cfg.lr_step, cfg.lr_gamma);
    const auto order = shuffled_indices(data.size(), order_rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double batch = static_cast<double>(end - start);
      model.zero_grad();
      for (std::size_t b = start; b < end; ++b) {
        const auto& item = data[order[b]];
        auto trace = model.forward(item.pair);
        const double n = static_cast<double>(trace->probs.size());
        std::vector<double> dz(trace->probs.size());
        double loss = 0.0;
        for (std::size_t i = 0; i < dz.size(); ++i) {
          loss += pixel_cross_entropy(item.label[i], trace->probs[i], LossVariant::kBinary);
          dz[i] = cross_entropy_logit_grad(item.label[i], trace->probs[i], LossVariant::kBinary) /
                  (n * batch);
        }
        if (!std::isfinite(loss)) throw DivergenceError("train_source: non-finite loss");
        epoch_loss += loss / n;
        model.backward(*trace, dz);
      }
      opt.step(model.parameters(), model.gradients(), lr);
    }
    curve.push_back(epoch_loss / static_cast<double>(data.size()));
  }

  nlohmann::json meta{{"role", "source"},
                      {"epochs", cfg.epochs},
                      {"batch_size", cfg.batch_size},
                      {"learning_rate", cfg.learning_rate},
                      {"weight_decay", cfg.weight_decay},
                      {"lr_step", cfg.lr_step},
                      {"lr_gamma", cfg.lr_gamma},
                      {"seed", cfg.seed},
                      {"source_manifest_hash", manifest_hash},
                      {"loss_curve", curve}};
  return snapshot(model, std::move(meta));
}

inline ModelCheckpoint train_source(const DatasetManifest& manifest, const SourceTrainingConfig& cfg) {
  if (manifest.pairs.empty()) throw ValidationError("train_source: empty manifest");
  std::vector<std::string> missing;
  for (const auto& rec : manifest.pairs) {
    if (!rec.gt) missing.push_back(rec.id);
  }
  if (!missing.empty()) {
    std::string msg = "train_source: every source pair needs ground truth; missing for:";
    for (const auto& id : missing) msg += " " + id;
    throw ValidationError(msg);
  }
  std::vector<LabeledPair> data;
  for (const auto& rec : manifest.pairs) data.push_back({load_pair(rec), load_ground_truth(rec)});
  return train_source(data, cfg, manifest.content_hash);
}

}  // namespace davi
