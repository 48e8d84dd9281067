#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "nilm/errors.hpp"
#include "nilm/parallel.hpp"
#include "nilm/rng.hpp"
#include "nilm/tensor.hpp"

// Neural layers over [batch, channels, time] tensors.  All layers construct
// with deterministic parameter values (weights zero, LayerNorm gain one) and
// are brought to a trainable state by init_parameters(rng); that split keeps
// fresh-layer behaviour exactly predictable in tests.

namespace nilm {

enum class Phase { train, eval };

// Per-forward context: phase selects dropout behaviour, rng feeds the masks.
struct ForwardCtx {
  Phase phase = Phase::eval;
  Rng* rng = nullptr;
};

namespace detail {

template <typename S>
void check_input_3d(const Tensor<S>& x, int channels, const char* who) {
  if (x.ndim() != 3 || x.extent(1) != static_cast<std::size_t>(channels) ||
      x.extent(2) == 0) {
    throw ShapeError(std::string(who) + ": expected input [batch x " +
                     std::to_string(channels) + " x time>=1], got " +
                     (x.valid() ? shape_str(x.shape()) : "null"));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// 1-D convolution with symmetric zero padding and dilation.
//
// Output length always equals input length: each side is padded by
// (kernel_size - 1) * dilation / 2 positions, which is integral because the
// kernel size must be odd.  Taps reach (kernel_size - 1)/2 * dilation samples
// into the past and the future of every output position (non-causal).
template <typename S>
class DilatedConv1d {
 public:
  DilatedConv1d(int in_channels, int out_channels, int kernel_size,
                int dilation)
      : in_channels_(in_channels),
        out_channels_(out_channels),
        kernel_size_(kernel_size),
        dilation_(dilation) {
    if (in_channels < 1 || out_channels < 1) {
      throw ConfigError("conv: channel counts must be positive, got " +
                        std::to_string(in_channels) + " -> " +
                        std::to_string(out_channels));
    }
    if (kernel_size < 1 || kernel_size % 2 == 0) {
      throw ConfigError(
          "conv: kernel size must be odd and positive so the symmetric "
          "padding is integral, got " +
          std::to_string(kernel_size));
    }
    if (dilation < 1) {
      throw ConfigError("conv: dilation must be positive, got " +
                        std::to_string(dilation));
    }
    weight_ = Tensor<S>::zeros({static_cast<std::size_t>(out_channels),
                                static_cast<std::size_t>(in_channels),
                                static_cast<std::size_t>(kernel_size)});
    bias_ = Tensor<S>::zeros({static_cast<std::size_t>(out_channels)});
    weight_.set_requires_grad(true);
    bias_.set_requires_grad(true);
  }

  int in_channels() const { return in_channels_; }
  int out_channels() const { return out_channels_; }
  int kernel_size() const { return kernel_size_; }
  int dilation() const { return dilation_; }
  int pad_per_side() const { return (kernel_size_ - 1) * dilation_ / 2; }

  Tensor<S>& weight() { return weight_; }
  const Tensor<S>& weight() const { return weight_; }
  Tensor<S>& bias() { return bias_; }
  const Tensor<S>& bias() const { return bias_; }

  std::size_t parameter_count() const { return weight_.size() + bias_.size(); }

  // He-uniform over the kernel fan-in; biases stay zero.
  void init_parameters(Rng& rng) {
    const double bound =
        std::sqrt(6.0 / (static_cast<double>(in_channels_) * kernel_size_));
    for (S& w : weight_.values()) {
      w = static_cast<S>(rng.uniform(-bound, bound));
    }
    std::fill(bias_.values().begin(), bias_.values().end(), S(0));
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    detail::check_input_3d(x, in_channels_, "conv");
    const std::size_t B = x.extent(0);
    const std::size_t T = x.extent(2);
    const int k = kernel_size_, d = dilation_, ic = in_channels_,
              oc = out_channels_;
    const int centre = (k - 1) / 2;
    Tensor<S> out =
        Tensor<S>::zeros({B, static_cast<std::size_t>(oc), T});
    const S* px = x.data();
    const S* pw = weight_.data();
    const S* pb = bias_.data();
    S* py = out.data();
    parallel_for(B * static_cast<std::size_t>(oc), [&](std::size_t row) {
      const std::size_t b = row / oc;
      const int o = static_cast<int>(row % oc);
      S* yrow = py + row * T;
      std::fill(yrow, yrow + T, pb[o]);
      for (int i = 0; i < ic; ++i) {
        const S* xrow = px + (b * ic + i) * T;
        const S* wrow = pw + (static_cast<std::size_t>(o) * ic + i) * k;
        for (int j = 0; j < k; ++j) {
          const long off = static_cast<long>(j - centre) * d;
          const long t0 = std::max(0L, -off);
          const long t1 = std::min(static_cast<long>(T),
                                   static_cast<long>(T) - off);
          const S w = wrow[j];
          const S* xs = xrow + off;
          for (long t = t0; t < t1; ++t) yrow[t] += w * xs[t];
        }
      }
    });
    detail::record<S>(
        out, {x, weight_, bias_}, [k, d, ic, oc](TensorImpl<S>& self) {
          const Tensor<S>& x = self.parents[0];
          const Tensor<S>& weight = self.parents[1];
          const Tensor<S>& bias = self.parents[2];
          const std::size_t B = x.extent(0);
          const std::size_t T = x.extent(2);
          const int centre = (k - 1) / 2;
          const S* g = self.grad.data();
          if (x.requires_grad()) {
            S* gx = x.impl()->ensure_grad().data();
            const S* pw = weight.data();
            parallel_for(B * static_cast<std::size_t>(ic),
                         [&](std::size_t row) {
              const std::size_t b = row / ic;
              const int i = static_cast<int>(row % ic);
              S* gxrow = gx + row * T;
              for (int o = 0; o < oc; ++o) {
                const S* grow = g + (b * oc + o) * T;
                const S* wrow =
                    pw + (static_cast<std::size_t>(o) * ic + i) * k;
                for (int j = 0; j < k; ++j) {
                  const long off = static_cast<long>(j - centre) * d;
                  const long s0 = std::max(0L, off);
                  const long s1 = std::min(static_cast<long>(T),
                                           static_cast<long>(T) + off);
                  const S w = wrow[j];
                  const S* gs = grow - off;
                  for (long s = s0; s < s1; ++s) gxrow[s] += w * gs[s];
                }
              }
            });
          }
          if (weight.requires_grad()) {
            S* gw = weight.impl()->ensure_grad().data();
            const S* px = x.data();
            parallel_for(static_cast<std::size_t>(oc), [&](std::size_t o) {
              for (int i = 0; i < ic; ++i) {
                for (int j = 0; j < k; ++j) {
                  const long off = static_cast<long>(j - centre) * d;
                  const long t0 = std::max(0L, -off);
                  const long t1 = std::min(static_cast<long>(T),
                                           static_cast<long>(T) - off);
                  S acc = S(0);
                  for (std::size_t b = 0; b < B; ++b) {
                    const S* grow = g + (b * oc + o) * T;
                    const S* xs = px + (b * ic + i) * T + off;
                    for (long t = t0; t < t1; ++t) acc += grow[t] * xs[t];
                  }
                  gw[(o * ic + i) * k + j] += acc;
                }
              }
            });
          }
          if (bias.requires_grad()) {
            S* gb = bias.impl()->ensure_grad().data();
            parallel_for(static_cast<std::size_t>(oc), [&](std::size_t o) {
              S acc = S(0);
              for (std::size_t b = 0; b < B; ++b) {
                const S* grow = g + (b * oc + o) * T;
                for (std::size_t t = 0; t < T; ++t) acc += grow[t];
              }
              gb[o] += acc;
            });
          }
        });
    return out;
  }

 private:
  int in_channels_, out_channels_, kernel_size_, dilation_;
  Tensor<S> weight_;  // [out_channels, in_channels, kernel_size]
  Tensor<S> bias_;    // [out_channels]
};

// ---------------------------------------------------------------------------
// Dense layer applied independently at every time step (a 1x1 convolution).
template <typename S>
class PositionwiseDense {
 public:
  PositionwiseDense(int in_features, int out_features)
      : in_features_(in_features), out_features_(out_features) {
    if (in_features < 1 || out_features < 1) {
      throw ConfigError("dense: feature counts must be positive, got " +
                        std::to_string(in_features) + " -> " +
                        std::to_string(out_features));
    }
    weight_ = Tensor<S>::zeros({static_cast<std::size_t>(out_features),
                                static_cast<std::size_t>(in_features)});
    bias_ = Tensor<S>::zeros({static_cast<std::size_t>(out_features)});
    weight_.set_requires_grad(true);
    bias_.set_requires_grad(true);
  }

  int in_features() const { return in_features_; }
  int out_features() const { return out_features_; }
  Tensor<S>& weight() { return weight_; }
  const Tensor<S>& weight() const { return weight_; }
  Tensor<S>& bias() { return bias_; }
  const Tensor<S>& bias() const { return bias_; }
  std::size_t parameter_count() const { return weight_.size() + bias_.size(); }

  void init_parameters(Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in_features_));
    for (S& w : weight_.values()) {
      w = static_cast<S>(rng.uniform(-bound, bound));
    }
    std::fill(bias_.values().begin(), bias_.values().end(), S(0));
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    detail::check_input_3d(x, in_features_, "dense");
    const std::size_t B = x.extent(0);
    const std::size_t T = x.extent(2);
    const int ic = in_features_, oc = out_features_;
    Tensor<S> out = Tensor<S>::zeros({B, static_cast<std::size_t>(oc), T});
    const S* px = x.data();
    const S* pw = weight_.data();
    const S* pb = bias_.data();
    S* py = out.data();
    parallel_for(B * static_cast<std::size_t>(oc), [&](std::size_t row) {
      const std::size_t b = row / oc;
      const int o = static_cast<int>(row % oc);
      S* yrow = py + row * T;
      std::fill(yrow, yrow + T, pb[o]);
      const S* wrow = pw + static_cast<std::size_t>(o) * ic;
      for (int i = 0; i < ic; ++i) {
        const S w = wrow[i];
        const S* xrow = px + (b * ic + i) * T;
        for (std::size_t t = 0; t < T; ++t) yrow[t] += w * xrow[t];
      }
    });
    detail::record<S>(out, {x, weight_, bias_}, [ic, oc](TensorImpl<S>& self) {
      const Tensor<S>& x = self.parents[0];
      const Tensor<S>& weight = self.parents[1];
      const Tensor<S>& bias = self.parents[2];
      const std::size_t B = x.extent(0);
      const std::size_t T = x.extent(2);
      const S* g = self.grad.data();
      if (x.requires_grad()) {
        S* gx = x.impl()->ensure_grad().data();
        const S* pw = weight.data();
        parallel_for(B * static_cast<std::size_t>(ic), [&](std::size_t row) {
          const std::size_t b = row / ic;
          const int i = static_cast<int>(row % ic);
          S* gxrow = gx + row * T;
          for (int o = 0; o < oc; ++o) {
            const S w = pw[static_cast<std::size_t>(o) * ic + i];
            const S* grow = g + (b * oc + o) * T;
            for (std::size_t t = 0; t < T; ++t) gxrow[t] += w * grow[t];
          }
        });
      }
      if (weight.requires_grad()) {
        S* gw = weight.impl()->ensure_grad().data();
        const S* px = x.data();
        parallel_for(static_cast<std::size_t>(oc), [&](std::size_t o) {
          for (int i = 0; i < ic; ++i) {
            S acc = S(0);
            for (std::size_t b = 0; b < B; ++b) {
              const S* grow = g + (b * oc + o) * T;
              const S* xrow = px + (b * ic + i) * T;
              for (std::size_t t = 0; t < T; ++t) acc += grow[t] * xrow[t];
            }
            gw[o * ic + i] += acc;
          }
        });
      }
      if (bias.requires_grad()) {
        S* gb = bias.impl()->ensure_grad().data();
        parallel_for(static_cast<std::size_t>(oc), [&](std::size_t o) {
          S acc = S(0);
          for (std::size_t b = 0; b < B; ++b) {
            const S* grow = g + (b * oc + o) * T;
            for (std::size_t t = 0; t < T; ++t) acc += grow[t];
          }
          gb[o] += acc;
        });
      }
    });
    return out;
  }

 private:
  int in_features_, out_features_;
  Tensor<S> weight_;  // [out_features, in_features]
  Tensor<S> bias_;    // [out_features]
};

// ---------------------------------------------------------------------------
// Layer normalization across the channel axis, independently per time step.
template <typename S>
class LayerNorm {
 public:
  explicit LayerNorm(int channels, double epsilon = 1e-5)
      : channels_(channels), epsilon_(static_cast<S>(epsilon)) {
    if (channels < 1) {
      throw ConfigError("layer_norm: channel count must be positive, got " +
                        std::to_string(channels));
    }
    if (!(epsilon > 0)) {
      throw ConfigError("layer_norm: epsilon must be positive");
    }
    gamma_ = Tensor<S>::full({static_cast<std::size_t>(channels)}, S(1));
    beta_ = Tensor<S>::zeros({static_cast<std::size_t>(channels)});
    gamma_.set_requires_grad(true);
    beta_.set_requires_grad(true);
  }

  int channels() const { return channels_; }
  Tensor<S>& gamma() { return gamma_; }
  const Tensor<S>& gamma() const { return gamma_; }
  Tensor<S>& beta() { return beta_; }
  const Tensor<S>& beta() const { return beta_; }
  std::size_t parameter_count() const { return gamma_.size() + beta_.size(); }

  Tensor<S> forward(const Tensor<S>& x) const {
    detail::check_input_3d(x, channels_, "layer_norm");
    const std::size_t B = x.extent(0);
    const std::size_t T = x.extent(2);
    const std::size_t C = static_cast<std::size_t>(channels_);
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    // normalized values and inverse stddevs are kept for the backward pass
    auto xhat = std::make_shared<std::vector<S>>(x.size());
    auto inv_std = std::make_shared<std::vector<S>>(B * T);
    const S* px = x.data();
    const S* pg = gamma_.data();
    const S* pbeta = beta_.data();
    S* py = out.data();
    const S inv_c = S(1) / static_cast<S>(C);
    const S eps = epsilon_;
    S* ph = xhat->data();
    S* pis = inv_std->data();
    parallel_for(B, [&](std::size_t b) {
      const S* xb = px + b * C * T;
      S* yb = py + b * C * T;
      S* hb = ph + b * C * T;
      for (std::size_t t = 0; t < T; ++t) {
        S mu = S(0);
        for (std::size_t c = 0; c < C; ++c) mu += xb[c * T + t];
        mu *= inv_c;
        S var = S(0);
        for (std::size_t c = 0; c < C; ++c) {
          const S dv = xb[c * T + t] - mu;
          var += dv * dv;
        }
        var *= inv_c;  // biased variance
        const S is = S(1) / std::sqrt(var + eps);
        pis[b * T + t] = is;
        for (std::size_t c = 0; c < C; ++c) {
          const S h = (xb[c * T + t] - mu) * is;
          hb[c * T + t] = h;
          yb[c * T + t] = pg[c] * h + pbeta[c];
        }
      }
    });
    detail::record<S>(
        out, {x, gamma_, beta_}, [xhat, inv_std](TensorImpl<S>& self) {
          const Tensor<S>& x = self.parents[0];
          const Tensor<S>& gamma = self.parents[1];
          const Tensor<S>& beta = self.parents[2];
          const std::size_t B = x.extent(0);
          const std::size_t C = x.extent(1);
          const std::size_t T = x.extent(2);
          const S* g = self.grad.data();
          const S* ph = xhat->data();
          const S* pis = inv_std->data();
          const S* pg = gamma.data();
          const S inv_c = S(1) / static_cast<S>(C);
          if (x.requires_grad()) {
            S* gx = x.impl()->ensure_grad().data();
            parallel_for(B, [&](std::size_t b) {
              const S* gb = g + b * C * T;
              const S* hb = ph + b * C * T;
              S* gxb = gx + b * C * T;
              for (std::size_t t = 0; t < T; ++t) {
                S sum_dh = S(0), sum_dh_h = S(0);
                for (std::size_t c = 0; c < C; ++c) {
                  const S dh = gb[c * T + t] * pg[c];
                  sum_dh += dh;
                  sum_dh_h += dh * hb[c * T + t];
                }
                const S is = pis[b * T + t];
                for (std::size_t c = 0; c < C; ++c) {
                  const S dh = gb[c * T + t] * pg[c];
                  gxb[c * T + t] +=
                      is * (dh - (sum_dh + hb[c * T + t] * sum_dh_h) * inv_c);
                }
              }
            });
          }
          if (gamma.requires_grad()) {
            S* gg = gamma.impl()->ensure_grad().data();
            for (std::size_t b = 0; b < B; ++b) {
              for (std::size_t c = 0; c < C; ++c) {
                S acc = S(0);
                const S* grow = g + (b * C + c) * T;
                const S* hrow = ph + (b * C + c) * T;
                for (std::size_t t = 0; t < T; ++t) acc += grow[t] * hrow[t];
                gg[c] += acc;
              }
            }
          }
          if (beta.requires_grad()) {
            S* gbeta = beta.impl()->ensure_grad().data();
            for (std::size_t b = 0; b < B; ++b) {
              for (std::size_t c = 0; c < C; ++c) {
                S acc = S(0);
                const S* grow = g + (b * C + c) * T;
                for (std::size_t t = 0; t < T; ++t) acc += grow[t];
                gbeta[c] += acc;
              }
            }
          }
        });
    return out;
  }

 private:
  int channels_;
  S epsilon_;
  Tensor<S> gamma_;  // [channels]
  Tensor<S> beta_;   // [channels]
};

// ---------------------------------------------------------------------------
// Inverted dropout: surviving elements are scaled by 1/(1-rate) during
// training so eval-mode forward is the exact identity.
template <typename S>
class Dropout {
 public:
  explicit Dropout(double rate) : rate_(rate) {
    if (!(rate >= 0.0) || rate >= 1.0) {
      throw ConfigError("dropout: rate must lie in [0, 1), got " +
                        std::to_string(rate));
    }
  }

  double rate() const { return rate_; }

  Tensor<S> forward(const Tensor<S>& x, const ForwardCtx& ctx) const {
    if (ctx.phase == Phase::eval || rate_ == 0.0) return x;  // exact identity
    if (ctx.rng == nullptr) {
      throw ConfigError("dropout: train-phase forward needs ctx.rng");
    }
    const std::size_t n = x.size();
    const S scale = S(1) / static_cast<S>(1.0 - rate_);
    auto mask = std::make_shared<std::vector<S>>(n);
    S* pm = mask->data();
    for (std::size_t i = 0; i < n; ++i) {
      pm[i] = (ctx.rng->uniform() < rate_) ? S(0) : scale;
    }
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    const S* px = x.data();
    S* py = out.data();
    for (std::size_t i = 0; i < n; ++i) py[i] = px[i] * pm[i];
    detail::record<S>(out, {x}, [mask](TensorImpl<S>& self) {
      const Tensor<S>& x = self.parents[0];
      if (!x.requires_grad()) return;
      S* gx = x.impl()->ensure_grad().data();
      const S* g = self.grad.data();
      const S* pm = mask->data();
      for (std::size_t i = 0; i < self.values.size(); ++i) {
        gx[i] += g[i] * pm[i];
      }
    });
    return out;
  }

 private:
  double rate_;
};

}  // namespace nilm
