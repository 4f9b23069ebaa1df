#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "sovs/core.hpp"
#include "sovs/rng.hpp"

namespace sovs {

// ============================================================================
// TinyFcn: a small fully-convolutional student. Three 3x3 conv stages (the
// last one dilated) followed by a 1x1 classification head; ReLU activations;
// zero padding keeps the spatial size, so logits are per-pixel N-way scores
// at input resolution. Parameters live in one flat vector so checkpointing
// and finite-difference probing can treat the model as a plain real vector.
// Instantiated with T = float for training and T = double for gradient
// verification.
// ============================================================================

template <typename T>
class TinyFcn {
 public:
  struct Cache {
    Tensor3T<T> input, a1, a2, a3;  // post-ReLU activations per stage
  };

  TinyFcn(int in_channels, int channels, int n_classes, std::uint64_t seed)
      : in_channels_(in_channels), channels_(channels), n_classes_(n_classes) {
    if (in_channels < 1 || channels < 1 || n_classes < 2)
      throw std::invalid_argument("TinyFcn: bad architecture sizes");
    layout();
    params_.assign(total_params_, T{});
    grads_.assign(total_params_, T{});
    reset(seed);
  }

  int in_channels() const { return in_channels_; }
  int channels() const { return channels_; }
  int n_classes() const { return n_classes_; }
  int param_count() const { return total_params_; }

  std::vector<T>& params() { return params_; }
  const std::vector<T>& params() const { return params_; }
  std::vector<T>& grads() { return grads_; }
  void zero_grads() { std::fill(grads_.begin(), grads_.end(), T{}); }

  // He-normal weight init, zero biases.
  void reset(std::uint64_t seed) {
    for (int l = 0; l < 4; ++l) {
      const Layer& L = layers_[l];
      Rng rng = Rng::derive(seed, {0x572dull, static_cast<std::uint64_t>(l)});
      const double stddev = std::sqrt(2.0 / (L.kh * L.kw * L.cin));
      for (int i = 0; i < L.kh * L.kw * L.cin * L.cout; ++i)
        params_[L.w_off + i] = static_cast<T>(stddev * rng.normal());
      for (int i = 0; i < L.cout; ++i) params_[L.b_off + i] = T{};
    }
  }

  Tensor3T<T> forward(const Tensor3T<T>& image) const {
    Cache cache;
    return forward_cached(image, cache);
  }

  Tensor3T<T> forward_cached(const Tensor3T<T>& image, Cache& cache) const {
    if (image.c != in_channels_) throw std::invalid_argument("TinyFcn: channel mismatch");
    cache.input = image;
    cache.a1 = conv(image, layers_[0]);
    relu(cache.a1);
    cache.a2 = conv(cache.a1, layers_[1]);
    relu(cache.a2);
    cache.a3 = conv(cache.a2, layers_[2]);
    relu(cache.a3);
    return conv(cache.a3, layers_[3]);
  }

  // Accumulates parameter gradients for one image; call immediately after the
  // forward that produced `cache`.
  void backward(const Cache& cache, const Tensor3T<T>& dlogits) {
    Tensor3T<T> da3 = conv_backward(cache.a3, layers_[3], dlogits, true);
    relu_backward(da3, cache.a3);
    Tensor3T<T> da2 = conv_backward(cache.a2, layers_[2], da3, true);
    relu_backward(da2, cache.a2);
    Tensor3T<T> da1 = conv_backward(cache.a1, layers_[1], da2, true);
    relu_backward(da1, cache.a1);
    conv_backward(cache.input, layers_[0], da1, false);
  }

  // Precision conversion (float training model -> double verification model).
  template <typename U>
  TinyFcn<U> cast(std::uint64_t seed = 0) const {
    TinyFcn<U> other(in_channels_, channels_, n_classes_, seed);
    for (int i = 0; i < total_params_; ++i)
      other.params()[i] = static_cast<U>(params_[i]);
    return other;
  }

 private:
  struct Layer {
    int kh, kw, cin, cout, dilation;
    int w_off, b_off;
  };

  void layout() {
    layers_[0] = Layer{3, 3, in_channels_, channels_, 1, 0, 0};
    layers_[1] = Layer{3, 3, channels_, channels_, 1, 0, 0};
    layers_[2] = Layer{3, 3, channels_, channels_, 2, 0, 0};
    layers_[3] = Layer{1, 1, channels_, n_classes_, 1, 0, 0};
    int off = 0;
    for (auto& L : layers_) {
      L.w_off = off;
      off += L.kh * L.kw * L.cin * L.cout;
      L.b_off = off;
      off += L.cout;
    }
    total_params_ = off;
  }

  // weight index: ((ky*kw + kx)*cin + ci)*cout + co
  Tensor3T<T> conv(const Tensor3T<T>& in, const Layer& L) const {
    Tensor3T<T> out(in.h, in.w, L.cout);
    const int pad_y = L.dilation * (L.kh / 2);
    const int pad_x = L.dilation * (L.kw / 2);
    const T* w = params_.data() + L.w_off;
    const T* b = params_.data() + L.b_off;
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x) {
        T* op = out.pixel(y, x);
        for (int co = 0; co < L.cout; ++co) op[co] = b[co];
        for (int ky = 0; ky < L.kh; ++ky) {
          const int sy = y + L.dilation * ky - pad_y;
          if (sy < 0 || sy >= in.h) continue;
          for (int kx = 0; kx < L.kw; ++kx) {
            const int sx = x + L.dilation * kx - pad_x;
            if (sx < 0 || sx >= in.w) continue;
            const T* ip = in.pixel(sy, sx);
            const T* wp = w + ((ky * L.kw + kx) * L.cin) * L.cout;
            for (int ci = 0; ci < L.cin; ++ci) {
              const T v = ip[ci];
              const T* wc = wp + ci * L.cout;
              for (int co = 0; co < L.cout; ++co) op[co] += v * wc[co];
            }
          }
        }
      }
    return out;
  }

  // Accumulates dW/db into grads_; returns d(input) when want_dinput.
  Tensor3T<T> conv_backward(const Tensor3T<T>& in, const Layer& L, const Tensor3T<T>& dout,
                            bool want_dinput) {
    Tensor3T<T> din;
    if (want_dinput) din = Tensor3T<T>(in.h, in.w, L.cin);
    const int pad_y = L.dilation * (L.kh / 2);
    const int pad_x = L.dilation * (L.kw / 2);
    const T* w = params_.data() + L.w_off;
    T* dw = grads_.data() + L.w_off;
    T* db = grads_.data() + L.b_off;
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x) {
        const T* gp = dout.pixel(y, x);
        for (int co = 0; co < L.cout; ++co) db[co] += gp[co];
        for (int ky = 0; ky < L.kh; ++ky) {
          const int sy = y + L.dilation * ky - pad_y;
          if (sy < 0 || sy >= in.h) continue;
          for (int kx = 0; kx < L.kw; ++kx) {
            const int sx = x + L.dilation * kx - pad_x;
            if (sx < 0 || sx >= in.w) continue;
            const T* ip = in.pixel(sy, sx);
            T* dip = want_dinput ? din.pixel(sy, sx) : nullptr;
            const int base = ((ky * L.kw + kx) * L.cin) * L.cout;
            for (int ci = 0; ci < L.cin; ++ci) {
              const T v = ip[ci];
              const T* wc = w + base + ci * L.cout;
              T* dwc = dw + base + ci * L.cout;
              T acc{};
              for (int co = 0; co < L.cout; ++co) {
                dwc[co] += v * gp[co];
                acc += wc[co] * gp[co];
              }
              if (want_dinput) dip[ci] += acc;
            }
          }
        }
      }
    return din;
  }

  static void relu(Tensor3T<T>& t) {
    for (T& x : t.v)
      if (x < T{}) x = T{};
  }

  static void relu_backward(Tensor3T<T>& grad, const Tensor3T<T>& activated) {
    for (std::size_t i = 0; i < grad.v.size(); ++i)
      if (!(activated.v[i] > T{})) grad.v[i] = T{};
  }

  int in_channels_, channels_, n_classes_;
  std::array<Layer, 4> layers_{};
  int total_params_ = 0;
  std::vector<T> params_, grads_;
};

}  // namespace sovs
