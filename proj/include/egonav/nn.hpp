#pragma once

// Small dense-network toolkit shared by the motion prior and the Q-network.
// Parameters of a network live in one flat vector; a ParamLayout maps named
// blocks onto it so optimizers and checkpoints work on the flat vector.
// Batches are column-major: one sample per column.

#include "egonav/common.hpp"

#include <vector>

namespace egonav::nn {

using Eigen::Index;

struct Block {
  Index offset = 0;
  Index rows = 0;
  Index cols = 0;
  Index size() const { return rows * cols; }
};

class ParamLayout {
 public:
  int add(Index rows, Index cols) {
    blocks_.push_back({size_, rows, cols});
    size_ += rows * cols;
    return static_cast<int>(blocks_.size()) - 1;
  }
  const Block& operator[](int i) const { return blocks_[static_cast<std::size_t>(i)]; }
  const std::vector<Block>& blocks() const { return blocks_; }
  Index size() const { return size_; }

 private:
  std::vector<Block> blocks_;
  Index size_ = 0;
};

template <typename Scalar>
Eigen::Map<MatrixX<Scalar>> view(VectorX<Scalar>& theta, const Block& b) {
  return {theta.data() + b.offset, b.rows, b.cols};
}

template <typename Scalar>
Eigen::Map<const MatrixX<Scalar>> view(const VectorX<Scalar>& theta, const Block& b) {
  return {theta.data() + b.offset, b.rows, b.cols};
}

enum class Activation { kIdentity, kTanh, kRelu };

template <typename Scalar>
void activate(Activation a, MatrixX<Scalar>& m) {
  switch (a) {
    case Activation::kIdentity: break;
    case Activation::kTanh: m = m.array().tanh(); break;
    case Activation::kRelu: m = m.cwiseMax(Scalar(0)); break;
  }
}

/// Multiplies `grad` by the activation derivative, expressed through the
/// activation output `post`.
template <typename Scalar>
void backprop_activation(Activation a, const MatrixX<Scalar>& post, MatrixX<Scalar>& grad) {
  switch (a) {
    case Activation::kIdentity: break;
    case Activation::kTanh: grad.array() *= Scalar(1) - post.array().square(); break;
    case Activation::kRelu: grad = (post.array() > Scalar(0)).select(grad, Scalar(0)); break;
  }
}

/// Fully connected stack: sizes {in, h1, ..., out}.
class Mlp {
 public:
  struct Layer {
    int weight = -1;
    int bias = -1;
    Index in = 0;
    Index out = 0;
    Activation act = Activation::kIdentity;
  };

  Mlp() = default;
  Mlp(ParamLayout& layout, const std::vector<Index>& sizes, Activation hidden,
      Activation output) {
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
      Layer l;
      l.in = sizes[i];
      l.out = sizes[i + 1];
      l.weight = layout.add(l.out, l.in);
      l.bias = layout.add(l.out, 1);
      l.act = (i + 2 == sizes.size()) ? output : hidden;
      layers_.push_back(l);
    }
  }

  const std::vector<Layer>& layers() const { return layers_; }
  Index in_size() const { return layers_.front().in; }
  Index out_size() const { return layers_.back().out; }

  /// `acts` receives the input followed by every layer output.
  template <typename Scalar>
  MatrixX<Scalar> forward(const VectorX<Scalar>& theta, const ParamLayout& layout,
                          const MatrixX<Scalar>& x,
                          std::vector<MatrixX<Scalar>>* acts = nullptr) const {
    MatrixX<Scalar> h = x;
    if (acts) {
      acts->clear();
      acts->push_back(x);
    }
    for (const Layer& l : layers_) {
      MatrixX<Scalar> z = view(theta, layout[l.weight]) * h;
      z.colwise() += view(theta, layout[l.bias]).col(0);
      activate(l.act, z);
      h = std::move(z);
      if (acts) acts->push_back(h);
    }
    return h;
  }

  /// Accumulates parameter gradients into `grad` and returns d loss / d input.
  template <typename Scalar>
  MatrixX<Scalar> backward(const VectorX<Scalar>& theta, const ParamLayout& layout,
                           const std::vector<MatrixX<Scalar>>& acts, MatrixX<Scalar> g,
                           VectorX<Scalar>& grad) const {
    for (std::size_t i = layers_.size(); i-- > 0;) {
      const Layer& l = layers_[i];
      backprop_activation(l.act, acts[i + 1], g);
      view(grad, layout[l.weight]).noalias() += g * acts[i].transpose();
      view(grad, layout[l.bias]).col(0) += g.rowwise().sum();
      g = view(theta, layout[l.weight]).transpose() * g;
    }
    return g;
  }

 private:
  std::vector<Layer> layers_;
};

/// 2D convolution over channel-major images, square kernel, zero padding.
struct ConvSpec {
  Index in_c = 1, in_h = 1, in_w = 1;
  Index out_c = 1;
  Index kernel = 3, stride = 2, pad = 1;
  int weight = -1;  // out_c x (in_c * kernel * kernel)
  int bias = -1;

  Index out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  Index out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  Index in_size() const { return in_c * in_h * in_w; }
  Index out_size() const { return out_c * out_h() * out_w(); }
  Index patch() const { return in_c * kernel * kernel; }
};

/// Output columns [lo, hi) whose input column for kernel offset kx lies
/// inside the image.
inline std::pair<Index, Index> valid_range(const ConvSpec& s, Index kx, Index ow) {
  Index lo = 0, hi = ow;
  while (lo < ow && lo * s.stride - s.pad + kx < 0) ++lo;
  while (hi > lo && (hi - 1) * s.stride - s.pad + kx >= s.in_w) --hi;
  return {lo, hi};
}

/// Unfolds a batch (in_size x B) into patches laid out position-major:
/// row = b * out_h * out_w + oy * out_w + ox, column = (c, ky, kx).
template <typename Scalar>
MatrixX<Scalar> im2col(const ConvSpec& s, const MatrixX<Scalar>& x) {
  const Index oh = s.out_h(), ow = s.out_w(), P = oh * ow, B = x.cols();
  MatrixX<Scalar> cols(P * B, s.patch());
  for (Index c = 0; c < s.in_c; ++c) {
    for (Index ky = 0; ky < s.kernel; ++ky) {
      for (Index kx = 0; kx < s.kernel; ++kx) {
        Scalar* dst_col = cols.col((c * s.kernel + ky) * s.kernel + kx).data();
        for (Index b = 0; b < B; ++b) {
          const Scalar* plane = x.col(b).data() + c * s.in_h * s.in_w;
          for (Index oy = 0; oy < oh; ++oy) {
            Scalar* dst = dst_col + b * P + oy * ow;
            const Index iy = oy * s.stride - s.pad + ky;
            if (iy < 0 || iy >= s.in_h) {
              std::fill_n(dst, ow, Scalar(0));
              continue;
            }
            const Scalar* row = plane + iy * s.in_w + kx - s.pad;
            const auto [lo, hi] = valid_range(s, kx, ow);
            std::fill_n(dst, lo, Scalar(0));
            for (Index ox = lo; ox < hi; ++ox) dst[ox] = row[ox * s.stride];
            std::fill(dst + hi, dst + ow, Scalar(0));
          }
        }
      }
    }
  }
  return cols;
}

/// Adjoint of im2col: scatters patch gradients back onto images.
template <typename Scalar>
MatrixX<Scalar> col2im(const ConvSpec& s, const MatrixX<Scalar>& cols, Index batch) {
  const Index oh = s.out_h(), ow = s.out_w(), P = oh * ow;
  MatrixX<Scalar> x = MatrixX<Scalar>::Zero(s.in_size(), batch);
  for (Index c = 0; c < s.in_c; ++c) {
    for (Index ky = 0; ky < s.kernel; ++ky) {
      for (Index kx = 0; kx < s.kernel; ++kx) {
        const Scalar* src_col = cols.col((c * s.kernel + ky) * s.kernel + kx).data();
        for (Index b = 0; b < batch; ++b) {
          Scalar* plane = x.col(b).data() + c * s.in_h * s.in_w;
          for (Index oy = 0; oy < oh; ++oy) {
            const Index iy = oy * s.stride - s.pad + ky;
            if (iy < 0 || iy >= s.in_h) continue;
            const Scalar* src = src_col + b * P + oy * ow;
            Scalar* row = plane + iy * s.in_w + kx - s.pad;
            const auto [lo, hi] = valid_range(s, kx, ow);
            for (Index ox = lo; ox < hi; ++ox) row[ox * s.stride] += src[ox];
          }
        }
      }
    }
  }
  return x;
}

/// (P*B x C) position-major result -> (C*P x B) channel-major batch.
template <typename Scalar>
MatrixX<Scalar> fold_channels(const MatrixX<Scalar>& y, Index P, Index B) {
  const Index C = y.cols();
  MatrixX<Scalar> out(C * P, B);
  for (Index b = 0; b < B; ++b) {
    for (Index c = 0; c < C; ++c) out.col(b).segment(c * P, P) = y.col(c).segment(b * P, P);
  }
  return out;
}

template <typename Scalar>
MatrixX<Scalar> unfold_channels(const MatrixX<Scalar>& x, Index C, Index P) {
  const Index B = x.cols();
  MatrixX<Scalar> y(P * B, C);
  for (Index b = 0; b < B; ++b) {
    for (Index c = 0; c < C; ++c) y.col(c).segment(b * P, P) = x.col(b).segment(c * P, P);
  }
  return y;
}

template <typename Scalar>
struct ConvCache {
  MatrixX<Scalar> cols;
  MatrixX<Scalar> out;  // post-activation, channel-major batch
};

template <typename Scalar>
MatrixX<Scalar> conv_forward(const ConvSpec& s, const VectorX<Scalar>& theta,
                             const ParamLayout& layout, const MatrixX<Scalar>& x,
                             Activation act, ConvCache<Scalar>* cache) {
  MatrixX<Scalar> cols = im2col(s, x);
  MatrixX<Scalar> y = cols * view(theta, layout[s.weight]).transpose();
  y.rowwise() += view(theta, layout[s.bias]).col(0).transpose();
  MatrixX<Scalar> out = fold_channels(y, s.out_h() * s.out_w(), x.cols());
  activate(act, out);
  if (cache) {
    cache->cols = std::move(cols);
    cache->out = out;
  }
  return out;
}

template <typename Scalar>
MatrixX<Scalar> conv_backward(const ConvSpec& s, const VectorX<Scalar>& theta,
                              const ParamLayout& layout, const ConvCache<Scalar>& cache,
                              Activation act, MatrixX<Scalar> g, VectorX<Scalar>& grad,
                              bool need_input_grad) {
  backprop_activation(act, cache.out, g);
  const Index P = s.out_h() * s.out_w();
  const MatrixX<Scalar> gy = unfold_channels(g, s.out_c, P);
  view(grad, layout[s.weight]).noalias() += gy.transpose() * cache.cols;
  view(grad, layout[s.bias]).col(0) += gy.colwise().sum().transpose();
  if (!need_input_grad) return {};
  const MatrixX<Scalar> gcols = gy * view(theta, layout[s.weight]);
  return col2im(s, gcols, g.cols());
}

/// Uniform fan-in initialization; biases start at zero.
template <typename Scalar>
void init_block(VectorX<Scalar>& theta, const Block& b, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  auto m = view(theta, b);
  for (Index j = 0; j < m.cols(); ++j) {
    for (Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<Scalar>(u(rng));
  }
}

enum class OptimizerKind { kSgdMomentum, kAdam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgdMomentum;
  double lr = 1e-3;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(const OptimizerConfig& cfg, Index n)
      : cfg_(cfg), m_(VectorX<Scalar>::Zero(n)), v_(VectorX<Scalar>::Zero(n)) {}

  void step(VectorX<Scalar>& theta, const VectorX<Scalar>& grad) {
    const auto lr = static_cast<Scalar>(cfg_.lr);
    if (cfg_.kind == OptimizerKind::kSgdMomentum) {
      m_ = static_cast<Scalar>(cfg_.momentum) * m_ + grad;
      theta -= lr * m_;
      return;
    }
    ++t_;
    const auto b1 = static_cast<Scalar>(cfg_.beta1), b2 = static_cast<Scalar>(cfg_.beta2);
    m_ = b1 * m_ + (Scalar(1) - b1) * grad;
    v_ = b2 * v_ + (Scalar(1) - b2) * grad.cwiseAbs2();
    const auto c1 = static_cast<Scalar>(1.0 - std::pow(cfg_.beta1, t_));
    const auto c2 = static_cast<Scalar>(1.0 - std::pow(cfg_.beta2, t_));
    theta.array() -= lr * (m_.array() / c1) /
                     ((v_.array() / c2).sqrt() + static_cast<Scalar>(cfg_.eps));
  }

  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_{};
  VectorX<Scalar> m_;
  VectorX<Scalar> v_;
  std::int64_t t_ = 0;
};

}  // namespace egonav::nn
