#include "gzeb/ops.hpp"

#include <spdlog/spdlog.h>

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

namespace gzeb {

thread_local std::vector<std::uint8_t>* KinkRecorder::active_ = nullptr;

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

// Grad buffer of a parent, or nullptr if it does not take gradients.
template <typename T>
T* grad_target(const NodePtr<T>& node) {
  if (!node || !node->requires_grad) return nullptr;
  return node->ensure_grad().data();
}

template <typename T>
NodePtr<T> node_or_null(const Tensor<T>& t) {
  return t.defined() ? t.node() : nullptr;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw UsageError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                     shape_string(b));
}

struct ConvGeometry {
  std::size_t batch, in_channels, height, width;
  std::size_t out_channels, kernel_h, kernel_w;
  std::size_t stride, padding;
  std::size_t out_h, out_w;

  std::size_t patch() const { return in_channels * kernel_h * kernel_w; }
  std::size_t positions() const { return out_h * out_w; }
  std::size_t in_plane() const { return in_channels * height * width; }
  std::size_t kernel_size() const { return out_channels * patch(); }
};

// Column buffer: row (c, ky, kx), column (oy, ox).
template <typename T>
void im2col(const T* in, const ConvGeometry& g, T* cols) {
  const auto positions = g.positions();
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        T* row = cols + ((c * g.kernel_h + ky) * g.kernel_w + kx) * positions;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.padding);
          T* out = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(out, out + g.out_w, T(0));
            continue;
          }
          const T* src = in + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.padding);
            out[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width))
                          ? T(0)
                          : src[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* in_grad) {
  const auto positions = g.positions();
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        const T* row = cols + ((c * g.kernel_h + ky) * g.kernel_w + kx) * positions;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          T* dst = in_grad + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            dst[static_cast<std::size_t>(ix)] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

// Shared by conv2d and dynamic_conv2d; `per_sample` selects a kernel slice
// per batch item.
template <typename T>
Tensor<T> convolve(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>* bias,
                   const ConvGeometry& g, bool per_sample) {
  Tensor<T> out = make_result<T>({g.batch, g.out_channels, g.out_h, g.out_w},
                                 {&input, &kernel, bias});
  const std::size_t out_plane = g.out_channels * g.positions();
  std::vector<T> cols(g.patch() * g.positions());
  const T* in = input.data().data();
  const T* k = kernel.data().data();
  T* y = out.data().data();
  for (std::size_t b = 0; b < g.batch; ++b) {
    im2col(in + b * g.in_plane(), g, cols.data());
    const T* kb = k + (per_sample ? b * g.kernel_size() : 0);
    MatMap<T>(y + b * out_plane, g.out_channels, g.positions()).noalias() =
        ConstMatMap<T>(kb, g.out_channels, g.patch()) *
        ConstMatMap<T>(cols.data(), g.patch(), g.positions());
    if (bias && bias->defined()) {
      const T* bv = bias->data().data();
      for (std::size_t c = 0; c < g.out_channels; ++c) {
        T* plane = y + b * out_plane + c * g.positions();
        for (std::size_t i = 0; i < g.positions(); ++i) plane[i] += bv[c];
      }
    }
  }

  if (out.requires_grad()) {
    out.node()->backward = [in_node = input.node(), k_node = kernel.node(),
                            b_node = bias ? node_or_null(*bias) : nullptr, g,
                            per_sample](TensorNode<T>& self) {
      T* d_in = grad_target(in_node);
      T* d_k = grad_target(k_node);
      T* d_b = grad_target(b_node);
      const std::size_t out_plane = g.out_channels * g.positions();
      std::vector<T> cols(g.patch() * g.positions());
      std::vector<T> d_cols(d_in ? cols.size() : 0);
      for (std::size_t b = 0; b < g.batch; ++b) {
        ConstMatMap<T> dy(self.grad.data() + b * out_plane, g.out_channels, g.positions());
        const std::size_t k_off = per_sample ? b * g.kernel_size() : 0;
        if (d_k) {
          im2col(in_node->data.data() + b * g.in_plane(), g, cols.data());
          MatMap<T>(d_k + k_off, g.out_channels, g.patch()).noalias() +=
              dy * ConstMatMap<T>(cols.data(), g.patch(), g.positions()).transpose();
        }
        if (d_in) {
          MatMap<T>(d_cols.data(), g.patch(), g.positions()).noalias() =
              ConstMatMap<T>(k_node->data.data() + k_off, g.out_channels, g.patch())
                  .transpose() *
              dy;
          col2im_add(d_cols.data(), g, d_in + b * g.in_plane());
        }
        if (d_b) {
          for (std::size_t c = 0; c < g.out_channels; ++c) {
            const T* plane = self.grad.data() + b * out_plane + c * g.positions();
            T acc = T(0);
            for (std::size_t i = 0; i < g.positions(); ++i) acc += plane[i];
            d_b[c] += acc;
          }
        }
      }
    };
  }
  return out;
}

ConvGeometry conv_geometry(const Shape& in, std::size_t out_channels, std::size_t kernel_in,
                           std::size_t kh, std::size_t kw, std::size_t stride,
                           std::size_t padding) {
  require(in.size() == 4, "conv2d: input must be [B,C,H,W], got " + shape_string(in));
  require(kernel_in == in[1], "conv2d: input has " + std::to_string(in[1]) +
                                  " channels but kernel expects " + std::to_string(kernel_in));
  require(kh % 2 == 1 && kw % 2 == 1, "conv2d: kernel extents must be odd");
  require(stride >= 1, "conv2d: stride must be positive");
  require(in[2] + 2 * padding >= kh && in[3] + 2 * padding >= kw,
          "conv2d: kernel larger than padded input");
  ConvGeometry g{in[0], in[1], in[2], in[3], out_channels, kh, kw, stride, padding, 0, 0};
  g.out_h = conv_output_size(g.height, kh, stride, padding);
  g.out_w = conv_output_size(g.width, kw, stride, padding);
  return g;
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding) {
  require(kernel.rank() == 4, "conv2d: kernel must be [Cout,Cin,kH,kW]");
  const auto& kd = kernel.dims();
  auto g = conv_geometry(input.dims(), kd[0], kd[1], kd[2], kd[3], stride, padding);
  if (bias.defined())
    require(bias.rank() == 1 && bias.dim(0) == kd[0], "conv2d: bias must be [Cout]");
  return convolve(input, kernel, &bias, g, false);
}

template <typename T>
Tensor<T> dynamic_conv2d(const Tensor<T>& input, const Tensor<T>& kernels, std::size_t stride,
                         std::size_t padding) {
  require(kernels.rank() == 5, "dynamic_conv2d: kernels must be [B,Cout,Cin,kH,kW]");
  const auto& kd = kernels.dims();
  auto g = conv_geometry(input.dims(), kd[1], kd[2], kd[3], kd[4], stride, padding);
  require(kd[0] == g.batch, "dynamic_conv2d: one kernel bank per batch item required");
  return convolve<T>(input, kernels, nullptr, g, true);
}

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormStats<T>& stats, Mode mode, double momentum, double eps) {
  require(input.rank() == 4, "batchnorm2d: input must be [B,C,H,W]");
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3);
  require(gamma.size() == channels && beta.size() == channels &&
              stats.mean.size() == channels && stats.var.size() == channels,
          "batchnorm2d: parameter size does not match channel count");
  const std::size_t n = batch * plane;

  Tensor<T> out = make_result<T>(input.dims(), {&input, &gamma, &beta});
  const T* x = input.data().data();
  T* y = out.data().data();
  std::vector<T> xhat(input.size());
  std::vector<T> inv_std(channels);

  for (std::size_t c = 0; c < channels; ++c) {
    double mu, var;
    if (mode == Mode::train) {
      if (n < 2) throw UsageError("batchnorm2d: train mode needs at least 2 values per channel");
      double acc = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < plane; ++i) acc += x[(b * channels + c) * plane + i];
      mu = acc / static_cast<double>(n);
      double sq = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < plane; ++i) {
          double d = x[(b * channels + c) * plane + i] - mu;
          sq += d * d;
        }
      var = sq / static_cast<double>(n);
      stats.mean[c] = static_cast<T>((1.0 - momentum) * stats.mean[c] + momentum * mu);
      stats.var[c] = static_cast<T>((1.0 - momentum) * stats.var[c] +
                                    momentum * var * static_cast<double>(n) /
                                        static_cast<double>(n - 1));
    } else {
      mu = stats.mean[c];
      var = stats.var[c];
    }
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[c] = static_cast<T>(is);
    const T g = gamma[c], bt = beta[c];
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < plane; ++i) {
        const std::size_t idx = (b * channels + c) * plane + i;
        xhat[idx] = static_cast<T>((x[idx] - mu) * is);
        y[idx] = g * xhat[idx] + bt;
      }
  }

  if (out.requires_grad()) {
    out.node()->backward = [in_node = input.node(), g_node = gamma.node(),
                            b_node = beta.node(), xhat = std::move(xhat),
                            inv_std = std::move(inv_std), batch, channels, plane, n,
                            mode](TensorNode<T>& self) {
      T* dx = grad_target(in_node);
      T* dg = grad_target(g_node);
      T* db = grad_target(b_node);
      const T* dy = self.grad.data();
      for (std::size_t c = 0; c < channels; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t i = 0; i < plane; ++i) {
            const std::size_t idx = (b * channels + c) * plane + i;
            sum_dy += dy[idx];
            sum_dy_xhat += static_cast<double>(dy[idx]) * xhat[idx];
          }
        if (dg) dg[c] += static_cast<T>(sum_dy_xhat);
        if (db) db[c] += static_cast<T>(sum_dy);
        if (!dx) continue;
        const double gs = static_cast<double>(g_node->data[c]) * inv_std[c];
        const double nn = static_cast<double>(n);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t i = 0; i < plane; ++i) {
            const std::size_t idx = (b * channels + c) * plane + i;
            if (mode == Mode::train)
              dx[idx] += static_cast<T>(gs / nn * (nn * dy[idx] - sum_dy - xhat[idx] * sum_dy_xhat));
            else
              dx[idx] += static_cast<T>(gs * dy[idx]);
          }
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> activation(const Tensor<T>& input, Activation kind) {
  Tensor<T> out = make_result<T>(input.dims(), {&input});
  const T* x = input.data().data();
  T* y = out.data().data();
  const std::size_t n = input.size();
  if (kind == Activation::relu) {
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    if (auto* kinks = KinkRecorder::active())
      for (std::size_t i = 0; i < n; ++i) kinks->push_back(x[i] > T(0));
  } else {
    for (std::size_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
  }
  if (out.requires_grad()) {
    out.node()->backward = [in_node = input.node(), kind](TensorNode<T>& self) {
      T* dx = grad_target(in_node);
      if (!dx) return;
      const std::size_t n = self.data.size();
      if (kind == Activation::relu) {
        for (std::size_t i = 0; i < n; ++i)
          if (in_node->data[i] > T(0)) dx[i] += self.grad[i];
      } else {
        for (std::size_t i = 0; i < n; ++i)
          dx[i] += self.grad[i] * (T(1) - self.data[i] * self.data[i]);
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> channel_bias(const Tensor<T>& input, const Tensor<T>& bias) {
  require(input.rank() == 4, "channel_bias: input must be [B,C,H,W]");
  require(bias.rank() == 1 && bias.dim(0) == input.dim(1), "channel_bias: bias must be [C]");
  const std::size_t B = input.dim(0), C = input.dim(1), plane = input.dim(2) * input.dim(3);
  Tensor<T> out = make_result<T>(input.dims(), {&input, &bias});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < plane; ++i) out[(b * C + c) * plane + i] = input[(b * C + c) * plane + i] + bias[c];
  if (out.requires_grad()) {
    out.node()->backward = [in_node = input.node(), b_node = bias.node(), B, C, plane](TensorNode<T>& self) {
      if (T* dx = grad_target(in_node))
        for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += self.grad[i];
      if (T* db = grad_target(b_node))
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < plane; ++i) db[c] += self.grad[(b * C + c) * plane + i];
    };
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  require(input.rank() == 4, "global_avg_pool: input must be [B,C,H,W]");
  const std::size_t rows = input.dim(0) * input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3);
  require(plane >= 1, "global_avg_pool: empty spatial extent");
  Tensor<T> out = make_result<T>({input.dim(0), input.dim(1)}, {&input});
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += input[r * plane + i];
    out[r] = static_cast<T>(acc / static_cast<double>(plane));
  }
  if (out.requires_grad()) {
    out.node()->backward = [in_node = input.node(), rows, plane](TensorNode<T>& self) {
      T* dx = grad_target(in_node);
      if (!dx) return;
      const T inv = T(1) / static_cast<T>(plane);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < plane; ++i) dx[r * plane + i] += self.grad[r] * inv;
    };
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  require(input.rank() == 2 && weight.rank() == 2, "linear: expected [B,Din] and [Dout,Din]");
  const std::size_t batch = input.dim(0), din = input.dim(1), dout = weight.dim(0);
  require(weight.dim(1) == din, "linear: input width " + std::to_string(din) +
                                    " does not match weight " + shape_string(weight.dims()));
  if (bias.defined()) require(bias.size() == dout, "linear: bias must be [Dout]");

  Tensor<T> out = make_result<T>({batch, dout}, {&input, &weight, &bias});
  MatMap<T> y(out.data().data(), batch, dout);
  y.noalias() = ConstMatMap<T>(input.data().data(), batch, din) *
                ConstMatMap<T>(weight.data().data(), dout, din).transpose();
  if (bias.defined())
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t o = 0; o < dout; ++o) y(b, o) += bias[o];

  if (out.requires_grad()) {
    out.node()->backward = [in_node = input.node(), w_node = weight.node(),
                            b_node = node_or_null(bias), batch, din,
                            dout](TensorNode<T>& self) {
      ConstMatMap<T> dy(self.grad.data(), batch, dout);
      if (T* dx = grad_target(in_node))
        MatMap<T>(dx, batch, din).noalias() +=
            dy * ConstMatMap<T>(w_node->data.data(), dout, din);
      if (T* dw = grad_target(w_node))
        MatMap<T>(dw, dout, din).noalias() +=
            dy.transpose() * ConstMatMap<T>(in_node->data.data(), batch, din);
      if (T* db = grad_target(b_node))
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t o = 0; o < dout; ++o) db[o] += dy(b, o);
    };
  }
  return out;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& input, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: p must be in [0,1), got " + std::to_string(p));
  if (mode == Mode::eval || p == 0.0) return input;
  Tensor<T> out = make_result<T>(input.dims(), {&input});
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(input.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng.uniform() < p ? T(0) : keep_scale;
    out[i] = input[i] * mask[i];
  }
  if (out.requires_grad()) {
    out.node()->backward = [in_node = input.node(), mask = std::move(mask)](TensorNode<T>& self) {
      T* dx = grad_target(in_node);
      if (!dx) return;
      for (std::size_t i = 0; i < mask.size(); ++i) dx[i] += self.grad[i] * mask[i];
    };
  }
  return out;
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& input) {
  require(input.rank() == 2, "l2_normalize: input must be [B,D]");
  constexpr double floor_norm = 1e-12;
  const std::size_t rows = input.dim(0), width = input.dim(1);
  Tensor<T> out = make_result<T>(input.dims(), {&input});
  std::vector<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t d = 0; d < width; ++d) {
      const double v = input[r * width + d];
      sq += v * v;
    }
    double norm = std::sqrt(sq);
    if (norm <= floor_norm) {
      spdlog::warn("l2_normalize: row {} has norm {:.3g}; dividing by the 1e-12 floor", r, norm);
      norm = floor_norm;
    }
    norms[r] = static_cast<T>(norm);
    for (std::size_t d = 0; d < width; ++d)
      out[r * width + d] = static_cast<T>(input[r * width + d] / norm);
  }
  if (out.requires_grad()) {
    out.node()->backward = [in_node = input.node(), norms = std::move(norms), rows,
                            width](TensorNode<T>& self) {
      T* dx = grad_target(in_node);
      if (!dx) return;
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = self.data.data() + r * width;
        const T* dy = self.grad.data() + r * width;
        // Below the floor the map is linear, so the projection term vanishes.
        const bool floored = static_cast<double>(norms[r]) <= floor_norm;
        double dot = 0.0;
        if (!floored)
          for (std::size_t d = 0; d < width; ++d) dot += static_cast<double>(y[d]) * dy[d];
        for (std::size_t d = 0; d < width; ++d)
          dx[r * width + d] += static_cast<T>((dy[d] - y[d] * dot) / norms[r]);
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& input, Shape dims) {
  if (shape_size(dims) != input.size())
    throw UsageError("reshape: cannot view " + shape_string(input.dims()) + " as " +
                     shape_string(dims));
  Tensor<T> out = make_result<T>(std::move(dims), {&input});
  std::copy(input.data().begin(), input.data().end(), out.data().begin());
  if (out.requires_grad()) {
    out.node()->backward = [in_node = input.node()](TensorNode<T>& self) {
      T* dx = grad_target(in_node);
      if (!dx) return;
      for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += self.grad[i];
    };
  }
  return out;
}

template <typename T>
Tensor<T> group_mean(const Tensor<T>& input, std::size_t group) {
  if (input.rank() != 2 || group == 0 || input.dim(0) % group != 0)
    throw UsageError("group_mean: " + shape_string(input.dims()) + " is not divisible into groups of " +
                     std::to_string(group));
  const std::size_t groups = input.dim(0) / group, width = input.dim(1);
  Tensor<T> out = make_result<T>({groups, width}, {&input});
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t d = 0; d < width; ++d) {
      double acc = 0.0;
      for (std::size_t j = 0; j < group; ++j) acc += input[(g * group + j) * width + d];
      out[g * width + d] = static_cast<T>(acc / static_cast<double>(group));
    }
  if (out.requires_grad()) {
    out.node()->backward = [in_node = input.node(), groups, group, width](TensorNode<T>& self) {
      T* dx = grad_target(in_node);
      if (!dx) return;
      const T inv = T(1) / static_cast<T>(group);
      for (std::size_t g = 0; g < groups; ++g)
        for (std::size_t j = 0; j < group; ++j)
          for (std::size_t d = 0; d < width; ++d)
            dx[(g * group + j) * width + d] += self.grad[g * width + d] * inv;
    };
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.dims(), b.dims(), "add");
  Tensor<T> out = make_result<T>(a.dims(), {&a, &b});
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  if (out.requires_grad()) {
    out.node()->backward = [an = a.node(), bn = b.node()](TensorNode<T>& self) {
      T* da = grad_target(an);
      T* db = grad_target(bn);
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (da) da[i] += self.grad[i];
        if (db) db[i] += self.grad[i];
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.dims(), b.dims(), "sub");
  Tensor<T> out = make_result<T>(a.dims(), {&a, &b});
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  if (out.requires_grad()) {
    out.node()->backward = [an = a.node(), bn = b.node()](TensorNode<T>& self) {
      T* da = grad_target(an);
      T* db = grad_target(bn);
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (da) da[i] += self.grad[i];
        if (db) db[i] -= self.grad[i];
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.dims(), b.dims(), "mul");
  Tensor<T> out = make_result<T>(a.dims(), {&a, &b});
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  if (out.requires_grad()) {
    out.node()->backward = [an = a.node(), bn = b.node()](TensorNode<T>& self) {
      T* da = grad_target(an);
      T* db = grad_target(bn);
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (da) da[i] += self.grad[i] * bn->data[i];
        if (db) db[i] += self.grad[i] * an->data[i];
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, double factor) {
  Tensor<T> out = make_result<T>(a.dims(), {&a});
  const T f = static_cast<T>(factor);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * f;
  if (out.requires_grad()) {
    out.node()->backward = [an = a.node(), f](TensorNode<T>& self) {
      T* da = grad_target(an);
      if (!da) return;
      for (std::size_t i = 0; i < self.grad.size(); ++i) da[i] += self.grad[i] * f;
    };
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  Tensor<T> out = make_result<T>({1}, {&a});
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i];
  out[0] = static_cast<T>(acc);
  if (out.requires_grad()) {
    out.node()->backward = [an = a.node()](TensorNode<T>& self) {
      T* da = grad_target(an);
      if (!da) return;
      for (std::size_t i = 0; i < an->data.size(); ++i) da[i] += self.grad[0];
    };
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.size() == 0) throw UsageError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& prediction, const Tensor<T>& target) {
  require_same_shape(prediction.dims(), target.dims(), "mse_loss");
  Tensor<T> out = make_result<T>({1}, {&prediction, &target});
  const std::size_t n = prediction.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(prediction[i]) - target[i];
    acc += d * d;
  }
  out[0] = static_cast<T>(acc / static_cast<double>(n));
  if (out.requires_grad()) {
    out.node()->backward = [pn = prediction.node(), tn = target.node(), n](TensorNode<T>& self) {
      T* dp = grad_target(pn);
      T* dt = grad_target(tn);
      const T k = self.grad[0] * T(2) / static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const T d = pn->data[i] - tn->data[i];
        if (dp) dp[i] += k * d;
        if (dt) dt[i] -= k * d;
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> triplet_margin_loss(const Tensor<T>& embeddings, std::span<const Triplet> triplets,
                              double margin) {
  if (embeddings.rank() != 2) throw UsageError("triplet_margin_loss: embeddings must be [N,D]");
  if (triplets.empty()) throw UsageError("triplet_margin_loss: no triplets");
  const std::size_t rows = embeddings.dim(0), width = embeddings.dim(1);
  for (const auto& t : triplets)
    if (t.anchor >= rows || t.positive >= rows || t.negative >= rows)
      throw UsageError("triplet_margin_loss: triplet index out of range");

  auto dot = [&](std::size_t i, std::size_t j) {
    double acc = 0.0;
    for (std::size_t d = 0; d < width; ++d)
      acc += static_cast<double>(embeddings[i * width + d]) * embeddings[j * width + d];
    return acc;
  };
  Tensor<T> out = make_result<T>({1}, {&embeddings});
  std::vector<char> active(triplets.size(), 0);
  double total = 0.0;
  for (std::size_t k = 0; k < triplets.size(); ++k) {
    const auto& t = triplets[k];
    const double hinge = dot(t.anchor, t.negative) - dot(t.anchor, t.positive) + margin;
    if (hinge > 0.0) {
      active[k] = 1;
      total += hinge;
    }
  }
  if (auto* kinks = KinkRecorder::active()) kinks->insert(kinks->end(), active.begin(), active.end());
  out[0] = static_cast<T>(total / static_cast<double>(triplets.size()));
  if (out.requires_grad()) {
    out.node()->backward = [en = embeddings.node(),
                            list = std::vector<Triplet>(triplets.begin(), triplets.end()),
                            active = std::move(active), width](TensorNode<T>& self) {
      T* de = grad_target(en);
      if (!de) return;
      const T k = self.grad[0] / static_cast<T>(list.size());
      const T* e = en->data.data();
      for (std::size_t i = 0; i < list.size(); ++i) {
        if (!active[i]) continue;
        const auto& t = list[i];
        for (std::size_t d = 0; d < width; ++d) {
          const T ea = e[t.anchor * width + d];
          de[t.anchor * width + d] += k * (e[t.negative * width + d] - e[t.positive * width + d]);
          de[t.positive * width + d] -= k * ea;
          de[t.negative * width + d] += k * ea;
        }
      }
    };
  }
  return out;
}

#define GZEB_INSTANTIATE_OPS(T)                                                                \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, \
                            std::size_t);                                                      \
  template Tensor<T> dynamic_conv2d(const Tensor<T>&, const Tensor<T>&, std::size_t,           \
                                    std::size_t);                                              \
  template Tensor<T> batchnorm2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                 BatchNormStats<T>&, Mode, double, double);                    \
  template Tensor<T> activation(const Tensor<T>&, Activation);                                 \
  template Tensor<T> channel_bias(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                        \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> dropout(const Tensor<T>&, double, Mode, Rng&);                            \
  template Tensor<T> l2_normalize(const Tensor<T>&);                                           \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                         \
  template Tensor<T> group_mean(const Tensor<T>&, std::size_t);                                \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> scale(const Tensor<T>&, double);                                          \
  template Tensor<T> sum(const Tensor<T>&);                                                    \
  template Tensor<T> mean(const Tensor<T>&);                                                   \
  template Tensor<T> mse_loss(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> triplet_margin_loss(const Tensor<T>&, std::span<const Triplet>, double);

GZEB_INSTANTIATE_OPS(float)
GZEB_INSTANTIATE_OPS(double)

}  // namespace gzeb
