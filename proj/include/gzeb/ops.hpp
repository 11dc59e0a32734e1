#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gzeb/rng.hpp"
#include "gzeb/tensor.hpp"

namespace gzeb {

enum class Mode { train, eval };

enum class Activation { relu, tanh };

/// Running statistics of one batch-norm layer.
template <typename T>
struct BatchNormStats {
  std::vector<T> mean;
  std::vector<T> var;

  explicit BatchNormStats(std::size_t channels = 0) : mean(channels, T(0)), var(channels, T(1)) {}
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Index triple into a batch of embeddings.
struct Triplet {
  std::size_t anchor;
  std::size_t positive;
  std::size_t negative;
  friend bool operator==(const Triplet&, const Triplet&) = default;
};

/// While alive, ops with a kink (relu, the triplet hinge) append one byte per
/// element saying which side of the kink the input fell on. Finite-difference
/// probes compare these patterns to spot steps that cross a kink.
class KinkRecorder {
 public:
  explicit KinkRecorder(std::vector<std::uint8_t>& sink) : previous_(active_) { active_ = &sink; }
  ~KinkRecorder() { active_ = previous_; }
  KinkRecorder(const KinkRecorder&) = delete;
  KinkRecorder& operator=(const KinkRecorder&) = delete;

  static std::vector<std::uint8_t>* active() { return active_; }

 private:
  static thread_local std::vector<std::uint8_t>* active_;
  std::vector<std::uint8_t>* previous_;
};

/// 2-D cross-correlation (no kernel flip). input [B,Cin,H,W], kernel
/// [Cout,Cin,kH,kW], optional bias [Cout]. Output spatial size is
/// floor((H + 2*padding - kH) / stride) + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding);

/// conv2d where every batch item has its own kernel: kernels [B,Cout,Cin,kH,kW].
template <typename T>
Tensor<T> dynamic_conv2d(const Tensor<T>& input, const Tensor<T>& kernels, std::size_t stride,
                         std::size_t padding);

/// Adds bias[c] to every element of channel c: input [B,C,H,W], bias [C].
template <typename T>
Tensor<T> channel_bias(const Tensor<T>& input, const Tensor<T>& bias);

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormStats<T>& stats, Mode mode, double momentum = kBatchNormMomentum,
                      double eps = kBatchNormEps);

template <typename T>
Tensor<T> activation(const Tensor<T>& input, Activation kind);

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  return activation(input, Activation::relu);
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& input) {
  return activation(input, Activation::tanh);
}

/// [B,C,H,W] -> [B,C]
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input);

/// input [B,Din] times weight [Dout,Din] transposed, plus optional bias [Dout].
template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

/// Inverted dropout: survivors are scaled by 1/(1-p) so eval mode is the identity.
template <typename T>
Tensor<T> dropout(const Tensor<T>& input, double p, Mode mode, Rng& rng);

/// Row-wise division by max(||row||, 1e-12) on a [B,D] tensor.
template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& input);

template <typename T>
Tensor<T> reshape(const Tensor<T>& input, Shape dims);

/// Mean over consecutive groups of rows: [N*group, D] -> [N, D].
template <typename T>
Tensor<T> group_mean(const Tensor<T>& input, std::size_t group);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, double factor);

template <typename T>
Tensor<T> sum(const Tensor<T>& a);

template <typename T>
Tensor<T> mean(const Tensor<T>& a);

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& prediction, const Tensor<T>& target);

/// Mean over `triplets` of max(e_a.e_n - e_a.e_p + margin, 0) for rows of
/// embeddings [N,D].
template <typename T>
Tensor<T> triplet_margin_loss(const Tensor<T>& embeddings, std::span<const Triplet> triplets,
                              double margin);

inline std::size_t conv_output_size(std::size_t in, std::size_t k, std::size_t stride,
                                    std::size_t padding) {
  return (in + 2 * padding - k) / stride + 1;
}

}  // namespace gzeb
