#pragma once

// Differentiable tensor operations. Every op records itself on the tape when
// the tape is recording and at least one input requires grad.
//
// Layout conventions: images are [N, C, H, W], sequences [N, C, L], dense
// activations [N, D]. Convolutions are cross-correlations (no kernel flip).

#include <cstddef>
#include <vector>

#include "ca3/tensor.hpp"

namespace ca3::ops {

struct ConvParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
  // Transposed convolutions only: extra rows/cols appended to the output
  // (must be < stride). Used to land decoders on exact encoder input sizes.
  std::size_t output_padding = 0;
};

// Output extent of a strided convolution / transposed convolution along one axis.
std::size_t conv_out_extent(std::size_t in, std::size_t kernel, const ConvParams& p);
std::size_t conv_transpose_out_extent(std::size_t in, std::size_t kernel, const ConvParams& p);

template <typename T>
BasicTensor<T> conv2d(BasicTape<T>& tape, const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, ConvParams params = {});
template <typename T>
BasicTensor<T> conv1d(BasicTape<T>& tape, const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, ConvParams params = {});
// weight layout [C_in, C_out, kH, kW] (resp. [C_in, C_out, k]).
template <typename T>
BasicTensor<T> conv_transpose2d(BasicTape<T>& tape, const BasicTensor<T>& input,
                                const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                                ConvParams params = {});
template <typename T>
BasicTensor<T> conv_transpose1d(BasicTape<T>& tape, const BasicTensor<T>& input,
                                const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                                ConvParams params = {});

// input [N, D] x weight [D, M] + bias [M].
template <typename T>
BasicTensor<T> linear(BasicTape<T>& tape, const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias);

enum class Activation { elu, sigmoid, relu };
const char* to_string(Activation a);
using ca3::to_string;

template <typename T>
BasicTensor<T> elementwise(BasicTape<T>& tape, Activation act, const BasicTensor<T>& input);
template <typename T>
BasicTensor<T> elu(BasicTape<T>& tape, const BasicTensor<T>& input) {
  return elementwise(tape, Activation::elu, input);
}
template <typename T>
BasicTensor<T> sigmoid(BasicTape<T>& tape, const BasicTensor<T>& input) {
  return elementwise(tape, Activation::sigmoid, input);
}
template <typename T>
BasicTensor<T> relu(BasicTape<T>& tape, const BasicTensor<T>& input) {
  return elementwise(tape, Activation::relu, input);
}
template <typename T>
BasicTensor<T> exp(BasicTape<T>& tape, const BasicTensor<T>& input);

// Pools every spatial axis (1 or 2 of them) to `target` using windows
// [floor(i*L/T), ceil((i+1)*L/T)).
template <typename T>
BasicTensor<T> adaptive_avg_pool(BasicTape<T>& tape, const BasicTensor<T>& input,
                                 const std::vector<std::size_t>& target);
template <typename T>
BasicTensor<T> adaptive_max_pool(BasicTape<T>& tape, const BasicTensor<T>& input,
                                 const std::vector<std::size_t>& target);

template <typename T>
BasicTensor<T> concat_channels(BasicTape<T>& tape, const std::vector<BasicTensor<T>>& inputs);
// Channels [begin, end) of a [N, C, ...] tensor.
template <typename T>
BasicTensor<T> slice_channels(BasicTape<T>& tape, const BasicTensor<T>& input, std::size_t begin,
                              std::size_t end);

template <typename T>
BasicTensor<T> reshape(BasicTape<T>& tape, const BasicTensor<T>& input, Shape shape);
// [N, ...] -> [N, prod(...)].
template <typename T>
BasicTensor<T> flatten(BasicTape<T>& tape, const BasicTensor<T>& input);
// [N, D] -> [N, k, D/k]; row r of the k axis holds elements [r*D/k, (r+1)*D/k).
template <typename T>
BasicTensor<T> split_stack(BasicTape<T>& tape, const BasicTensor<T>& input, std::size_t k);

template <typename T>
BasicTensor<T> add(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> sub(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> mul(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> scale(BasicTape<T>& tape, const BasicTensor<T>& a, T factor);
template <typename T>
BasicTensor<T> sum(BasicTape<T>& tape, const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> mean(BasicTape<T>& tape, const BasicTensor<T>& a);

inline constexpr double kBceEpsilon = 1e-7;

// Mean of squared differences over all elements.
template <typename T>
BasicTensor<T> mse(BasicTape<T>& tape, const BasicTensor<T>& x, const BasicTensor<T>& x_hat);
// [N, ...] pair -> [N] of per-sample mean squared differences.
template <typename T>
BasicTensor<T> per_sample_mse(BasicTape<T>& tape, const BasicTensor<T>& x, const BasicTensor<T>& x_hat);
// Mean binary cross-entropy; `target` is treated as a constant in {0,1}.
// Predictions are clamped to [eps, 1 - eps]. pos_weight scales the y=1 term.
template <typename T>
BasicTensor<T> bce(BasicTape<T>& tape, const BasicTensor<T>& target, const BasicTensor<T>& prediction,
                   T pos_weight = T(1));

}  // namespace ca3::ops
