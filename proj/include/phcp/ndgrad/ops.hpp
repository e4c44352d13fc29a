#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "phcp/ndgrad/tensor.hpp"

// Differentiable primitives. Every op takes the active Tape first; results of
// ops whose inputs are all untracked are plain values and record nothing.
namespace phcp::nd {

enum class ReduceAxis { Spatial, Channel };
enum class ReduceMode { Mean, Max };
enum class Unary { Sigmoid, Relu, ExpLin, Tanh };
enum class Binary { Add, Sub, Mul };

// "Same"-style cross-correlation. input [C_in,H,W], kernel [C_out,C_in,k,k],
// bias [C_out]. Output [C_out, H + 2p - k + 1, W + 2p - k + 1].
Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::size_t padding);

// Spatial reduce gives C x 1 x 1, channel reduce gives 1 x H x W. Max routes
// its gradient to the first maximum in scan order.
Tensor reduce(Tape& tape, const Tensor& input, ReduceAxis axis, ReduceMode mode);

Tensor unary(Tape& tape, const Tensor& input, Unary fn);
Tensor sigmoid(Tape& tape, const Tensor& input);
Tensor relu(Tape& tape, const Tensor& input);

// Elementwise with the two attention broadcasts: a C x H x W operand may pair
// with a C x 1 x 1 or a 1 x H x W operand (either side). Anything else must
// match exactly.
Tensor binary(Tape& tape, const Tensor& a, const Tensor& b, Binary fn);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double alpha);

// a [m,n] x b [n,p] -> [m,p]
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor reshape(Tape& tape, const Tensor& input, Shape shape);

// Softmax over axis 0 (the candidate axis) of an [N,H,W] score stack.
Tensor softmax(Tape& tape, const Tensor& scores);

// Concatenate rank-3 tensors along the channel axis.
Tensor concat(Tape& tape, const std::vector<Tensor>& parts);
Tensor slice_channels(Tape& tape, const Tensor& input, std::size_t begin, std::size_t count);
// Truncate or zero-pad the channel axis to `channels`.
Tensor resize_channels(Tape& tape, const Tensor& input, std::size_t channels);

// out[c] = scale[c] * in[perm[c]] + shift[c]; constants are not trainable.
Tensor channel_affine(Tape& tape, const Tensor& input, std::span<const std::size_t> perm,
                      std::span<const double> scale, std::span<const double> shift);

Tensor sum(Tape& tape, const Tensor& input);
Tensor mean(Tape& tape, const Tensor& input);

// Quality-focal binary cross-entropy with logits against soft targets:
//   |t - p|^gamma * -(t log p + (1 - t) log(1 - p)),  p = sigmoid(z).
// Returns the per-element loss with the logits' shape.
Tensor focal_bce_with_logits(Tape& tape, const Tensor& logits, std::span<const double> targets,
                             double gamma);

// Smooth-L1 (Huber, beta) on the entries where mask != 0; zero elsewhere.
Tensor smooth_l1(Tape& tape, const Tensor& pred, std::span<const double> target,
                 std::span<const unsigned char> mask, double beta);

}  // namespace phcp::nd
