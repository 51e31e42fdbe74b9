#pragma once

#include <span>
#include <vector>

#include "segkit/autograd.hpp"

namespace segkit {

// Differentiable operations on NHWC feature maps. Every op checks its
// input shapes and throws ShapeError on mismatch.

// Output extent of a strided window: floor((in + 2*pad - k) / stride) + 1.
Index conv_output_extent(Index in, Index kernel, Index stride, Index pad);

// Dense 2-D convolution. `kernel` is (kh, kw, in, out); `bias` may be empty.
Var conv2d(const Var& x, const Var& kernel, const Var& bias, int stride, int padding);

// Per-channel 2-D convolution. `kernel` is (kh, kw, channels, 1).
Var depthwise_conv2d(const Var& x, const Var& kernel, const Var& bias, int stride,
                     int padding);

// Batch normalization over (N, H, W) using the statistics of x itself.
// The batch mean and unbiased variance are written to the out-params so the
// caller can update its running averages.
Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, float eps,
                     Tensorf* batch_mean, Tensorf* batch_var);

// Batch normalization with fixed statistics.
Var batch_norm_infer(const Var& x, const Var& gamma, const Var& beta,
                     const Tensorf& mean, const Tensorf& var, float eps);

Var relu(const Var& x);
Var relu6(const Var& x);

// Max pooling; padded positions never win.
Var max_pool2d(const Var& x, int window, int stride, int padding);

// Average pooling onto a bins x bins grid. Spatial dims must be divisible
// by `bins` so every cell averages an identical window.
Var adaptive_avg_pool(const Var& x, int bins);

Var upsample_nearest(const Var& x, int factor);

// Bilinear resize with half-pixel centers (source coordinate
// (dst + 0.5) * in / out - 0.5, clamped to the valid range).
Var resize_bilinear(const Var& x, Index out_height, Index out_width);
Tensorf resize_bilinear(const Tensorf& x, Index out_height, Index out_width);

Var concat_channels(std::span<const Var> parts);
Var add(const Var& a, const Var& b);

// Softmax over the channel (last) dimension.
Var softmax(const Var& scores);

// Optional per-pixel weighting of the cross-entropy terms. Each pixel is
// weighted by class_weights[label] (1 when empty); pixels labelled
// ignore_index contribute nothing. The loss is the weighted mean, so the
// default reduces to the plain mean over all pixels.
struct LossWeighting {
  std::vector<float> class_weights;
  int ignore_index = -1;  // < 0: none

  bool is_default() const { return class_weights.empty() && ignore_index < 0; }
};

// Mean over all pixels of -log softmax(scores)[truth]. Fused so the score
// gradient is exactly (p - onehot) / N.
Var softmax_cross_entropy(const Var& scores, std::span<const LabelGrid> truth,
                          const LossWeighting& weighting = {});
// Mean over all pixels of -log clip(probs[truth], eps, 1 - eps), for
// distributions that were produced after the softmax (e.g. resized).
// The gradient uses the clipped probability so saturated pixels keep a
// learning signal.
Var cross_entropy(const Var& probs, std::span<const LabelGrid> truth, float eps,
                  const LossWeighting& weighting = {});
// Scalar sum(x * weights); mostly used to probe gradients.
Var weighted_sum(const Var& x, const Tensorf& weights);

}  // namespace segkit
