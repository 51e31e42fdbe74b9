#pragma once

#include <cmath>
#include <span>
#include <string>

#include "segkit/tensor.hpp"

namespace segkit {

// Checks that `truth` holds one H x W grid per batch item of an NHWC
// class map and every label lies in [0, K).
template <typename Scalar>
void check_label_batch(const Tensor<Scalar>& maps, std::span<const LabelGrid> truth) {
  if (maps.rank() != 4) throw ShapeError("class map must be rank 4, got " + maps.shape().str());
  if (static_cast<Index>(truth.size()) != maps.batch()) {
    throw ShapeError("label batch has " + std::to_string(truth.size()) +
                     " grids for a batch of " + std::to_string(maps.batch()));
  }
  const Index classes = maps.channels();
  for (const auto& grid : truth) {
    if (grid.rows() != maps.height() || grid.cols() != maps.width()) {
      throw ShapeError("label grid " + std::to_string(grid.rows()) + "x" +
                       std::to_string(grid.cols()) + " does not match class map " +
                       maps.shape().str());
    }
    if (grid.size() && (grid.minCoeff() < 0 || grid.maxCoeff() >= classes)) {
      throw DataError("label outside [0, " + std::to_string(classes) + ")");
    }
  }
}

template <typename Scalar>
void check_finite(const Tensor<Scalar>& t, const char* what) {
  if (!t.array().isFinite().all()) throw TrainingError(std::string("non-finite ") + what);
}

// Channel-wise softmax of an NHWC score map.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& scores) {
  Tensor<Scalar> probs(scores.shape());
  auto in = scores.matrix();
  auto out = probs.matrix();
  for (Index r = 0; r < in.rows(); ++r) {
    const Scalar peak = in.row(r).maxCoeff();
    out.row(r) = (in.row(r).array() - peak).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return probs;
}

// Mean over all B*H*W pixels of -log p[truth], with p clipped to
// [eps, 1 - eps].
template <typename Scalar>
Scalar pixelwise_cross_entropy(const Tensor<Scalar>& probs, std::span<const LabelGrid> truth,
                               Scalar eps = Scalar(1e-7)) {
  check_label_batch(probs, truth);
  check_finite(probs, "class distribution");
  const Index pixels = probs.batch() * probs.height() * probs.width();
  if (pixels == 0) throw ShapeError("cross entropy over an empty batch");
  auto p = probs.matrix();
  const Index hw = probs.height() * probs.width();
  Scalar total = 0;
  for (Index n = 0; n < probs.batch(); ++n) {
    const auto& grid = truth[static_cast<size_t>(n)];
    for (Index i = 0; i < hw; ++i) {
      Scalar q = p(n * hw + i, grid.data()[i]);
      q = std::min(std::max(q, eps), Scalar(1) - eps);
      total -= std::log(q);
    }
  }
  return total / static_cast<Scalar>(pixels);
}

// Gradient of pixelwise_cross_entropy(softmax(scores)) with respect to the
// scores, given probs = softmax(scores): (p - onehot) / N.
template <typename Scalar>
Tensor<Scalar> cross_entropy_score_gradient(const Tensor<Scalar>& probs,
                                            std::span<const LabelGrid> truth) {
  check_label_batch(probs, truth);
  Tensor<Scalar> grad = probs;
  auto g = grad.matrix();
  const Index hw = probs.height() * probs.width();
  for (Index n = 0; n < probs.batch(); ++n) {
    const auto& grid = truth[static_cast<size_t>(n)];
    for (Index i = 0; i < hw; ++i) g(n * hw + i, grid.data()[i]) -= Scalar(1);
  }
  grad.array() /= static_cast<Scalar>(g.rows());
  return grad;
}

}  // namespace segkit
