/*
 * Copyright 2026 The Coldstart Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef COLDSTART_NUMGRAD_HPP_
#define COLDSTART_NUMGRAD_HPP_

// Dense-layer building blocks with hand-written backward passes.
//
// Every function is templated on the scalar type so the same code can be
// exercised in double (training) and long double (gradient checks).
// Batches are row-major: one instance per row.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>

namespace coldstart::numgrad {

template <typename Scalar>
using Matrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Row vector, used for biases so every parameter tensor is a Matrix.
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline std::string shape_str(Eigen::Index rows, Eigen::Index cols) {
  std::ostringstream os;
  os << rows << "x" << cols;
  return os.str();
}

template <typename A, typename B>
void require_same_shape(const A& a, const B& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": expected " +
                     shape_str(a.rows(), a.cols()) + ", got " +
                     shape_str(b.rows(), b.cols()));
  }
}

}  // namespace detail

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

/// Gradients of one affine layer. Each tensor has the shape of the tensor it
/// differentiates.
template <typename Scalar>
struct AffineGrad {
  Matrix<Scalar> weights;
  Matrix<Scalar> bias;  // 1 x d_out
  Matrix<Scalar> input;
};

/// out[b][j] = sum_i in[b][i] * W[i][j] + bias[j]
template <typename Scalar>
Matrix<Scalar> affine_forward(const Matrix<Scalar>& input,
                              const Matrix<Scalar>& weights,
                              const Matrix<Scalar>& bias) {
  if (input.cols() != weights.rows()) {
    throw ShapeError("affine_forward: input has " +
                     std::to_string(input.cols()) +
                     " columns but weights have " +
                     std::to_string(weights.rows()) + " rows (d_in)");
  }
  if (bias.rows() != 1 || bias.cols() != weights.cols()) {
    throw ShapeError("affine_forward: bias is " +
                     detail::shape_str(bias.rows(), bias.cols()) +
                     " but d_out is " + std::to_string(weights.cols()));
  }
  Matrix<Scalar> out = input * weights;
  out.rowwise() += bias.row(0);
  return out;
}

template <typename Scalar>
AffineGrad<Scalar> affine_backward(const Matrix<Scalar>& input,
                                   const Matrix<Scalar>& weights,
                                   const Matrix<Scalar>& upstream) {
  if (upstream.rows() != input.rows() || upstream.cols() != weights.cols()) {
    throw ShapeError("affine_backward: upstream is " +
                     detail::shape_str(upstream.rows(), upstream.cols()) +
                     ", forward output was " +
                     detail::shape_str(input.rows(), weights.cols()));
  }
  AffineGrad<Scalar> g;
  g.weights = input.transpose() * upstream;
  g.bias = upstream.colwise().sum();
  g.input = upstream * weights.transpose();
  return g;
}

template <typename Scalar>
Matrix<Scalar> relu_forward(const Matrix<Scalar>& x) {
  return x.cwiseMax(Scalar(0));
}

/// `pre_activation` is the relu input recorded during the forward pass.
template <typename Scalar>
Matrix<Scalar> relu_backward(const Matrix<Scalar>& pre_activation,
                             const Matrix<Scalar>& upstream) {
  detail::require_same_shape(pre_activation, upstream, "relu_backward");
  return (pre_activation.array() > Scalar(0))
      .select(upstream, Scalar(0))
      .matrix();
}

template <typename Scalar>
Matrix<Scalar> sigmoid_forward(const Matrix<Scalar>& x) {
  // Split by sign so exp() never overflows.
  return x.unaryExpr([](Scalar v) {
    if (v >= Scalar(0)) {
      return Scalar(1) / (Scalar(1) + std::exp(-v));
    }
    const Scalar e = std::exp(v);
    return e / (Scalar(1) + e);
  });
}

/// `output` is the sigmoid output recorded during the forward pass.
template <typename Scalar>
Matrix<Scalar> sigmoid_backward(const Matrix<Scalar>& output,
                                const Matrix<Scalar>& upstream) {
  detail::require_same_shape(output, upstream, "sigmoid_backward");
  return (upstream.array() * output.array() * (Scalar(1) - output.array()))
      .matrix();
}

/// Row-wise softmax.
template <typename Scalar>
Matrix<Scalar> softmax_forward(const Matrix<Scalar>& logits) {
  Matrix<Scalar> out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const Scalar mx = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - mx).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> softmax_backward(const Matrix<Scalar>& output,
                                const Matrix<Scalar>& upstream) {
  detail::require_same_shape(output, upstream, "softmax_backward");
  Matrix<Scalar> g(output.rows(), output.cols());
  for (Eigen::Index r = 0; r < output.rows(); ++r) {
    const Scalar dot = output.row(r).dot(upstream.row(r));
    g.row(r) = (output.row(r).array() * (upstream.row(r).array() - dot))
                   .matrix();
  }
  return g;
}

/// Column-wise concatenation [left; right] of two batches.
template <typename Scalar>
Matrix<Scalar> concat_forward(const Matrix<Scalar>& left,
                              const Matrix<Scalar>& right) {
  if (left.rows() != right.rows()) {
    throw ShapeError("concat_forward: batch sizes differ (" +
                     std::to_string(left.rows()) + " vs " +
                     std::to_string(right.rows()) + ")");
  }
  Matrix<Scalar> out(left.rows(), left.cols() + right.cols());
  out << left, right;
  return out;
}

/// Splits the upstream gradient at the boundary recorded by concat_forward.
template <typename Scalar>
std::pair<Matrix<Scalar>, Matrix<Scalar>> concat_backward(
    const Matrix<Scalar>& upstream, Eigen::Index left_cols) {
  if (left_cols < 0 || left_cols > upstream.cols()) {
    throw ShapeError("concat_backward: boundary " + std::to_string(left_cols) +
                     " outside upstream width " +
                     std::to_string(upstream.cols()));
  }
  return {upstream.leftCols(left_cols),
          upstream.rightCols(upstream.cols() - left_cols)};
}

struct FiniteDifferenceReport {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_index = 0;
  bool passed = true;
};

/// Relative error with a floor on the denominator so that entries whose
/// true gradient is zero are judged on absolute error.
inline double relative_error(double analytic, double numeric,
                             double floor = 1e-6) {
  const double diff = std::abs(analytic - numeric);
  if (diff == 0.0) {
    return 0.0;
  }
  return diff / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central-difference check of `analytic` against the scalar function
/// `loss`. `values` is perturbed in place and restored afterwards.
template <typename Scalar>
FiniteDifferenceReport finite_difference_check(
    Matrix<Scalar>& values, const Matrix<Scalar>& analytic,
    const std::function<Scalar()>& loss, double epsilon, double tolerance) {
  if (!(epsilon > 0.0)) {
    throw std::invalid_argument("finite_difference_check: epsilon must be > 0");
  }
  detail::require_same_shape(values, analytic, "finite_difference_check");
  FiniteDifferenceReport report;
  const Scalar h = static_cast<Scalar>(epsilon);
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    Scalar& v = values.data()[i];
    const Scalar saved = v;
    v = saved + h;
    const Scalar up = loss();
    v = saved - h;
    const Scalar down = loss();
    v = saved;
    const double numeric = static_cast<double>((up - down) / (Scalar(2) * h));
    const double a = static_cast<double>(analytic.data()[i]);
    const double rel = relative_error(a, numeric);
    if (rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_index = report.checked;
    }
    report.max_absolute_error =
        std::max(report.max_absolute_error, std::abs(a - numeric));
    ++report.checked;
  }
  report.passed = report.max_relative_error < tolerance;
  return report;
}

/// Merges two reports from checks over different tensors.
inline FiniteDifferenceReport merge(const FiniteDifferenceReport& a,
                                    const FiniteDifferenceReport& b,
                                    double tolerance) {
  FiniteDifferenceReport out;
  out.checked = a.checked + b.checked;
  if (b.max_relative_error > a.max_relative_error) {
    out.max_relative_error = b.max_relative_error;
    out.worst_index = a.checked + b.worst_index;
  } else {
    out.max_relative_error = a.max_relative_error;
    out.worst_index = a.worst_index;
  }
  out.max_absolute_error = std::max(a.max_absolute_error, b.max_absolute_error);
  out.passed = out.max_relative_error < tolerance;
  return out;
}

}  // namespace coldstart::numgrad

#endif  // COLDSTART_NUMGRAD_HPP_
