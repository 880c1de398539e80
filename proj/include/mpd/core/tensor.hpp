#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>

namespace mpd {

// Every value in the model is a dense row-major matrix; vectors are 1 x n.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic, Eigen::RowMajor>;

using Tensor = Matrix<double>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename Derived>
std::string shape_string(const Eigen::EigenBase<Derived>& m) {
  std::ostringstream os;
  os << '[' << m.rows() << 'x' << m.cols() << ']';
  return os.str();
}

namespace detail {

template <typename A, typename B>
void require_same_shape(const A& a, const B& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                         shape_string(b));
  }
}

}  // namespace detail

/// Matrix product with a fixed summation order: every output element is
/// accumulated over the inner index left to right, starting from zero.
///
/// Row i of the result depends only on row i of `a`, so stacking, removing or
/// reordering other rows never changes it bit-wise. Eigen's blocked GEMM does
/// not give that guarantee, which is why the forward pass goes through here.
template <typename Scalar>
Matrix<Scalar> matmul(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(a) + " x " +
                         shape_string(b));
  }
  const Eigen::Index n = a.rows();
  const Eigen::Index k = a.cols();
  const Eigen::Index m = b.cols();
  Matrix<Scalar> c = Matrix<Scalar>::Zero(n, m);
  if (n == 0 || m == 0) return c;

  Eigen::Index i = 0;
  for (; i + 4 <= n; i += 4) {
    Scalar* __restrict c0 = c.row(i).data();
    Scalar* __restrict c1 = c.row(i + 1).data();
    Scalar* __restrict c2 = c.row(i + 2).data();
    Scalar* __restrict c3 = c.row(i + 3).data();
    for (Eigen::Index p = 0; p < k; ++p) {
      const Scalar a0 = a(i, p);
      const Scalar a1 = a(i + 1, p);
      const Scalar a2 = a(i + 2, p);
      const Scalar a3 = a(i + 3, p);
      const Scalar* __restrict br = b.row(p).data();
      for (Eigen::Index j = 0; j < m; ++j) {
        const Scalar bj = br[j];
        c0[j] += a0 * bj;
        c1[j] += a1 * bj;
        c2[j] += a2 * bj;
        c3[j] += a3 * bj;
      }
    }
  }
  for (; i < n; ++i) {
    Scalar* __restrict c0 = c.row(i).data();
    for (Eigen::Index p = 0; p < k; ++p) {
      const Scalar a0 = a(i, p);
      const Scalar* __restrict br = b.row(p).data();
      for (Eigen::Index j = 0; j < m; ++j) c0[j] += a0 * br[j];
    }
  }
  return c;
}

/// a * b^T with the same summation order as matmul.
template <typename Scalar>
Matrix<Scalar> matmul_nt(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: inner dimensions differ, " + shape_string(a) + " x " +
                         shape_string(b) + "^T");
  }
  const Matrix<Scalar> bt = b.transpose();
  return matmul<Scalar>(a, bt);
}

/// x * w + b, with b (1 x q) broadcast over the rows of x.
template <typename Scalar>
Matrix<Scalar> affine(const Matrix<Scalar>& x, const Matrix<Scalar>& w, const Matrix<Scalar>& b) {
  if (b.rows() != 1 || b.cols() != w.cols()) {
    throw DimensionError("affine: bias " + shape_string(b) + " does not match weight " +
                         shape_string(w));
  }
  if (x.cols() != w.rows()) {
    throw DimensionError("affine: input " + shape_string(x) + " does not match weight " +
                         shape_string(w));
  }
  Matrix<Scalar> y = matmul<Scalar>(x, w);
  y.rowwise() += b.row(0);
  return y;
}

struct Activation {
  enum class Kind { relu, leaky_relu };
  Kind kind = Kind::relu;
  double slope = 0.0;

  static Activation relu() { return {Kind::relu, 0.0}; }
  static Activation leaky_relu(double slope) {
    if (!(slope > 0.0 && slope < 1.0)) {
      throw std::invalid_argument("leaky_relu: slope must lie in (0, 1)");
    }
    return {Kind::leaky_relu, slope};
  }
};

template <typename Scalar>
Matrix<Scalar> activation(const Matrix<Scalar>& x, const Activation& act) {
  if (act.kind == Activation::Kind::relu) return x.cwiseMax(Scalar(0));
  const Scalar slope = static_cast<Scalar>(act.slope);
  return x.unaryExpr([slope](Scalar v) { return v >= Scalar(0) ? v : slope * v; });
}

/// Row-wise softmax, shifted by the row max.
template <typename Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& logits) {
  Matrix<Scalar> out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const Scalar top = logits.row(r).maxCoeff();
    Scalar total = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      out(r, c) = std::exp(logits(r, c) - top);
      total += out(r, c);
    }
    out.row(r) /= total;
  }
  return out;
}

/// Mean over rows of -log softmax(logits)[label], for n x 2 logits.
template <typename Scalar>
Scalar two_class_ce(const Matrix<Scalar>& logits, std::span<const int> labels) {
  if (logits.rows() == 0) throw std::invalid_argument("two_class_ce: empty input");
  if (logits.cols() != 2) {
    throw DimensionError("two_class_ce: expected n x 2 logits, got " + shape_string(logits));
  }
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows()) {
    throw DimensionError("two_class_ce: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(logits.rows()) + " rows");
  }
  Scalar total = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y != 0 && y != 1) throw std::invalid_argument("two_class_ce: labels must be 0 or 1");
    const Scalar top = std::max(logits(r, 0), logits(r, 1));
    const Scalar lse =
        top + std::log(std::exp(logits(r, 0) - top) + std::exp(logits(r, 1) - top));
    total += lse - logits(r, y);
  }
  return total / static_cast<Scalar>(logits.rows());
}

template <typename Scalar>
bool all_finite(const Matrix<Scalar>& m) {
  return m.allFinite();
}

}  // namespace mpd
