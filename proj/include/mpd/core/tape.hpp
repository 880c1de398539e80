#pragma once

#include "mpd/core/params.hpp"
#include "mpd/core/tensor.hpp"

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mpd {

/// Reverse-mode differentiation over the handful of matrix operations the
/// models need.
///
/// Each operation evaluates eagerly and records how to push its output
/// gradient back to its inputs. Nodes that depend on no parameter record
/// nothing, so a tape built only for inference is just a forward pass.
/// Forward products use the fixed-order `matmul`; backward products use
/// Eigen's GEMM since they never feed a reported prediction.
template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;

  struct Var {
    std::size_t id = 0;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat value) { return push(std::move(value), false, {}); }

  /// Registers a named leaf. The tape keeps a reference to `value`, which
  /// must outlive it. Registering the same name twice returns the original
  /// node.
  Var parameter(const std::string& name, const Mat& value) {
    if (auto it = params_.find(name); it != params_.end()) return Var{it->second};
    Var v = push(Mat(), true, {});
    nodes_.back().external = &value;
    params_.emplace(name, v.id);
    return v;
  }

  Var parameter(const ParamSet<Scalar>& params, const std::string& name) {
    return parameter(name, params.at(name));
  }

  const Mat& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.external != nullptr ? *n.external : n.value;
  }
  Scalar scalar(Var v) const {
    const Mat& m = value(v);
    if (m.rows() != 1 || m.cols() != 1) throw DimensionError("tape: value is not a scalar " + shape_string(m));
    return m(0, 0);
  }
  std::size_t size() const { return nodes_.size(); }

  Var matmul(Var a, Var b) {
    Mat out = mpd::matmul<Scalar>(value(a), value(b));
    return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Mat& g) {
      if (t.needs(a)) t.grad(a).noalias() += g * t.value(b).transpose();
      if (t.needs(b)) t.grad(b).noalias() += t.value(a).transpose() * g;
    });
  }

  /// a * b^T
  Var matmul_nt(Var a, Var b) {
    Mat out = mpd::matmul_nt<Scalar>(value(a), value(b));
    return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Mat& g) {
      if (t.needs(a)) t.grad(a).noalias() += g * t.value(b);
      if (t.needs(b)) t.grad(b).noalias() += g.transpose() * t.value(a);
    });
  }

  Var add(Var a, Var b) {
    detail::require_same_shape(value(a), value(b), "add");
    Mat out = value(a) + value(b);
    return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Mat& g) {
      if (t.needs(a)) t.grad(a) += g;
      if (t.needs(b)) t.grad(b) += g;
    });
  }

  /// x + bias, bias (1 x q) broadcast over the rows of x.
  Var add_bias(Var x, Var bias) {
    const Mat& xv = value(x);
    const Mat& bv = value(bias);
    if (bv.rows() != 1 || bv.cols() != xv.cols()) {
      throw DimensionError("add_bias: bias " + shape_string(bv) + " vs input " + shape_string(xv));
    }
    Mat out = xv;
    out.rowwise() += bv.row(0);
    return push(std::move(out), needs(x) || needs(bias), [x, bias](Tape& t, const Mat& g) {
      if (t.needs(x)) t.grad(x) += g;
      if (t.needs(bias)) t.grad(bias) += g.colwise().sum();
    });
  }

  Var affine(Var x, Var w, Var b) { return add_bias(matmul(x, w), b); }

  /// Elementwise product.
  Var mul(Var a, Var b) {
    detail::require_same_shape(value(a), value(b), "mul");
    Mat out = value(a).cwiseProduct(value(b));
    return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Mat& g) {
      if (t.needs(a)) t.grad(a) += g.cwiseProduct(t.value(b));
      if (t.needs(b)) t.grad(b) += g.cwiseProduct(t.value(a));
    });
  }

  Var scale(Var x, Scalar c) {
    Mat out = c * value(x);
    return push(std::move(out), needs(x), [x, c](Tape& t, const Mat& g) { t.grad(x) += c * g; });
  }

  Var relu(Var x) {
    Mat out = mpd::activation<Scalar>(value(x), Activation::relu());
    return push(std::move(out), needs(x), [x](Tape& t, const Mat& g) {
      t.grad(x) += (t.value(x).array() > Scalar(0)).select(g, Scalar(0)).matrix();
    });
  }

  Var leaky_relu(Var x, Scalar slope) {
    Mat out = mpd::activation<Scalar>(value(x), Activation::leaky_relu(static_cast<double>(slope)));
    return push(std::move(out), needs(x), [x, slope](Tape& t, const Mat& g) {
      t.grad(x) += (t.value(x).array() >= Scalar(0)).select(g, slope * g).matrix();
    });
  }

  /// out.row(r) = x.row(index[r])
  Var gather_rows(Var x, std::vector<int> index) {
    const Mat& xv = value(x);
    Mat out(static_cast<Eigen::Index>(index.size()), xv.cols());
    for (std::size_t r = 0; r < index.size(); ++r) {
      if (index[r] < 0 || index[r] >= xv.rows()) throw DimensionError("gather_rows: index out of range");
      out.row(static_cast<Eigen::Index>(r)) = xv.row(index[r]);
    }
    return push(std::move(out), needs(x), [x, index = std::move(index)](Tape& t, const Mat& g) {
      Mat& gx = t.grad(x);
      for (std::size_t r = 0; r < index.size(); ++r) gx.row(index[r]) += g.row(static_cast<Eigen::Index>(r));
    });
  }

  Var slice_rows(Var x, Eigen::Index start, Eigen::Index count) {
    const Mat& xv = value(x);
    if (start < 0 || count < 0 || start + count > xv.rows()) {
      throw DimensionError("slice_rows: rows [" + std::to_string(start) + ", " +
                           std::to_string(start + count) + ") out of " + shape_string(xv));
    }
    Mat out = xv.middleRows(start, count);
    return push(std::move(out), needs(x), [x, start, count](Tape& t, const Mat& g) {
      t.grad(x).middleRows(start, count) += g;
    });
  }

  Var vstack(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("vstack: no inputs");
    const Eigen::Index cols = value(parts[0]).cols();
    Eigen::Index rows = 0;
    bool any = false;
    for (Var p : parts) {
      if (value(p).cols() != cols) throw DimensionError("vstack: column counts differ");
      rows += value(p).rows();
      any = any || needs(p);
    }
    Mat out(rows, cols);
    Eigen::Index at = 0;
    for (Var p : parts) {
      out.middleRows(at, value(p).rows()) = value(p);
      at += value(p).rows();
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return push(std::move(out), any, [inputs = std::move(inputs)](Tape& t, const Mat& g) {
      Eigen::Index offset = 0;
      for (Var p : inputs) {
        const Eigen::Index n = t.value(p).rows();
        if (t.needs(p)) t.grad(p) += g.middleRows(offset, n);
        offset += n;
      }
    });
  }

  Var row_softmax(Var x) {
    Mat out = softmax_rows<Scalar>(value(x));
    const std::size_t self = nodes_.size();
    return push(std::move(out), needs(x), [x, self](Tape& t, const Mat& g) {
      const Mat& p = t.nodes_[self].value;
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inner = (g.cwiseProduct(p)).rowwise().sum();
      t.grad(x) += p.cwiseProduct(g - inner.replicate(1, g.cols()));
    });
  }

  Var sum(Var x) {
    Mat out(1, 1);
    out(0, 0) = value(x).sum();
    return push(std::move(out), needs(x), [x](Tape& t, const Mat& g) { t.grad(x).array() += g(0, 0); });
  }

  /// 0.5 * ||x||^2
  Var half_squared_norm(Var x) {
    Mat out(1, 1);
    out(0, 0) = Scalar(0.5) * value(x).squaredNorm();
    return push(std::move(out), needs(x), [x](Tape& t, const Mat& g) { t.grad(x) += g(0, 0) * t.value(x); });
  }

  /// Mean two-class cross entropy of n x 2 logits.
  Var two_class_ce(Var logits, std::vector<int> labels) {
    Mat out(1, 1);
    out(0, 0) = mpd::two_class_ce<Scalar>(value(logits), labels);
    return push(std::move(out), needs(logits), [logits, labels = std::move(labels)](Tape& t, const Mat& g) {
      Mat p = softmax_rows<Scalar>(t.value(logits));
      for (std::size_t r = 0; r < labels.size(); ++r) p(static_cast<Eigen::Index>(r), labels[r]) -= Scalar(1);
      t.grad(logits) += (g(0, 0) / static_cast<Scalar>(labels.size())) * p;
    });
  }

  /// Mean over rows of y d^2 + (1 - y) max(0, margin - d)^2, where d is the
  /// cosine distance between matching rows of `a` and `b`.
  Var contrastive_loss(Var a, Var b, std::vector<int> labels, Scalar margin) {
    const Mat& av = value(a);
    const Mat& bv = value(b);
    detail::require_same_shape(av, bv, "contrastive_loss");
    if (av.rows() == 0) throw std::invalid_argument("contrastive_loss: empty input");
    if (static_cast<Eigen::Index>(labels.size()) != av.rows()) {
      throw DimensionError("contrastive_loss: label count does not match rows");
    }
    Scalar total = 0;
    for (Eigen::Index r = 0; r < av.rows(); ++r) {
      const Scalar na = av.row(r).norm();
      const Scalar nb = bv.row(r).norm();
      if (!(na > 0) || !(nb > 0)) throw std::domain_error("contrastive_loss: zero-norm embedding");
      const Scalar d = Scalar(1) - av.row(r).dot(bv.row(r)) / (na * nb);
      const int y = labels[static_cast<std::size_t>(r)];
      const Scalar hinge = std::max(Scalar(0), margin - d);
      total += y == 1 ? d * d : hinge * hinge;
    }
    Mat out(1, 1);
    out(0, 0) = total / static_cast<Scalar>(av.rows());
    return push(std::move(out), needs(a) || needs(b),
                [a, b, margin, labels = std::move(labels)](Tape& t, const Mat& g) {
                  const Mat& av = t.value(a);
                  const Mat& bv = t.value(b);
                  const Scalar upstream = g(0, 0) / static_cast<Scalar>(av.rows());
                  for (Eigen::Index r = 0; r < av.rows(); ++r) {
                    const Scalar na = av.row(r).norm();
                    const Scalar nb = bv.row(r).norm();
                    const Scalar cosine = av.row(r).dot(bv.row(r)) / (na * nb);
                    const Scalar d = Scalar(1) - cosine;
                    const Scalar dloss_dd = labels[static_cast<std::size_t>(r)] == 1
                                                ? Scalar(2) * d
                                                : Scalar(-2) * std::max(Scalar(0), margin - d);
                    const Scalar coef = upstream * dloss_dd;
                    if (coef == Scalar(0)) continue;
                    // d(cos)/da = b/(|a||b|) - cos * a/|a|^2, and d = 1 - cos.
                    if (t.needs(a)) {
                      t.grad(a).row(r) -= coef * (bv.row(r) / (na * nb) - cosine * av.row(r) / (na * na));
                    }
                    if (t.needs(b)) {
                      t.grad(b).row(r) -= coef * (av.row(r) / (na * nb) - cosine * bv.row(r) / (nb * nb));
                    }
                  }
                });
  }

  /// Gradients of a scalar node with respect to every registered parameter.
  GradientMap<Scalar> backward(Var loss) {
    run_backward(loss);
    GradientMap<Scalar> out;
    for (const auto& [name, id] : params_) out.emplace(name, nodes_[id].grad);
    return out;
  }

  /// Same, keyed exactly by `params`: parameters the loss never touched get
  /// zero gradients.
  GradientMap<Scalar> backward(Var loss, const ParamSet<Scalar>& params) {
    run_backward(loss);
    GradientMap<Scalar> out;
    for (const auto& [name, v] : params.values()) {
      auto it = params_.find(name);
      out.emplace(name, it == params_.end() ? Mat::Zero(v.rows(), v.cols()) : nodes_[it->second].grad);
    }
    return out;
  }

 private:
  using Propagate = std::function<void(Tape&, const Mat&)>;

  struct Node {
    Mat value;
    const Mat* external = nullptr;
    Mat grad;
    bool needs_grad = false;
    Propagate propagate;
  };

  Var push(Mat value, bool needs_grad, Propagate propagate) {
    Node node;
    node.value = std::move(value);
    node.needs_grad = needs_grad;
    if (needs_grad) node.propagate = std::move(propagate);
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
  }

  bool needs(Var v) const { return nodes_[v.id].needs_grad; }
  Mat& grad(Var v) { return nodes_[v.id].grad; }

  void run_backward(Var loss) {
    const Mat& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw DimensionError("backward: loss must be a scalar, got " + shape_string(lv));
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].needs_grad) {
        const Mat& v = value(Var{i});
        nodes_[i].grad = Mat::Zero(v.rows(), v.cols());
      }
    }
    if (!nodes_[loss.id].needs_grad) return;
    nodes_[loss.id].grad(0, 0) = Scalar(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.needs_grad && n.propagate) n.propagate(*this, n.grad);
    }
  }

  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> params_;
};

}  // namespace mpd
