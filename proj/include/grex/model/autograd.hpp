// Copyright 2026 The grex Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "grex/core/error.hpp"

namespace grex::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using SparseMat = Eigen::SparseMatrix<T, Eigen::RowMajor>;

/// Handle to a node in a Graph.
struct Var {
  std::size_t id = 0;
};

/// Reverse-mode automatic differentiation over dense matrices. A graph is
/// built per forward pass and discarded afterwards; leaves created with
/// `param` accumulate their gradient into an external buffer on `backward`.
template <typename T>
class Graph {
 public:
  using M = Mat<T>;

  Var constant(M value) { return push(std::move(value), nullptr); }

  /// Leaf whose gradient is added to `*grad_sink` by backward().
  Var param(const M& value, M* grad_sink) {
    Var v = push(value, nullptr);
    nodes_[v.id].sink = grad_sink;
    return v;
  }

  const M& value(Var v) const { return nodes_[v.id].value; }
  const M& grad(Var v) const { return nodes_[v.id].grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates.
  void backward(Var root) {
    if (value(root).size() != 1) throw InvalidArgument("backward() needs a scalar root");
    for (auto& n : nodes_) n.grad.setZero(n.value.rows(), n.value.cols());
    nodes_[root.id].grad.setOnes();
    for (std::size_t i = root.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.backward) n.backward(n.grad);
      if (n.sink) *n.sink += n.grad;
    }
  }

  // Ops -----------------------------------------------------------------

  Var matmul(Var a, Var b) {
    check(value(a).cols() == value(b).rows(), "matmul");
    M out = value(a) * value(b);
    return push(std::move(out), [this, a, b](const M& g) {
      grad_mut(a).noalias() += g * value(b).transpose();
      grad_mut(b).noalias() += value(a).transpose() * g;
    });
  }

  /// a * b^T
  Var matmul_nt(Var a, Var b) {
    check(value(a).cols() == value(b).cols(), "matmul_nt");
    M out = value(a) * value(b).transpose();
    return push(std::move(out), [this, a, b](const M& g) {
      grad_mut(a).noalias() += g * value(b);
      grad_mut(b).noalias() += g.transpose() * value(a);
    });
  }

  /// a^T * b
  Var matmul_tn(Var a, Var b) {
    check(value(a).rows() == value(b).rows(), "matmul_tn");
    M out = value(a).transpose() * value(b);
    return push(std::move(out), [this, a, b](const M& g) {
      grad_mut(a).noalias() += value(b) * g.transpose();
      grad_mut(b).noalias() += value(a) * g;
    });
  }

  Var add(Var a, Var b) {
    check(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), "add");
    M out = value(a) + value(b);
    return push(std::move(out), [this, a, b](const M& g) {
      grad_mut(a) += g;
      grad_mut(b) += g;
    });
  }

  /// Adds a 1xN row to every row of a.
  Var add_row(Var a, Var row) {
    check(value(row).rows() == 1 && value(row).cols() == value(a).cols(), "add_row");
    M out = value(a).rowwise() + value(row).row(0);
    return push(std::move(out), [this, a, row](const M& g) {
      grad_mut(a) += g;
      grad_mut(row) += g.colwise().sum();
    });
  }

  Var scale(Var a, T s) {
    M out = value(a) * s;
    return push(std::move(out), [this, a, s](const M& g) { grad_mut(a) += g * s; });
  }

  /// Exact (erf) GeLU.
  Var gelu(Var a) {
    const M& x = value(a);
    M out = x.unaryExpr([](T v) { return T(0.5) * v * (T(1) + std::erf(v * T(M_SQRT1_2))); });
    return push(std::move(out), [this, a](const M& g) {
      const M& x = value(a);
      const T inv_sqrt_2pi = T(0.5) * T(M_2_SQRTPI) * T(M_SQRT1_2);
      grad_mut(a).array() += g.array() * x.unaryExpr([inv_sqrt_2pi](T v) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * T(M_SQRT1_2)));
        return cdf + v * inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      }).array();
    });
  }

  Var sigmoid(Var a) {
    M out = value(a).unaryExpr([](T v) { return sigmoid_scalar(v); });
    const std::size_t id = nodes_.size();
    return push(std::move(out), [this, a, id](const M& g) {
      const M& y = nodes_[id].value;
      grad_mut(a).array() += g.array() * y.array() * (T(1) - y.array());
    });
  }

  /// Row-wise softmax.
  Var softmax_rows(Var a) {
    M out = value(a);
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      const T mx = out.row(r).maxCoeff();
      out.row(r) = (out.row(r).array() - mx).exp();
      out.row(r) /= out.row(r).sum();
    }
    const std::size_t id = nodes_.size();
    return push(std::move(out), [this, a, id](const M& g) {
      const M& y = nodes_[id].value;
      const Eigen::Matrix<T, Eigen::Dynamic, 1> dot = (g.array() * y.array()).rowwise().sum();
      grad_mut(a).array() += y.array() * (g.colwise() - dot).array();
    });
  }

  /// Mean over rows, giving 1xN.
  Var mean_rows(Var a) {
    const T n = T(value(a).rows());
    M out = value(a).colwise().sum() / n;
    return push(std::move(out), [this, a, n](const M& g) {
      grad_mut(a).rowwise() += g.row(0) / n;
    });
  }

  /// Selects rows of a by index (embedding lookup).
  Var gather_rows(Var a, std::vector<int> rows) {
    const M& x = value(a);
    M out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      check(rows[i] >= 0 && rows[i] < x.rows(), "gather_rows index");
      out.row(Eigen::Index(i)) = x.row(rows[i]);
    }
    return push(std::move(out), [this, a, rows = std::move(rows)](const M& g) {
      for (std::size_t i = 0; i < rows.size(); ++i) grad_mut(a).row(rows[i]) += g.row(Eigen::Index(i));
    });
  }

  /// Left-multiplies by a fixed sparse matrix (resampling, pooling).
  Var apply_sparse(const SparseMat<T>* op, Var a) {
    check(op->cols() == value(a).rows(), "apply_sparse");
    M out = (*op) * value(a);
    return push(std::move(out), [this, op, a](const M& g) {
      grad_mut(a).noalias() += op->transpose() * g;
    });
  }

  /// Unfolds an (H*W) x C feature map (row-major positions) into
  /// (Ho*Wo) x (k*k*C) patches for a square kernel with zero padding.
  Var im2col(Var a, int h, int w, int k, int stride, int pad) {
    const M& x = value(a);
    const int c = static_cast<int>(x.cols());
    check(x.rows() == Eigen::Index(h) * w, "im2col shape");
    const int ho = (h + 2 * pad - k) / stride + 1;
    const int wo = (w + 2 * pad - k) / stride + 1;
    M out = M::Zero(Eigen::Index(ho) * wo, Eigen::Index(k) * k * c);
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        const Eigen::Index row = Eigen::Index(oy) * wo + ox;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            out.block(row, Eigen::Index(ky * k + kx) * c, 1, c) = x.row(Eigen::Index(iy) * w + ix);
          }
        }
      }
    return push(std::move(out), [this, a, h, w, k, stride, pad, ho, wo, c](const M& g) {
      M& gx = grad_mut(a);
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          const Eigen::Index row = Eigen::Index(oy) * wo + ox;
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= w) continue;
              gx.row(Eigen::Index(iy) * w + ix) += g.block(row, Eigen::Index(ky * k + kx) * c, 1, c);
            }
          }
        }
    });
  }

  Var sum_scalars(const std::vector<std::pair<T, Var>>& terms) {
    M out = M::Zero(1, 1);
    for (const auto& [w, v] : terms) {
      check(value(v).size() == 1, "sum_scalars");
      out(0, 0) += w * value(v)(0, 0);
    }
    return push(std::move(out), [this, terms](const M& g) {
      for (const auto& [w, v] : terms) grad_mut(v)(0, 0) += w * g(0, 0);
    });
  }

  /// Mean binary cross-entropy between sigmoid(logits) and soft targets,
  /// minus the targets' own entropy so the minimum is exactly zero.
  Var bce_with_logits(Var logits, M targets) {
    const M& z = value(logits);
    check(z.rows() == targets.rows() && z.cols() == targets.cols(), "bce_with_logits");
    const T n = T(z.size());
    T total = 0;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const T zi = z.data()[i], t = targets.data()[i];
      // log(1 + e^z) - t z, computed stably
      const T softplus = zi > 0 ? zi + std::log1p(std::exp(-zi)) : std::log1p(std::exp(zi));
      T loss = softplus - t * zi;
      if (t > 0 && t < 1) loss += t * std::log(t) + (1 - t) * std::log(1 - t);
      total += loss;
    }
    M out(1, 1);
    out(0, 0) = total / n;
    return push(std::move(out), [this, logits, targets = std::move(targets), n](const M& g) {
      const M& z = value(logits);
      M d = z.unaryExpr([](T v) { return sigmoid_scalar(v); }) - targets;
      grad_mut(logits) += d * (g(0, 0) / n);
    });
  }

  /// Cross-entropy of a 1xK logit row against a class index.
  Var cross_entropy(Var logits, int target) {
    const M& z = value(logits);
    check(z.rows() == 1 && target >= 0 && target < z.cols(), "cross_entropy");
    const T mx = z.maxCoeff();
    const T lse = mx + std::log((z.array() - mx).exp().sum());
    M out(1, 1);
    out(0, 0) = lse - z(0, target);
    return push(std::move(out), [this, logits, target, lse](const M& g) {
      M p = (value(logits).array() - lse).exp();
      p(0, target) -= T(1);
      grad_mut(logits) += p * g(0, 0);
    });
  }

  /// Box regression loss over matched pairs: sum of L1 on (cx, cy, w, h) and
  /// (1 - GIoU), divided by `normalizer`. `boxes` is Rx4 in normalized
  /// center-size form; `targets` holds (row, cx, cy, w, h) per matched gt.
  Var box_loss(Var boxes, std::vector<std::pair<int, std::array<T, 4>>> targets, T normalizer) {
    const M& b = value(boxes);
    check(b.cols() == 4, "box_loss");
    T total = 0;
    for (const auto& [row, gt] : targets) {
      check(row >= 0 && row < b.rows(), "box_loss row");
      std::array<T, 4> p{b(row, 0), b(row, 1), b(row, 2), b(row, 3)};
      for (int j = 0; j < 4; ++j) total += std::abs(p[j] - gt[j]);
      total += T(1) - giou_with_grad(p, gt).value;
    }
    M out(1, 1);
    out(0, 0) = targets.empty() ? T(0) : total / normalizer;
    return push(std::move(out),
                [this, boxes, targets = std::move(targets), normalizer](const M& g) {
                  const M& b = value(boxes);
                  for (const auto& [row, gt] : targets) {
                    std::array<T, 4> p{b(row, 0), b(row, 1), b(row, 2), b(row, 3)};
                    const auto gi = giou_with_grad(p, gt);
                    for (int j = 0; j < 4; ++j) {
                      const T d = p[j] > gt[j] ? T(1) : (p[j] < gt[j] ? T(-1) : T(0));
                      grad_mut(boxes)(row, j) += g(0, 0) * (d - gi.grad[j]) / normalizer;
                    }
                  }
                });
  }

  struct GiouGrad {
    T value = 0;
    std::array<T, 4> grad{};  // d giou / d (cx, cy, w, h) of the prediction
  };

  /// GIoU between two center-size boxes with its gradient in the first.
  static GiouGrad giou_with_grad(const std::array<T, 4>& p, const std::array<T, 4>& q) {
    const T px1 = p[0] - p[2] / 2, px2 = p[0] + p[2] / 2;
    const T py1 = p[1] - p[3] / 2, py2 = p[1] + p[3] / 2;
    const T qx1 = q[0] - q[2] / 2, qx2 = q[0] + q[2] / 2;
    const T qy1 = q[1] - q[3] / 2, qy2 = q[1] + q[3] / 2;
    const T area_p = (px2 - px1) * (py2 - py1);
    const T area_q = (qx2 - qx1) * (qy2 - qy1);
    const T iw_raw = std::min(px2, qx2) - std::max(px1, qx1);
    const T ih_raw = std::min(py2, qy2) - std::max(py1, qy1);
    const bool overlap = iw_raw > 0 && ih_raw > 0;
    const T iw = overlap ? iw_raw : T(0), ih = overlap ? ih_raw : T(0);
    const T inter = iw * ih;
    const T uni = area_p + area_q - inter;
    const T ew = std::max(px2, qx2) - std::min(px1, qx1);
    const T eh = std::max(py2, qy2) - std::min(py1, qy1);
    const T enc = ew * eh;
    GiouGrad out;
    if (uni <= 0 || enc <= 0) return out;
    out.value = inter / uni - (enc - uni) / enc;

    const T d_inter = (uni + inter) / (uni * uni) - T(1) / enc;
    const T d_area = -inter / (uni * uni) + T(1) / enc;
    const T d_enc = -uni / (enc * enc);
    // partials with respect to the corner coordinates of p
    T dx1 = -d_area * (py2 - py1), dx2 = d_area * (py2 - py1);
    T dy1 = -d_area * (px2 - px1), dy2 = d_area * (px2 - px1);
    if (overlap) {
      if (px1 > qx1) dx1 -= d_inter * ih;
      if (px2 < qx2) dx2 += d_inter * ih;
      if (py1 > qy1) dy1 -= d_inter * iw;
      if (py2 < qy2) dy2 += d_inter * iw;
    }
    if (px1 < qx1) dx1 -= d_enc * eh;
    if (px2 > qx2) dx2 += d_enc * eh;
    if (py1 < qy1) dy1 -= d_enc * ew;
    if (py2 > qy2) dy2 += d_enc * ew;
    out.grad = {dx1 + dx2, dy1 + dy2, (dx2 - dx1) / 2, (dy2 - dy1) / 2};
    return out;
  }

  static T sigmoid_scalar(T v) {
    if (v >= 0) return T(1) / (T(1) + std::exp(-v));
    const T e = std::exp(v);
    return e / (T(1) + e);
  }

 private:
  struct Node {
    M value;
    M grad;
    std::function<void(const M&)> backward;
    M* sink = nullptr;
  };

  M& grad_mut(Var v) { return nodes_[v.id].grad; }

  Var push(M value, std::function<void(const M&)> bw) {
    nodes_.push_back({std::move(value), M(), std::move(bw), nullptr});
    return Var{nodes_.size() - 1};
  }

  static void check(bool ok, const char* what) {
    if (!ok) throw DimensionMismatch(std::string("shape mismatch in ") + what);
  }

  std::vector<Node> nodes_;
};

}  // namespace grex::nn
