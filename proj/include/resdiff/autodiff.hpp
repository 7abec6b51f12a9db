// Copyright 2026 The resdiff Authors.
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

// Minimal tape-based reverse-mode differentiation over dense double tensors,
// with exactly the operators the denoiser needs. Convolutions go through
// im2col and an Eigen GEMM.

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "resdiff/common.hpp"

namespace resdiff::ad {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0) : shape(std::move(s)) {
    data.assign(count(shape), fill);
  }

  static std::size_t count(const std::vector<int>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }
  std::size_t size() const noexcept { return data.size(); }
  int dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const noexcept { return shape.size(); }
};

inline std::string shape_string(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::function<void()> backward;

  explicit Node(Tensor v, bool rg = false) : value(std::move(v)), requires_grad(rg) {}

  /// Gradient buffer, allocated (zeroed) on first use.
  std::vector<double>& g() {
    if (grad.data.size() != value.data.size()) grad = Tensor(value.shape, 0.0);
    return grad.data;
  }
  bool has_grad() const noexcept { return grad.data.size() == value.data.size() && !grad.data.empty(); }
};

using Var = std::shared_ptr<Node>;

inline Var constant(Tensor t) { return std::make_shared<Node>(std::move(t), false); }
inline Var parameter(Tensor t) { return std::make_shared<Node>(std::move(t), true); }

/// Records operations for one forward pass. With recording disabled it only
/// evaluates.
class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}

  bool recording() const noexcept { return record_; }

  /// Backpropagates d(output)/d(output) = 1 through every recorded node.
  void backward(const Var& output) {
    if (!record_) throw ParameterError("Graph::backward on a non-recording graph");
    if (output->value.size() != 1) throw ParameterError("Graph::backward needs a scalar output");
    output->g()[0] += 1.0;
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
      Node& n = **it;
      if (n.backward && n.has_grad()) n.backward();
    }
  }

  // ---- operators -------------------------------------------------------

  /// 2-D convolution, stride 1, zero padding k/2, odd square kernel.
  /// x: [N, Ci, H, W], w: [Co, Ci, k, k], b: [Co].
  Var conv2d(const Var& x, const Var& w, const Var& b) {
    const auto& xs = x->value.shape;
    const auto& ws = w->value.shape;
    if (xs.size() != 4 || ws.size() != 4 || ws[1] != xs[1] || ws[2] != ws[3] || ws[2] % 2 == 0 ||
        b->value.size() != static_cast<std::size_t>(ws[0])) {
      throw ParameterError("conv2d: bad shapes x" + shape_string(xs) + " w" + shape_string(ws));
    }
    const int N = xs[0], Ci = xs[1], H = xs[2], W = xs[3], Co = ws[0], k = ws[2];
    const int K = Ci * k * k;
    const int P = H * W;
    RowMatrix cols(K, static_cast<Eigen::Index>(N) * P);
    im2col(x->value.data, N, Ci, H, W, k, cols);
    RowMatrix out_m(Co, static_cast<Eigen::Index>(N) * P);
    out_m.noalias() = ConstMatrixMap(w->value.data.data(), Co, K) * cols;
    Tensor out({N, Co, H, W});
    for (int n = 0; n < N; ++n)
      for (int co = 0; co < Co; ++co) {
        const double bias = b->value.data[co];
        double* dst = out.data.data() + (static_cast<std::size_t>(n) * Co + co) * P;
        const double* src = out_m.data() + static_cast<std::size_t>(co) * N * P + static_cast<std::size_t>(n) * P;
        for (int p = 0; p < P; ++p) dst[p] = src[p] + bias;
      }
    Var y = make(std::move(out), {x, w, b});
    if (y->requires_grad) {
      Node* yp = y.get();
      y->backward = [yp, x, w, b, N, Ci, H, W, Co, k, K, P] {
        const auto& gy = yp->grad.data;
        RowMatrix gy_m(Co, static_cast<Eigen::Index>(N) * P);
        for (int n = 0; n < N; ++n)
          for (int co = 0; co < Co; ++co) {
            const double* src = gy.data() + (static_cast<std::size_t>(n) * Co + co) * P;
            double* dst = gy_m.data() + static_cast<std::size_t>(co) * N * P + static_cast<std::size_t>(n) * P;
            std::copy(src, src + P, dst);
          }
        if (b->requires_grad) {
          auto& gb = b->g();
          for (int co = 0; co < Co; ++co) gb[co] += gy_m.row(co).sum();
        }
        RowMatrix cols(K, static_cast<Eigen::Index>(N) * P);
        if (w->requires_grad || x->requires_grad) im2col(x->value.data, N, Ci, H, W, k, cols);
        if (w->requires_grad) {
          MatrixMap gw(w->g().data(), Co, K);
          gw.noalias() += gy_m * cols.transpose();
        }
        if (x->requires_grad) {
          RowMatrix gcols(K, static_cast<Eigen::Index>(N) * P);
          gcols.noalias() = ConstMatrixMap(w->value.data.data(), Co, K).transpose() * gy_m;
          col2im(gcols, N, Ci, H, W, k, x->g());
        }
      };
    }
    return y;
  }

  /// 2x2 average pooling; H and W must be even.
  Var avg_pool2(const Var& x) {
    const auto& s = x->value.shape;
    if (s.size() != 4 || s[2] % 2 || s[3] % 2) throw ParameterError("avg_pool2: bad shape " + shape_string(s));
    const int N = s[0], C = s[1], H = s[2], W = s[3], Ho = H / 2, Wo = W / 2;
    Tensor out({N, C, Ho, Wo});
    const auto& xv = x->value.data;
    for (int nc = 0; nc < N * C; ++nc)
      for (int y = 0; y < Ho; ++y)
        for (int xx = 0; xx < Wo; ++xx) {
          const std::size_t base = (static_cast<std::size_t>(nc) * H + 2 * y) * W + 2 * xx;
          out.data[(static_cast<std::size_t>(nc) * Ho + y) * Wo + xx] =
              0.25 * (xv[base] + xv[base + 1] + xv[base + W] + xv[base + W + 1]);
        }
    Var r = make(std::move(out), {x});
    if (r->requires_grad) {
      Node* rp = r.get();
      r->backward = [rp, x, N, C, H, W, Ho, Wo] {
        auto& gx = x->g();
        const auto& gy = rp->grad.data;
        for (int nc = 0; nc < N * C; ++nc)
          for (int y = 0; y < Ho; ++y)
            for (int xx = 0; xx < Wo; ++xx) {
              const double g = 0.25 * gy[(static_cast<std::size_t>(nc) * Ho + y) * Wo + xx];
              const std::size_t base = (static_cast<std::size_t>(nc) * H + 2 * y) * W + 2 * xx;
              gx[base] += g;
              gx[base + 1] += g;
              gx[base + W] += g;
              gx[base + W + 1] += g;
            }
      };
    }
    return r;
  }

  /// Nearest-neighbour 2x upsampling.
  Var upsample2(const Var& x) {
    const auto& s = x->value.shape;
    if (s.size() != 4) throw ParameterError("upsample2: bad shape " + shape_string(s));
    const int N = s[0], C = s[1], H = s[2], W = s[3], Ho = 2 * H, Wo = 2 * W;
    Tensor out({N, C, Ho, Wo});
    const auto& xv = x->value.data;
    for (int nc = 0; nc < N * C; ++nc)
      for (int y = 0; y < Ho; ++y)
        for (int xx = 0; xx < Wo; ++xx)
          out.data[(static_cast<std::size_t>(nc) * Ho + y) * Wo + xx] =
              xv[(static_cast<std::size_t>(nc) * H + y / 2) * W + xx / 2];
    Var r = make(std::move(out), {x});
    if (r->requires_grad) {
      Node* rp = r.get();
      r->backward = [rp, x, N, C, H, W, Ho, Wo] {
        auto& gx = x->g();
        const auto& gy = rp->grad.data;
        for (int nc = 0; nc < N * C; ++nc)
          for (int y = 0; y < Ho; ++y)
            for (int xx = 0; xx < Wo; ++xx)
              gx[(static_cast<std::size_t>(nc) * H + y / 2) * W + xx / 2] +=
                  gy[(static_cast<std::size_t>(nc) * Ho + y) * Wo + xx];
      };
    }
    return r;
  }

  /// Concatenation along the channel axis of two [N, C, H, W] tensors.
  Var concat_channels(const Var& a, const Var& b) {
    const auto& sa = a->value.shape;
    const auto& sb = b->value.shape;
    if (sa.size() != 4 || sb.size() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3]) {
      throw ParameterError("concat_channels: bad shapes " + shape_string(sa) + " " + shape_string(sb));
    }
    const int N = sa[0], Ca = sa[1], Cb = sb[1];
    const std::size_t P = static_cast<std::size_t>(sa[2]) * sa[3];
    Tensor out({N, Ca + Cb, sa[2], sa[3]});
    for (int n = 0; n < N; ++n) {
      std::copy_n(a->value.data.data() + n * Ca * P, Ca * P, out.data.data() + n * (Ca + Cb) * P);
      std::copy_n(b->value.data.data() + n * Cb * P, Cb * P, out.data.data() + (n * (Ca + Cb) + Ca) * P);
    }
    Var r = make(std::move(out), {a, b});
    if (r->requires_grad) {
      Node* rp = r.get();
      r->backward = [rp, a, b, N, Ca, Cb, P] {
        const auto& gy = rp->grad.data;
        if (a->requires_grad) {
          auto& ga = a->g();
          for (int n = 0; n < N; ++n)
            for (std::size_t i = 0; i < Ca * P; ++i) ga[n * Ca * P + i] += gy[n * (Ca + Cb) * P + i];
        }
        if (b->requires_grad) {
          auto& gb = b->g();
          for (int n = 0; n < N; ++n)
            for (std::size_t i = 0; i < Cb * P; ++i) gb[n * Cb * P + i] += gy[(n * (Ca + Cb) + Ca) * P + i];
        }
      };
    }
    return r;
  }

  Var add(const Var& a, const Var& b) {
    if (a->value.shape != b->value.shape) {
      throw ParameterError("add: shape mismatch " + shape_string(a->value.shape) + " " +
                           shape_string(b->value.shape));
    }
    Tensor out(a->value.shape);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a->value.data[i] + b->value.data[i];
    Var r = make(std::move(out), {a, b});
    if (r->requires_grad) {
      Node* rp = r.get();
      r->backward = [rp, a, b] {
        const auto& gy = rp->grad.data;
        if (a->requires_grad) {
          auto& ga = a->g();
          for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
        }
        if (b->requires_grad) {
          auto& gb = b->g();
          for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
        }
      };
    }
    return r;
  }

  /// x: [N, C, H, W] plus e: [N, C] broadcast over space.
  Var add_channel_bias(const Var& x, const Var& e) {
    const auto& s = x->value.shape;
    if (s.size() != 4 || e->value.shape != std::vector<int>{s[0], s[1]}) {
      throw ParameterError("add_channel_bias: bad shapes " + shape_string(s) + " " + shape_string(e->value.shape));
    }
    const int NC = s[0] * s[1];
    const std::size_t P = static_cast<std::size_t>(s[2]) * s[3];
    Tensor out(s);
    for (int nc = 0; nc < NC; ++nc)
      for (std::size_t p = 0; p < P; ++p) out.data[nc * P + p] = x->value.data[nc * P + p] + e->value.data[nc];
    Var r = make(std::move(out), {x, e});
    if (r->requires_grad) {
      Node* rp = r.get();
      r->backward = [rp, x, e, NC, P] {
        const auto& gy = rp->grad.data;
        if (x->requires_grad) {
          auto& gx = x->g();
          for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
        }
        if (e->requires_grad) {
          auto& ge = e->g();
          for (int nc = 0; nc < NC; ++nc) {
            double acc = 0.0;
            for (std::size_t p = 0; p < P; ++p) acc += gy[nc * P + p];
            ge[nc] += acc;
          }
        }
      };
    }
    return r;
  }

  /// x * sigmoid(x).
  Var silu(const Var& x) {
    Tensor out(x->value.shape);
    std::vector<double> sig(x->value.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double v = x->value.data[i];
      sig[i] = 1.0 / (1.0 + std::exp(-v));
      out.data[i] = v * sig[i];
    }
    Var r = make(std::move(out), {x});
    if (r->requires_grad) {
      Node* rp = r.get();
      r->backward = [rp, x, sig = std::move(sig)] {
        auto& gx = x->g();
        const auto& gy = rp->grad.data;
        for (std::size_t i = 0; i < gy.size(); ++i) {
          const double s = sig[i];
          gx[i] += gy[i] * s * (1.0 + x->value.data[i] * (1.0 - s));
        }
      };
    }
    return r;
  }

  /// Group normalization over [N, C, H, W] with per-channel affine.
  Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps = 1e-5) {
    const auto& s = x->value.shape;
    if (s.size() != 4 || groups < 1 || s[1] % groups != 0 ||
        gamma->value.size() != static_cast<std::size_t>(s[1]) || beta->value.size() != gamma->value.size()) {
      throw ParameterError("group_norm: bad shapes " + shape_string(s));
    }
    const int N = s[0], C = s[1], Cg = C / groups;
    const std::size_t P = static_cast<std::size_t>(s[2]) * s[3];
    const std::size_t M = Cg * P;
    Tensor out(s);
    std::vector<double> xhat(x->value.size());
    std::vector<double> inv_std(static_cast<std::size_t>(N) * groups);
    for (int n = 0; n < N; ++n)
      for (int g = 0; g < groups; ++g) {
        const std::size_t base = (static_cast<std::size_t>(n) * C + g * Cg) * P;
        double mean = 0.0;
        for (std::size_t i = 0; i < M; ++i) mean += x->value.data[base + i];
        mean /= static_cast<double>(M);
        double var = 0.0;
        for (std::size_t i = 0; i < M; ++i) {
          const double d = x->value.data[base + i] - mean;
          var += d * d;
        }
        var /= static_cast<double>(M);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[n * groups + g] = is;
        for (int cc = 0; cc < Cg; ++cc) {
          const int c = g * Cg + cc;
          for (std::size_t p = 0; p < P; ++p) {
            const std::size_t i = base + cc * P + p;
            xhat[i] = (x->value.data[i] - mean) * is;
            out.data[i] = gamma->value.data[c] * xhat[i] + beta->value.data[c];
          }
        }
      }
    Var r = make(std::move(out), {x, gamma, beta});
    if (r->requires_grad) {
      Node* rp = r.get();
      r->backward = [rp, x, gamma, beta, N, C, Cg, groups, P, M, xhat = std::move(xhat),
                     inv_std = std::move(inv_std)] {
        const auto& gy = rp->grad.data;
        if (gamma->requires_grad || beta->requires_grad) {
          auto& gg = gamma->g();
          auto& gb = beta->g();
          for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
              const std::size_t base = (static_cast<std::size_t>(n) * C + c) * P;
              double sg = 0.0, sb = 0.0;
              for (std::size_t p = 0; p < P; ++p) {
                sg += gy[base + p] * xhat[base + p];
                sb += gy[base + p];
              }
              gg[c] += sg;
              gb[c] += sb;
            }
        }
        if (!x->requires_grad) return;
        auto& gx = x->g();
        for (int n = 0; n < N; ++n)
          for (int g = 0; g < groups; ++g) {
            const std::size_t base = (static_cast<std::size_t>(n) * C + g * Cg) * P;
            double m1 = 0.0, m2 = 0.0;
            for (int cc = 0; cc < Cg; ++cc) {
              const double gm = gamma->value.data[g * Cg + cc];
              for (std::size_t p = 0; p < P; ++p) {
                const std::size_t i = base + cc * P + p;
                const double d = gy[i] * gm;
                m1 += d;
                m2 += d * xhat[i];
              }
            }
            m1 /= static_cast<double>(M);
            m2 /= static_cast<double>(M);
            const double is = inv_std[n * groups + g];
            for (int cc = 0; cc < Cg; ++cc) {
              const double gm = gamma->value.data[g * Cg + cc];
              for (std::size_t p = 0; p < P; ++p) {
                const std::size_t i = base + cc * P + p;
                gx[i] += is * (gy[i] * gm - m1 - xhat[i] * m2);
              }
            }
          }
      };
    }
    return r;
  }

  /// x: [N, In], w: [Out, In], b: [Out] -> [N, Out].
  Var linear(const Var& x, const Var& w, const Var& b) {
    const auto& xs = x->value.shape;
    const auto& ws = w->value.shape;
    if (xs.size() != 2 || ws.size() != 2 || ws[1] != xs[1] || b->value.size() != static_cast<std::size_t>(ws[0])) {
      throw ParameterError("linear: bad shapes x" + shape_string(xs) + " w" + shape_string(ws));
    }
    const int N = xs[0], In = xs[1], Out = ws[0];
    Tensor out({N, Out});
    MatrixMap om(out.data.data(), N, Out);
    om.noalias() = ConstMatrixMap(x->value.data.data(), N, In) *
                   ConstMatrixMap(w->value.data.data(), Out, In).transpose();
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < Out; ++o) om(n, o) += b->value.data[o];
    Var r = make(std::move(out), {x, w, b});
    if (r->requires_grad) {
      Node* rp = r.get();
      r->backward = [rp, x, w, b, N, In, Out] {
        ConstMatrixMap gy(rp->grad.data.data(), N, Out);
        if (w->requires_grad) {
          MatrixMap(w->g().data(), Out, In).noalias() += gy.transpose() * ConstMatrixMap(x->value.data.data(), N, In);
        }
        if (b->requires_grad) {
          auto& gb = b->g();
          for (int o = 0; o < Out; ++o) gb[o] += gy.col(o).sum();
        }
        if (x->requires_grad) {
          MatrixMap(x->g().data(), N, In).noalias() += gy * ConstMatrixMap(w->value.data.data(), Out, In);
        }
      };
    }
    return r;
  }

  /// sum_i x_i * w_i as a scalar.
  Var dot(const Var& x, const Tensor& w) {
    if (w.data.size() != x->value.size()) throw ParameterError("dot: size mismatch");
    Tensor out({1});
    for (std::size_t i = 0; i < w.data.size(); ++i) out.data[0] += x->value.data[i] * w.data[i];
    Var r = make(std::move(out), {x});
    if (r->requires_grad) {
      Node* rp = r.get();
      r->backward = [rp, x, w] {
        auto& gx = x->g();
        const double gy = rp->grad.data[0];
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy * w.data[i];
      };
    }
    return r;
  }

  /// Scalar residual objective averaged over the batch:
  ///   mean_n [ w_n * mean((pred - target)^2)
  ///            + lambda_grad * (mean(dx(pred - target)^2) + mean(dy(pred - target)^2)) ]
  /// where dx, dy are forward differences. The gradient term equals the squared
  /// gradient-field distance between x and x_tilde + pred.
  Var residual_loss(const Var& pred, const Tensor& target, const std::vector<double>& weights, double lambda_grad) {
    const auto& s = pred->value.shape;
    if (s.size() != 4 || target.shape != s || weights.size() != static_cast<std::size_t>(s[0])) {
      throw ParameterError("residual_loss: bad shapes " + shape_string(s) + " " + shape_string(target.shape));
    }
    const int N = s[0], C = s[1], H = s[2], W = s[3];
    const std::size_t per = static_cast<std::size_t>(C) * H * W;
    const double nh = static_cast<double>(C) * H * (W - 1);
    const double nv = static_cast<double>(C) * (H - 1) * W;
    std::vector<double> diff(pred->value.size());
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = pred->value.data[i] - target.data[i];
    double total = 0.0;
    for (int n = 0; n < N; ++n) {
      const double* d = diff.data() + n * per;
      double mse = 0.0;
      for (std::size_t i = 0; i < per; ++i) mse += d[i] * d[i];
      total += weights[n] * mse / static_cast<double>(per);
      if (lambda_grad != 0.0) {
        double gh = 0.0, gv = 0.0;
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
              const std::size_t i = (static_cast<std::size_t>(c) * H + y) * W + x;
              if (x + 1 < W) gh += (d[i + 1] - d[i]) * (d[i + 1] - d[i]);
              if (y + 1 < H) gv += (d[i + W] - d[i]) * (d[i + W] - d[i]);
            }
        total += lambda_grad * ((nh > 0 ? gh / nh : 0.0) + (nv > 0 ? gv / nv : 0.0));
      }
    }
    Tensor out({1});
    out.data[0] = total / N;
    Var r = make(std::move(out), {pred});
    if (r->requires_grad) {
      Node* rp = r.get();
      r->backward = [rp, pred, diff = std::move(diff), weights, lambda_grad, N, C, H, W, per, nh, nv] {
        const double gout = rp->grad.data[0] / N;
        auto& gp = pred->g();
        for (int n = 0; n < N; ++n) {
          const double* d = diff.data() + n * per;
          double* g = gp.data() + n * per;
          const double cm = gout * 2.0 * weights[n] / static_cast<double>(per);
          for (std::size_t i = 0; i < per; ++i) g[i] += cm * d[i];
          if (lambda_grad == 0.0) continue;
          const double ch = nh > 0 ? gout * lambda_grad * 2.0 / nh : 0.0;
          const double cv = nv > 0 ? gout * lambda_grad * 2.0 / nv : 0.0;
          for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
              for (int x = 0; x < W; ++x) {
                const std::size_t i = (static_cast<std::size_t>(c) * H + y) * W + x;
                if (x + 1 < W) {
                  const double e = ch * (d[i + 1] - d[i]);
                  g[i + 1] += e;
                  g[i] -= e;
                }
                if (y + 1 < H) {
                  const double e = cv * (d[i + W] - d[i]);
                  g[i + W] += e;
                  g[i] -= e;
                }
              }
        }
      };
    }
    return r;
  }

 private:
  Var make(Tensor value, std::initializer_list<Var> parents) {
    bool rg = false;
    if (record_)
      for (const auto& p : parents) rg = rg || p->requires_grad;
    auto v = std::make_shared<Node>(std::move(value), rg);
    if (rg) tape_.push_back(v);
    return v;
  }

  static void im2col(const std::vector<double>& x, int N, int C, int H, int W, int k, RowMatrix& cols) {
    const int r = k / 2;
    const std::size_t P = static_cast<std::size_t>(H) * W;
    const std::size_t NP = static_cast<std::size_t>(N) * P;
    for (int c = 0; c < C; ++c)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          double* row = cols.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * NP;
          for (int n = 0; n < N; ++n) {
            const double* src = x.data() + (static_cast<std::size_t>(n) * C + c) * P;
            double* dst = row + n * P;
            for (int y = 0; y < H; ++y) {
              const int sy = y + ky - r;
              if (sy < 0 || sy >= H) {
                std::fill_n(dst + y * W, W, 0.0);
                continue;
              }
              // Output columns whose source column sx = xx + kx - r lies inside.
              const int lo = std::max(0, r - kx), hi = std::min(W, W + r - kx);
              double* d = dst + y * W;
              std::fill(d, d + lo, 0.0);
              std::copy(src + sy * W + lo + kx - r, src + sy * W + hi + kx - r, d + lo);
              std::fill(d + hi, d + W, 0.0);
            }
          }
        }
  }

  static void col2im(const RowMatrix& cols, int N, int C, int H, int W, int k, std::vector<double>& gx) {
    const int r = k / 2;
    const std::size_t P = static_cast<std::size_t>(H) * W;
    const std::size_t NP = static_cast<std::size_t>(N) * P;
    for (int c = 0; c < C; ++c)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const double* row = cols.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * NP;
          for (int n = 0; n < N; ++n) {
            double* dst = gx.data() + (static_cast<std::size_t>(n) * C + c) * P;
            const double* src = row + n * P;
            for (int y = 0; y < H; ++y) {
              const int sy = y + ky - r;
              if (sy < 0 || sy >= H) continue;
              const int lo = std::max(0, r - kx), hi = std::min(W, W + r - kx);
              double* d = dst + sy * W + kx - r;
              const double* s = src + y * W;
              for (int xx = lo; xx < hi; ++xx) d[xx] += s[xx];
            }
          }
        }
  }

  bool record_;
  std::vector<Var> tape_;
};

}  // namespace resdiff::ad
