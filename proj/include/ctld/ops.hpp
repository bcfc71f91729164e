#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ctld/graph.hpp"

// Differentiable operations. Layout conventions:
//   images / feature maps   N x H x W x C      (row-major, channels last)
//   conv2d weights          Cout x kh x kw x Cin
//   deconv2d weights        Cin x kh x kw x Cout
//   dense weights           Cout x Din
//   logits / embeddings     N x C
// A deconv2d weight buffer read as conv2d weights (with the channel roles
// swapped) describes the conv operator whose transpose the deconv applies.

namespace ctld {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

inline int conv_out_extent(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Patch matrix: row (oy*Wout+ox), column ((i*kw+j)*C + c). Out-of-image
// taps stay zero.
template <typename S>
void im2col(const S* src, int H, int W, int C, int kh, int kw, int stride, int pad,
            int Hout, int Wout, RowMat<S>& cols) {
  const int row_len = kh * kw * C;
  cols.setZero(static_cast<Eigen::Index>(Hout) * Wout, row_len);
  for (int oy = 0; oy < Hout; ++oy) {
    for (int ox = 0; ox < Wout; ++ox) {
      S* row = cols.data() + static_cast<std::int64_t>(oy * Wout + ox) * row_len;
      for (int i = 0; i < kh; ++i) {
        const int iy = oy * stride + i - pad;
        if (iy < 0 || iy >= H) continue;
        for (int j = 0; j < kw; ++j) {
          const int ix = ox * stride + j - pad;
          if (ix < 0 || ix >= W) continue;
          std::copy_n(src + (static_cast<std::int64_t>(iy) * W + ix) * C, C, row + (i * kw + j) * C);
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add patch rows back into the image.
template <typename S>
void col2im_add(const RowMat<S>& cols, int H, int W, int C, int kh, int kw, int stride, int pad,
                int Hout, int Wout, S* dst) {
  const int row_len = kh * kw * C;
  for (int oy = 0; oy < Hout; ++oy) {
    for (int ox = 0; ox < Wout; ++ox) {
      const S* row = cols.data() + static_cast<std::int64_t>(oy * Wout + ox) * row_len;
      for (int i = 0; i < kh; ++i) {
        const int iy = oy * stride + i - pad;
        if (iy < 0 || iy >= H) continue;
        for (int j = 0; j < kw; ++j) {
          const int ix = ox * stride + j - pad;
          if (ix < 0 || ix >= W) continue;
          S* px = dst + (static_cast<std::int64_t>(iy) * W + ix) * C;
          const S* col = row + (i * kw + j) * C;
          for (int c = 0; c < C; ++c) px[c] += col[c];
        }
      }
    }
  }
}

template <typename S>
void require_rank(const Tensor<S>& t, int rank, const char* what) {
  if (t.rank() != rank)
    throw ConfigError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                      shape_str(t.shape()));
}

}  // namespace detail

template <typename S>
NodeId conv2d(Graph<S>& g, NodeId x, NodeId w, NodeId b, int stride, int pad) {
  const auto& X = g.value(x);
  const auto& W = g.value(w);
  const auto& B = g.value(b);
  detail::require_rank(X, 4, "conv2d input");
  detail::require_rank(W, 4, "conv2d weights");
  detail::require_rank(B, 1, "conv2d bias");
  const int N = X.dim(0), H = X.dim(1), Wd = X.dim(2), Cin = X.dim(3);
  const int Cout = W.dim(0), kh = W.dim(1), kw = W.dim(2);
  if (W.dim(3) != Cin)
    throw ConfigError("conv2d: weight channels " + std::to_string(W.dim(3)) +
                      " do not match input channels " + std::to_string(Cin));
  if (B.dim(0) != Cout) throw ConfigError("conv2d: bias size does not match output channels");
  if (stride < 1 || pad < 0) throw ConfigError("conv2d: bad stride/padding");
  if (H + 2 * pad < kh || Wd + 2 * pad < kw)
    throw ConfigError("conv2d: spatial extents smaller than kernel after padding");
  const int Hout = detail::conv_out_extent(H, kh, stride, pad);
  const int Wout = detail::conv_out_extent(Wd, kw, stride, pad);

  const Eigen::Index plane_in = static_cast<Eigen::Index>(H) * Wd * Cin;
  const Eigen::Index plane_out = static_cast<Eigen::Index>(Hout) * Wout * Cout;
  Tensor<S> out({N, Hout, Wout, Cout});
  Eigen::Map<const RowMat<S>> Wm(W.data(), Cout, kh * kw * Cin);
  Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> Bv(B.data(), Cout);
  RowMat<S> cols;
  for (int n = 0; n < N; ++n) {
    detail::im2col(X.data() + n * plane_in, H, Wd, Cin, kh, kw, stride, pad, Hout, Wout, cols);
    Eigen::Map<RowMat<S>> Om(out.data() + n * plane_out, static_cast<Eigen::Index>(Hout) * Wout, Cout);
    Om.noalias() = cols * Wm.transpose();
    Om.rowwise() += Bv.transpose();
  }

  NodeId id = g.op(std::move(out), {x.idx, w.idx, b.idx});
  g.set_backward(id, [id, x, w, b, N, H, Wd, Cin, Cout, kh, kw, stride, pad, Hout, Wout, plane_in,
                      plane_out](Graph<S>& gg) {
    const auto& X2 = gg.value(x);
    const auto& W2 = gg.value(w);
    Tensor<S>& dY = gg.grad(id);
    Eigen::Map<const RowMat<S>> Wm2(W2.data(), Cout, kh * kw * Cin);
    const bool need_x = gg.wants_grad(x), need_w = gg.wants_grad(w), need_b = gg.wants_grad(b);
    RowMat<S> cols2, dcols;
    for (int n = 0; n < N; ++n) {
      Eigen::Map<const RowMat<S>> dYm(dY.data() + n * plane_out, static_cast<Eigen::Index>(Hout) * Wout, Cout);
      if (need_b) {
        Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> dB(gg.grad(b).data(), Cout);
        dB.noalias() += dYm.colwise().sum().transpose();
      }
      if (need_w) {
        detail::im2col(X2.data() + n * plane_in, H, Wd, Cin, kh, kw, stride, pad, Hout, Wout, cols2);
        Eigen::Map<RowMat<S>> dWm(gg.grad(w).data(), Cout, kh * kw * Cin);
        dWm.noalias() += dYm.transpose() * cols2;
      }
      if (need_x) {
        dcols.noalias() = dYm * Wm2;
        detail::col2im_add(dcols, H, Wd, Cin, kh, kw, stride, pad, Hout, Wout, gg.grad(x).data() + n * plane_in);
      }
    }
  });
  return id;
}

/// Transposed convolution; the adjoint of conv2d with the same kernel,
/// stride and padding. Output extent = stride*(in-1) + k - 2*pad.
template <typename S>
NodeId deconv2d(Graph<S>& g, NodeId x, NodeId w, NodeId b, int stride = 2, int pad = 1) {
  const auto& X = g.value(x);
  const auto& W = g.value(w);
  const auto& B = g.value(b);
  detail::require_rank(X, 4, "deconv2d input");
  detail::require_rank(W, 4, "deconv2d weights");
  detail::require_rank(B, 1, "deconv2d bias");
  const int N = X.dim(0), H = X.dim(1), Wd = X.dim(2), Cin = X.dim(3);
  const int kh = W.dim(1), kw = W.dim(2), Cout = W.dim(3);
  if (W.dim(0) != Cin)
    throw ConfigError("deconv2d: weight channels " + std::to_string(W.dim(0)) +
                      " do not match input channels " + std::to_string(Cin));
  if (B.dim(0) != Cout) throw ConfigError("deconv2d: bias size does not match output channels");
  if (stride < 1 || pad < 0) throw ConfigError("deconv2d: bad stride/padding");
  const int Hout = stride * (H - 1) + kh - 2 * pad;
  const int Wout = stride * (Wd - 1) + kw - 2 * pad;
  if (Hout <= 0 || Wout <= 0) throw ConfigError("deconv2d: non-positive output extent");

  const Eigen::Index plane_in = static_cast<Eigen::Index>(H) * Wd * Cin;
  const Eigen::Index plane_out = static_cast<Eigen::Index>(Hout) * Wout * Cout;
  Tensor<S> out({N, Hout, Wout, Cout});
  Eigen::Map<const RowMat<S>> Wm(W.data(), Cin, kh * kw * Cout);
  RowMat<S> cols;
  for (int n = 0; n < N; ++n) {
    Eigen::Map<const RowMat<S>> Xm(X.data() + n * plane_in, static_cast<Eigen::Index>(H) * Wd, Cin);
    cols.noalias() = Xm * Wm;
    // The deconv output plays the conv "image" role: scatter with the
    // conv geometry that maps (Hout,Wout) down to (H,W).
    S* dst = out.data() + n * plane_out;
    detail::col2im_add(cols, Hout, Wout, Cout, kh, kw, stride, pad, H, Wd, dst);
    Eigen::Map<RowMat<S>> Om(dst, static_cast<Eigen::Index>(Hout) * Wout, Cout);
    Om.rowwise() += Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(B.data(), Cout).transpose();
  }

  NodeId id = g.op(std::move(out), {x.idx, w.idx, b.idx});
  g.set_backward(id, [id, x, w, b, N, H, Wd, Cin, Cout, kh, kw, stride, pad, Hout, Wout, plane_in,
                      plane_out](Graph<S>& gg) {
    const auto& X2 = gg.value(x);
    const auto& W2 = gg.value(w);
    Tensor<S>& dY = gg.grad(id);
    Eigen::Map<const RowMat<S>> Wm2(W2.data(), Cin, kh * kw * Cout);
    const bool need_x = gg.wants_grad(x), need_w = gg.wants_grad(w), need_b = gg.wants_grad(b);
    RowMat<S> dcols;
    for (int n = 0; n < N; ++n) {
      const S* dyp = dY.data() + n * plane_out;
      if (need_b) {
        Eigen::Map<const RowMat<S>> dYm(dyp, static_cast<Eigen::Index>(Hout) * Wout, Cout);
        Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> dB(gg.grad(b).data(), Cout);
        dB.noalias() += dYm.colwise().sum().transpose();
      }
      if (need_x || need_w) {
        detail::im2col(dyp, Hout, Wout, Cout, kh, kw, stride, pad, H, Wd, dcols);
        if (need_x) {
          Eigen::Map<RowMat<S>> dXm(gg.grad(x).data() + n * plane_in, static_cast<Eigen::Index>(H) * Wd, Cin);
          dXm.noalias() += dcols * Wm2.transpose();
        }
        if (need_w) {
          Eigen::Map<const RowMat<S>> Xm2(X2.data() + n * plane_in, static_cast<Eigen::Index>(H) * Wd, Cin);
          Eigen::Map<RowMat<S>> dWm(gg.grad(w).data(), Cin, kh * kw * Cout);
          dWm.noalias() += Xm2.transpose() * dcols;
        }
      }
    }
  });
  return id;
}

template <typename S>
NodeId dense(Graph<S>& g, NodeId x, NodeId w, NodeId b) {
  const auto& X = g.value(x);
  const auto& W = g.value(w);
  const auto& B = g.value(b);
  detail::require_rank(X, 2, "dense input");
  detail::require_rank(W, 2, "dense weights");
  detail::require_rank(B, 1, "dense bias");
  const int N = X.dim(0), D = X.dim(1), C = W.dim(0);
  if (W.dim(1) != D) throw ConfigError("dense: weight columns do not match input dimension");
  if (B.dim(0) != C) throw ConfigError("dense: bias size does not match output dimension");

  Tensor<S> out({N, C});
  Eigen::Map<const RowMat<S>> Xm(X.data(), N, D);
  Eigen::Map<const RowMat<S>> Wm(W.data(), C, D);
  Eigen::Map<RowMat<S>> Om(out.data(), N, C);
  Om.noalias() = Xm * Wm.transpose();
  Om.rowwise() += Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(B.data(), C).transpose();

  NodeId id = g.op(std::move(out), {x.idx, w.idx, b.idx});
  g.set_backward(id, [id, x, w, b, N, D, C](Graph<S>& gg) {
    const auto& X2 = gg.value(x);
    const auto& W2 = gg.value(w);
    Eigen::Map<const RowMat<S>> dYm(gg.grad(id).data(), N, C);
    if (gg.wants_grad(b)) {
      Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> dB(gg.grad(b).data(), C);
      dB.noalias() += dYm.colwise().sum().transpose();
    }
    if (gg.wants_grad(w)) {
      Eigen::Map<RowMat<S>> dWm(gg.grad(w).data(), C, D);
      Eigen::Map<const RowMat<S>> Xm2(X2.data(), N, D);
      dWm.noalias() += dYm.transpose() * Xm2;
    }
    if (gg.wants_grad(x)) {
      Eigen::Map<RowMat<S>> dXm(gg.grad(x).data(), N, D);
      Eigen::Map<const RowMat<S>> Wm2(W2.data(), C, D);
      dXm.noalias() += dYm * Wm2;
    }
  });
  return id;
}

template <typename S>
NodeId relu(Graph<S>& g, NodeId x) {
  Tensor<S> out = g.value(x);
  out.array() = out.array().max(S(0));
  NodeId id = g.op(std::move(out), {x.idx, -1, -1});
  g.set_backward(id, [id, x](Graph<S>& gg) {
    if (!gg.wants_grad(x)) return;
    gg.grad(x).array() += (gg.value(x).array() > S(0)).template cast<S>() * gg.grad(id).array();
  });
  return id;
}

template <typename S>
NodeId global_avg_pool(Graph<S>& g, NodeId x) {
  const auto& X = g.value(x);
  detail::require_rank(X, 4, "global_avg_pool input");
  const int N = X.dim(0), H = X.dim(1), W = X.dim(2), C = X.dim(3);
  const S inv = S(1) / static_cast<S>(H * W);
  Tensor<S> out({N, C});
  for (int n = 0; n < N; ++n) {
    Eigen::Map<const RowMat<S>> Xm(X.data() + static_cast<Eigen::Index>(n) * H * W * C,
                                   static_cast<Eigen::Index>(H) * W, C);
    Eigen::Map<RowMat<S>>(out.data(), N, C).row(n) = Xm.colwise().sum() * inv;
  }
  NodeId id = g.op(std::move(out), {x.idx, -1, -1});
  g.set_backward(id, [id, x, N, H, W, C, inv](Graph<S>& gg) {
    if (!gg.wants_grad(x)) return;
    Eigen::Map<const RowMat<S>> dYm(gg.grad(id).data(), N, C);
    for (int n = 0; n < N; ++n) {
      Eigen::Map<RowMat<S>> dXm(gg.grad(x).data() + static_cast<Eigen::Index>(n) * H * W * C,
                                static_cast<Eigen::Index>(H) * W, C);
      dXm.rowwise() += dYm.row(n) * inv;
    }
  });
  return id;
}

/// Row-wise softmax of logits/mu. mu > 0.
template <typename S>
NodeId softmax_t(Graph<S>& g, NodeId x, S mu) {
  const auto& X = g.value(x);
  detail::require_rank(X, 2, "softmax_t input");
  if (!(mu > S(0))) throw ConfigError("softmax_t: temperature must be positive");
  const int N = X.dim(0), C = X.dim(1);
  Tensor<S> out({N, C});
  for (int n = 0; n < N; ++n) {
    Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> row(X.data() + static_cast<Eigen::Index>(n) * C, C);
    Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> po(out.data() + static_cast<Eigen::Index>(n) * C, C);
    const Eigen::Array<S, Eigen::Dynamic, 1> z = (row - row.maxCoeff()) / mu;
    po = z.exp();
    po /= po.sum();
  }
  NodeId id = g.op(std::move(out), {x.idx, -1, -1});
  g.set_backward(id, [id, x, N, C, mu](Graph<S>& gg) {
    if (!gg.wants_grad(x)) return;
    const auto& P = gg.value(id);
    const auto& dY = gg.grad(id);
    for (int n = 0; n < N; ++n) {
      Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> p(P.data() + static_cast<Eigen::Index>(n) * C, C);
      Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> dy(dY.data() + static_cast<Eigen::Index>(n) * C, C);
      Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> dx(gg.grad(x).data() + static_cast<Eigen::Index>(n) * C, C);
      const S dot = (dy * p).sum();
      dx += p * (dy - dot) / mu;
    }
  });
  return id;
}

template <typename S>
NodeId add(Graph<S>& g, NodeId a, NodeId b) {
  const auto& A = g.value(a);
  const auto& B = g.value(b);
  if (!A.same_shape(B)) throw ConfigError("add: shape mismatch");
  Tensor<S> out = A;
  out.array() += B.array();
  NodeId id = g.op(std::move(out), {a.idx, b.idx, -1});
  g.set_backward(id, [id, a, b](Graph<S>& gg) {
    if (gg.wants_grad(a)) gg.grad(a).array() += gg.grad(id).array();
    if (gg.wants_grad(b)) gg.grad(b).array() += gg.grad(id).array();
  });
  return id;
}

template <typename S>
NodeId mul(Graph<S>& g, NodeId a, NodeId b) {
  const auto& A = g.value(a);
  const auto& B = g.value(b);
  if (!A.same_shape(B)) throw ConfigError("mul: shape mismatch");
  Tensor<S> out = A;
  out.array() *= B.array();
  NodeId id = g.op(std::move(out), {a.idx, b.idx, -1});
  g.set_backward(id, [id, a, b](Graph<S>& gg) {
    if (gg.wants_grad(a)) gg.grad(a).array() += gg.value(b).array() * gg.grad(id).array();
    if (gg.wants_grad(b)) gg.grad(b).array() += gg.value(a).array() * gg.grad(id).array();
  });
  return id;
}

template <typename S>
NodeId scale(Graph<S>& g, NodeId x, S c) {
  Tensor<S> out = g.value(x);
  out.array() *= c;
  NodeId id = g.op(std::move(out), {x.idx, -1, -1});
  g.set_backward(id, [id, x, c](Graph<S>& gg) {
    if (gg.wants_grad(x)) gg.grad(x).array() += c * gg.grad(id).array();
  });
  return id;
}

template <typename S>
NodeId sum(Graph<S>& g, NodeId x) {
  Tensor<S> out = Tensor<S>::scalar(g.value(x).array().sum());
  NodeId id = g.op(std::move(out), {x.idx, -1, -1});
  g.set_backward(id, [id, x](Graph<S>& gg) {
    if (gg.wants_grad(x)) gg.grad(x).array() += gg.grad(id).item();
  });
  return id;
}

/// Value copy with the gradient path cut.
template <typename S>
NodeId stop_gradient(Graph<S>& g, NodeId x) {
  return g.constant(g.value(x));
}

/// (1/N) * sum_i ||a_i - b_i||^2 over the leading (batch) dimension.
template <typename S>
NodeId mean_sample_sqdist(Graph<S>& g, NodeId a, NodeId b) {
  const auto& A = g.value(a);
  const auto& B = g.value(b);
  if (!A.same_shape(B)) throw ConfigError("mean_sample_sqdist: shape mismatch");
  if (A.rank() < 1) throw ConfigError("mean_sample_sqdist: needs a batch dimension");
  const S inv_n = S(1) / static_cast<S>(A.dim(0));
  Tensor<S> out = Tensor<S>::scalar((A.array() - B.array()).square().sum() * inv_n);
  NodeId id = g.op(std::move(out), {a.idx, b.idx, -1});
  g.set_backward(id, [id, a, b, inv_n](Graph<S>& gg) {
    const S up = S(2) * inv_n * gg.grad(id).item();
    const auto diff = gg.value(a).array() - gg.value(b).array();
    if (gg.wants_grad(a)) gg.grad(a).array() += up * diff;
    if (gg.wants_grad(b)) gg.grad(b).array() -= up * diff;
  });
  return id;
}

enum class Reduction { Mean, Sum };

/// 1 - reduce_i cos(a_i, b_i) over rows. A zero-norm row contributes
/// cos = 0 (and no gradient); *zero_norm_count reports how many.
template <typename S>
NodeId cosine_alignment(Graph<S>& g, NodeId a, NodeId b, Reduction red = Reduction::Mean,
                        int* zero_norm_count = nullptr) {
  const auto& A = g.value(a);
  const auto& B = g.value(b);
  detail::require_rank(A, 2, "cosine_alignment input");
  if (!A.same_shape(B)) throw ConfigError("cosine_alignment: shape mismatch");
  const int N = A.dim(0), D = A.dim(1);
  const S w = red == Reduction::Mean ? S(1) / static_cast<S>(N) : S(1);
  S acc = S(0);
  int zeros = 0;
  for (int n = 0; n < N; ++n) {
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> av(A.data() + static_cast<Eigen::Index>(n) * D, D);
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> bv(B.data() + static_cast<Eigen::Index>(n) * D, D);
    const S na = av.norm(), nb = bv.norm();
    if (na == S(0) || nb == S(0)) {
      ++zeros;
      continue;
    }
    acc += av.dot(bv) / (na * nb);
  }
  if (zero_norm_count) *zero_norm_count = zeros;
  Tensor<S> out = Tensor<S>::scalar(S(1) - w * acc);
  NodeId id = g.op(std::move(out), {a.idx, b.idx, -1});
  g.set_backward(id, [id, a, b, N, D, w](Graph<S>& gg) {
    const S up = gg.grad(id).item();
    const auto& A2 = gg.value(a);
    const auto& B2 = gg.value(b);
    const bool need_a = gg.wants_grad(a), need_b = gg.wants_grad(b);
    if (!need_a && !need_b) return;
    for (int n = 0; n < N; ++n) {
      Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> av(A2.data() + static_cast<Eigen::Index>(n) * D, D);
      Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> bv(B2.data() + static_cast<Eigen::Index>(n) * D, D);
      const S na = av.norm(), nb = bv.norm();
      if (na == S(0) || nb == S(0)) continue;
      const S cosv = av.dot(bv) / (na * nb);
      const S f = -w * up;
      if (need_a) {
        Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> da(gg.grad(a).data() + static_cast<Eigen::Index>(n) * D, D);
        da += f * (bv / (na * nb) - cosv * av / (na * na));
      }
      if (need_b) {
        Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> db(gg.grad(b).data() + static_cast<Eigen::Index>(n) * D, D);
        db += f * (av / (na * nb) - cosv * bv / (nb * nb));
      }
    }
  });
  return id;
}

/// Mean softmax cross-entropy against integer labels.
template <typename S>
NodeId cross_entropy(Graph<S>& g, NodeId logits, const std::vector<int>& labels) {
  const auto& X = g.value(logits);
  detail::require_rank(X, 2, "cross_entropy logits");
  const int N = X.dim(0), C = X.dim(1);
  if (static_cast<int>(labels.size()) != N) throw ConfigError("cross_entropy: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= C) throw ConfigError("cross_entropy: label out of range");
  const S inv_n = S(1) / static_cast<S>(N);
  S loss = S(0);
  for (int n = 0; n < N; ++n) {
    Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> row(X.data() + static_cast<Eigen::Index>(n) * C, C);
    const S m = row.maxCoeff();
    const S lse = m + std::log((row - m).exp().sum());
    loss += lse - row[labels[static_cast<std::size_t>(n)]];
  }
  Tensor<S> out = Tensor<S>::scalar(loss * inv_n);
  NodeId id = g.op(std::move(out), {logits.idx, -1, -1});
  g.set_backward(id, [id, logits, labels, N, C, inv_n](Graph<S>& gg) {
    if (!gg.wants_grad(logits)) return;
    const S up = gg.grad(id).item() * inv_n;
    const auto& X2 = gg.value(logits);
    for (int n = 0; n < N; ++n) {
      Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> row(X2.data() + static_cast<Eigen::Index>(n) * C, C);
      Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> dx(gg.grad(logits).data() + static_cast<Eigen::Index>(n) * C, C);
      Eigen::Array<S, Eigen::Dynamic, 1> p = (row - row.maxCoeff()).exp();
      p /= p.sum();
      p[labels[static_cast<std::size_t>(n)]] -= S(1);
      dx += up * p;
    }
  });
  return id;
}

}  // namespace ctld
