#pragma once

#include "symseq/common.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

namespace symseq::ad {

// Define-by-run reverse-mode tape over dense row-major matrices.
//
// Every op appends a node holding its forward value and (when any input
// requires gradients) a backward closure. backward(root) walks the tape in
// reverse creation order, which is a valid topological order because ops can
// only reference earlier ids. Row vectors are [1 x d] matrices; scalars are
// [1 x 1].
//
// The contract the rest of the project relies on: for every op, the closure
// accumulates exactly the analytic vector-Jacobian product. This is enforced
// by finite-difference checks (see gradcheck.hpp) rather than trusted.
template <class T>
class Graph {
 public:
  using Id = std::int32_t;

  Graph() { nodes_.reserve(1024); }

  Id leaf(Mat<T> value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, requires_grad});
    return static_cast<Id>(nodes_.size() - 1);
  }

  Id constant(Mat<T> value) { return leaf(std::move(value), false); }

  Id scalar(T v) {
    Mat<T> m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
  }

  const Mat<T>& val(Id id) const { return nodes_[id].val; }

  bool requires_grad(Id id) const { return nodes_[id].requires_grad; }

  // Zero matrix of the node's shape if no gradient reached it.
  Mat<T> grad(Id id) const {
    const Node& n = nodes_[id];
    if (n.grad.size() == 0) return Mat<T>::Zero(n.val.rows(), n.val.cols());
    return n.grad;
  }

  bool has_grad(Id id) const { return nodes_[id].grad.size() != 0; }

  // Attention probabilities saved by the fused attention ops.
  const Mat<T>& saved_probs(Id id) const { return nodes_[id].aux; }

  std::size_t size() const { return nodes_.size(); }

  void backward(Id root) {
    Node& r = nodes_[root];
    check(r.val.rows() == 1 && r.val.cols() == 1,
          "backward: root must be a scalar node");
    accumulate(root, Mat<T>::Ones(1, 1));
    for (Id i = root; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.back && n.grad.size() != 0) n.back(*this, n);
    }
  }

  // ---- elementwise / structural ops ----

  Id add(Id a, Id b) {
    shape_eq(a, b, "add");
    Mat<T> v = val(a) + val(b);
    return unary_binary(std::move(v), a, b, [](Graph& g, Node& n) {
      g.accumulate(n.in0, n.grad);
      g.accumulate(n.in1, n.grad);
    });
  }

  Id sub(Id a, Id b) {
    shape_eq(a, b, "sub");
    Mat<T> v = val(a) - val(b);
    return unary_binary(std::move(v), a, b, [](Graph& g, Node& n) {
      g.accumulate(n.in0, n.grad);
      g.accumulate(n.in1, -n.grad);
    });
  }

  // Broadcast-add a [1 x c] row to every row of a.
  Id add_row(Id a, Id row) {
    check(val(row).rows() == 1 && val(row).cols() == val(a).cols(),
          "add_row: row must be [1 x cols(a)]");
    Mat<T> v = val(a).rowwise() + val(row).row(0);
    return unary_binary(std::move(v), a, row, [](Graph& g, Node& n) {
      g.accumulate(n.in0, n.grad);
      g.accumulate(n.in1, n.grad.colwise().sum());
    });
  }

  Id scale(Id a, T s) {
    Mat<T> v = val(a) * s;
    return unary(std::move(v), a, [s](Graph& g, Node& n) {
      g.accumulate(n.in0, (n.grad * s).eval());
    });
  }

  Id hadamard(Id a, Id b) {
    shape_eq(a, b, "hadamard");
    Mat<T> v = val(a).cwiseProduct(val(b));
    return unary_binary(std::move(v), a, b, [](Graph& g, Node& n) {
      g.accumulate(n.in0, n.grad.cwiseProduct(g.val(n.in1)));
      g.accumulate(n.in1, n.grad.cwiseProduct(g.val(n.in0)));
    });
  }

  Id matmul(Id a, Id b) {
    check(val(a).cols() == val(b).rows(), "matmul: inner dimensions differ");
    Mat<T> v(val(a).rows(), val(b).cols());
    v.noalias() = val(a) * val(b);
    return unary_binary(std::move(v), a, b, [](Graph& g, Node& n) {
      if (g.nodes_[n.in0].requires_grad)
        g.accumulate(n.in0, (n.grad * g.val(n.in1).transpose()).eval());
      if (g.nodes_[n.in1].requires_grad)
        g.accumulate(n.in1, (g.val(n.in0).transpose() * n.grad).eval());
    });
  }

  Id slice_rows(Id a, Index r0, Index count) {
    check(r0 >= 0 && count >= 1 && r0 + count <= val(a).rows(),
          "slice_rows: range out of bounds");
    Mat<T> v = val(a).middleRows(r0, count);
    return unary(std::move(v), a, [r0, count](Graph& g, Node& n) {
      Mat<T>& ga = g.grad_buf(n.in0);
      ga.middleRows(r0, count) += n.grad;
    });
  }

  Id concat_rows(const std::vector<Id>& parts) {
    check(!parts.empty(), "concat_rows: empty input");
    Index rows = 0;
    const Index cols = val(parts[0]).cols();
    for (Id p : parts) {
      check(val(p).cols() == cols, "concat_rows: column mismatch");
      rows += val(p).rows();
    }
    Mat<T> v(rows, cols);
    Index at = 0;
    bool rg = false;
    for (Id p : parts) {
      v.middleRows(at, val(p).rows()) = val(p);
      at += val(p).rows();
      rg = rg || nodes_[p].requires_grad;
    }
    Node node{std::move(v), {}, -1, -1, nullptr, rg};
    if (rg) {
      std::vector<Id> ins = parts;
      node.back = [ins](Graph& g, Node& n) {
        Index at2 = 0;
        for (Id p : ins) {
          const Index r = g.val(p).rows();
          if (g.nodes_[p].requires_grad)
            g.grad_buf(p) += n.grad.middleRows(at2, r);
          at2 += r;
        }
      };
    }
    nodes_.push_back(std::move(node));
    return static_cast<Id>(nodes_.size() - 1);
  }

  // Repeat a [1 x d] row m times.
  Id broadcast_row(Id row, Index m) {
    check(val(row).rows() == 1, "broadcast_row: input must be a row");
    Mat<T> v = val(row).replicate(m, 1);
    return unary(std::move(v), row, [](Graph& g, Node& n) {
      g.accumulate(n.in0, n.grad.colwise().sum());
    });
  }

  // Rows offset, offset+stride, ... (count of them).
  Id gather_rows_strided(Id a, Index stride, Index offset, Index count) {
    check(offset + (count - 1) * stride < val(a).rows(),
          "gather_rows_strided: out of bounds");
    Mat<T> v(count, val(a).cols());
    for (Index i = 0; i < count; ++i) v.row(i) = val(a).row(offset + i * stride);
    return unary(std::move(v), a, [stride, offset, count](Graph& g, Node& n) {
      Mat<T>& ga = g.grad_buf(n.in0);
      for (Index i = 0; i < count; ++i)
        ga.row(offset + i * stride) += n.grad.row(i);
    });
  }

  // steps[i] is [m x d]; output row (b*s + i) = steps[i].row(b). Converts the
  // step-major layout produced by autoregressive generation into the
  // sequence-contiguous layout block attention expects.
  Id stack_steps(const std::vector<Id>& steps, Index m) {
    check(!steps.empty(), "stack_steps: empty input");
    const Index s = static_cast<Index>(steps.size());
    const Index d = val(steps[0]).cols();
    bool rg = false;
    for (Id p : steps) {
      check(val(p).rows() == m && val(p).cols() == d,
            "stack_steps: all steps must be [m x d]");
      rg = rg || nodes_[p].requires_grad;
    }
    Mat<T> v(m * s, d);
    for (Index i = 0; i < s; ++i)
      for (Index b = 0; b < m; ++b) v.row(b * s + i) = val(steps[i]).row(b);
    Node node{std::move(v), {}, -1, -1, nullptr, rg};
    if (rg) {
      std::vector<Id> ins = steps;
      node.back = [ins, m, s](Graph& g, Node& n) {
        for (Index i = 0; i < s; ++i) {
          if (!g.nodes_[ins[i]].requires_grad) continue;
          Mat<T>& gi = g.grad_buf(ins[i]);
          for (Index b = 0; b < m; ++b) gi.row(b) += n.grad.row(b * s + i);
        }
      };
    }
    nodes_.push_back(std::move(node));
    return static_cast<Id>(nodes_.size() - 1);
  }

  // x is [m*s x d]; adds pos.row(i) to every row with in-block offset i.
  Id add_pos_blocks(Id x, Id pos, Index m, Index s) {
    check(val(x).rows() == m * s, "add_pos_blocks: rows != m*s");
    check(val(pos).rows() >= s && val(pos).cols() == val(x).cols(),
          "add_pos_blocks: pos table too small");
    Mat<T> v = val(x);
    for (Index b = 0; b < m; ++b) v.middleRows(b * s, s) += val(pos).topRows(s);
    return unary_binary(std::move(v), x, pos, [m, s](Graph& g, Node& n) {
      g.accumulate(n.in0, n.grad);
      if (!g.nodes_[n.in1].requires_grad) return;
      Mat<T>& gp = g.grad_buf(n.in1);
      for (Index b = 0; b < m; ++b) gp.topRows(s) += n.grad.middleRows(b * s, s);
    });
  }

  Id stop_gradient(Id a) { return constant(val(a)); }

  // Forward takes fwd's value verbatim; backward routes the gradient to bwd
  // unchanged (identity Jacobian). The straight-through estimator.
  Id straight_through(Id fwd, Id bwd) {
    shape_eq(fwd, bwd, "straight_through");
    Mat<T> v = val(fwd);
    return unary(std::move(v), bwd,
                 [](Graph& g, Node& n) { g.accumulate(n.in0, n.grad); });
  }

  // ---- nonlinearities ----

  Id gelu(Id a) {
    const Mat<T>& x = val(a);
    Mat<T> v = x.unaryExpr([](T t) {
      return T(0.5) * t * (T(1) + std::erf(t * T(M_SQRT1_2)));
    });
    return unary(std::move(v), a, [](Graph& g, Node& n) {
      const Mat<T>& x2 = g.val(n.in0);
      Mat<T> d = x2.unaryExpr([](T t) {
        const T phi = std::exp(T(-0.5) * t * t) * T(0.3989422804014327);
        return T(0.5) * (T(1) + std::erf(t * T(M_SQRT1_2))) + t * phi;
      });
      g.accumulate(n.in0, n.grad.cwiseProduct(d));
    });
  }

  Id expe(Id a) {
    Mat<T> v = val(a).array().exp().matrix();
    return unary(std::move(v), a, [](Graph& g, Node& n) {
      g.accumulate(n.in0, n.grad.cwiseProduct(n.val));
    });
  }

  Id loge(Id a) {
    Mat<T> v = val(a).array().log().matrix();
    return unary(std::move(v), a, [](Graph& g, Node& n) {
      g.accumulate(n.in0, n.grad.cwiseQuotient(g.val(n.in0)));
    });
  }

  // x*log(x) with the 0*log(0) = 0 convention (entropies of sparse rows).
  Id xlogx(Id a) {
    Mat<T> v = val(a).unaryExpr(
        [](T t) { return t > T(0) ? t * std::log(t) : T(0); });
    return unary(std::move(v), a, [](Graph& g, Node& n) {
      Mat<T> d = g.val(n.in0).unaryExpr(
          [](T t) { return t > T(0) ? std::log(t) + T(1) : T(0); });
      g.accumulate(n.in0, n.grad.cwiseProduct(d));
    });
  }

  // ---- row-wise normalizations ----

  Id softmax_rows(Id a) {
    Mat<T> v = stable_softmax(val(a));
    return unary(std::move(v), a, [](Graph& g, Node& n) {
      Mat<T> gx = n.grad.cwiseProduct(n.val);
      Eigen::Matrix<T, Eigen::Dynamic, 1> rs = gx.rowwise().sum();
      gx.noalias() -= rs.asDiagonal() * n.val;
      g.accumulate(n.in0, gx);
    });
  }

  Id log_softmax_rows(Id a) {
    const Mat<T>& x = val(a);
    Mat<T> v(x.rows(), x.cols());
    for (Index r = 0; r < x.rows(); ++r) {
      const T m = x.row(r).maxCoeff();
      const T lse = std::log((x.row(r).array() - m).exp().sum()) + m;
      v.row(r) = x.row(r).array() - lse;
    }
    return unary(std::move(v), a, [](Graph& g, Node& n) {
      Mat<T> sm = n.val.array().exp().matrix();
      Eigen::Matrix<T, Eigen::Dynamic, 1> rs = n.grad.rowwise().sum();
      Mat<T> gx = n.grad - Mat<T>(rs.asDiagonal() * sm);
      g.accumulate(n.in0, gx);
    });
  }

  Id layer_norm(Id x, Id gain, Id bias, T eps = T(1e-5)) {
    const Mat<T>& xa = val(x);
    const Index m = xa.rows(), d = xa.cols();
    check(val(gain).rows() == 1 && val(gain).cols() == d &&
              val(bias).rows() == 1 && val(bias).cols() == d,
          "layer_norm: gain/bias must be [1 x d]");
    Mat<T> xhat(m, d);
    Mat<T> rstd(m, 1);
    for (Index r = 0; r < m; ++r) {
      const T mu = xa.row(r).mean();
      const T var = (xa.row(r).array() - mu).square().mean();
      const T rs = T(1) / std::sqrt(var + eps);
      rstd(r, 0) = rs;
      xhat.row(r) = (xa.row(r).array() - mu) * rs;
    }
    Mat<T> v = (xhat.array().rowwise() * val(gain).row(0).array()).matrix();
    v.rowwise() += val(bias).row(0);

    Node node{std::move(v), {}, x, gain, nullptr,
              nodes_[x].requires_grad || nodes_[gain].requires_grad ||
                  nodes_[bias].requires_grad};
    node.aux = std::move(xhat);
    node.aux2 = std::move(rstd);
    if (node.requires_grad) {
      const Id bid = bias;
      node.back = [bid](Graph& g, Node& n) {
        const Mat<T>& xh = n.aux;
        const Mat<T>& rs = n.aux2;
        const Index d2 = xh.cols();
        if (g.nodes_[n.in1].requires_grad)
          g.accumulate(n.in1, (n.grad.cwiseProduct(xh)).colwise().sum());
        if (g.nodes_[bid].requires_grad)
          g.accumulate(bid, n.grad.colwise().sum());
        if (g.nodes_[n.in0].requires_grad) {
          Mat<T> dxhat =
              (n.grad.array().rowwise() * g.val(n.in1).row(0).array()).matrix();
          Mat<T> gx(xh.rows(), d2);
          for (Index r = 0; r < xh.rows(); ++r) {
            const T mean_d = dxhat.row(r).mean();
            const T mean_dx = dxhat.row(r).cwiseProduct(xh.row(r)).mean();
            gx.row(r) = rs(r, 0) * (dxhat.row(r).array() - mean_d -
                                    xh.row(r).array() * mean_dx);
          }
          g.accumulate(n.in0, gx);
        }
      };
    }
    nodes_.push_back(std::move(node));
    return static_cast<Id>(nodes_.size() - 1);
  }

  // y = x / max(||x||, eps) per row; below eps the map is exactly linear, so
  // the zero row maps to zero and stays differentiable.
  Id l2_normalize_rows(Id a, T eps = T(1e-12)) {
    const Mat<T>& x = val(a);
    Mat<T> denom(x.rows(), 1);
    for (Index r = 0; r < x.rows(); ++r)
      denom(r, 0) = std::max(x.row(r).norm(), eps);
    Mat<T> v(x.rows(), x.cols());
    for (Index r = 0; r < x.rows(); ++r) v.row(r) = x.row(r) / denom(r, 0);
    Node node{std::move(v), {}, a, -1, nullptr, nodes_[a].requires_grad};
    node.aux2 = std::move(denom);
    if (node.requires_grad) {
      node.back = [eps](Graph& g, Node& n) {
        const Mat<T>& x2 = g.val(n.in0);
        Mat<T> gx(x2.rows(), x2.cols());
        for (Index r = 0; r < x2.rows(); ++r) {
          const T d = n.aux2(r, 0);
          if (d <= eps) {
            gx.row(r) = n.grad.row(r) / eps;
          } else {
            const T dot = n.grad.row(r).dot(x2.row(r));
            gx.row(r) = n.grad.row(r) / d - x2.row(r) * (dot / (d * d * d));
          }
        }
        g.accumulate(n.in0, gx);
      };
    }
    nodes_.push_back(std::move(node));
    return static_cast<Id>(nodes_.size() - 1);
  }

  // ---- reductions ----

  Id sum_all(Id a) {
    Mat<T> v(1, 1);
    v(0, 0) = val(a).sum();
    return unary(std::move(v), a, [](Graph& g, Node& n) {
      g.grad_buf(n.in0).array() += n.grad(0, 0);
    });
  }

  Id mean_all(Id a) {
    const T inv = T(1) / static_cast<T>(val(a).size());
    return scale(sum_all(a), inv);
  }

  Id col_mean(Id a) {
    Mat<T> v = val(a).colwise().mean();
    const T inv = T(1) / static_cast<T>(val(a).rows());
    return unary(std::move(v), a, [inv](Graph& g, Node& n) {
      Mat<T>& ga = g.grad_buf(n.in0);
      ga.rowwise() += (n.grad.row(0) * inv).eval();
    });
  }

  // ---- fused attention ----

  // Block-diagonal multi-head attention. q is [m*sq x d]; k, v are
  // [m*skv x d]. Block b's queries attend only block b's keys. With causal
  // set, query i may attend key j iff j <= i + (skv - sq), which covers both
  // the square causal case and cached-suffix decoding. Probabilities are kept
  // on the node ([m*sq x heads*skv], block/head-major) for backward and for
  // attention-map capture via saved_probs().
  Id attention_blocks(Id q, Id k, Id v, Index m, Index sq, Index skv,
                      int heads, bool causal) {
    const Index d = val(q).cols();
    check(d % heads == 0, "attention: d_model not divisible by heads");
    check(val(q).rows() == m * sq, "attention: bad query rows");
    check(val(k).rows() == m * skv && val(v).rows() == m * skv,
          "attention: bad key/value rows");
    check(val(k).cols() == d && val(v).cols() == d,
          "attention: key/value width mismatch");
    check(!causal || skv >= sq, "attention: causal needs skv >= sq");
    const Index dh = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    const T neg_inf = -std::numeric_limits<T>::infinity();

    Mat<T> out = Mat<T>::Zero(m * sq, d);
    Mat<T> probs(m * sq, heads * skv);
    for (Index b = 0; b < m; ++b) {
      for (int h = 0; h < heads; ++h) {
        auto Qb = val(q).block(b * sq, h * dh, sq, dh);
        auto Kb = val(k).block(b * skv, h * dh, skv, dh);
        auto Vb = val(v).block(b * skv, h * dh, skv, dh);
        Mat<T> s(sq, skv);
        s.noalias() = Qb * Kb.transpose();
        s *= scale;
        if (causal) {
          const Index off = skv - sq;
          for (Index i = 0; i < sq; ++i)
            for (Index j = i + off + 1; j < skv; ++j) s(i, j) = neg_inf;
        }
        Mat<T> p = stable_softmax(s);
        probs.block(b * sq, h * skv, sq, skv) = p;
        out.block(b * sq, h * dh, sq, dh).noalias() = p * Vb;
      }
    }

    Node node{std::move(out), {}, q, k, nullptr,
              nodes_[q].requires_grad || nodes_[k].requires_grad ||
                  nodes_[v].requires_grad};
    node.aux = std::move(probs);
    if (node.requires_grad) {
      const Id vid = v;
      node.back = [m, sq, skv, heads, dh, scale, vid](Graph& g, Node& n) {
        const Id qid = n.in0, kid = n.in1;
        Mat<T>* gq = g.nodes_[qid].requires_grad ? &g.grad_buf(qid) : nullptr;
        Mat<T>* gk = g.nodes_[kid].requires_grad ? &g.grad_buf(kid) : nullptr;
        Mat<T>* gv = g.nodes_[vid].requires_grad ? &g.grad_buf(vid) : nullptr;
        for (Index b = 0; b < m; ++b) {
          for (int h = 0; h < heads; ++h) {
            auto P = n.aux.block(b * sq, h * skv, sq, skv);
            auto dO = n.grad.block(b * sq, h * dh, sq, dh);
            auto Vb = g.val(vid).block(b * skv, h * dh, skv, dh);
            if (gv) gv->block(b * skv, h * dh, skv, dh).noalias() += P.transpose() * dO;
            Mat<T> dP(sq, skv);
            dP.noalias() = dO * Vb.transpose();
            Mat<T> dS = dP.cwiseProduct(P);
            Eigen::Matrix<T, Eigen::Dynamic, 1> rs = dS.rowwise().sum();
            dS.noalias() -= Mat<T>(rs.asDiagonal() * P);
            dS *= scale;
            if (gq)
              gq->block(b * sq, h * dh, sq, dh).noalias() +=
                  dS * g.val(kid).block(b * skv, h * dh, skv, dh);
            if (gk)
              gk->block(b * skv, h * dh, skv, dh).noalias() +=
                  dS.transpose() * g.val(qid).block(b * sq, h * dh, sq, dh);
          }
        }
      };
    }
    nodes_.push_back(std::move(node));
    return static_cast<Id>(nodes_.size() - 1);
  }

  // Incremental decoding self-attention: one new query row per sequence,
  // keys/values cached as per-step [m x d] nodes. Query row b attends
  // steps[0..t).row(b). Equivalent to attention_blocks over the full prefix;
  // asserted by tests, relied on by the generator.
  Id attention_incremental(Id q, const std::vector<Id>& ks,
                           const std::vector<Id>& vs, int heads) {
    const Index m = val(q).rows();
    const Index d = val(q).cols();
    const Index t = static_cast<Index>(ks.size());
    check(t >= 1 && vs.size() == ks.size(), "attention_incremental: bad cache");
    check(d % heads == 0, "attention: d_model not divisible by heads");
    for (Index j = 0; j < t; ++j)
      check(val(ks[j]).rows() == m && val(ks[j]).cols() == d &&
                val(vs[j]).rows() == m && val(vs[j]).cols() == d,
            "attention_incremental: cache shape mismatch");
    const Index dh = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));

    Mat<T> out = Mat<T>::Zero(m, d);
    Mat<T> probs(m, heads * t);
    std::vector<T> srow(static_cast<std::size_t>(t));
    for (Index b = 0; b < m; ++b) {
      for (int h = 0; h < heads; ++h) {
        auto qbh = val(q).row(b).segment(h * dh, dh);
        T mx = -std::numeric_limits<T>::infinity();
        for (Index j = 0; j < t; ++j) {
          srow[j] = qbh.dot(val(ks[j]).row(b).segment(h * dh, dh)) * scale;
          mx = std::max(mx, srow[j]);
        }
        T z = T(0);
        for (Index j = 0; j < t; ++j) {
          srow[j] = std::exp(srow[j] - mx);
          z += srow[j];
        }
        for (Index j = 0; j < t; ++j) {
          const T p = srow[j] / z;
          probs(b, h * t + j) = p;
          out.row(b).segment(h * dh, dh) +=
              p * val(vs[j]).row(b).segment(h * dh, dh);
        }
      }
    }

    bool rg = nodes_[q].requires_grad;
    for (Index j = 0; j < t && !rg; ++j)
      rg = nodes_[ks[j]].requires_grad || nodes_[vs[j]].requires_grad;
    Node node{std::move(out), {}, q, -1, nullptr, rg};
    node.aux = std::move(probs);
    if (rg) {
      std::vector<Id> kin = ks, vin = vs;
      node.back = [kin, vin, heads, dh, scale, t](Graph& g, Node& n) {
        const Index m2 = n.val.rows();
        const Id qid = n.in0;
        for (Index b = 0; b < m2; ++b) {
          for (int h = 0; h < heads; ++h) {
            auto dO = n.grad.row(b).segment(h * dh, dh);
            // dP_j and the softmax backward over the t cached positions
            T dot_dp_p = T(0);
            std::vector<T> dp(static_cast<std::size_t>(t));
            for (Index j = 0; j < t; ++j) {
              dp[j] = dO.dot(g.val(vin[j]).row(b).segment(h * dh, dh));
              dot_dp_p += dp[j] * n.aux(b, h * t + j);
            }
            for (Index j = 0; j < t; ++j) {
              const T p = n.aux(b, h * t + j);
              const T ds = (dp[j] - dot_dp_p) * p * scale;
              if (g.nodes_[qid].requires_grad)
                g.grad_buf(qid).row(b).segment(h * dh, dh) +=
                    ds * g.val(kin[j]).row(b).segment(h * dh, dh);
              if (g.nodes_[kin[j]].requires_grad)
                g.grad_buf(kin[j]).row(b).segment(h * dh, dh) +=
                    ds * g.val(qid).row(b).segment(h * dh, dh);
              if (g.nodes_[vin[j]].requires_grad)
                g.grad_buf(vin[j]).row(b).segment(h * dh, dh) += p * dO;
            }
          }
        }
      };
    }
    nodes_.push_back(std::move(node));
    return static_cast<Id>(nodes_.size() - 1);
  }

 private:
  struct Node {
    Mat<T> val;
    Mat<T> grad;
    Id in0 = -1;
    Id in1 = -1;
    std::function<void(Graph&, Node&)> back;
    bool requires_grad = false;
    Mat<T> aux;   // op-specific saved forward state (probs, xhat, ...)
    Mat<T> aux2;  // secondary saved state (rstd, norms, ...)
  };

  static Mat<T> stable_softmax(const Mat<T>& x) {
    Mat<T> y(x.rows(), x.cols());
    for (Index r = 0; r < x.rows(); ++r) {
      T m = -std::numeric_limits<T>::infinity();
      for (Index c = 0; c < x.cols(); ++c) m = std::max(m, x(r, c));
      T z = T(0);
      for (Index c = 0; c < x.cols(); ++c) {
        const T e = std::exp(x(r, c) - m);
        y(r, c) = e;
        z += e;
      }
      y.row(r) /= z;
    }
    return y;
  }

  void shape_eq(Id a, Id b, const char* op) const {
    check(val(a).rows() == val(b).rows() && val(a).cols() == val(b).cols(),
          std::string(op) + ": shape mismatch");
  }

  Mat<T>& grad_buf(Id id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Mat<T>::Zero(n.val.rows(), n.val.cols());
    return n.grad;
  }

  template <class G>
  void accumulate(Id id, const G& dg) {
    if (!nodes_[id].requires_grad) return;
    grad_buf(id) += dg;
  }

  template <class F>
  Id unary(Mat<T> v, Id a, F&& back) {
    const bool rg = nodes_[a].requires_grad;
    Node node{std::move(v), {}, a, -1, nullptr, rg};
    if (rg) node.back = std::forward<F>(back);
    nodes_.push_back(std::move(node));
    return static_cast<Id>(nodes_.size() - 1);
  }

  template <class F>
  Id unary_binary(Mat<T> v, Id a, Id b, F&& back) {
    const bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
    Node node{std::move(v), {}, a, b, nullptr, rg};
    if (rg) node.back = std::forward<F>(back);
    nodes_.push_back(std::move(node));
    return static_cast<Id>(nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

}  // namespace symseq::ad
