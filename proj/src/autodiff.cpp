// Copyright 2026 The varlora Authors.
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

#include "varlora/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "varlora/errors.hpp"

namespace varlora {

namespace {

Tape& tape_of(Var a) {
  require(a.valid(), "operation on an unbound Var");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  require(a.valid() && b.valid() && a.tape == b.tape, "operands live on different tapes");
  return *a.tape;
}

// out = g * b^T
Tensor matmul_nt(const Tensor& g, const Tensor& b) {
  const std::size_t m = g.rows(), n = g.cols(), k = b.rows();
  Tensor out({m, k});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += g(i, j) * b(p, j);
      out(i, p) = s;
    }
  return out;
}

// out = a^T * g
Tensor matmul_tn(const Tensor& a, const Tensor& g) {
  const std::size_t m = a.rows(), k = a.cols(), n = g.cols();
  Tensor out({k, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out(p, j) += av * g(i, j);
    }
  return out;
}

void require_matrix(const Tensor& t, const char* op) {
  require_shape(t.rank() == 2, std::string(op) + " expects a matrix, got " +
                                   shape_string(t.shape()));
}

}  // namespace

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, Backprop fn) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                [this](std::size_t i) { return nodes_[i].requires_grad; });
  if (n.requires_grad) n.backprop = std::move(fn);
  n.inputs = std::move(inputs);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor::zeros_like(n.value);
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
  if (!nodes_[id].requires_grad) return;
  add_inplace(grad_slot(id), g);
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  return n.has_grad ? n.grad : Tensor::zeros_like(n.value);
}

void Tape::backward(Var loss) {
  require(loss.tape == this, "loss belongs to another tape");
  require(nodes_.at(loss.id).value.size() == 1,
          "backward() needs a scalar loss, got " +
              shape_string(nodes_[loss.id].value.shape()));
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  grad_slot(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backprop) continue;
    n.backprop(*this, n.grad);
  }
}

// ---- primitives -----------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const std::size_t ia = a.id, ib = b.id;
  return t.record(matmul(t.value(a), t.value(b)), {ia, ib},
                  [ia, ib](Tape& tp, const Tensor& g) {
                    if (tp.needs_grad(ia)) tp.accumulate(ia, matmul_nt(g, tp.value(Var{&tp, ib})));
                    if (tp.needs_grad(ib)) tp.accumulate(ib, matmul_tn(tp.value(Var{&tp, ia}), g));
                  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id;
  return t.record(transpose(t.value(a)), {ia},
                  [ia](Tape& tp, const Tensor& g) { tp.accumulate(ia, transpose(g)); });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const std::size_t ia = a.id, ib = b.id;
  return t.record(add(t.value(a), t.value(b)), {ia, ib},
                  [ia, ib](Tape& tp, const Tensor& g) {
                    tp.accumulate(ia, g);
                    tp.accumulate(ib, g);
                  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const std::size_t ia = a.id, ib = b.id;
  return t.record(sub(t.value(a), t.value(b)), {ia, ib},
                  [ia, ib](Tape& tp, const Tensor& g) {
                    tp.accumulate(ia, g);
                    if (tp.needs_grad(ib)) tp.accumulate(ib, scale(g, -1.0));
                  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id;
  return t.record(scale(t.value(a), s), {ia},
                  [ia, s](Tape& tp, const Tensor& g) { tp.accumulate(ia, scale(g, s)); });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const std::size_t ia = a.id, ib = b.id;
  return t.record(hadamard(t.value(a), t.value(b)), {ia, ib},
                  [ia, ib](Tape& tp, const Tensor& g) {
                    if (tp.needs_grad(ia)) tp.accumulate(ia, hadamard(g, tp.value(Var{&tp, ib})));
                    if (tp.needs_grad(ib)) tp.accumulate(ib, hadamard(g, tp.value(Var{&tp, ia})));
                  });
}

Var gelu(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id;
  Tensor y = t.value(a);
  for (double& v : y.raw()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  return t.record(std::move(y), {ia}, [ia](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(Var{&tp, ia});
    Tensor dx = Tensor::zeros_like(x);
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double v = x[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      dx[i] = g[i] * (cdf + v * inv_sqrt_2pi * std::exp(-0.5 * v * v));
    }
    tp.accumulate(ia, dx);
  });
}

Var softmax_rows(Var a, bool causal) {
  Tape& t = tape_of(a);
  const Tensor& x = t.value(a);
  require_matrix(x, "softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  require_shape(!causal || m <= n, "causal softmax needs rows <= cols");
  Tensor y({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t width = causal ? i + 1 : n;
    double mx = x(i, 0);
    for (std::size_t j = 1; j < width; ++j) mx = std::max(mx, x(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      y(i, j) = std::exp(x(i, j) - mx);
      s += y(i, j);
    }
    for (std::size_t j = 0; j < width; ++j) y(i, j) /= s;
  }
  const std::size_t ia = a.id;
  const std::size_t io = t.size();
  return t.record(std::move(y), {ia}, [ia, io](Tape& tp, const Tensor& g) {
    const Tensor& y = tp.value(Var{&tp, io});
    Tensor dx = Tensor::zeros_like(y);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) dx(i, j) = y(i, j) * (g(i, j) - dot);
    }
    tp.accumulate(ia, dx);
  });
}

Var embedding(Var table, std::span<const int> ids) {
  Tape& t = tape_of(table);
  const Tensor& w = t.value(table);
  require_matrix(w, "embedding");
  const std::size_t v = w.rows(), d = w.cols();
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v)
      throw IndexError("embedding id " + std::to_string(ids[i]) + " outside [0, " +
                       std::to_string(v) + ")");
    for (std::size_t j = 0; j < d; ++j) out(i, j) = w(ids[i], j);
  }
  const std::size_t it = table.id;
  std::vector<int> idx(ids.begin(), ids.end());
  return t.record(std::move(out), {it}, [it, idx = std::move(idx)](Tape& tp, const Tensor& g) {
    Tensor& dw = tp.grad_slot(it);
    const std::size_t d = g.cols();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) dw(idx[i], j) += g(i, j);
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = tape_of(x, gain);
  tape_of(x, bias);
  const Tensor& xv = t.value(x);
  require_matrix(xv, "layer_norm");
  const std::size_t m = xv.rows(), d = xv.cols();
  require_shape(t.value(gain).size() == d && t.value(bias).size() == d,
                "layer_norm gain/bias width mismatch");
  const Tensor& gv = t.value(gain);
  const Tensor& bv = t.value(bias);
  Tensor xhat({m, d});
  std::vector<double> rstd(m);
  Tensor y({m, d});
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xv(i, j);
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xv(i, j) - mu) * (xv(i, j) - mu);
    var /= static_cast<double>(d);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat(i, j) = (xv(i, j) - mu) * rstd[i];
      y(i, j) = xhat(i, j) * gv[j] + bv[j];
    }
  }
  const std::size_t ix = x.id, ig = gain.id, ib = bias.id;
  return t.record(std::move(y), {ix, ig, ib},
                  [ix, ig, ib, xhat = std::move(xhat), rstd = std::move(rstd)](
                      Tape& tp, const Tensor& g) {
                    const std::size_t m = g.rows(), d = g.cols();
                    const Tensor& gv = tp.value(Var{&tp, ig});
                    if (tp.needs_grad(ig)) {
                      Tensor& dg = tp.grad_slot(ig);
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < d; ++j) dg[j] += g(i, j) * xhat(i, j);
                    }
                    if (tp.needs_grad(ib)) {
                      Tensor& db = tp.grad_slot(ib);
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < d; ++j) db[j] += g(i, j);
                    }
                    if (tp.needs_grad(ix)) {
                      Tensor dx({m, d});
                      const double inv_d = 1.0 / static_cast<double>(d);
                      for (std::size_t i = 0; i < m; ++i) {
                        double mean_dh = 0.0, mean_dh_xh = 0.0;
                        for (std::size_t j = 0; j < d; ++j) {
                          const double dh = g(i, j) * gv[j];
                          mean_dh += dh;
                          mean_dh_xh += dh * xhat(i, j);
                        }
                        mean_dh *= inv_d;
                        mean_dh_xh *= inv_d;
                        for (std::size_t j = 0; j < d; ++j) {
                          const double dh = g(i, j) * gv[j];
                          dx(i, j) = rstd[i] * (dh - mean_dh - xhat(i, j) * mean_dh_xh);
                        }
                      }
                      tp.accumulate(ix, dx);
                    }
                  });
}

Var cross_entropy_rows(Var logits, std::span<const int> targets) {
  Tape& t = tape_of(logits);
  const Tensor& z = t.value(logits);
  require_matrix(z, "cross_entropy_rows");
  const std::size_t n = z.rows(), v = z.cols();
  require_shape(targets.size() == n, "cross_entropy_rows: target count mismatch");
  std::vector<int> tgt(targets.begin(), targets.end());
  Tensor out({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    if (tgt[i] < 0 || static_cast<std::size_t>(tgt[i]) >= v)
      throw IndexError("target " + std::to_string(tgt[i]) + " outside [0, " +
                       std::to_string(v) + ")");
    double mx = z(i, 0);
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, z(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < v; ++j) s += std::exp(z(i, j) - mx);
    out(i, 0) = mx + std::log(s) - z(i, tgt[i]);
  }
  const std::size_t iz = logits.id;
  return t.record(std::move(out), {iz}, [iz, tgt = std::move(tgt)](Tape& tp, const Tensor& g) {
    const Tensor& z = tp.value(Var{&tp, iz});
    Tensor& dz = tp.grad_slot(iz);
    const std::size_t v = z.cols();
    for (std::size_t i = 0; i < z.rows(); ++i) {
      const double gi = g(i, 0);
      if (gi == 0.0) continue;
      double mx = z(i, 0);
      for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, z(i, j));
      double s = 0.0;
      for (std::size_t j = 0; j < v; ++j) s += std::exp(z(i, j) - mx);
      for (std::size_t j = 0; j < v; ++j) dz(i, j) += gi * std::exp(z(i, j) - mx) / s;
      dz(i, tgt[i]) -= gi;
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  Tape& t = tape_of(a);
  const Tensor& x = t.value(a);
  require_matrix(x, "slice_rows");
  require_shape(begin <= end && end <= x.rows(), "slice_rows out of range");
  const std::size_t d = x.cols();
  Tensor out({end - begin, d});
  std::copy(x.raw().begin() + begin * d, x.raw().begin() + end * d, out.raw().begin());
  const std::size_t ia = a.id;
  return t.record(std::move(out), {ia}, [ia, begin](Tape& tp, const Tensor& g) {
    Tensor& dx = tp.grad_slot(ia);
    const std::size_t d = g.cols();
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < d; ++j) dx(begin + i, j) += g(i, j);
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  Tape& t = tape_of(a);
  const Tensor& x = t.value(a);
  require_matrix(x, "slice_cols");
  require_shape(begin <= end && end <= x.cols(), "slice_cols out of range");
  Tensor out({x.rows(), end - begin});
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = begin; j < end; ++j) out(i, j - begin) = x(i, j);
  const std::size_t ia = a.id;
  return t.record(std::move(out), {ia}, [ia, begin](Tape& tp, const Tensor& g) {
    Tensor& dx = tp.grad_slot(ia);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) dx(i, begin + j) += g(i, j);
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows of nothing");
  Tape& t = tape_of(parts[0]);
  const std::size_t d = t.value(parts[0]).cols();
  std::size_t total = 0;
  std::vector<std::size_t> ids, offsets;
  for (Var p : parts) {
    tape_of(parts[0], p);
    require_shape(t.value(p).rank() == 2 && t.value(p).cols() == d, "concat_rows width mismatch");
    ids.push_back(p.id);
    offsets.push_back(total);
    total += t.value(p).rows();
  }
  Tensor out({total, d});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& x = t.value(parts[k]);
    std::copy(x.raw().begin(), x.raw().end(), out.raw().begin() + offsets[k] * d);
  }
  return t.record(std::move(out), ids, [ids, offsets](Tape& tp, const Tensor& g) {
    const std::size_t d = g.cols();
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!tp.needs_grad(ids[k])) continue;
      Tensor& dx = tp.grad_slot(ids[k]);
      for (std::size_t i = 0; i < dx.rows(); ++i)
        for (std::size_t j = 0; j < d; ++j) dx(i, j) += g(offsets[k] + i, j);
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols of nothing");
  Tape& t = tape_of(parts[0]);
  const std::size_t m = t.value(parts[0]).rows();
  std::size_t total = 0;
  std::vector<std::size_t> ids, offsets;
  for (Var p : parts) {
    tape_of(parts[0], p);
    require_shape(t.value(p).rank() == 2 && t.value(p).rows() == m, "concat_cols height mismatch");
    ids.push_back(p.id);
    offsets.push_back(total);
    total += t.value(p).cols();
  }
  Tensor out({m, total});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& x = t.value(parts[k]);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) out(i, offsets[k] + j) = x(i, j);
  }
  return t.record(std::move(out), ids, [ids, offsets](Tape& tp, const Tensor& g) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!tp.needs_grad(ids[k])) continue;
      Tensor& dx = tp.grad_slot(ids[k]);
      for (std::size_t i = 0; i < dx.rows(); ++i)
        for (std::size_t j = 0; j < dx.cols(); ++j) dx(i, j) += g(i, offsets[k] + j);
    }
  });
}

Var reshape(Var a, std::vector<std::size_t> shape) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id;
  return t.record(t.value(a).reshaped(std::move(shape)), {ia}, [ia](Tape& tp, const Tensor& g) {
    tp.accumulate(ia, g.reshaped(tp.value(Var{&tp, ia}).shape()));
  });
}

Var gather_cols(Var a, std::span<const int> cols) {
  Tape& t = tape_of(a);
  const Tensor& x = t.value(a);
  require_matrix(x, "gather_cols");
  require_shape(cols.size() == x.rows(), "gather_cols: index count mismatch");
  std::vector<int> idx(cols.begin(), cols.end());
  Tensor out({x.rows(), 1});
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= x.cols())
      throw IndexError("gather_cols index " + std::to_string(idx[i]) + " out of range");
    out(i, 0) = x(i, idx[i]);
  }
  const std::size_t ia = a.id;
  return t.record(std::move(out), {ia}, [ia, idx = std::move(idx)](Tape& tp, const Tensor& g) {
    Tensor& dx = tp.grad_slot(ia);
    for (std::size_t i = 0; i < idx.size(); ++i) dx(i, idx[i]) += g(i, 0);
  });
}

Var segment_sum(Var a, std::span<const int> segment, std::span<const double> weight,
                std::size_t n_segments) {
  Tape& t = tape_of(a);
  const Tensor& x = t.value(a);
  require_shape(x.rank() == 2 && x.cols() == 1, "segment_sum expects a column vector");
  require_shape(segment.size() == x.rows() && weight.size() == x.rows(),
                "segment_sum: segment/weight length mismatch");
  std::vector<int> seg(segment.begin(), segment.end());
  std::vector<double> w(weight.begin(), weight.end());
  Tensor out({n_segments, 1});
  for (std::size_t i = 0; i < seg.size(); ++i) {
    if (seg[i] < 0) continue;
    if (static_cast<std::size_t>(seg[i]) >= n_segments)
      throw IndexError("segment id out of range");
    out(seg[i], 0) += w[i] * x(i, 0);
  }
  const std::size_t ia = a.id;
  return t.record(std::move(out), {ia},
                  [ia, seg = std::move(seg), w = std::move(w)](Tape& tp, const Tensor& g) {
                    Tensor& dx = tp.grad_slot(ia);
                    for (std::size_t i = 0; i < seg.size(); ++i)
                      if (seg[i] >= 0) dx(i, 0) += w[i] * g(seg[i], 0);
                  });
}

Var log_sigmoid(Var a) {
  Tape& t = tape_of(a);
  Tensor y = t.value(a);
  for (double& v : y.raw()) v = std::min(v, 0.0) - std::log1p(std::exp(-std::fabs(v)));
  const std::size_t ia = a.id;
  return t.record(std::move(y), {ia}, [ia](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(Var{&tp, ia});
    Tensor dx = Tensor::zeros_like(x);
    for (std::size_t i = 0; i < x.size(); ++i) {
      // d/dx log sigma(x) = sigma(-x)
      const double v = x[i];
      const double s = v >= 0 ? std::exp(-v) / (1.0 + std::exp(-v)) : 1.0 / (1.0 + std::exp(v));
      dx[i] = g[i] * s;
    }
    tp.accumulate(ia, dx);
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id;
  return t.record(Tensor::scalar(sum(t.value(a))), {ia}, [ia](Tape& tp, const Tensor& g) {
    Tensor dx = Tensor::zeros_like(tp.value(Var{&tp, ia}));
    for (double& v : dx.raw()) v = g[0];
    tp.accumulate(ia, dx);
  });
}

MaskedLoss cross_entropy_logits(Var logits, std::span<const int> targets,
                                std::span<const std::uint8_t> mask) {
  Tape& t = tape_of(logits);
  require_shape(mask.size() == targets.size(), "cross_entropy_logits: mask length mismatch");
  Var rows = cross_entropy_rows(logits, targets);
  std::size_t count = 0;
  for (auto m : mask) count += m ? 1 : 0;
  if (count == 0) return {t.constant(Tensor::scalar(0.0)), true};
  std::vector<int> seg(mask.size(), -1);
  std::vector<double> w(mask.size(), 0.0);
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      seg[i] = 0;
      w[i] = 1.0 / static_cast<double>(count);
    }
  return {reshape(segment_sum(rows, seg, w, 1), {1}), false};
}

}  // namespace varlora
