#include "textscene/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "textscene/error.hpp"

namespace textscene::ad {

const Tensor& Var::value() const {
  if (!tape_) throw UsageError("use of an unbound Var");
  return tape_->value(index_);
}

double Var::item() const {
  const auto& v = value();
  if (v.size() != 1) throw UsageError("item() on non-scalar of shape " + shape_string(v.shape));
  return v.data[0];
}

Var Tape::leaf(Tensor& param) {
  Node n;
  n.ref = &param;
  n.param = &param;
  n.needs_grad = param.requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::view(const Tensor& value) {
  Node n;
  n.ref = &value;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::vector<int> inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  for (int i : inputs) n.needs_grad = n.needs_grad || nodes_[static_cast<std::size_t>(i)].needs_grad;
  n.inputs = std::move(inputs);
  if (n.needs_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

const Tensor& Tape::value(int i) const {
  const auto& n = nodes_[static_cast<std::size_t>(i)];
  return n.ref ? *n.ref : n.value;
}

std::span<const double> Tape::grad(int i) const { return nodes_[static_cast<std::size_t>(i)].grad; }

std::span<double> Tape::accum(int i) {
  auto& n = nodes_[static_cast<std::size_t>(i)];
  if (n.grad.empty()) n.grad.assign(value(i).size(), 0.0);
  return n.grad;
}

void Tape::clear() { nodes_.clear(); }

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw UsageError("backward: loss was not recorded on this tape");
  if (loss.size() != 1) {
    throw UsageError("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
  }
  for (auto& n : nodes_) n.grad.clear();
  const auto root = static_cast<std::size_t>(loss.index());
  if (!nodes_[root].needs_grad) return;
  nodes_[root].grad.assign(1, 1.0);
  for (std::size_t k = root + 1; k-- > 0;) {
    auto& n = nodes_[k];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(*this, static_cast<int>(k));
    if (n.param && n.param->requires_grad) {
      auto& g = n.param->grad;
      if (g.empty()) g.assign(n.param->size(), 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  }
}

namespace {

Tape& same_tape(const Var& a, const Var& b, const char* op) {
  if (!a.valid() || a.tape() != b.tape()) {
    throw UsageError(std::string(op) + ": operands must live on the same tape");
  }
  return *a.tape();
}

void require_same_matrix(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw UsageError(std::string(op) + ": shape mismatch " + shape_string(a.shape) + " vs " +
                     shape_string(b.shape));
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  auto& t = same_tape(a, b, "add");
  const auto& av = a.value();
  const auto& bv = b.value();
  require_same_matrix(av, bv, "add");
  Tensor out(av.shape, av.data);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv.data[i];
  const int ia = a.index(), ib = b.index();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& tp, int self) {
    const auto g = tp.grad(self);
    if (tp.needs_grad(ia)) {
      auto ga = tp.accum(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.needs_grad(ib)) {
      auto gb = tp.accum(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  auto& t = same_tape(a, b, "sub");
  const auto& av = a.value();
  const auto& bv = b.value();
  require_same_matrix(av, bv, "sub");
  Tensor out(av.shape, av.data);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= bv.data[i];
  const int ia = a.index(), ib = b.index();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& tp, int self) {
    const auto g = tp.grad(self);
    if (tp.needs_grad(ia)) {
      auto ga = tp.accum(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.needs_grad(ib)) {
      auto gb = tp.accum(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  auto& t = same_tape(a, b, "mul");
  const auto& av = a.value();
  const auto& bv = b.value();
  require_same_matrix(av, bv, "mul");
  Tensor out(av.shape, av.data);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv.data[i];
  const int ia = a.index(), ib = b.index();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& tp, int self) {
    const auto g = tp.grad(self);
    const auto& x = tp.value(ia).data;
    const auto& y = tp.value(ib).data;
    if (tp.needs_grad(ia)) {
      auto ga = tp.accum(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    }
    if (tp.needs_grad(ib)) {
      auto gb = tp.accum(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
    }
  });
}

Var scale(const Var& a, double s) {
  const auto& av = a.value();
  Tensor out(av.shape, av.data);
  for (auto& v : out.data) v *= s;
  const int ia = a.index();
  return a.tape()->record(std::move(out), {ia}, [ia, s](Tape& tp, int self) {
    const auto g = tp.grad(self);
    auto ga = tp.accum(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

Var relu(const Var& a) {
  const auto& av = a.value();
  Tensor out(av.shape, av.data);
  for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
  const int ia = a.index();
  return a.tape()->record(std::move(out), {ia}, [ia](Tape& tp, int self) {
    const auto g = tp.grad(self);
    const auto& x = tp.value(ia).data;
    auto ga = tp.accum(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) ga[i] += g[i];
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  auto& t = same_tape(a, b, "matmul");
  const auto& av = a.value();
  const auto& bv = b.value();
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) {
    throw UsageError("matmul: inner dimensions differ " + shape_string(av.shape) + " x " +
                     shape_string(bv.shape));
  }
  Tensor out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* o = out.data.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av.data[i * k + p];
      if (x == 0.0) continue;
      const double* brow = bv.data.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += x * brow[j];
    }
  }
  const int ia = a.index(), ib = b.index();
  return t.record(std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape& tp, int self) {
    const auto g = tp.grad(self);
    const auto& x = tp.value(ia).data;
    const auto& y = tp.value(ib).data;
    if (tp.needs_grad(ia)) {
      auto ga = tp.accum(ia);
      for (std::size_t i = 0; i < m; ++i) {
        const double* gi = g.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double* yp = y.data() + p * n;
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += gi[j] * yp[j];
          ga[i * k + p] += s;
        }
      }
    }
    if (tp.needs_grad(ib)) {
      auto gb = tp.accum(ib);
      for (std::size_t i = 0; i < m; ++i) {
        const double* gi = g.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double xv = x[i * k + p];
          if (xv == 0.0) continue;
          double* gp = gb.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) gp[j] += xv * gi[j];
        }
      }
    }
  });
}

Var transpose(const Var& a) {
  const auto& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out.data[j * r + i] = av.data[i * c + j];
  }
  const int ia = a.index();
  return a.tape()->record(std::move(out), {ia}, [ia, r, c](Tape& tp, int self) {
    const auto g = tp.grad(self);
    auto ga = tp.accum(ia);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  const auto& av = a.value();
  if (shape_size(shape) != av.size()) {
    throw UsageError("reshape: " + shape_string(av.shape) + " -> " + shape_string(shape));
  }
  Tensor out(std::move(shape), av.data);
  const int ia = a.index();
  return a.tape()->record(std::move(out), {ia}, [ia](Tape& tp, int self) {
    const auto g = tp.grad(self);
    auto ga = tp.accum(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var sum(const Var& a) {
  const auto& av = a.value();
  double s = 0.0;
  for (double v : av.data) s += v;
  const int ia = a.index();
  return a.tape()->record(Tensor::scalar(s), {ia}, [ia](Tape& tp, int self) {
    const double g = tp.grad(self)[0];
    for (auto& v : tp.accum(ia)) v += g;
  });
}

Var mean(const Var& a) {
  const auto& av = a.value();
  double s = 0.0;
  for (double v : av.data) s += v;
  const double inv = 1.0 / static_cast<double>(av.size());
  const int ia = a.index();
  return a.tape()->record(Tensor::scalar(s * inv), {ia}, [ia, inv](Tape& tp, int self) {
    const double g = tp.grad(self)[0] * inv;
    for (auto& v : tp.accum(ia)) v += g;
  });
}

Var mean_rows(const Var& a) {
  const auto& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  if (r == 0) throw UsageError("mean_rows: empty input");
  Tensor out(Shape{1, c});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out.data[j] += av.data[i * c + j];
  }
  const double inv = 1.0 / static_cast<double>(r);
  for (auto& v : out.data) v *= inv;
  const int ia = a.index();
  return a.tape()->record(std::move(out), {ia}, [ia, r, c, inv](Tape& tp, int self) {
    const auto g = tp.grad(self);
    auto ga = tp.accum(ia);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j] * inv;
    }
  });
}

Var row_normalize(const Var& a) {
  const auto& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out(av.shape, av.data);
  std::vector<double> norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += av.data[i * c + j] * av.data[i * c + j];
    const double nrm = std::sqrt(s);
    if (!(nrm > 0.0)) {
      throw UsageError("cosine similarity undefined: row " + std::to_string(i) + " has zero norm");
    }
    norms[i] = nrm;
    for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] /= nrm;
  }
  const int ia = a.index();
  return a.tape()->record(std::move(out), {ia}, [ia, r, c, norms = std::move(norms)](Tape& tp, int self) {
    const auto g = tp.grad(self);
    const auto& y = tp.value(self).data;
    auto ga = tp.accum(ia);
    for (std::size_t i = 0; i < r; ++i) {
      double yg = 0.0;
      for (std::size_t j = 0; j < c; ++j) yg += y[i * c + j] * g[i * c + j];
      for (std::size_t j = 0; j < c; ++j) {
        ga[i * c + j] += (g[i * c + j] - y[i * c + j] * yg) / norms[i];
      }
    }
  });
}

Var cosine_sim(const Var& a, const Var& b) {
  if (a.size() != b.size() || a.size() == 0) {
    throw UsageError("cosine_sim: vectors must have equal positive length");
  }
  const Shape row{1, a.size()};
  auto an = row_normalize(reshape(a, row));
  auto bn = row_normalize(reshape(b, row));
  return sum(mul(an, bn));
}

Var row_max(const Var& a) {
  const auto& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out(Shape{r, 1});
  std::vector<std::size_t> arg(r);
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (av.data[i * c + j] > av.data[i * c + best]) best = j;
    }
    arg[i] = best;
    out.data[i] = av.data[i * c + best];
  }
  const int ia = a.index();
  return a.tape()->record(std::move(out), {ia}, [ia, c, arg = std::move(arg)](Tape& tp, int self) {
    const auto g = tp.grad(self);
    auto ga = tp.accum(ia);
    for (std::size_t i = 0; i < arg.size(); ++i) ga[i * c + arg[i]] += g[i];
  });
}

namespace {

// Softmax of each row restricted to columns [0, limit(i)).
template <typename Limit>
Var softmax_rows_impl(const Var& a, Limit limit) {
  const auto& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  for (double v : av.data) {
    if (!std::isfinite(v)) throw NumericalError("softmax: non-finite input");
  }
  Tensor out(av.shape, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t n = limit(i);
    const double* x = av.data.data() + i * c;
    double* y = out.data.data() + i * c;
    double mx = x[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  const int ia = a.index();
  return a.tape()->record(std::move(out), {ia}, [ia, r, c, limit](Tape& tp, int self) {
    const auto g = tp.grad(self);
    const auto& y = tp.value(self).data;
    auto ga = tp.accum(ia);
    for (std::size_t i = 0; i < r; ++i) {
      const std::size_t n = limit(i);
      double gy = 0.0;
      for (std::size_t j = 0; j < n; ++j) gy += g[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < n; ++j) ga[i * c + j] += y[i * c + j] * (g[i * c + j] - gy);
    }
  });
}

}  // namespace

Var softmax_rows(const Var& a) {
  if (a.size() == 0) throw UsageError("softmax: empty input");
  const std::size_t c = a.cols();
  return softmax_rows_impl(a, [c](std::size_t) { return c; });
}

Var causal_softmax_rows(const Var& a) {
  if (a.size() == 0) throw UsageError("softmax: empty input");
  const std::size_t c = a.cols();
  return softmax_rows_impl(a, [c](std::size_t i) { return std::min(i + 1, c); });
}

Var cross_entropy_logits(const Var& logits, std::span<const std::size_t> targets) {
  const auto& lv = logits.value();
  const std::size_t r = lv.rows(), c = lv.cols();
  if (targets.size() != r) {
    throw UsageError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(r) + " positions");
  }
  std::vector<double> probs(lv.size());
  double total = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    if (targets[i] >= c) {
      throw UsageError("cross_entropy: target " + std::to_string(targets[i]) +
                       " out of range for vocabulary of " + std::to_string(c));
    }
    const double* x = lv.data.data() + i * c;
    double mx = x[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(x[j] - mx);
      z += probs[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    total += (std::log(z) + mx) - x[targets[i]];
  }
  if (!std::isfinite(total)) throw NumericalError("cross_entropy: non-finite loss");
  const double inv = 1.0 / static_cast<double>(r);
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  const int il = logits.index();
  return logits.tape()->record(
      Tensor::scalar(total * inv), {il},
      [il, c, inv, probs = std::move(probs), tg = std::move(tg)](Tape& tp, int self) {
        const double g = tp.grad(self)[0] * inv;
        auto gl = tp.accum(il);
        for (std::size_t i = 0; i < tg.size(); ++i) {
          for (std::size_t j = 0; j < c; ++j) gl[i * c + j] += g * probs[i * c + j];
          gl[i * c + tg[i]] -= g;
        }
      });
}

Var scale_rows(const Var& a, const Var& w) {
  auto& t = same_tape(a, w, "scale_rows");
  const auto& av = a.value();
  const auto& wv = w.value();
  const std::size_t r = av.rows(), c = av.cols();
  if (wv.size() != r) throw UsageError("scale_rows: need one weight per row");
  Tensor out(Shape{r, c});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] = av.data[i * c + j] * wv.data[i];
  }
  const int ia = a.index(), iw = w.index();
  return t.record(std::move(out), {ia, iw}, [ia, iw, r, c](Tape& tp, int self) {
    const auto g = tp.grad(self);
    const auto& x = tp.value(ia).data;
    const auto& wd = tp.value(iw).data;
    if (tp.needs_grad(ia)) {
      auto ga = tp.accum(ia);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i * c + j] * wd[i];
      }
    }
    if (tp.needs_grad(iw)) {
      auto gw = tp.accum(iw);
      for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += g[i * c + j] * x[i * c + j];
        gw[i] += s;
      }
    }
  });
}

Var gather_rows(const Var& table, std::span<const std::size_t> ids) {
  const auto& tv = table.value();
  const std::size_t r = tv.rows(), c = tv.cols();
  if (ids.empty()) throw UsageError("gather_rows: no ids");
  Tensor out(Shape{ids.size(), c});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= r) {
      throw UsageError("gather_rows: id " + std::to_string(ids[i]) + " out of range for " +
                       std::to_string(r) + " rows");
    }
    std::copy_n(tv.data.data() + ids[i] * c, c, out.data.data() + i * c);
  }
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  const int it = table.index();
  return table.tape()->record(std::move(out), {it}, [it, c, idv = std::move(idv)](Tape& tp, int self) {
    const auto g = tp.grad(self);
    auto gt = tp.accum(it);
    for (std::size_t i = 0; i < idv.size(); ++i) {
      for (std::size_t j = 0; j < c; ++j) gt[idv[i] * c + j] += g[i * c + j];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw UsageError("concat_rows: no inputs");
  Tape* t = parts[0].tape();
  const std::size_t c = parts[0].cols();
  std::size_t total = 0;
  std::vector<int> inputs;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.tape() != t) throw UsageError("concat_rows: operands must live on the same tape");
    if (p.cols() != c) throw UsageError("concat_rows: column count mismatch");
    inputs.push_back(p.index());
    offsets.push_back(total);
    total += p.rows();
  }
  Tensor out(Shape{total, c});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(offsets[k] * c));
  }
  auto in_copy = inputs;
  return t->record(std::move(out), std::move(inputs),
                   [ins = std::move(in_copy), offsets = std::move(offsets), c](Tape& tp, int self) {
                     const auto g = tp.grad(self);
                     for (std::size_t k = 0; k < ins.size(); ++k) {
                       if (!tp.needs_grad(ins[k])) continue;
                       auto gk = tp.accum(ins[k]);
                       const double* src = g.data() + offsets[k] * c;
                       for (std::size_t i = 0; i < gk.size(); ++i) gk[i] += src[i];
                     }
                   });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t count) {
  const auto& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  if (count == 0 || begin + count > r) {
    throw UsageError("slice_rows: rows [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of range for " + std::to_string(r));
  }
  Tensor out(Shape{count, c});
  std::copy_n(av.data.data() + begin * c, count * c, out.data.data());
  const int ia = a.index();
  return a.tape()->record(std::move(out), {ia}, [ia, begin, c](Tape& tp, int self) {
    const auto g = tp.grad(self);
    auto ga = tp.accum(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[begin * c + i] += g[i];
  });
}

double cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) {
    throw UsageError("cosine_sim: vectors must have equal positive length");
  }
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (!(aa > 0.0) || !(bb > 0.0)) throw UsageError("cosine similarity undefined for a zero vector");
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

std::vector<double> softmax(std::span<const double> v) {
  if (v.empty()) throw UsageError("softmax: empty input");
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericalError("softmax: non-finite input");
    mx = std::max(mx, x);
  }
  std::vector<double> out(v.size());
  double z = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    z += out[i];
  }
  for (auto& x : out) x /= z;
  return out;
}

}  // namespace textscene::ad
