#include "splatnorm/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace splatnorm {
namespace {

void check_finite(const Tensor& t, const char* op) {
  int64_t bad = t.first_non_finite();
  if (bad >= 0)
    throw std::runtime_error(std::string(op) + " produced non-finite value at flat index " +
                             std::to_string(bad));
}

Tape* check_same_tape(Var a, Var b, const char* op) {
  if (!a.defined() || !b.defined())
    throw std::invalid_argument(std::string(op) + " on undefined variable");
  if (a.tape() != b.tape())
    throw std::invalid_argument(std::string(op) + " mixes variables from different tapes");
  return a.tape();
}

// Trailing-dimension broadcast plan: per-output-dim element strides into each
// source (0 where the source extent is 1 and the output extent is not).
struct Bcast {
  Shape out;
  std::vector<int64_t> stride_a;
  std::vector<int64_t> stride_b;
  int64_t n = 0;
  bool same_shape = false;
};

Bcast make_bcast(const Shape& a, const Shape& b, const char* op) {
  int ra = static_cast<int>(a.size());
  int rb = static_cast<int>(b.size());
  int ro = std::max(ra, rb);
  Bcast bc;
  bc.out.resize(ro);
  for (int i = 0; i < ro; ++i) {
    int64_t da = (i >= ro - ra) ? a[i - (ro - ra)] : 1;
    int64_t db = (i >= ro - rb) ? b[i - (ro - rb)] : 1;
    if (da != db && da != 1 && db != 1)
      throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(a) + " and " +
                                  shape_str(b) + " do not broadcast");
    bc.out[i] = std::max(da, db);
  }
  bc.stride_a.assign(ro, 0);
  bc.stride_b.assign(ro, 0);
  int64_t s = 1;
  for (int i = ra - 1; i >= 0; --i) {
    int o = i + (ro - ra);
    bc.stride_a[o] = (a[i] == 1 && bc.out[o] != 1) ? 0 : s;
    s *= a[i];
  }
  s = 1;
  for (int i = rb - 1; i >= 0; --i) {
    int o = i + (ro - rb);
    bc.stride_b[o] = (b[i] == 1 && bc.out[o] != 1) ? 0 : s;
    s *= b[i];
  }
  bc.n = shape_numel(bc.out);
  bc.same_shape = (a == b);
  return bc;
}

// Calls f(out_index, a_index, b_index) in row-major output order.
template <class F>
void bcast_walk(const Bcast& bc, F&& f) {
  if (bc.same_shape) {
    for (int64_t k = 0; k < bc.n; ++k) f(k, k, k);
    return;
  }
  int ro = static_cast<int>(bc.out.size());
  if (ro == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<int64_t> idx(ro, 0);
  int64_t ia = 0, ib = 0;
  for (int64_t k = 0; k < bc.n; ++k) {
    f(k, ia, ib);
    for (int d = ro - 1; d >= 0; --d) {
      ++idx[d];
      ia += bc.stride_a[d];
      ib += bc.stride_b[d];
      if (idx[d] < bc.out[d]) break;
      idx[d] = 0;
      ia -= bc.stride_a[d] * bc.out[d];
      ib -= bc.stride_b[d] * bc.out[d];
    }
  }
}

int normalize_axis(const Shape& shape, int axis, const char* op) {
  int r = static_cast<int>(shape.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw std::invalid_argument(std::string(op) + ": axis out of range for " + shape_str(shape));
  return axis;
}

// outer * extent * inner decomposition around one axis.
struct AxisSplit {
  int64_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_or_keep_axis(const Shape& shape, int axis, bool keepdim) {
  Shape out = shape;
  if (keepdim)
    out[axis] = 1;
  else
    out.erase(out.begin() + axis);
  return out;
}

}  // namespace

const Tensor& Var::value() const {
  if (!defined()) throw std::runtime_error("value() on undefined variable");
  return tape_->value_of(id_);
}

const Tensor& Var::grad() const {
  if (!defined()) throw std::runtime_error("grad() on undefined variable");
  return tape_->grad_of(id_);
}

Var Tape::leaf(Tensor value) {
  check_finite(value, "leaf");
  NodeRec rec;
  rec.value = std::move(value);
  rec.requires_grad = true;
  nodes_.push_back(std::move(rec));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  check_finite(value, "constant");
  NodeRec rec;
  rec.value = std::move(value);
  rec.requires_grad = false;
  nodes_.push_back(std::move(rec));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::node(Tensor value, const std::vector<Var>& parents, BackwardFn backward,
               const char* op_name) {
  check_finite(value, op_name);
  NodeRec rec;
  rec.value = std::move(value);
  rec.parents.reserve(parents.size());
  for (const Var& p : parents) {
    if (p.tape() != this)
      throw std::invalid_argument(std::string(op_name) + ": parent from another tape");
    rec.parents.push_back(p.id());
    rec.requires_grad = rec.requires_grad || nodes_[p.id()].requires_grad;
  }
  if (rec.requires_grad) rec.back = std::move(backward);
  nodes_.push_back(std::move(rec));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

const Tensor& Tape::value_of(int id) const { return nodes_.at(id).value; }

bool Tape::requires_grad(int id) const { return nodes_.at(id).requires_grad; }

bool Tape::has_grad(int id) const { return nodes_.at(id).grad_live; }

const Tensor& Tape::grad_of(int id) const {
  const NodeRec& rec = nodes_.at(id);
  if (!rec.grad_live) throw std::runtime_error("gradient not populated; run backward first");
  return rec.grad;
}

Tensor& Tape::grad_buffer(int id) {
  NodeRec& rec = nodes_.at(id);
  if (!rec.grad_live) {
    rec.grad = Tensor::zeros(rec.value.shape());
    rec.grad_live = true;
  }
  return rec.grad;
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw std::invalid_argument("backward: root from another tape");
  if (root.value().numel() != 1)
    throw std::invalid_argument("backward requires a scalar root, got shape " +
                                shape_str(root.value().shape()));
  if (!nodes_[root.id()].requires_grad) return;

  // Ancestors of the root that carry gradient.
  std::vector<char> reach(nodes_.size(), 0);
  std::vector<int> stack{root.id()};
  reach[root.id()] = 1;
  while (!stack.empty()) {
    int id = stack.back();
    stack.pop_back();
    for (int p : nodes_[id].parents) {
      if (!reach[p] && nodes_[p].requires_grad) {
        reach[p] = 1;
        stack.push_back(p);
      }
    }
  }

  {
    Tensor& g = grad_buffer(root.id());
    g.unique_data()[0] = 1.0;
  }
  for (int id = root.id(); id >= 0; --id) {
    NodeRec& rec = nodes_[id];
    if (!reach[id] || !rec.grad_live || !rec.back) continue;
    rec.back(*this, rec.parents, rec.grad);
  }
  // Reachable nodes that never received a contribution hold exact zeros.
  for (size_t id = 0; id < nodes_.size(); ++id)
    if (reach[id] && !nodes_[id].grad_live) grad_buffer(static_cast<int>(id));
}

double scalar_of(Var v) { return v.value().scalar_value(); }

// ---------------- elementwise ----------------

namespace {

template <class FwdF, class DaF, class DbF>
Var binary_op(Var a, Var b, const char* name, FwdF f, DaF da, DbF db) {
  Tape& t = *check_same_tape(a, b, name);
  Tensor va = a.value(), vb = b.value();
  Bcast bc = make_bcast(va.shape(), vb.shape(), name);
  Tensor out(bc.out);
  {
    const double* pa = va.data();
    const double* pb = vb.data();
    double* po = out.unique_data();
    bcast_walk(bc, [&](int64_t k, int64_t ia, int64_t ib) { po[k] = f(pa[ia], pb[ib]); });
  }
  return t.node(
      std::move(out), {a, b},
      [va, vb, bc, da, db](Tape& tp, const std::vector<int>& ps, const Tensor& g) {
        const double* pg = g.data();
        const double* pa = va.data();
        const double* pb = vb.data();
        bool need_a = tp.requires_grad(ps[0]);
        bool need_b = tp.requires_grad(ps[1]);
        double* ga = need_a ? tp.grad_buffer(ps[0]).unique_data() : nullptr;
        double* gb = need_b ? tp.grad_buffer(ps[1]).unique_data() : nullptr;
        bcast_walk(bc, [&](int64_t k, int64_t ia, int64_t ib) {
          if (need_a) ga[ia] += pg[k] * da(pa[ia], pb[ib]);
          if (need_b) gb[ib] += pg[k] * db(pa[ia], pb[ib]);
        });
      },
      name);
}

// dy/dx expressed through input x and output y.
template <class FwdF, class DF>
Var unary_op(Var a, const char* name, FwdF f, DF df) {
  if (!a.defined()) throw std::invalid_argument(std::string(name) + " on undefined variable");
  Tape& t = *a.tape();
  Tensor va = a.value();
  int64_t n = va.numel();
  Tensor out(va.shape());
  {
    const double* pa = va.data();
    double* po = out.unique_data();
    for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i]);
  }
  Tensor vo = out;
  return t.node(
      std::move(out), {a},
      [va, vo, n, df](Tape& tp, const std::vector<int>& ps, const Tensor& g) {
        if (!tp.requires_grad(ps[0])) return;
        double* ga = tp.grad_buffer(ps[0]).unique_data();
        const double* pg = g.data();
        const double* pa = va.data();
        const double* po = vo.data();
        for (int64_t i = 0; i < n; ++i) ga[i] += pg[i] * df(pa[i], po[i]);
      },
      name);
}

void require_domain(const Tensor& v, const char* op, bool allow_zero) {
  const double* p = v.data();
  for (int64_t i = 0; i < v.numel(); ++i) {
    if (p[i] < 0.0 || (!allow_zero && p[i] == 0.0))
      throw std::invalid_argument(std::string(op) + " of non-positive value " +
                                  std::to_string(p[i]) + " at flat index " + std::to_string(i));
  }
}

}  // namespace

Var add(Var a, Var b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Var div(Var a, Var b) {
  return binary_op(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Var add_const(Var a, double c) {
  return unary_op(
      a, "add_const", [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var scale(Var a, double c) {
  return unary_op(
      a, "scale", [c](double x) { return x * c; }, [c](double, double) { return c; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var exp(Var a) {
  return unary_op(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  require_domain(a.value(), "log", /*allow_zero=*/false);
  return unary_op(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sqrt(Var a) {
  require_domain(a.value(), "sqrt", /*allow_zero=*/true);
  return unary_op(
      a, "sqrt", [](double x) { return std::sqrt(x); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Var sigmoid(Var a) {
  return unary_op(
      a, "sigmoid",
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return unary_op(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var abs(Var a) {
  return unary_op(
      a, "abs", [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var cos(Var a) {
  return unary_op(
      a, "cos", [](double x) { return std::cos(x); },
      [](double x, double) { return -std::sin(x); });
}

Var sin(Var a) {
  return unary_op(
      a, "sin", [](double x) { return std::sin(x); },
      [](double x, double) { return std::cos(x); });
}

Var tanh(Var a) {
  return unary_op(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var pow_const(Var a, double p) {
  return unary_op(
      a, "pow_const", [p](double x) { return std::pow(x, p); },
      [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

Var square(Var a) {
  return unary_op(
      a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// ---------------- reductions ----------------

Var sum_all(Var a) {
  Tape& t = *a.tape();
  const Tensor& va = a.value();
  int64_t n = va.numel();
  const double* pa = va.data();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += pa[i];
  return t.node(
      Tensor::scalar(acc), {a},
      [n](Tape& tp, const std::vector<int>& ps, const Tensor& g) {
        if (!tp.requires_grad(ps[0])) return;
        double gv = g.data()[0];
        double* ga = tp.grad_buffer(ps[0]).unique_data();
        for (int64_t i = 0; i < n; ++i) ga[i] += gv;
      },
      "sum_all");
}

Var mean_all(Var a) {
  int64_t n = a.value().numel();
  if (n == 0) throw std::invalid_argument("mean_all of empty tensor");
  return scale(sum_all(a), 1.0 / static_cast<double>(n));
}

Var min_all(Var a) {
  Tape& t = *a.tape();
  const Tensor& va = a.value();
  int64_t n = va.numel();
  if (n == 0) throw std::invalid_argument("min_all of empty tensor");
  const double* pa = va.data();
  int64_t arg = 0;
  for (int64_t i = 1; i < n; ++i)
    if (pa[i] < pa[arg]) arg = i;
  return t.node(
      Tensor::scalar(pa[arg]), {a},
      [arg](Tape& tp, const std::vector<int>& ps, const Tensor& g) {
        if (!tp.requires_grad(ps[0])) return;
        tp.grad_buffer(ps[0]).unique_data()[arg] += g.data()[0];
      },
      "min_all");
}

namespace {

template <bool kMin>
Var extreme_axis(Var a, int axis, bool keepdim, const char* name) {
  Tape& t = *a.tape();
  const Tensor& va = a.value();
  axis = normalize_axis(va.shape(), axis, name);
  AxisSplit sp = split_axis(va.shape(), axis);
  if (sp.extent == 0) throw std::invalid_argument(std::string(name) + " over empty axis");
  Shape out_shape = drop_or_keep_axis(va.shape(), axis, keepdim);
  Tensor out(out_shape);
  auto args = std::make_shared<std::vector<int64_t>>(sp.outer * sp.inner);
  {
    const double* pa = va.data();
    double* po = out.unique_data();
    for (int64_t o = 0; o < sp.outer; ++o) {
      for (int64_t in = 0; in < sp.inner; ++in) {
        int64_t base = (o * sp.extent) * sp.inner + in;
        int64_t best = 0;
        double bv = pa[base];
        for (int64_t e = 1; e < sp.extent; ++e) {
          double v = pa[base + e * sp.inner];
          if (kMin ? (v < bv) : (v > bv)) {
            bv = v;
            best = e;
          }
        }
        po[o * sp.inner + in] = bv;
        (*args)[o * sp.inner + in] = best;
      }
    }
  }
  return t.node(
      std::move(out), {a},
      [sp, args](Tape& tp, const std::vector<int>& ps, const Tensor& g) {
        if (!tp.requires_grad(ps[0])) return;
        double* ga = tp.grad_buffer(ps[0]).unique_data();
        const double* pg = g.data();
        for (int64_t o = 0; o < sp.outer; ++o)
          for (int64_t in = 0; in < sp.inner; ++in) {
            int64_t k = o * sp.inner + in;
            ga[(o * sp.extent + (*args)[k]) * sp.inner + in] += pg[k];
          }
      },
      name);
}

}  // namespace

Var sum_axis(Var a, int axis, bool keepdim) {
  Tape& t = *a.tape();
  const Tensor& va = a.value();
  axis = normalize_axis(va.shape(), axis, "sum_axis");
  AxisSplit sp = split_axis(va.shape(), axis);
  Shape out_shape = drop_or_keep_axis(va.shape(), axis, keepdim);
  Tensor out(out_shape);
  {
    const double* pa = va.data();
    double* po = out.unique_data();
    for (int64_t o = 0; o < sp.outer; ++o)
      for (int64_t e = 0; e < sp.extent; ++e) {
        int64_t base = (o * sp.extent + e) * sp.inner;
        for (int64_t in = 0; in < sp.inner; ++in) po[o * sp.inner + in] += pa[base + in];
      }
  }
  return t.node(
      std::move(out), {a},
      [sp](Tape& tp, const std::vector<int>& ps, const Tensor& g) {
        if (!tp.requires_grad(ps[0])) return;
        double* ga = tp.grad_buffer(ps[0]).unique_data();
        const double* pg = g.data();
        for (int64_t o = 0; o < sp.outer; ++o)
          for (int64_t e = 0; e < sp.extent; ++e) {
            int64_t base = (o * sp.extent + e) * sp.inner;
            for (int64_t in = 0; in < sp.inner; ++in) ga[base + in] += pg[o * sp.inner + in];
          }
      },
      "sum_axis");
}

Var mean_axis(Var a, int axis, bool keepdim) {
  int ax = normalize_axis(a.value().shape(), axis, "mean_axis");
  int64_t n = a.value().shape()[ax];
  if (n == 0) throw std::invalid_argument("mean_axis over empty axis");
  return scale(sum_axis(a, ax, keepdim), 1.0 / static_cast<double>(n));
}

Var min_axis(Var a, int axis, bool keepdim) { return extreme_axis<true>(a, axis, keepdim, "min_axis"); }
Var max_axis(Var a, int axis, bool keepdim) { return extreme_axis<false>(a, axis, keepdim, "max_axis"); }

// ---------------- structural ----------------

Var reshape(Var a, Shape shape) {
  Tape& t = *a.tape();
  Tensor out = a.value().reshaped(shape);
  Shape in_shape = a.value().shape();
  return t.node(
      std::move(out), {a},
      [in_shape](Tape& tp, const std::vector<int>& ps, const Tensor& g) {
        if (!tp.requires_grad(ps[0])) return;
        double* ga = tp.grad_buffer(ps[0]).unique_data();
        const double* pg = g.data();
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += pg[i];
      },
      "reshape");
}

Var slice(Var a, int axis, int64_t start, int64_t len) {
  Tape& t = *a.tape();
  const Tensor& va = a.value();
  axis = normalize_axis(va.shape(), axis, "slice");
  if (start < 0 || len < 0 || start + len > va.shape()[axis])
    throw std::invalid_argument("slice range [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") out of bounds for " +
                                shape_str(va.shape()));
  AxisSplit sp = split_axis(va.shape(), axis);
  Shape out_shape = va.shape();
  out_shape[axis] = len;
  Tensor out(out_shape);
  {
    const double* pa = va.data();
    double* po = out.unique_data();
    for (int64_t o = 0; o < sp.outer; ++o)
      for (int64_t e = 0; e < len; ++e) {
        const double* src = pa + ((o * sp.extent + start + e) * sp.inner);
        double* dst = po + ((o * len + e) * sp.inner);
        std::copy(src, src + sp.inner, dst);
      }
  }
  return t.node(
      std::move(out), {a},
      [sp, start, len](Tape& tp, const std::vector<int>& ps, const Tensor& g) {
        if (!tp.requires_grad(ps[0])) return;
        double* ga = tp.grad_buffer(ps[0]).unique_data();
        const double* pg = g.data();
        for (int64_t o = 0; o < sp.outer; ++o)
          for (int64_t e = 0; e < len; ++e) {
            const double* src = pg + ((o * len + e) * sp.inner);
            double* dst = ga + ((o * sp.extent + start + e) * sp.inner);
            for (int64_t in = 0; in < sp.inner; ++in) dst[in] += src[in];
          }
      },
      "slice");
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat of zero parts");
  Tape& t = *parts[0].tape();
  Shape ref = parts[0].value().shape();
  axis = normalize_axis(ref, axis, "concat");
  int64_t total = 0;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw std::invalid_argument("concat mixes tapes");
    Shape s = p.value().shape();
    if (s.size() != ref.size()) throw std::invalid_argument("concat rank mismatch");
    for (size_t i = 0; i < s.size(); ++i)
      if (static_cast<int>(i) != axis && s[i] != ref[i])
        throw std::invalid_argument("concat extent mismatch at axis " + std::to_string(i));
    total += s[axis];
  }
  Shape out_shape = ref;
  out_shape[axis] = total;
  AxisSplit osp = split_axis(out_shape, axis);
  Tensor out(out_shape);
  std::vector<int64_t> extents(parts.size());
  {
    double* po = out.unique_data();
    int64_t off = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
      const Tensor& v = parts[pi].value();
      int64_t ext = v.shape()[axis];
      extents[pi] = ext;
      const double* pa = v.data();
      for (int64_t o = 0; o < osp.outer; ++o)
        for (int64_t e = 0; e < ext; ++e) {
          const double* src = pa + ((o * ext + e) * osp.inner);
          double* dst = po + ((o * osp.extent + off + e) * osp.inner);
          std::copy(src, src + osp.inner, dst);
        }
      off += ext;
    }
  }
  return t.node(
      std::move(out), parts,
      [osp, extents](Tape& tp, const std::vector<int>& ps, const Tensor& g) {
        const double* pg = g.data();
        int64_t off = 0;
        for (size_t pi = 0; pi < ps.size(); ++pi) {
          int64_t ext = extents[pi];
          if (tp.requires_grad(ps[pi])) {
            double* ga = tp.grad_buffer(ps[pi]).unique_data();
            for (int64_t o = 0; o < osp.outer; ++o)
              for (int64_t e = 0; e < ext; ++e) {
                const double* src = pg + ((o * osp.extent + off + e) * osp.inner);
                double* dst = ga + ((o * ext + e) * osp.inner);
                for (int64_t in = 0; in < osp.inner; ++in) dst[in] += src[in];
              }
          }
          off += ext;
        }
      },
      "concat");
}

Var select(Var a, int axis, int64_t index) {
  // Copy: slice() appends a node, which may invalidate references into the tape.
  Shape out = a.value().shape();
  int ax = normalize_axis(out, axis, "select");
  Var sl = slice(a, ax, index, 1);
  out.erase(out.begin() + ax);
  return reshape(sl, out);
}

Var stack_last(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("stack_last of zero parts");
  Shape base = parts[0].value().shape();
  Shape unsq = base;
  unsq.push_back(1);
  std::vector<Var> reshaped;
  reshaped.reserve(parts.size());
  for (const Var& p : parts) {
    if (p.value().shape() != base) throw std::invalid_argument("stack_last shape mismatch");
    reshaped.push_back(reshape(p, unsq));
  }
  return concat(reshaped, static_cast<int>(unsq.size()) - 1);
}

Var transpose2d(Var a) {
  Tape& t = *a.tape();
  const Tensor& va = a.value();
  if (va.rank() != 2) throw std::invalid_argument("transpose2d needs rank 2");
  int64_t m = va.shape()[0], n = va.shape()[1];
  Tensor out({n, m});
  {
    const double* pa = va.data();
    double* po = out.unique_data();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) po[j * m + i] = pa[i * n + j];
  }
  return t.node(
      std::move(out), {a},
      [m, n](Tape& tp, const std::vector<int>& ps, const Tensor& g) {
        if (!tp.requires_grad(ps[0])) return;
        double* ga = tp.grad_buffer(ps[0]).unique_data();
        const double* pg = g.data();
        for (int64_t j = 0; j < n; ++j)
          for (int64_t i = 0; i < m; ++i) ga[i * n + j] += pg[j * m + i];
      },
      "transpose2d");
}

Var gather_rows(Var a, std::vector<int64_t> indices) {
  Tape& t = *a.tape();
  const Tensor& va = a.value();
  if (va.rank() < 1) throw std::invalid_argument("gather_rows needs rank >= 1");
  int64_t rows = va.shape()[0];
  int64_t inner = va.numel() / std::max<int64_t>(rows, 1);
  for (int64_t idx : indices)
    if (idx < 0 || idx >= rows)
      throw std::invalid_argument("gather_rows index " + std::to_string(idx) + " out of range");
  Shape out_shape = va.shape();
  out_shape[0] = static_cast<int64_t>(indices.size());
  Tensor out(out_shape);
  {
    const double* pa = va.data();
    double* po = out.unique_data();
    for (size_t r = 0; r < indices.size(); ++r)
      std::copy(pa + indices[r] * inner, pa + (indices[r] + 1) * inner, po + r * inner);
  }
  auto idx = std::make_shared<std::vector<int64_t>>(std::move(indices));
  return t.node(
      std::move(out), {a},
      [idx, inner](Tape& tp, const std::vector<int>& ps, const Tensor& g) {
        if (!tp.requires_grad(ps[0])) return;
        double* ga = tp.grad_buffer(ps[0]).unique_data();
        const double* pg = g.data();
        for (size_t r = 0; r < idx->size(); ++r) {
          double* dst = ga + (*idx)[r] * inner;
          const double* src = pg + r * inner;
          for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
      },
      "gather_rows");
}

}  // namespace splatnorm
