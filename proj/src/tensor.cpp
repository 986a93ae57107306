#include "ctrack/tensor.hpp"

#include <atomic>
#include <cmath>

#include "ctrack/kernels.hpp"

namespace ctrack {

namespace {

std::atomic<int64_t> g_next_id{1};
thread_local GradTape* tls_tape = nullptr;
thread_local bool tls_no_grad = false;

bool recording(std::initializer_list<const Tensor*> parents) {
  if (!tls_tape || tls_no_grad) return false;
  for (const Tensor* p : parents)
    if (p->requires_grad()) return true;
  return false;
}

bool recording(const std::vector<Tensor>& parents) {
  if (!tls_tape || tls_no_grad) return false;
  for (const Tensor& p : parents)
    if (p.requires_grad()) return true;
  return false;
}

void propagate_grad_flag(Tensor& out, std::initializer_list<const Tensor*> parents) {
  for (const Tensor* p : parents)
    if (p->requires_grad()) {
      out.set_requires_grad(true);
      return;
    }
}

const kern::Ops& K() { return kern::active(); }

// Raw (non-recording) helpers used by backward closures.
Tensor raw_matmul_nt(const Tensor& a, const Tensor& b) {
  Tensor out = Tensor::zeros({a.rows(), b.rows()});
  kern::matmul_nt(K(), a.ptr(), b.ptr(), out.raw().data(), a.rows(), a.cols(), b.rows());
  return out;
}

Tensor raw_matmul_tn(const Tensor& a, const Tensor& b) {
  Tensor out = Tensor::zeros({a.cols(), b.cols()});
  kern::matmul_tn(K(), a.ptr(), b.ptr(), out.raw().data(), a.cols(), a.rows(), b.cols());
  return out;
}

}  // namespace

// ---- Tensor ----

Tensor Tensor::make(Shape shape, std::vector<double> values) {
  for (int d : shape) CT_CHECK(d > 0, "tensor dimensions must be positive, got ", ctrack::shape_str(shape));
  CT_CHECK(int64_t(values.size()) == shape_numel(shape), "data length ", values.size(),
           " does not match shape ", ctrack::shape_str(shape));
  Tensor t;
  t.st_ = std::make_shared<Storage>();
  t.st_->shape = std::move(shape);
  t.st_->data = std::move(values);
  t.st_->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return t;
}

Tensor Tensor::zeros(Shape shape) {
  const size_t n = size_t(shape_numel(shape));
  return make(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double v) {
  const size_t n = size_t(shape_numel(shape));
  return make(std::move(shape), std::vector<double>(n, v));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  return make(std::move(shape), std::move(values));
}

Tensor Tensor::scalar(double v) { return make({1}, {v}); }

double Tensor::item() const {
  CT_CHECK(numel() == 1, "item() requires a scalar tensor, got shape ", shape_str());
  return st_->data[0];
}

Tensor Tensor::clone() const {
  Tensor t = make(st_->shape, st_->data);
  t.st_->requires_grad = st_->requires_grad;
  return t;
}

bool Tensor::all_finite() const {
  for (double v : st_->data)
    if (!std::isfinite(v)) return false;
  return true;
}

// ---- GradTape ----

GradTape::GradTape() {
  prev_ = tls_tape;
  tls_tape = this;
}

GradTape::~GradTape() { tls_tape = prev_; }

GradTape* GradTape::current() { return tls_tape; }

NoGradGuard::NoGradGuard() : prev(tls_no_grad) { tls_no_grad = true; }
NoGradGuard::~NoGradGuard() { tls_no_grad = prev; }

bool grad_enabled() { return !tls_no_grad; }

void GradTape::record(std::vector<Tensor> outputs, BackwardFn fn) {
  Node n;
  for (const Tensor& t : outputs) {
    n.out_ids.push_back(t.id());
    n.out_shapes.push_back(t.shape());
    produced_.insert(t.id());
  }
  n.fn = std::move(fn);
  nodes_.push_back(std::move(n));
}

void GradTape::accumulate(const Tensor& target, const Tensor& g) {
  if (!target.requires_grad()) return;
  CT_CHECK(target.shape() == g.shape(), "gradient shape ", g.shape_str(),
           " does not match tensor shape ", target.shape_str());
  auto it = grads_.find(target.id());
  if (it == grads_.end()) {
    grads_.emplace(target.id(), g.clone());
  } else {
    Tensor& acc = it->second;
    K().add(acc.ptr(), g.ptr(), acc.raw().data(), size_t(acc.numel()));
  }
}

void GradTape::backward(const Tensor& loss) {
  CT_CHECK(loss.numel() == 1, "backward: loss must be scalar, got shape ", loss.shape_str());
  CT_CHECK(produced_.count(loss.id()) > 0, "backward: loss is not connected to this tape");
  grads_.emplace(loss.id(), Tensor::ones(loss.shape()));
  NoGradGuard ng;  // backward computations are never re-recorded
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    bool reached = false;
    for (int64_t oid : it->out_ids)
      if (grads_.count(oid)) {
        reached = true;
        break;
      }
    if (!reached) continue;
    std::vector<Tensor> out_grads;
    out_grads.reserve(it->out_ids.size());
    for (size_t k = 0; k < it->out_ids.size(); ++k) {
      auto g = grads_.find(it->out_ids[k]);
      out_grads.push_back(g != grads_.end() ? g->second : Tensor::zeros(it->out_shapes[k]));
    }
    it->fn(out_grads, *this);
  }
}

Tensor GradTape::grad(const Tensor& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end()) return Tensor::zeros(t.shape());
  return it->second;
}

bool GradTape::has_grad(const Tensor& t) const { return grads_.count(t.id()) > 0; }

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  CT_CHECK(a.ndim() == 2 && b.ndim() == 2, "matmul requires 2-D tensors, got ", a.shape_str(),
           " and ", b.shape_str());
  CT_CHECK(a.cols() == b.rows(), "matmul: inner dimensions disagree: ", a.shape_str(), " x ",
           b.shape_str());
  Tensor out = Tensor::zeros({a.rows(), b.cols()});
  K().matmul(a.ptr(), b.ptr(), out.raw().data(), size_t(a.rows()), size_t(a.cols()),
             size_t(b.cols()));
  propagate_grad_flag(out, {&a, &b});
  if (recording({&a, &b})) {
    GradTape::current()->record({out}, [a, b](const std::vector<Tensor>& gs, GradTape& tape) {
      if (a.requires_grad()) tape.accumulate(a, raw_matmul_nt(gs[0], b));
      if (b.requires_grad()) tape.accumulate(b, raw_matmul_tn(a, gs[0]));
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  CT_CHECK(a.ndim() == 2, "transpose requires a 2-D tensor, got ", a.shape_str());
  const int m = a.rows(), n = a.cols();
  Tensor out = Tensor::zeros({n, m});
  auto* o = out.raw().data();
  const double* p = a.ptr();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) o[j * m + i] = p[i * n + j];
  propagate_grad_flag(out, {&a});
  if (recording({&a})) {
    GradTape::current()->record({out}, [a](const std::vector<Tensor>& gs, GradTape& tape) {
      tape.accumulate(a, transpose(gs[0]));
    });
  }
  return out;
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  CT_CHECK(a.shape() == b.shape(), op, ": operand shapes differ: ", a.shape_str(), " vs ",
           b.shape_str());
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  K().add(a.ptr(), b.ptr(), out.raw().data(), size_t(a.numel()));
  propagate_grad_flag(out, {&a, &b});
  if (recording({&a, &b})) {
    GradTape::current()->record({out}, [a, b](const std::vector<Tensor>& gs, GradTape& tape) {
      tape.accumulate(a, gs[0]);
      tape.accumulate(b, gs[0]);
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  K().sub(a.ptr(), b.ptr(), out.raw().data(), size_t(a.numel()));
  propagate_grad_flag(out, {&a, &b});
  if (recording({&a, &b})) {
    GradTape::current()->record({out}, [a, b](const std::vector<Tensor>& gs, GradTape& tape) {
      tape.accumulate(a, gs[0]);
      tape.accumulate(b, scale(gs[0], -1.0));
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  K().mul(a.ptr(), b.ptr(), out.raw().data(), size_t(a.numel()));
  propagate_grad_flag(out, {&a, &b});
  if (recording({&a, &b})) {
    GradTape::current()->record({out}, [a, b](const std::vector<Tensor>& gs, GradTape& tape) {
      if (a.requires_grad()) tape.accumulate(a, mul(gs[0], b));
      if (b.requires_grad()) tape.accumulate(b, mul(gs[0], a));
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape());
  K().scale(a.ptr(), s, out.raw().data(), size_t(a.numel()));
  propagate_grad_flag(out, {&a});
  if (recording({&a})) {
    GradTape::current()->record({out}, [a, s](const std::vector<Tensor>& gs, GradTape& tape) {
      tape.accumulate(a, scale(gs[0], s));
    });
  }
  return out;
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  CT_CHECK(a.ndim() == 2 && v.ndim() == 1 && a.cols() == v.dim(0),
           "add_rowvec: need [n,d] + [d], got ", a.shape_str(), " and ", v.shape_str());
  Tensor out = Tensor::zeros(a.shape());
  const int n = a.rows(), d = a.cols();
  for (int i = 0; i < n; ++i)
    K().add(a.ptr() + int64_t(i) * d, v.ptr(), out.raw().data() + int64_t(i) * d, size_t(d));
  propagate_grad_flag(out, {&a, &v});
  if (recording({&a, &v})) {
    GradTape::current()->record({out}, [a, v, n, d](const std::vector<Tensor>& gs, GradTape& tape) {
      tape.accumulate(a, gs[0]);
      if (v.requires_grad()) {
        Tensor gv = Tensor::zeros(v.shape());
        for (int i = 0; i < n; ++i)
          K().axpy(1.0, gs[0].ptr() + int64_t(i) * d, gv.raw().data(), size_t(d));
        tape.accumulate(v, gv);
      }
    });
  }
  return out;
}

namespace {

// Shared scaffold for unary elementwise ops.
template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& a, Fwd&& fwd, Bwd&& make_backward) {
  Tensor out = Tensor::zeros(a.shape());
  fwd(a, out);
  propagate_grad_flag(out, {&a});
  if (recording({&a})) GradTape::current()->record({out}, make_backward(a, out));
  return out;
}

}  // namespace

Tensor exp(const Tensor& a) {
  return unary_op(
      a, [](const Tensor& x, Tensor& o) { K().vexp(x.ptr(), o.raw().data(), size_t(x.numel())); },
      [](const Tensor& x, const Tensor& o) {
        return [x, o](const std::vector<Tensor>& gs, GradTape& tape) {
          tape.accumulate(x, mul(gs[0], o));
        };
      });
}

Tensor log(const Tensor& a) {
  return unary_op(
      a,
      [](const Tensor& x, Tensor& o) {
        auto* p = o.raw().data();
        for (int64_t i = 0; i < x.numel(); ++i) p[i] = std::log(x[i]);
      },
      [](const Tensor& x, const Tensor&) {
        return [x](const std::vector<Tensor>& gs, GradTape& tape) {
          Tensor g = Tensor::zeros(x.shape());
          auto* p = g.raw().data();
          for (int64_t i = 0; i < x.numel(); ++i) p[i] = gs[0][i] / x[i];
          tape.accumulate(x, g);
        };
      });
}

Tensor softplus(const Tensor& a) {
  return unary_op(
      a,
      [](const Tensor& x, Tensor& o) {
        auto* p = o.raw().data();
        for (int64_t i = 0; i < x.numel(); ++i) p[i] = kern::softplus_scalar(x[i]);
      },
      [](const Tensor& x, const Tensor&) {
        return [x](const std::vector<Tensor>& gs, GradTape& tape) {
          Tensor s = Tensor::zeros(x.shape());
          K().vsigmoid(x.ptr(), s.raw().data(), size_t(x.numel()));
          tape.accumulate(x, mul(gs[0], s));
        };
      });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a,
      [](const Tensor& x, Tensor& o) { K().vsigmoid(x.ptr(), o.raw().data(), size_t(x.numel())); },
      [](const Tensor& x, const Tensor& o) {
        return [x, o](const std::vector<Tensor>& gs, GradTape& tape) {
          Tensor g = Tensor::zeros(x.shape());
          auto* p = g.raw().data();
          for (int64_t i = 0; i < x.numel(); ++i) p[i] = gs[0][i] * o[i] * (1.0 - o[i]);
          tape.accumulate(x, g);
        };
      });
}

Tensor silu(const Tensor& a) {
  return unary_op(
      a,
      [](const Tensor& x, Tensor& o) { K().vsilu(x.ptr(), o.raw().data(), size_t(x.numel())); },
      [](const Tensor& x, const Tensor&) {
        return [x](const std::vector<Tensor>& gs, GradTape& tape) {
          Tensor g = Tensor::zeros(x.shape());
          Tensor s = Tensor::zeros(x.shape());
          K().vsigmoid(x.ptr(), s.raw().data(), size_t(x.numel()));
          auto* p = g.raw().data();
          for (int64_t i = 0; i < x.numel(); ++i)
            p[i] = gs[0][i] * (s[i] + x[i] * s[i] * (1.0 - s[i]));
          tape.accumulate(x, g);
        };
      });
}

Tensor reciprocal(const Tensor& a) {
  for (int64_t i = 0; i < a.numel(); ++i)
    CT_CHECK(a[i] != 0.0, "reciprocal of zero at flat index ", i);
  return unary_op(
      a,
      [](const Tensor& x, Tensor& o) {
        auto* p = o.raw().data();
        for (int64_t i = 0; i < x.numel(); ++i) p[i] = 1.0 / x[i];
      },
      [](const Tensor& x, const Tensor& o) {
        return [x, o](const std::vector<Tensor>& gs, GradTape& tape) {
          Tensor g = Tensor::zeros(x.shape());
          auto* p = g.raw().data();
          for (int64_t i = 0; i < x.numel(); ++i) p[i] = -gs[0][i] * o[i] * o[i];
          tape.accumulate(x, g);
        };
      });
}

Tensor pow_const(const Tensor& a, double e) {
  return unary_op(
      a,
      [e](const Tensor& x, Tensor& o) {
        auto* p = o.raw().data();
        for (int64_t i = 0; i < x.numel(); ++i) p[i] = std::pow(x[i], e);
      },
      [e](const Tensor& x, const Tensor&) {
        return [x, e](const std::vector<Tensor>& gs, GradTape& tape) {
          Tensor g = Tensor::zeros(x.shape());
          auto* p = g.raw().data();
          for (int64_t i = 0; i < x.numel(); ++i) p[i] = gs[0][i] * e * std::pow(x[i], e - 1.0);
          tape.accumulate(x, g);
        };
      });
}

Tensor abs(const Tensor& a) {
  return unary_op(
      a,
      [](const Tensor& x, Tensor& o) {
        auto* p = o.raw().data();
        for (int64_t i = 0; i < x.numel(); ++i) p[i] = std::fabs(x[i]);
      },
      [](const Tensor& x, const Tensor&) {
        return [x](const std::vector<Tensor>& gs, GradTape& tape) {
          Tensor g = Tensor::zeros(x.shape());
          auto* p = g.raw().data();
          for (int64_t i = 0; i < x.numel(); ++i)
            p[i] = gs[0][i] * (x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0));
          tape.accumulate(x, g);
        };
      });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a,
      [](const Tensor& x, Tensor& o) {
        auto* p = o.raw().data();
        for (int64_t i = 0; i < x.numel(); ++i) p[i] = x[i] > 0.0 ? x[i] : 0.0;
      },
      [](const Tensor& x, const Tensor&) {
        return [x](const std::vector<Tensor>& gs, GradTape& tape) {
          Tensor g = Tensor::zeros(x.shape());
          auto* p = g.raw().data();
          for (int64_t i = 0; i < x.numel(); ++i) p[i] = x[i] > 0.0 ? gs[0][i] : 0.0;
          tape.accumulate(x, g);
        };
      });
}

namespace {

// max: gradient routed to a on ties; min symmetric.
Tensor minmax_op(const Tensor& a, const Tensor& b, bool is_max) {
  check_same_shape(a, b, is_max ? "maximum" : "minimum");
  Tensor out = Tensor::zeros(a.shape());
  auto* p = out.raw().data();
  for (int64_t i = 0; i < a.numel(); ++i)
    p[i] = is_max ? (a[i] >= b[i] ? a[i] : b[i]) : (a[i] <= b[i] ? a[i] : b[i]);
  propagate_grad_flag(out, {&a, &b});
  if (recording({&a, &b})) {
    GradTape::current()->record(
        {out}, [a, b, is_max](const std::vector<Tensor>& gs, GradTape& tape) {
          Tensor ga = Tensor::zeros(a.shape());
          Tensor gb = Tensor::zeros(b.shape());
          auto* pa = ga.raw().data();
          auto* pb = gb.raw().data();
          for (int64_t i = 0; i < a.numel(); ++i) {
            const bool take_a = is_max ? (a[i] >= b[i]) : (a[i] <= b[i]);
            (take_a ? pa : pb)[i] = gs[0][i];
          }
          tape.accumulate(a, ga);
          tape.accumulate(b, gb);
        });
  }
  return out;
}

}  // namespace

Tensor maximum(const Tensor& a, const Tensor& b) { return minmax_op(a, b, true); }
Tensor minimum(const Tensor& a, const Tensor& b) { return minmax_op(a, b, false); }

Tensor sum(const Tensor& a) {
  Tensor out = Tensor::scalar(K().sum(a.ptr(), size_t(a.numel())));
  propagate_grad_flag(out, {&a});
  if (recording({&a})) {
    GradTape::current()->record({out}, [a](const std::vector<Tensor>& gs, GradTape& tape) {
      tape.accumulate(a, Tensor::full(a.shape(), gs[0][0]));
    });
  }
  return out;
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / double(a.numel())); }

Tensor softmax_rows(const Tensor& a) {
  CT_CHECK(a.ndim() == 2, "softmax_rows requires a 2-D tensor, got ", a.shape_str());
  const int m = a.rows(), n = a.cols();
  Tensor out = Tensor::zeros(a.shape());
  auto* o = out.raw().data();
  for (int i = 0; i < m; ++i) {
    const double* row = a.ptr() + int64_t(i) * n;
    double* orow = o + int64_t(i) * n;
    const double mx = K().max(row, size_t(n));
    K().vexp_shift(row, mx, orow, size_t(n));
    const double s = K().sum(orow, size_t(n));
    K().scale(orow, 1.0 / s, orow, size_t(n));
  }
  propagate_grad_flag(out, {&a});
  if (recording({&a})) {
    GradTape::current()->record({out}, [a, out, m, n](const std::vector<Tensor>& gs, GradTape& tape) {
      Tensor g = Tensor::zeros(a.shape());
      auto* gp = g.raw().data();
      for (int i = 0; i < m; ++i) {
        const double* prow = out.ptr() + int64_t(i) * n;
        const double* grow = gs[0].ptr() + int64_t(i) * n;
        const double inner = K().dot(grow, prow, size_t(n));
        double* gout = gp + int64_t(i) * n;
        for (int j = 0; j < n; ++j) gout[j] = prow[j] * (grow[j] - inner);
      }
      tape.accumulate(a, g);
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias) {
  CT_CHECK(a.ndim() >= 1, "layer_norm: undefined for empty shape");
  const int d = a.dim(a.ndim() - 1);
  CT_CHECK(d >= 2, "layer_norm requires last dimension >= 2, got ", d);
  CT_CHECK(gain.ndim() == 1 && gain.dim(0) == d && bias.ndim() == 1 && bias.dim(0) == d,
           "layer_norm: gain/bias must have shape [", d, "]");
  const int64_t rows = a.numel() / d;

  Tensor out = Tensor::zeros(a.shape());
  Tensor xhat = Tensor::zeros(a.shape());
  std::vector<double> inv_std(static_cast<size_t>(rows), 0.0);
  auto* op = out.raw().data();
  auto* xp = xhat.raw().data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = a.ptr() + r * d;
    const double mu = K().sum(row, size_t(d)) / d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= d;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_std[size_t(r)] = inv;
    double* xrow = xp + r * d;
    double* orow = op + r * d;
    for (int j = 0; j < d; ++j) {
      xrow[j] = (row[j] - mu) * inv;
      orow[j] = xrow[j] * gain[j] + bias[j];
    }
  }
  propagate_grad_flag(out, {&a, &gain, &bias});
  if (recording({&a, &gain, &bias})) {
    GradTape::current()->record(
        {out}, [a, gain, bias, xhat, inv_std, rows, d](const std::vector<Tensor>& gs, GradTape& tape) {
          Tensor ga = Tensor::zeros(a.shape());
          Tensor ggain = Tensor::zeros(gain.shape());
          Tensor gbias = Tensor::zeros(bias.shape());
          auto* gap = ga.raw().data();
          auto* ggp = ggain.raw().data();
          auto* gbp = gbias.raw().data();
          for (int64_t r = 0; r < rows; ++r) {
            const double* grow = gs[0].ptr() + r * d;
            const double* xrow = xhat.ptr() + r * d;
            const double inv = inv_std[size_t(r)];
            double mean_dxhat = 0.0, mean_dxhat_x = 0.0;
            for (int j = 0; j < d; ++j) {
              const double dxh = grow[j] * gain[j];
              mean_dxhat += dxh;
              mean_dxhat_x += dxh * xrow[j];
              ggp[j] += grow[j] * xrow[j];
              gbp[j] += grow[j];
            }
            mean_dxhat /= d;
            mean_dxhat_x /= d;
            double* garow = gap + r * d;
            for (int j = 0; j < d; ++j) {
              const double dxh = grow[j] * gain[j];
              garow[j] = inv * (dxh - mean_dxhat - xrow[j] * mean_dxhat_x);
            }
          }
          tape.accumulate(a, ga);
          tape.accumulate(gain, ggain);
          tape.accumulate(bias, gbias);
        });
  }
  return out;
}

namespace {

int row_width(const Tensor& t) { return int(t.numel() / t.dim(0)); }

}  // namespace

Tensor concat_rows(const std::vector<Tensor>& parts) {
  CT_CHECK(!parts.empty(), "concat_rows: no parts");
  const int w = row_width(parts[0]);
  int total = 0;
  for (const Tensor& p : parts) {
    CT_CHECK(p.ndim() == parts[0].ndim() && row_width(p) == w,
             "concat_rows: incompatible part shape ", p.shape_str());
    total += p.dim(0);
  }
  Shape shape = parts[0].shape();
  shape[0] = total;
  Tensor out = Tensor::zeros(shape);
  auto* op = out.raw().data();
  int64_t off = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data().begin(), p.data().end(), op + off);
    off += p.numel();
  }
  for (const Tensor& p : parts)
    if (p.requires_grad()) out.set_requires_grad(true);
  if (recording(parts)) {
    std::vector<Tensor> ps = parts;
    GradTape::current()->record({out}, [ps, w](const std::vector<Tensor>& gs, GradTape& tape) {
      int r = 0;
      for (const Tensor& p : ps) {
        Tensor gp = Tensor::zeros(p.shape());
        std::copy(gs[0].ptr() + int64_t(r) * w, gs[0].ptr() + int64_t(r + p.dim(0)) * w,
                  gp.raw().data());
        tape.accumulate(p, gp);
        r += p.dim(0);
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& a, int r0, int r1) {
  CT_CHECK(a.ndim() >= 1 && 0 <= r0 && r0 < r1 && r1 <= a.dim(0), "slice_rows: range [", r0, ",",
           r1, ") invalid for shape ", a.shape_str());
  const int w = row_width(a);
  Shape shape = a.shape();
  shape[0] = r1 - r0;
  Tensor out = Tensor::zeros(shape);
  std::copy(a.ptr() + int64_t(r0) * w, a.ptr() + int64_t(r1) * w, out.raw().data());
  propagate_grad_flag(out, {&a});
  if (recording({&a})) {
    GradTape::current()->record({out}, [a, r0, w](const std::vector<Tensor>& gs, GradTape& tape) {
      Tensor ga = Tensor::zeros(a.shape());
      std::copy(gs[0].data().begin(), gs[0].data().end(), ga.raw().data() + int64_t(r0) * w);
      tape.accumulate(a, ga);
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  CT_CHECK(!parts.empty(), "concat_cols: no parts");
  const int m = parts[0].rows();
  int total = 0;
  for (const Tensor& p : parts) {
    CT_CHECK(p.ndim() == 2 && p.rows() == m, "concat_cols: incompatible part shape ",
             p.shape_str());
    total += p.cols();
  }
  Tensor out = Tensor::zeros({m, total});
  auto* op = out.raw().data();
  int off = 0;
  for (const Tensor& p : parts) {
    const int w = p.cols();
    for (int i = 0; i < m; ++i)
      std::copy(p.ptr() + int64_t(i) * w, p.ptr() + int64_t(i + 1) * w,
                op + int64_t(i) * total + off);
    off += w;
    if (p.requires_grad()) out.set_requires_grad(true);
  }
  if (recording(parts)) {
    std::vector<Tensor> ps = parts;
    GradTape::current()->record({out}, [ps, m, total](const std::vector<Tensor>& gs, GradTape& tape) {
      int off = 0;
      for (const Tensor& p : ps) {
        const int w = p.cols();
        Tensor gp = Tensor::zeros(p.shape());
        auto* gpp = gp.raw().data();
        for (int i = 0; i < m; ++i)
          std::copy(gs[0].ptr() + int64_t(i) * total + off,
                    gs[0].ptr() + int64_t(i) * total + off + w, gpp + int64_t(i) * w);
        tape.accumulate(p, gp);
        off += w;
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  CT_CHECK(a.ndim() == 2 && 0 <= c0 && c0 < c1 && c1 <= a.cols(), "slice_cols: range [", c0, ",",
           c1, ") invalid for shape ", a.shape_str());
  const int m = a.rows(), n = a.cols(), w = c1 - c0;
  Tensor out = Tensor::zeros({m, w});
  auto* op = out.raw().data();
  for (int i = 0; i < m; ++i)
    std::copy(a.ptr() + int64_t(i) * n + c0, a.ptr() + int64_t(i) * n + c1, op + int64_t(i) * w);
  propagate_grad_flag(out, {&a});
  if (recording({&a})) {
    GradTape::current()->record({out}, [a, c0, m, n, w](const std::vector<Tensor>& gs, GradTape& tape) {
      Tensor ga = Tensor::zeros(a.shape());
      auto* gp = ga.raw().data();
      for (int i = 0; i < m; ++i)
        std::copy(gs[0].ptr() + int64_t(i) * w, gs[0].ptr() + int64_t(i + 1) * w,
                  gp + int64_t(i) * n + c0);
      tape.accumulate(a, ga);
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& a, std::vector<int> idx) {
  CT_CHECK(a.ndim() >= 1 && !idx.empty(), "gather_rows: empty index list");
  const int w = row_width(a);
  for (int i : idx)
    CT_CHECK(0 <= i && i < a.dim(0), "gather_rows: index ", i, " out of range for ", a.shape_str());
  Shape shape = a.shape();
  shape[0] = int(idx.size());
  Tensor out = Tensor::zeros(shape);
  auto* op = out.raw().data();
  for (size_t r = 0; r < idx.size(); ++r)
    std::copy(a.ptr() + int64_t(idx[r]) * w, a.ptr() + int64_t(idx[r] + 1) * w,
              op + int64_t(r) * w);
  propagate_grad_flag(out, {&a});
  if (recording({&a})) {
    GradTape::current()->record({out}, [a, idx, w](const std::vector<Tensor>& gs, GradTape& tape) {
      Tensor ga = Tensor::zeros(a.shape());
      auto* gp = ga.raw().data();
      for (size_t r = 0; r < idx.size(); ++r)
        K().axpy(1.0, gs[0].ptr() + int64_t(r) * w, gp + int64_t(idx[r]) * w, size_t(w));
      tape.accumulate(a, ga);
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  CT_CHECK(shape_numel(shape) == a.numel(), "reshape: cannot view ", a.shape_str(), " as ",
           ctrack::shape_str(shape));
  Tensor out = Tensor::from(shape, std::vector<double>(a.data().begin(), a.data().end()));
  propagate_grad_flag(out, {&a});
  if (recording({&a})) {
    GradTape::current()->record({out}, [a](const std::vector<Tensor>& gs, GradTape& tape) {
      tape.accumulate(a, reshape(gs[0], a.shape()));
    });
  }
  return out;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  CT_CHECK(eps >= 1e-7 && eps <= 1e-3, "grad_check: eps must lie in [1e-7, 1e-3], got ", eps);
  Tensor xt = x.clone();
  xt.set_requires_grad(true);
  Tensor analytic;
  {
    GradTape tape;
    Tensor y = f(xt);
    CT_CHECK(y.numel() == 1, "grad_check: f must return a scalar, got shape ", y.shape_str());
    tape.backward(y);
    analytic = tape.grad(xt);
  }
  NoGradGuard ng;
  double worst = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    Tensor xp = x.clone();
    Tensor xm = x.clone();
    xp.raw()[size_t(i)] += eps;
    xm.raw()[size_t(i)] -= eps;
    const double numeric = (f(xp).item() - f(xm).item()) / (2.0 * eps);
    const double a = analytic[i];
    const double err = std::fabs(a - numeric) / std::fmax(1.0, std::fabs(a));
    worst = std::fmax(worst, err);
  }
  return worst;
}

}  // namespace ctrack
