#include "acre/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "acre/kernels.hpp"

namespace acre::ops {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

bool needs_grad(const Tensor& t) { return t.defined() && t.requires_grad(); }

// Zero-padded copy of x for same-zero convolution; pad_lo/pad_hi per spatial axis.
Tensor pad2d(const Tensor& x, std::size_t lo, std::size_t hi) {
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t hp = h + lo + hi, wp = w + lo + hi;
  Tensor out = Tensor::zeros({b, c, hp, wp});
  const double* src = x.data().data();
  double* dst = out.data().data();
  for (std::size_t bc = 0; bc < b * c; ++bc) {
    for (std::size_t y = 0; y < h; ++y) {
      std::memcpy(dst + (bc * hp + y + lo) * wp + lo, src + (bc * h + y) * w,
                  w * sizeof(double));
    }
  }
  return out;
}

void unpad2d_accumulate(const Tensor& dpad, std::vector<double>& dx,
                        std::size_t b, std::size_t c, std::size_t h, std::size_t w,
                        std::size_t lo) {
  const std::size_t hp = dpad.dim(2), wp = dpad.dim(3);
  const double* src = dpad.data().data();
  for (std::size_t bc = 0; bc < b * c; ++bc) {
    for (std::size_t y = 0; y < h; ++y) {
      const double* srow = src + (bc * hp + y + lo) * wp + lo;
      double* drow = dx.data() + (bc * h + y) * w;
      for (std::size_t x = 0; x < w; ++x) drow[x] += srow[x];
    }
  }
}

struct ConvGeometry {
  std::size_t pad_lo = 0, pad_hi = 0;
};

ConvGeometry conv_check(const Tensor& x, const Tensor& w, const Tensor& bias,
                        std::size_t rate, Padding pad) {
  if (x.ndim() != 4) fail("conv2d: input must be [B,C,H,W], got " + shape_str(x.shape()));
  if (w.ndim() != 4 || w.dim(2) != w.dim(3)) {
    fail("conv2d: filters must be [Co,Ci,k,k], got " + shape_str(w.shape()));
  }
  if (rate < 1) fail("conv2d: rate must be >= 1");
  if (w.dim(1) != x.dim(1)) {
    fail("conv2d: filter channels " + std::to_string(w.dim(1)) +
         " != input channels " + std::to_string(x.dim(1)));
  }
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != w.dim(0))) {
    fail("conv2d: bias shape " + shape_str(bias.shape()) + " does not match filters");
  }
  const std::size_t k = w.dim(2);
  const std::size_t extent = (k - 1) * rate + 1;
  ConvGeometry g;
  if (pad == Padding::same_zero) {
    const std::size_t total = (k - 1) * rate;
    g.pad_lo = total / 2;
    g.pad_hi = total - g.pad_lo;
  }
  if (extent > x.dim(2) + g.pad_lo + g.pad_hi || extent > x.dim(3) + g.pad_lo + g.pad_hi) {
    fail("conv2d: effective kernel extent " + std::to_string(extent) +
         " exceeds padded input " + shape_str(x.shape()));
  }
  return g;
}

}  // namespace

Tensor conv2d_dilated(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& bias,
                      std::size_t rate, Padding pad) {
  const ConvGeometry g = conv_check(x, w, bias, rate, pad);
  const bool padded = g.pad_lo + g.pad_hi > 0;
  Tensor xin = padded ? pad2d(x, g.pad_lo, g.pad_hi) : x;

  kern::ConvDims d{x.dim(0), x.dim(1), xin.dim(2), xin.dim(3), w.dim(0), w.dim(2), rate};
  Tensor out = Tensor::zeros({d.batch, d.c_out, d.h_out(), d.w_out()});
  kern::conv2d_forward(xin.data().data(), w.data().data(),
                       bias.defined() ? bias.data().data() : nullptr,
                       out.data().data(), d);
  check_finite(out, "conv2d_dilated");

  const bool rg = needs_grad(x) || needs_grad(w) || needs_grad(bias);
  out.set_requires_grad(rg);
  if (tape && rg) {
    Tensor xc = x, wc = w, bc = bias, oc = out, xpc = xin;
    tape->record([xc, wc, bc, oc, xpc, d, g, padded]() mutable {
      const double* dout = oc.grad().data();
      if (xc.requires_grad()) {
        if (padded) {
          Tensor dpad = Tensor::zeros(xpc.shape());
          kern::conv2d_backward_input(dout, wc.data().data(), dpad.data().data(), d);
          unpad2d_accumulate(dpad, xc.grad(), xc.dim(0), xc.dim(1), xc.dim(2), xc.dim(3),
                             g.pad_lo);
        } else {
          kern::conv2d_backward_input(dout, wc.data().data(), xc.grad().data(), d);
        }
      }
      if (wc.requires_grad() || (bc.defined() && bc.requires_grad())) {
        double* dw = wc.requires_grad() ? wc.grad().data() : nullptr;
        double* db = (bc.defined() && bc.requires_grad()) ? bc.grad().data() : nullptr;
        if (dw) {
          kern::conv2d_backward_weights(xpc.data().data(), dout, dw, db, d);
        } else if (db) {
          // Bias-only gradient: plain sums over each output channel.
          const std::size_t img = d.c_out * d.h_out() * d.w_out();
          const std::size_t hw = d.h_out() * d.w_out();
          for (std::size_t b = 0; b < d.batch; ++b) {
            for (std::size_t co = 0; co < d.c_out; ++co) {
              double acc = 0.0;
              const double* p = dout + b * img + co * hw;
              for (std::size_t i = 0; i < hw; ++i) acc += p[i];
              db[co] += acc;
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor conv2d_standard_reference(const Tensor& x, const Tensor& w, const Tensor& bias,
                                 Padding pad) {
  const ConvGeometry g = conv_check(x, w, bias, 1, pad);
  Tensor xin = (g.pad_lo + g.pad_hi > 0) ? pad2d(x, g.pad_lo, g.pad_hi) : x;
  const std::size_t k = w.dim(2);
  Tensor out = Tensor::zeros(
      {x.dim(0), w.dim(0), xin.dim(2) - (k - 1), xin.dim(3) - (k - 1)});
  kern::scalar::conv2d_standard_forward(xin.data().data(), w.data().data(),
                                        bias.defined() ? bias.data().data() : nullptr,
                                        out.data().data(), x.dim(0), x.dim(1),
                                        xin.dim(2), xin.dim(3), w.dim(0), k);
  return out;
}

Tensor relu(Tape* tape, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.data();
  auto& ov = out.data();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  out.set_requires_grad(needs_grad(x));
  if (tape && out.requires_grad()) {
    Tensor xc = x, oc = out;
    tape->record([xc, oc]() mutable {
      const auto& g = oc.grad();
      const auto& xv2 = xc.data();
      auto& dx = xc.grad();
      for (std::size_t i = 0; i < xv2.size(); ++i) {
        if (xv2[i] > 0.0) dx[i] += g[i];
      }
    });
  }
  return out;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor sigmoid(Tape* tape, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.data();
  auto& ov = out.data();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = stable_sigmoid(xv[i]);
  check_finite(out, "sigmoid");
  out.set_requires_grad(needs_grad(x));
  if (tape && out.requires_grad()) {
    Tensor xc = x, oc = out;
    tape->record([xc, oc]() mutable {
      const auto& g = oc.grad();
      const auto& y = oc.data();
      auto& dx = xc.grad();
      for (std::size_t i = 0; i < y.size(); ++i) dx[i] += g[i] * y[i] * (1.0 - y[i]);
    });
  }
  return out;
}

namespace {

// Broadcast plumbing: left-pad shapes with 1s to rank r, then walk the output
// index space with per-input strides (stride 0 on broadcast dims).
struct Bcast {
  Shape out;
  std::vector<std::size_t> sa, sb;  // strides per output dim
};

Bcast broadcast_plan(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape pa(r, 1), pb(r, 1);
  std::copy(a.begin(), a.end(), pa.begin() + (r - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + (r - b.size()));
  Bcast plan;
  plan.out.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      fail("add: incompatible shapes " + shape_str(a) + " and " + shape_str(b));
    }
    plan.out[i] = std::max(pa[i], pb[i]);
  }
  plan.sa.assign(r, 0);
  plan.sb.assign(r, 0);
  auto strides_of = [r](const Shape& s) {
    std::vector<std::size_t> st(r, 0);
    std::size_t acc = 1;
    for (std::size_t i = r; i-- > 0;) {
      st[i] = acc;
      acc *= s[i];
    }
    return st;
  };
  auto sta = strides_of(pa), stb = strides_of(pb);
  for (std::size_t i = 0; i < r; ++i) {
    plan.sa[i] = (pa[i] == 1) ? 0 : sta[i];
    plan.sb[i] = (pb[i] == 1) ? 0 : stb[i];
  }
  return plan;
}

template <typename Fn>
void broadcast_walk(const Bcast& plan, Fn&& fn) {
  const std::size_t r = plan.out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0, ob = 0, oo = 0;
  const std::size_t total = shape_numel(plan.out);
  for (std::size_t n = 0; n < total; ++n) {
    fn(oo, oa, ob);
    ++oo;
    for (std::size_t i = r; i-- > 0;) {
      ++idx[i];
      oa += plan.sa[i];
      ob += plan.sb[i];
      if (idx[i] < plan.out[i]) break;
      oa -= plan.sa[i] * plan.out[i];
      ob -= plan.sb[i] * plan.out[i];
      idx[i] = 0;
    }
  }
}

}  // namespace

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + bv[i];
    out.set_requires_grad(needs_grad(a) || needs_grad(b));
    if (tape && out.requires_grad()) {
      Tensor ac = a, bc = b, oc = out;
      tape->record([ac, bc, oc]() mutable {
        const auto& g = oc.grad();
        if (ac.requires_grad()) {
          auto& da = ac.grad();
          for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        }
        if (bc.requires_grad()) {
          auto& db = bc.grad();
          for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
        }
      });
    }
    return out;
  }
  const Bcast plan = broadcast_plan(a.shape(), b.shape());
  Tensor out = Tensor::zeros(plan.out);
  {
    const double* av = a.data().data();
    const double* bv = b.data().data();
    double* ov = out.data().data();
    broadcast_walk(plan, [&](std::size_t oo, std::size_t oa, std::size_t ob) {
      ov[oo] = av[oa] + bv[ob];
    });
  }
  out.set_requires_grad(needs_grad(a) || needs_grad(b));
  if (tape && out.requires_grad()) {
    Tensor ac = a, bc = b, oc = out;
    tape->record([ac, bc, oc, plan]() mutable {
      const double* g = oc.grad().data();
      double* da = ac.requires_grad() ? ac.grad().data() : nullptr;
      double* db = bc.requires_grad() ? bc.grad().data() : nullptr;
      broadcast_walk(plan, [&](std::size_t oo, std::size_t oa, std::size_t ob) {
        if (da) da[oa] += g[oo];
        if (db) db[ob] += g[oo];
      });
    });
  }
  return out;
}

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    fail("matmul: shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  kern::gemm(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  check_finite(out, "matmul");
  out.set_requires_grad(needs_grad(a) || needs_grad(b));
  if (tape && out.requires_grad()) {
    Tensor ac = a, bc = b, oc = out;
    tape->record([ac, bc, oc, m, k, n]() mutable {
      const double* g = oc.grad().data();
      if (ac.requires_grad()) kern::gemm_bt(g, bc.data().data(), ac.grad().data(), m, n, k);
      if (bc.requires_grad()) kern::gemm_at(ac.data().data(), g, bc.grad().data(), k, m, n);
    });
  }
  return out;
}

Tensor matmul_bt(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1)) {
    fail("matmul_bt: shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor out = Tensor::zeros({m, n});
  kern::gemm_bt(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  check_finite(out, "matmul_bt");
  out.set_requires_grad(needs_grad(a) || needs_grad(b));
  if (tape && out.requires_grad()) {
    Tensor ac = a, bc = b, oc = out;
    tape->record([ac, bc, oc, m, k, n]() mutable {
      const double* g = oc.grad().data();
      if (ac.requires_grad()) kern::gemm(g, bc.data().data(), ac.grad().data(), m, n, k);
      if (bc.requires_grad()) kern::gemm_at(g, ac.data().data(), bc.grad().data(), n, m, k);
    });
  }
  return out;
}

Tensor affine(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(0) || b.ndim() != 1 ||
      b.dim(0) != w.dim(1)) {
    fail("affine: shapes " + shape_str(x.shape()) + ", " + shape_str(w.shape()) + ", " +
         shape_str(b.shape()));
  }
  const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
  Tensor out = Tensor::zeros({m, n});
  auto& ov = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    std::memcpy(ov.data() + i * n, b.data().data(), n * sizeof(double));
  }
  kern::gemm(x.data().data(), w.data().data(), ov.data(), m, k, n);
  check_finite(out, "affine");
  out.set_requires_grad(needs_grad(x) || needs_grad(w) || needs_grad(b));
  if (tape && out.requires_grad()) {
    Tensor xc = x, wc = w, bc = b, oc = out;
    tape->record([xc, wc, bc, oc, m, k, n]() mutable {
      const double* g = oc.grad().data();
      if (xc.requires_grad()) kern::gemm_bt(g, wc.data().data(), xc.grad().data(), m, n, k);
      if (wc.requires_grad()) kern::gemm_at(xc.data().data(), g, wc.grad().data(), k, m, n);
      if (bc.requires_grad()) {
        auto& db = bc.grad();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) db[j] += g[i * n + j];
        }
      }
    });
  }
  return out;
}

Tensor reshape(Tape* tape, const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    fail("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor out = Tensor::from(std::move(shape), x.data());
  out.set_requires_grad(needs_grad(x));
  if (tape && out.requires_grad()) {
    Tensor xc = x, oc = out;
    tape->record([xc, oc]() mutable {
      const auto& g = oc.grad();
      auto& dx = xc.grad();
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    });
  }
  return out;
}

Tensor flatten(Tape* tape, const Tensor& x) { return reshape(tape, x, {x.numel()}); }

Tensor flatten_batch(Tape* tape, const Tensor& x) {
  if (x.ndim() < 1) fail("flatten_batch: rank-0 input");
  return reshape(tape, x, {x.dim(0), x.numel() / x.dim(0)});
}

Tensor concat(Tape* tape, const std::vector<Tensor>& xs, std::size_t axis) {
  if (xs.empty()) fail("concat: no inputs");
  const Shape& s0 = xs[0].shape();
  if (axis >= s0.size()) fail("concat: axis out of range");
  std::size_t axis_total = 0;
  for (const Tensor& t : xs) {
    if (t.ndim() != s0.size()) fail("concat: rank mismatch");
    for (std::size_t i = 0; i < s0.size(); ++i) {
      if (i != axis && t.dim(i) != s0[i]) {
        fail("concat: shape mismatch on non-concat axis: " + shape_str(t.shape()) +
             " vs " + shape_str(s0));
      }
    }
    axis_total += t.dim(axis);
  }
  Shape os = s0;
  os[axis] = axis_total;
  Tensor out = Tensor::zeros(os);

  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];

  std::size_t offset = 0;
  bool rg = false;
  for (const Tensor& t : xs) {
    const std::size_t block = t.dim(axis) * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::memcpy(out.data().data() + (o * axis_total + offset) * inner,
                  t.data().data() + o * block, block * sizeof(double));
    }
    offset += t.dim(axis);
    rg = rg || needs_grad(t);
  }
  out.set_requires_grad(rg);
  if (tape && rg) {
    std::vector<Tensor> xc = xs;
    Tensor oc = out;
    tape->record([xc, oc, outer, inner, axis_total, axis]() mutable {
      const double* g = oc.grad().data();
      std::size_t off = 0;
      for (Tensor& t : xc) {
        const std::size_t block = t.dim(axis) * inner;
        if (t.requires_grad()) {
          double* dx = t.grad().data();
          for (std::size_t o = 0; o < outer; ++o) {
            const double* gsrc = g + (o * axis_total + off) * inner;
            double* ddst = dx + o * block;
            for (std::size_t i = 0; i < block; ++i) ddst[i] += gsrc[i];
          }
        }
        off += t.dim(axis);
      }
    });
  }
  return out;
}

Tensor embedding_lookup(Tape* tape, const Tensor& table, const std::vector<std::size_t>& ids) {
  if (table.ndim() != 2) fail("embedding_lookup: table must be 2-D");
  const std::size_t rows = table.dim(0), m = table.dim(1);
  for (std::size_t id : ids) {
    if (id >= rows) {
      fail("embedding_lookup: index " + std::to_string(id) + " out of range [0," +
           std::to_string(rows) + ")");
    }
  }
  Tensor out = Tensor::zeros({ids.size(), m});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::memcpy(out.data().data() + i * m, table.data().data() + ids[i] * m,
                m * sizeof(double));
  }
  out.set_requires_grad(needs_grad(table));
  if (tape && out.requires_grad()) {
    Tensor tc = table, oc = out;
    tape->record([tc, oc, ids, m]() mutable {
      const double* g = oc.grad().data();
      double* dt = tc.grad().data();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        double* drow = dt + ids[i] * m;
        const double* grow = g + i * m;
        for (std::size_t j = 0; j < m; ++j) drow[j] += grow[j];
      }
    });
  }
  return out;
}

Tensor dropout(Tape* tape, const Tensor& x, double p, bool train, Rng& rng) {
  if (p < 0.0 || p >= 1.0) fail("dropout: p must be in [0,1)");
  if (!train || p == 0.0) return x;
  const double scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<std::uint8_t>>(x.numel());
  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.data();
  auto& ov = out.data();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const bool keep = rng.uniform01() >= p;
    (*mask)[i] = keep;
    ov[i] = keep ? xv[i] * scale : 0.0;
  }
  out.set_requires_grad(needs_grad(x));
  if (tape && out.requires_grad()) {
    Tensor xc = x, oc = out;
    tape->record([xc, oc, mask, scale]() mutable {
      const auto& g = oc.grad();
      auto& dx = xc.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if ((*mask)[i]) dx[i] += g[i] * scale;
      }
    });
  }
  return out;
}

Tensor batchnorm(Tape* tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 Tensor running_mean, Tensor running_var, double momentum, double eps,
                 bool train) {
  if (x.ndim() != 2 && x.ndim() != 4) fail("batchnorm: input must be [B,D] or [B,C,H,W]");
  const std::size_t c = x.dim(1);
  const std::size_t spatial = x.ndim() == 4 ? x.dim(2) * x.dim(3) : 1;
  const std::size_t b = x.dim(0);
  const std::size_t per_c = b * spatial;
  if (gamma.numel() != c || beta.numel() != c) fail("batchnorm: parameter size mismatch");

  Tensor out = Tensor::zeros(x.shape());
  const double* xv = x.data().data();
  double* ov = out.data().data();

  auto index = [c, spatial](std::size_t bi, std::size_t ci, std::size_t si) {
    return (bi * c + ci) * spatial + si;
  };

  if (!train) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      const double ivar = 1.0 / std::sqrt(running_var.data()[ci] + eps);
      const double mu = running_mean.data()[ci];
      const double gsc = gamma.data()[ci] * ivar;
      const double bt = beta.data()[ci];
      for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t si = 0; si < spatial; ++si) {
          const std::size_t i = index(bi, ci, si);
          ov[i] = (xv[i] - mu) * gsc + bt;
        }
      }
    }
    check_finite(out, "batchnorm");
    out.set_requires_grad(needs_grad(x) || needs_grad(gamma) || needs_grad(beta));
    // Inference-time backward is rarely needed; the running statistics are
    // constants, so it is a plain affine transform per channel.
    if (tape && out.requires_grad()) {
      Tensor xc = x, gc = gamma, bc2 = beta, oc = out, rv = running_var, rm = running_mean;
      tape->record([xc, gc, bc2, oc, rv, rm, b, c, spatial, eps, index]() mutable {
        const double* g = oc.grad().data();
        for (std::size_t ci = 0; ci < c; ++ci) {
          const double ivar = 1.0 / std::sqrt(rv.data()[ci] + eps);
          double dg = 0.0, db = 0.0;
          for (std::size_t bi = 0; bi < b; ++bi) {
            for (std::size_t si = 0; si < spatial; ++si) {
              const std::size_t i = index(bi, ci, si);
              if (xc.requires_grad()) xc.grad()[i] += g[i] * gc.data()[ci] * ivar;
              dg += g[i] * (xc.data()[i] - rm.data()[ci]) * ivar;
              db += g[i];
            }
          }
          if (gc.requires_grad()) gc.grad()[ci] += dg;
          if (bc2.requires_grad()) bc2.grad()[ci] += db;
        }
      });
    }
    return out;
  }

  auto mean = std::make_shared<std::vector<double>>(c);
  auto ivar = std::make_shared<std::vector<double>>(c);
  for (std::size_t ci = 0; ci < c; ++ci) {
    double mu = 0.0;
    for (std::size_t bi = 0; bi < b; ++bi) {
      for (std::size_t si = 0; si < spatial; ++si) mu += xv[index(bi, ci, si)];
    }
    mu /= static_cast<double>(per_c);
    double var = 0.0;
    for (std::size_t bi = 0; bi < b; ++bi) {
      for (std::size_t si = 0; si < spatial; ++si) {
        const double dd = xv[index(bi, ci, si)] - mu;
        var += dd * dd;
      }
    }
    var /= static_cast<double>(per_c);
    (*mean)[ci] = mu;
    (*ivar)[ci] = 1.0 / std::sqrt(var + eps);
    running_mean.data()[ci] = (1.0 - momentum) * running_mean.data()[ci] + momentum * mu;
    running_var.data()[ci] = (1.0 - momentum) * running_var.data()[ci] + momentum * var;
    const double gsc = gamma.data()[ci] * (*ivar)[ci];
    const double bt = beta.data()[ci];
    for (std::size_t bi = 0; bi < b; ++bi) {
      for (std::size_t si = 0; si < spatial; ++si) {
        const std::size_t i = index(bi, ci, si);
        ov[i] = (xv[i] - mu) * gsc + bt;
      }
    }
  }
  check_finite(out, "batchnorm");
  out.set_requires_grad(needs_grad(x) || needs_grad(gamma) || needs_grad(beta));
  if (tape && out.requires_grad()) {
    Tensor xc = x, gc = gamma, bc2 = beta, oc = out;
    tape->record([xc, gc, bc2, oc, mean, ivar, b, c, spatial, per_c, index]() mutable {
      const double* g = oc.grad().data();
      const double* xd = xc.data().data();
      const double inv_n = 1.0 / static_cast<double>(per_c);
      for (std::size_t ci = 0; ci < c; ++ci) {
        const double mu = (*mean)[ci], iv = (*ivar)[ci], ga = gc.data()[ci];
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t bi = 0; bi < b; ++bi) {
          for (std::size_t si = 0; si < spatial; ++si) {
            const std::size_t i = index(bi, ci, si);
            sum_g += g[i];
            sum_gx += g[i] * (xd[i] - mu) * iv;
          }
        }
        if (gc.requires_grad()) gc.grad()[ci] += sum_gx;
        if (bc2.requires_grad()) bc2.grad()[ci] += sum_g;
        if (xc.requires_grad()) {
          double* dx = xc.grad().data();
          for (std::size_t bi = 0; bi < b; ++bi) {
            for (std::size_t si = 0; si < spatial; ++si) {
              const std::size_t i = index(bi, ci, si);
              const double xhat = (xd[i] - mu) * iv;
              dx[i] += ga * iv * (g[i] - inv_n * sum_g - inv_n * xhat * sum_gx);
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor sum(Tape* tape, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor out = Tensor::scalar(acc);
  out.set_requires_grad(needs_grad(x));
  if (tape && out.requires_grad()) {
    Tensor xc = x, oc = out;
    tape->record([xc, oc]() mutable {
      const double g = oc.grad()[0];
      auto& dx = xc.grad();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g;
    });
  }
  return out;
}

Tensor bce_listwise(Tape* tape, const Tensor& probs, const Tensor& labels, double clamp_eps) {
  if (probs.shape() != labels.shape() || probs.ndim() != 2) {
    fail("bce_listwise: probs " + shape_str(probs.shape()) + " vs labels " +
         shape_str(labels.shape()));
  }
  const std::size_t bsz = probs.dim(0), n = probs.dim(1);
  const double lo = clamp_eps, hi = 1.0 - clamp_eps;
  const auto& pv = probs.data();
  const auto& tv = labels.data();
  double loss = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double p = std::clamp(pv[i], lo, hi);
    loss -= tv[i] * std::log(p) + (1.0 - tv[i]) * std::log(1.0 - p);
  }
  loss /= static_cast<double>(bsz * n);
  Tensor out = Tensor::scalar(loss);
  check_finite(out, "bce_listwise");
  out.set_requires_grad(needs_grad(probs));
  if (tape && out.requires_grad()) {
    Tensor pc = probs, tc = labels, oc = out;
    tape->record([pc, tc, oc, lo, hi, bsz, n]() mutable {
      const double g = oc.grad()[0] / static_cast<double>(bsz * n);
      const auto& pv2 = pc.data();
      const auto& tv2 = tc.data();
      auto& dp = pc.grad();
      for (std::size_t i = 0; i < pv2.size(); ++i) {
        // Clamp is treated as identity for the gradient; the clamped value
        // bounds the denominator.
        const double p = std::clamp(pv2[i], lo, hi);
        dp[i] += g * (p - tv2[i]) / (p * (1.0 - p));
      }
    });
  }
  return out;
}

}  // namespace acre::ops
