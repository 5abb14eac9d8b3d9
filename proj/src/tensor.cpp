#include "saltseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace saltseg {

namespace {

thread_local int g_nograd_depth = 0;

Tensor make_raw(Array data, Shape shape, bool requires_grad) {
    if (shape.size() > 4) {
        throw DimensionError("tensor rank " + std::to_string(shape.size()) + " exceeds 4");
    }
    for (Index d : shape) {
        if (d <= 0) throw DimensionError("tensor dimension must be positive, got " + std::to_string(d));
    }
    if (data.size() != shape_numel(shape)) {
        throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                             shape_str(shape));
    }
    return Tensor::from_data(std::move(data), std::move(shape), requires_grad);
}

bool any_requires_grad(const std::vector<Tensor>& ts) {
    for (const auto& t : ts) {
        if (t.requires_grad()) return true;
    }
    return false;
}

// Attaches tape bookkeeping only when grads are enabled and needed.
Tensor make_op(const char* op, Shape shape, Array data, std::vector<Tensor> parents,
               const std::function<std::function<void(const Array&)>()>& make_backward) {
    const bool rg = grad_enabled() && any_requires_grad(parents);
    Tensor out = make_raw(std::move(data), std::move(shape), rg);
    out.node()->op = op;
    if (rg) {
        out.node()->parents = std::move(parents);
        out.node()->backward_fn = make_backward();
    }
    return out;
}

struct Dims4 {
    Index d[4];
};

// Pads a shape to rank 4 with leading 1s.
Dims4 pad4(const Shape& s) {
    Dims4 r{{1, 1, 1, 1}};
    const std::size_t off = 4 - s.size();
    for (std::size_t i = 0; i < s.size(); ++i) r.d[off + i] = s[i];
    return r;
}

Dims4 row_major_strides(const Dims4& dims) {
    Dims4 st{};
    st.d[3] = 1;
    for (int i = 2; i >= 0; --i) st.d[i] = st.d[i + 1] * dims.d[i + 1];
    return st;
}

void check_axis(const Tensor& x, int axis, const char* op) {
    if (axis < 0 || axis >= static_cast<int>(x.shape().size())) {
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                             " out of range for rank " + std::to_string(x.shape().size()));
    }
}

double stable_sigmoid(double v) {
    if (v >= 0.0) {
        return 1.0 / (1.0 + std::exp(-v));
    }
    const double e = std::exp(v);
    return e / (1.0 + e);
}

}  // namespace

Index shape_numel(const Shape& s) {
    Index n = 1;
    for (Index d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << ")";
    return os.str();
}

Tensor Tensor::from_data(Array data, Shape shape, bool requires_grad) {
    Tensor t;
    t.n_ = std::make_shared<TensorNode>();
    t.n_->shape = std::move(shape);
    t.n_->data = std::move(data);
    t.n_->requires_grad = requires_grad;
    if (t.n_->shape.size() > 4) {
        throw DimensionError("tensor rank exceeds 4");
    }
    if (t.n_->data.size() != shape_numel(t.n_->shape)) {
        throw DimensionError("data length does not match shape " + shape_str(t.n_->shape));
    }
    return t;
}

Tensor Tensor::from_values(std::initializer_list<double> v, Shape shape, bool requires_grad) {
    Array a(static_cast<Index>(v.size()));
    Index i = 0;
    for (double x : v) a[i++] = x;
    return from_data(std::move(a), std::move(shape), requires_grad);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    Array a = Array::Zero(shape_numel(shape));
    return from_data(std::move(a), std::move(shape), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Array a = Array::Constant(shape_numel(shape), value);
    return from_data(std::move(a), std::move(shape), requires_grad);
}

double Tensor::item() const {
    if (numel() != 1) throw ArgumentError("item(): tensor has " + std::to_string(numel()) + " elements");
    return n_->data[0];
}

Index Tensor::flat_index(std::initializer_list<Index> idx) const {
    if (static_cast<Index>(idx.size()) != rank()) {
        throw DimensionError("index rank mismatch");
    }
    Index flat = 0;
    std::size_t k = 0;
    for (Index i : idx) {
        const Index d = n_->shape[k];
        if (i < 0 || i >= d) throw DimensionError("index out of bounds on axis " + std::to_string(k));
        flat = flat * d + i;
        ++k;
    }
    return flat;
}

double Tensor::at(std::initializer_list<Index> idx) const { return n_->data[flat_index(idx)]; }

void Tensor::zero_grad() const {
    if (!n_->requires_grad) return;
    n_->grad = Array::Zero(n_->data.size());
}

void Tensor::accumulate_grad(const Array& g) const {
    if (g.size() != n_->data.size()) {
        throw DimensionError("gradient size mismatch: " + std::to_string(g.size()) + " vs " +
                             std::to_string(n_->data.size()));
    }
    if (n_->grad.size() == 0) {
        n_->grad = g;
    } else {
        n_->grad += g;
    }
}

Tensor Tensor::detached_copy(bool requires_grad) const {
    return from_data(n_->data, n_->shape, requires_grad);
}

NoGradGuard::NoGradGuard() { ++g_nograd_depth; }
NoGradGuard::~NoGradGuard() { --g_nograd_depth; }
bool grad_enabled() { return g_nograd_depth == 0; }

// --- conv2d ------------------------------------------------------------------

namespace {

struct ConvGeom {
    Index n, c_in, h, w;
    Index c_out, k;
    Index stride, padding, groups;
    Index cg, m;   // channels per group (in), filters per group
    Index ho, wo;  // output spatial
    Index kk;      // cg * k * k
    Index p;       // ho * wo
};

ConvGeom conv_geometry(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int padding,
                       int groups) {
    if (x.rank() != 4) throw DimensionError("conv2d: input must be rank 4, got " + shape_str(x.shape()));
    if (w.rank() != 4) throw DimensionError("conv2d: weight must be rank 4, got " + shape_str(w.shape()));
    ConvGeom g{};
    g.n = x.dim(0);
    g.c_in = x.dim(1);
    g.h = x.dim(2);
    g.w = x.dim(3);
    g.c_out = w.dim(0);
    g.k = w.dim(2);
    if (w.dim(3) != g.k) throw DimensionError("conv2d: kernel must be square, got " + shape_str(w.shape()));
    if (g.k % 2 == 0) throw ArgumentError("conv2d: kernel size must be odd, got " + std::to_string(g.k));
    if (stride < 1) throw ArgumentError("conv2d: stride must be >= 1");
    if (padding < 0) throw ArgumentError("conv2d: padding must be >= 0");
    if (groups < 1) throw ArgumentError("conv2d: groups must be >= 1");
    if (g.c_in % groups != 0) {
        throw DimensionError("conv2d: input channel axis (" + std::to_string(g.c_in) +
                             ") not divisible by groups " + std::to_string(groups));
    }
    if (g.c_out % groups != 0) {
        throw DimensionError("conv2d: output channel axis (" + std::to_string(g.c_out) +
                             ") not divisible by groups " + std::to_string(groups));
    }
    if (w.dim(1) != g.c_in / groups) {
        throw DimensionError("conv2d: weight channel axis " + std::to_string(w.dim(1)) + " expected " +
                             std::to_string(g.c_in / groups));
    }
    if (bias && (bias->rank() != 1 || bias->dim(0) != g.c_out)) {
        throw DimensionError("conv2d: bias axis must have length " + std::to_string(g.c_out));
    }
    g.stride = stride;
    g.padding = padding;
    g.groups = groups;
    g.cg = g.c_in / groups;
    g.m = g.c_out / groups;
    g.ho = (g.h + 2 * g.padding - g.k) / g.stride + 1;
    g.wo = (g.w + 2 * g.padding - g.k) / g.stride + 1;
    if (g.h + 2 * g.padding < g.k || g.w + 2 * g.padding < g.k) {
        throw DimensionError("conv2d: kernel exceeds padded spatial axes " + shape_str(x.shape()));
    }
    g.kk = g.cg * g.k * g.k;
    g.p = g.ho * g.wo;
    return g;
}

// col is kk x p row-major; values outside the input are zero.
void im2col(const double* x_ncHW, const ConvGeom& g, Index group, double* col) {
    for (Index ci = 0; ci < g.cg; ++ci) {
        const double* plane = x_ncHW + (group * g.cg + ci) * g.h * g.w;
        for (Index kh = 0; kh < g.k; ++kh) {
            for (Index kw = 0; kw < g.k; ++kw) {
                double* row = col + ((ci * g.k + kh) * g.k + kw) * g.p;
                for (Index ho = 0; ho < g.ho; ++ho) {
                    const Index hi = ho * g.stride - g.padding + kh;
                    double* dst = row + ho * g.wo;
                    if (hi < 0 || hi >= g.h) {
                        std::fill(dst, dst + g.wo, 0.0);
                        continue;
                    }
                    const double* src = plane + hi * g.w;
                    for (Index wo = 0; wo < g.wo; ++wo) {
                        const Index wi = wo * g.stride - g.padding + kw;
                        dst[wo] = (wi >= 0 && wi < g.w) ? src[wi] : 0.0;
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int padding, int groups) {
    const ConvGeom g = conv_geometry(x, w, bias, stride, padding, groups);

    Array out = Array::Zero(g.n * g.c_out * g.p);
    std::vector<double> col(static_cast<std::size_t>(g.kk * g.p));
    const double* xd = x.data().data();
    const double* wd = w.data().data();
    const double* bd = bias ? bias->data().data() : nullptr;

    for (Index n = 0; n < g.n; ++n) {
        const double* xn = xd + n * g.c_in * g.h * g.w;
        for (Index grp = 0; grp < g.groups; ++grp) {
            im2col(xn, g, grp, col.data());
            for (Index i = 0; i < g.m; ++i) {
                const Index co = grp * g.m + i;
                double* orow = out.data() + (n * g.c_out + co) * g.p;
                const double b = bd ? bd[co] : 0.0;
                std::fill(orow, orow + g.p, b);
                const double* wrow = wd + co * g.kk;
                // k ascends for every output element: one canonical summation order.
                for (Index kk = 0; kk < g.kk; ++kk) {
                    const double a = wrow[kk];
                    const double* crow = col.data() + kk * g.p;
                    for (Index j = 0; j < g.p; ++j) orow[j] += a * crow[j];
                }
            }
        }
    }

    std::vector<Tensor> parents{x, w};
    if (bias) parents.push_back(*bias);
    const bool has_bias = bias != nullptr;
    Tensor bias_t = bias ? *bias : Tensor();

    return make_op("conv2d", {g.n, g.c_out, g.ho, g.wo}, std::move(out), std::move(parents),
                   [x, w, bias_t, has_bias, g]() {
                       return [x, w, bias_t, has_bias, g](const Array& gout) {
                           const double* god = gout.data();
                           const double* xd = x.data().data();
                           const double* wd = w.data().data();

                           if (has_bias && bias_t.requires_grad()) {
                               Array db = Array::Zero(g.c_out);
                               for (Index n = 0; n < g.n; ++n) {
                                   for (Index co = 0; co < g.c_out; ++co) {
                                       const double* row = god + (n * g.c_out + co) * g.p;
                                       double acc = 0.0;
                                       for (Index j = 0; j < g.p; ++j) acc += row[j];
                                       db[co] += acc;
                                   }
                               }
                               bias_t.accumulate_grad(db);
                           }

                           const bool need_dw = w.requires_grad();
                           const bool need_dx = x.requires_grad();
                           if (!need_dw && !need_dx) return;

                           Array dw = need_dw ? Array::Zero(w.numel()) : Array();
                           Array dx = need_dx ? Array::Zero(x.numel()) : Array();
                           std::vector<double> col(static_cast<std::size_t>(g.kk * g.p));
                           std::vector<double> dcol(static_cast<std::size_t>(g.kk * g.p));

                           for (Index n = 0; n < g.n; ++n) {
                               const double* xn = xd + n * g.c_in * g.h * g.w;
                               for (Index grp = 0; grp < g.groups; ++grp) {
                                   if (need_dw) {
                                       im2col(xn, g, grp, col.data());
                                       for (Index i = 0; i < g.m; ++i) {
                                           const Index co = grp * g.m + i;
                                           const double* grow = god + (n * g.c_out + co) * g.p;
                                           double* dwrow = dw.data() + co * g.kk;
                                           for (Index kk = 0; kk < g.kk; ++kk) {
                                               const double* crow = col.data() + kk * g.p;
                                               double acc = 0.0;
                                               for (Index j = 0; j < g.p; ++j) acc += grow[j] * crow[j];
                                               dwrow[kk] += acc;
                                           }
                                       }
                                   }
                                   if (need_dx) {
                                       std::fill(dcol.begin(), dcol.end(), 0.0);
                                       for (Index kk = 0; kk < g.kk; ++kk) {
                                           double* drow = dcol.data() + kk * g.p;
                                           for (Index i = 0; i < g.m; ++i) {
                                               const Index co = grp * g.m + i;
                                               const double a = wd[co * g.kk + kk];
                                               const double* grow = god + (n * g.c_out + co) * g.p;
                                               for (Index j = 0; j < g.p; ++j) drow[j] += a * grow[j];
                                           }
                                       }
                                       // col2im scatter
                                       for (Index ci = 0; ci < g.cg; ++ci) {
                                           double* plane =
                                               dx.data() + (n * g.c_in + grp * g.cg + ci) * g.h * g.w;
                                           for (Index kh = 0; kh < g.k; ++kh) {
                                               for (Index kw = 0; kw < g.k; ++kw) {
                                                   const double* drow =
                                                       dcol.data() + ((ci * g.k + kh) * g.k + kw) * g.p;
                                                   for (Index ho = 0; ho < g.ho; ++ho) {
                                                       const Index hi = ho * g.stride - g.padding + kh;
                                                       if (hi < 0 || hi >= g.h) continue;
                                                       for (Index wo = 0; wo < g.wo; ++wo) {
                                                           const Index wi = wo * g.stride - g.padding + kw;
                                                           if (wi < 0 || wi >= g.w) continue;
                                                           plane[hi * g.w + wi] += drow[ho * g.wo + wo];
                                                       }
                                                   }
                                               }
                                           }
                                       }
                                   }
                               }
                           }
                           if (need_dw) w.accumulate_grad(dw);
                           if (need_dx) x.accumulate_grad(dx);
                       };
                   });
}

// --- pointwise ---------------------------------------------------------------

Tensor relu(const Tensor& x) {
    Array out = x.data().max(0.0);
    return make_op("relu", x.shape(), std::move(out), {x}, [x]() {
        return [x](const Array& gout) {
            if (!x.requires_grad()) return;
            Array gx = (x.data() > 0.0).select(gout, 0.0);
            x.accumulate_grad(gx);
        };
    });
}

Tensor sigmoid(const Tensor& x) {
    Array out = x.data().unaryExpr([](double v) { return stable_sigmoid(v); });
    Array saved = out;
    return make_op("sigmoid", x.shape(), std::move(out), {x}, [x, saved = std::move(saved)]() {
        return [x, saved](const Array& gout) {
            if (!x.requires_grad()) return;
            Array gx = gout * saved * (1.0 - saved);
            x.accumulate_grad(gx);
        };
    });
}

Tensor scalar_mul(const Tensor& a, double c) {
    Array out = a.data() * c;
    return make_op("scalar_mul", a.shape(), std::move(out), {a}, [a, c]() {
        return [a, c](const Array& gout) {
            if (!a.requires_grad()) return;
            Array ga = gout * c;
            a.accumulate_grad(ga);
        };
    });
}

// --- broadcasting add / mul ---------------------------------------------------

namespace {

struct BroadcastPlan {
    Dims4 out_dims;
    Dims4 a_stride;  // zero on broadcast axes
    Dims4 b_stride;
    Shape out_shape;
    Index out_numel;
};

BroadcastPlan broadcast_plan(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rank() != b.rank()) {
        throw DimensionError(std::string(op) + ": rank mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    const Dims4 da = pad4(a.shape());
    const Dims4 db = pad4(b.shape());
    BroadcastPlan p{};
    for (int i = 0; i < 4; ++i) {
        if (da.d[i] == db.d[i] || da.d[i] == 1 || db.d[i] == 1) {
            p.out_dims.d[i] = std::max(da.d[i], db.d[i]);
        } else {
            throw DimensionError(std::string(op) + ": axis " +
                                 std::to_string(i - (4 - static_cast<int>(a.rank()))) +
                                 " not conformable: " + shape_str(a.shape()) + " vs " +
                                 shape_str(b.shape()));
        }
    }
    const Dims4 sa = row_major_strides(da);
    const Dims4 sb = row_major_strides(db);
    for (int i = 0; i < 4; ++i) {
        p.a_stride.d[i] = da.d[i] == 1 ? 0 : sa.d[i];
        p.b_stride.d[i] = db.d[i] == 1 ? 0 : sb.d[i];
    }
    const std::size_t rank = a.shape().size();
    p.out_shape.assign(p.out_dims.d + (4 - rank), p.out_dims.d + 4);
    p.out_numel = 1;
    for (int i = 0; i < 4; ++i) p.out_numel *= p.out_dims.d[i];
    return p;
}

template <typename F>
void broadcast_walk(const BroadcastPlan& p, F&& f) {
    Index flat = 0;
    for (Index i0 = 0; i0 < p.out_dims.d[0]; ++i0)
        for (Index i1 = 0; i1 < p.out_dims.d[1]; ++i1)
            for (Index i2 = 0; i2 < p.out_dims.d[2]; ++i2) {
                Index ia = i0 * p.a_stride.d[0] + i1 * p.a_stride.d[1] + i2 * p.a_stride.d[2];
                Index ib = i0 * p.b_stride.d[0] + i1 * p.b_stride.d[1] + i2 * p.b_stride.d[2];
                for (Index i3 = 0; i3 < p.out_dims.d[3]; ++i3) {
                    f(flat++, ia, ib);
                    ia += p.a_stride.d[3];
                    ib += p.b_stride.d[3];
                }
            }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) {
        Array out = a.data() + b.data();
        return make_op("add", a.shape(), std::move(out), {a, b}, [a, b]() {
            return [a, b](const Array& gout) {
                if (a.requires_grad()) a.accumulate_grad(gout);
                if (b.requires_grad()) b.accumulate_grad(gout);
            };
        });
    }
    const BroadcastPlan p = broadcast_plan(a, b, "add");
    Array out(p.out_numel);
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    broadcast_walk(p, [&](Index o, Index ia, Index ib) { out[o] = ad[ia] + bd[ib]; });
    return make_op("add", p.out_shape, std::move(out), {a, b}, [a, b, p]() {
        return [a, b, p](const Array& gout) {
            if (a.requires_grad()) {
                Array ga = Array::Zero(a.numel());
                broadcast_walk(p, [&](Index o, Index ia, Index) { ga[ia] += gout[o]; });
                a.accumulate_grad(ga);
            }
            if (b.requires_grad()) {
                Array gb = Array::Zero(b.numel());
                broadcast_walk(p, [&](Index o, Index, Index ib) { gb[ib] += gout[o]; });
                b.accumulate_grad(gb);
            }
        };
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) {
        Array out = a.data() * b.data();
        return make_op("mul", a.shape(), std::move(out), {a, b}, [a, b]() {
            return [a, b](const Array& gout) {
                if (a.requires_grad()) {
                    Array ga = gout * b.data();
                    a.accumulate_grad(ga);
                }
                if (b.requires_grad()) {
                    Array gb = gout * a.data();
                    b.accumulate_grad(gb);
                }
            };
        });
    }
    const BroadcastPlan p = broadcast_plan(a, b, "mul");
    Array out(p.out_numel);
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    broadcast_walk(p, [&](Index o, Index ia, Index ib) { out[o] = ad[ia] * bd[ib]; });
    return make_op("mul", p.out_shape, std::move(out), {a, b}, [a, b, p]() {
        return [a, b, p](const Array& gout) {
            const double* ad = a.data().data();
            const double* bd = b.data().data();
            if (a.requires_grad()) {
                Array ga = Array::Zero(a.numel());
                broadcast_walk(p, [&](Index o, Index ia, Index ib) { ga[ia] += gout[o] * bd[ib]; });
                a.accumulate_grad(ga);
            }
            if (b.requires_grad()) {
                Array gb = Array::Zero(b.numel());
                broadcast_walk(p, [&](Index o, Index ia, Index ib) { gb[ib] += gout[o] * ad[ia]; });
                b.accumulate_grad(gb);
            }
        };
    });
}

// --- concat / slice / reshape --------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ArgumentError("concat: no operands");
    const Tensor& first = parts.front();
    check_axis(first, axis, "concat");
    Index axis_total = 0;
    for (const auto& t : parts) {
        if (t.rank() != first.rank()) {
            throw DimensionError("concat: rank mismatch " + shape_str(t.shape()) + " vs " +
                                 shape_str(first.shape()));
        }
        for (int d = 0; d < static_cast<int>(first.rank()); ++d) {
            if (d == axis) continue;
            if (t.dim(d) != first.dim(d)) {
                throw DimensionError("concat: axis " + std::to_string(d) + " mismatch: " +
                                     shape_str(t.shape()) + " vs " + shape_str(first.shape()));
            }
        }
        axis_total += t.dim(axis);
    }
    Shape out_shape = first.shape();
    out_shape[static_cast<std::size_t>(axis)] = axis_total;

    Index outer = 1;
    for (int d = 0; d < axis; ++d) outer *= first.dim(d);
    Index inner = 1;
    for (int d = axis + 1; d < static_cast<int>(first.rank()); ++d) inner *= first.dim(d);

    Array out(shape_numel(out_shape));
    const Index out_row = axis_total * inner;
    Index offset = 0;
    for (const auto& t : parts) {
        const Index rows = t.dim(axis) * inner;
        const double* src = t.data().data();
        for (Index o = 0; o < outer; ++o) {
            std::memcpy(out.data() + o * out_row + offset, src + o * rows,
                        static_cast<std::size_t>(rows) * sizeof(double));
        }
        offset += rows;
    }

    std::vector<Tensor> parents = parts;
    return make_op("concat", std::move(out_shape), std::move(out), std::move(parents),
                   [parts, outer, out_row]() {
                       return [parts, outer, out_row](const Array& gout) {
                           Index off = 0;
                           for (const auto& t : parts) {
                               const Index rows = t.numel() / outer;
                               if (t.requires_grad()) {
                                   Array g(t.numel());
                                   for (Index o = 0; o < outer; ++o) {
                                       std::memcpy(g.data() + o * rows, gout.data() + o * out_row + off,
                                                   static_cast<std::size_t>(rows) * sizeof(double));
                                   }
                                   t.accumulate_grad(g);
                               }
                               off += rows;
                           }
                       };
                   });
}

Tensor slice(const Tensor& x, int axis, Index start, Index len) {
    check_axis(x, axis, "slice");
    const Index d = x.dim(axis);
    if (start < 0 || len < 1 || start + len > d) {
        throw DimensionError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                             ") out of bounds for axis " + std::to_string(axis) + " of length " +
                             std::to_string(d));
    }
    Index outer = 1;
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    Index inner = 1;
    for (int i = axis + 1; i < static_cast<int>(x.rank()); ++i) inner *= x.dim(i);

    Shape out_shape = x.shape();
    out_shape[static_cast<std::size_t>(axis)] = len;
    Array out(outer * len * inner);
    const double* src = x.data().data();
    for (Index o = 0; o < outer; ++o) {
        std::memcpy(out.data() + o * len * inner, src + (o * d + start) * inner,
                    static_cast<std::size_t>(len * inner) * sizeof(double));
    }
    return make_op("slice", std::move(out_shape), std::move(out), {x}, [x, outer, inner, d, start, len]() {
        return [x, outer, inner, d, start, len](const Array& gout) {
            if (!x.requires_grad()) return;
            Array gx = Array::Zero(x.numel());
            for (Index o = 0; o < outer; ++o) {
                std::memcpy(gx.data() + (o * d + start) * inner, gout.data() + o * len * inner,
                            static_cast<std::size_t>(len * inner) * sizeof(double));
            }
            x.accumulate_grad(gx);
        };
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: element count mismatch " + shape_str(x.shape()) + " -> " +
                             shape_str(shape));
    }
    Array out = x.data();
    return make_op("reshape", std::move(shape), std::move(out), {x}, [x]() {
        return [x](const Array& gout) {
            if (x.requires_grad()) x.accumulate_grad(gout);
        };
    });
}

// --- reductions ----------------------------------------------------------------

Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    const double* d = x.data().data();
    for (Index i = 0; i < x.numel(); ++i) s += d[i];
    Array out(1);
    out[0] = s;
    return make_op("sum", {1}, std::move(out), {x}, [x]() {
        return [x](const Array& gout) {
            if (!x.requires_grad()) return;
            Array gx = Array::Constant(x.numel(), gout[0]);
            x.accumulate_grad(gx);
        };
    });
}

Tensor mean_all(const Tensor& x) {
    double s = 0.0;
    const double* d = x.data().data();
    for (Index i = 0; i < x.numel(); ++i) s += d[i];
    const double inv = 1.0 / static_cast<double>(x.numel());
    Array out(1);
    out[0] = s * inv;
    return make_op("mean", {1}, std::move(out), {x}, [x, inv]() {
        return [x, inv](const Array& gout) {
            if (!x.requires_grad()) return;
            Array gx = Array::Constant(x.numel(), gout[0] * inv);
            x.accumulate_grad(gx);
        };
    });
}

Tensor global_avg_pool(const Tensor& x) {
    if (x.rank() != 4) throw DimensionError("global_avg_pool: input must be rank 4");
    const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Array out(n * c);
    const double* d = x.data().data();
    const double inv = 1.0 / static_cast<double>(hw);
    for (Index i = 0; i < n * c; ++i) {
        const double* p = d + i * hw;
        double s = 0.0;
        for (Index j = 0; j < hw; ++j) s += p[j];
        out[i] = s * inv;
    }
    return make_op("global_avg_pool", {n, c, 1, 1}, std::move(out), {x}, [x, n, c, hw, inv]() {
        return [x, n, c, hw, inv](const Array& gout) {
            if (!x.requires_grad()) return;
            Array gx(x.numel());
            for (Index i = 0; i < n * c; ++i) {
                const double g = gout[i] * inv;
                double* p = gx.data() + i * hw;
                std::fill(p, p + hw, g);
            }
            x.accumulate_grad(gx);
        };
    });
}

Tensor dense(const Tensor& x, const Tensor& w, const Tensor* bias) {
    if (x.rank() != 2 || w.rank() != 2) throw DimensionError("dense: operands must be rank 2");
    const Index n = x.dim(0), fin = x.dim(1), fout = w.dim(0);
    if (w.dim(1) != fin) {
        throw DimensionError("dense: weight inner axis " + std::to_string(w.dim(1)) + " expected " +
                             std::to_string(fin));
    }
    if (bias && (bias->rank() != 1 || bias->dim(0) != fout)) {
        throw DimensionError("dense: bias axis must have length " + std::to_string(fout));
    }
    Array out(n * fout);
    const double* xd = x.data().data();
    const double* wd = w.data().data();
    const double* bd = bias ? bias->data().data() : nullptr;
    for (Index i = 0; i < n; ++i) {
        for (Index o = 0; o < fout; ++o) {
            double acc = bd ? bd[o] : 0.0;
            const double* xr = xd + i * fin;
            const double* wr = wd + o * fin;
            for (Index f = 0; f < fin; ++f) acc += xr[f] * wr[f];
            out[i * fout + o] = acc;
        }
    }
    std::vector<Tensor> parents{x, w};
    if (bias) parents.push_back(*bias);
    const bool has_bias = bias != nullptr;
    Tensor bias_t = bias ? *bias : Tensor();
    return make_op("dense", {n, fout}, std::move(out), std::move(parents),
                   [x, w, bias_t, has_bias, n, fin, fout]() {
                       return [x, w, bias_t, has_bias, n, fin, fout](const Array& gout) {
                           const double* xd = x.data().data();
                           const double* wd = w.data().data();
                           if (has_bias && bias_t.requires_grad()) {
                               Array db = Array::Zero(fout);
                               for (Index i = 0; i < n; ++i)
                                   for (Index o = 0; o < fout; ++o) db[o] += gout[i * fout + o];
                               bias_t.accumulate_grad(db);
                           }
                           if (x.requires_grad()) {
                               Array dx = Array::Zero(n * fin);
                               for (Index i = 0; i < n; ++i)
                                   for (Index o = 0; o < fout; ++o) {
                                       const double g = gout[i * fout + o];
                                       const double* wr = wd + o * fin;
                                       double* dr = dx.data() + i * fin;
                                       for (Index f = 0; f < fin; ++f) dr[f] += g * wr[f];
                                   }
                               x.accumulate_grad(dx);
                           }
                           if (w.requires_grad()) {
                               Array dw = Array::Zero(fout * fin);
                               for (Index i = 0; i < n; ++i)
                                   for (Index o = 0; o < fout; ++o) {
                                       const double g = gout[i * fout + o];
                                       const double* xr = xd + i * fin;
                                       double* dr = dw.data() + o * fin;
                                       for (Index f = 0; f < fin; ++f) dr[f] += g * xr[f];
                                   }
                               w.accumulate_grad(dw);
                           }
                       };
                   });
}

// --- maxpool -------------------------------------------------------------------

Tensor maxpool2d(const Tensor& x, int k, int stride, int padding) {
    if (x.rank() != 4) throw DimensionError("maxpool2d: input must be rank 4");
    if (k < 1 || stride < 1) throw ArgumentError("maxpool2d: k and stride must be >= 1");
    if (padding < 0 || padding >= k) throw ArgumentError("maxpool2d: padding must be in [0, k)");
    const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (k > h || k > w) {
        throw DimensionError("maxpool2d: window " + std::to_string(k) + " larger than input spatial axes " +
                             shape_str(x.shape()));
    }
    const Index ho = (h + 2 * padding - k) / stride + 1;
    const Index wo = (w + 2 * padding - k) / stride + 1;

    Array out(n * c * ho * wo);
    std::vector<Index> argmax(static_cast<std::size_t>(out.size()));
    const double* xd = x.data().data();
    Index oi = 0;
    for (Index nc = 0; nc < n * c; ++nc) {
        const double* plane = xd + nc * h * w;
        for (Index i = 0; i < ho; ++i) {
            for (Index j = 0; j < wo; ++j, ++oi) {
                double best = 0.0;
                Index best_idx = -1;
                for (Index kh = 0; kh < k; ++kh) {
                    const Index hi = i * stride - padding + kh;
                    if (hi < 0 || hi >= h) continue;
                    for (Index kw = 0; kw < k; ++kw) {
                        const Index wi = j * stride - padding + kw;
                        if (wi < 0 || wi >= w) continue;
                        const double v = plane[hi * w + wi];
                        if (best_idx < 0 || v > best) {  // ties keep the lowest linear index
                            best = v;
                            best_idx = hi * w + wi;
                        }
                    }
                }
                out[oi] = best;
                argmax[static_cast<std::size_t>(oi)] = nc * h * w + best_idx;
            }
        }
    }
    return make_op("maxpool2d", {n, c, ho, wo}, std::move(out), {x},
                   [x, argmax = std::move(argmax)]() {
                       return [x, argmax](const Array& gout) {
                           if (!x.requires_grad()) return;
                           Array gx = Array::Zero(x.numel());
                           for (Index i = 0; i < gout.size(); ++i) {
                               gx[argmax[static_cast<std::size_t>(i)]] += gout[i];
                           }
                           x.accumulate_grad(gx);
                       };
                   });
}

// --- bilinear upsample -----------------------------------------------------------

namespace {

struct LerpAxis {
    std::vector<Index> lo, hi;
    std::vector<double> t;
};

LerpAxis lerp_axis(Index in, int factor) {
    LerpAxis a;
    const Index out = in * factor;
    a.lo.resize(static_cast<std::size_t>(out));
    a.hi.resize(static_cast<std::size_t>(out));
    a.t.resize(static_cast<std::size_t>(out));
    for (Index i = 0; i < out; ++i) {
        const double src = (static_cast<double>(i) + 0.5) / factor - 0.5;
        double f = std::floor(src);
        double t = src - f;
        Index lo = static_cast<Index>(f);
        Index hi = lo + 1;
        if (lo < 0) {
            lo = 0;
            hi = 0;
            t = 0.0;
        } else if (hi > in - 1) {
            lo = in - 1;
            hi = in - 1;
            t = 0.0;
        }
        a.lo[static_cast<std::size_t>(i)] = lo;
        a.hi[static_cast<std::size_t>(i)] = hi;
        a.t[static_cast<std::size_t>(i)] = t;
    }
    return a;
}

}  // namespace

Tensor bilinear_upsample(const Tensor& x, int factor) {
    if (x.rank() != 4) throw DimensionError("bilinear_upsample: input must be rank 4");
    if (factor < 1) throw ArgumentError("bilinear_upsample: factor must be >= 1");
    const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const Index ho = h * factor, wo = w * factor;
    const LerpAxis ay = lerp_axis(h, factor);
    const LerpAxis ax = lerp_axis(w, factor);

    Array out(n * c * ho * wo);
    const double* xd = x.data().data();
    Index oi = 0;
    for (Index nc = 0; nc < n * c; ++nc) {
        const double* plane = xd + nc * h * w;
        for (Index i = 0; i < ho; ++i) {
            const Index y0 = ay.lo[static_cast<std::size_t>(i)];
            const Index y1 = ay.hi[static_cast<std::size_t>(i)];
            const double ty = ay.t[static_cast<std::size_t>(i)];
            for (Index j = 0; j < wo; ++j, ++oi) {
                const Index x0 = ax.lo[static_cast<std::size_t>(j)];
                const Index x1 = ax.hi[static_cast<std::size_t>(j)];
                const double tx = ax.t[static_cast<std::size_t>(j)];
                const double v00 = plane[y0 * w + x0];
                const double v01 = plane[y0 * w + x1];
                const double v10 = plane[y1 * w + x0];
                const double v11 = plane[y1 * w + x1];
                const double top = v00 + (v01 - v00) * tx;
                const double bot = v10 + (v11 - v10) * tx;
                out[oi] = top + (bot - top) * ty;
            }
        }
    }
    return make_op("bilinear_upsample", {n, c, ho, wo}, std::move(out), {x},
                   [x, ay, ax, n, c, h, w, ho, wo]() {
                       return [x, ay, ax, n, c, h, w, ho, wo](const Array& gout) {
                           if (!x.requires_grad()) return;
                           Array gx = Array::Zero(x.numel());
                           Index oi = 0;
                           for (Index nc = 0; nc < n * c; ++nc) {
                               double* plane = gx.data() + nc * h * w;
                               for (Index i = 0; i < ho; ++i) {
                                   const Index y0 = ay.lo[static_cast<std::size_t>(i)];
                                   const Index y1 = ay.hi[static_cast<std::size_t>(i)];
                                   const double ty = ay.t[static_cast<std::size_t>(i)];
                                   for (Index j = 0; j < wo; ++j, ++oi) {
                                       const Index x0 = ax.lo[static_cast<std::size_t>(j)];
                                       const Index x1 = ax.hi[static_cast<std::size_t>(j)];
                                       const double tx = ax.t[static_cast<std::size_t>(j)];
                                       const double g = gout[oi];
                                       plane[y0 * w + x0] += g * (1.0 - ty) * (1.0 - tx);
                                       plane[y0 * w + x1] += g * (1.0 - ty) * tx;
                                       plane[y1 * w + x0] += g * ty * (1.0 - tx);
                                       plane[y1 * w + x1] += g * ty * tx;
                                   }
                               }
                           }
                           x.accumulate_grad(gx);
                       };
                   });
}

// --- batchnorm -------------------------------------------------------------------

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                   Tensor& running_var, bool train, double momentum, double eps) {
    if (x.rank() != 4) throw DimensionError("batchnorm2d: input must be rank 4");
    const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    auto check_param = [c](const Tensor& t, const char* name) {
        if (t.rank() != 1 || t.dim(0) != c) {
            throw DimensionError(std::string("batchnorm2d: ") + name + " channel axis must have length " +
                                 std::to_string(c));
        }
    };
    check_param(gamma, "gamma");
    check_param(beta, "beta");
    check_param(running_mean, "running_mean");
    check_param(running_var, "running_var");

    const Index hw = h * w;
    const Index m = n * hw;
    Array mean(c), var(c);
    const double* xd = x.data().data();

    if (train) {
        mean.setZero();
        for (Index ni = 0; ni < n; ++ni)
            for (Index ci = 0; ci < c; ++ci) {
                const double* p = xd + (ni * c + ci) * hw;
                double s = 0.0;
                for (Index j = 0; j < hw; ++j) s += p[j];
                mean[ci] += s;
            }
        mean /= static_cast<double>(m);
        var.setZero();
        for (Index ni = 0; ni < n; ++ni)
            for (Index ci = 0; ci < c; ++ci) {
                const double* p = xd + (ni * c + ci) * hw;
                const double mu = mean[ci];
                double s = 0.0;
                for (Index j = 0; j < hw; ++j) {
                    const double d = p[j] - mu;
                    s += d * d;
                }
                var[ci] += s;
            }
        var /= static_cast<double>(m);
        running_mean.data() = (1.0 - momentum) * running_mean.data() + momentum * mean;
        running_var.data() = (1.0 - momentum) * running_var.data() + momentum * var;
    } else {
        mean = running_mean.data();
        var = running_var.data();
    }

    Array invstd = (var + eps).sqrt().inverse();
    Array out(x.numel());
    Array xhat(x.numel());
    for (Index ni = 0; ni < n; ++ni)
        for (Index ci = 0; ci < c; ++ci) {
            const double mu = mean[ci];
            const double is = invstd[ci];
            const double g = gamma.data()[ci];
            const double b = beta.data()[ci];
            const double* p = xd + (ni * c + ci) * hw;
            double* ph = xhat.data() + (ni * c + ci) * hw;
            double* po = out.data() + (ni * c + ci) * hw;
            for (Index j = 0; j < hw; ++j) {
                const double xn = (p[j] - mu) * is;
                ph[j] = xn;
                po[j] = xn * g + b;
            }
        }

    return make_op("batchnorm2d", x.shape(), std::move(out), {x, gamma, beta},
                   [x, gamma, beta, xhat = std::move(xhat), invstd = std::move(invstd), n, c, hw, m,
                    train]() {
                       return [x, gamma, beta, xhat, invstd, n, c, hw, m, train](const Array& gout) {
                           Array sum_dy = Array::Zero(c);
                           Array sum_dy_xhat = Array::Zero(c);
                           for (Index ni = 0; ni < n; ++ni)
                               for (Index ci = 0; ci < c; ++ci) {
                                   const double* g = gout.data() + (ni * c + ci) * hw;
                                   const double* ph = xhat.data() + (ni * c + ci) * hw;
                                   double s1 = 0.0, s2 = 0.0;
                                   for (Index j = 0; j < hw; ++j) {
                                       s1 += g[j];
                                       s2 += g[j] * ph[j];
                                   }
                                   sum_dy[ci] += s1;
                                   sum_dy_xhat[ci] += s2;
                               }
                           if (beta.requires_grad()) beta.accumulate_grad(sum_dy);
                           if (gamma.requires_grad()) gamma.accumulate_grad(sum_dy_xhat);
                           if (x.requires_grad()) {
                               Array gx(x.numel());
                               const double md = static_cast<double>(m);
                               for (Index ni = 0; ni < n; ++ni)
                                   for (Index ci = 0; ci < c; ++ci) {
                                       const double gbar = gamma.data()[ci] * invstd[ci];
                                       const double sd = sum_dy[ci];
                                       const double sdx = sum_dy_xhat[ci];
                                       const double* g = gout.data() + (ni * c + ci) * hw;
                                       const double* ph = xhat.data() + (ni * c + ci) * hw;
                                       double* o = gx.data() + (ni * c + ci) * hw;
                                       if (train) {
                                           for (Index j = 0; j < hw; ++j) {
                                               o[j] = gbar * (g[j] - sd / md - ph[j] * sdx / md);
                                           }
                                       } else {
                                           for (Index j = 0; j < hw; ++j) o[j] = gbar * g[j];
                                       }
                                   }
                               x.accumulate_grad(gx);
                           }
                       };
                   });
}

// --- backward engine ---------------------------------------------------------------

void backward(const Tensor& loss) {
    if (!loss.defined()) throw ArgumentError("backward: undefined tensor");
    if (loss.numel() != 1) {
        throw ArgumentError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    TensorNode* root = loss.node();
    if (root->backward_ran) {
        throw ArgumentError("backward: tape already consumed for this loss; rebuild the graph");
    }
    root->backward_ran = true;
    if (!root->requires_grad) return;

    // Iterative post-order DFS; children (parents in tape terms) first.
    std::vector<TensorNode*> topo;
    std::unordered_set<TensorNode*> visited;
    struct Frame {
        TensorNode* node;
        std::size_t next;
    };
    std::vector<Frame> stack;
    stack.push_back({root, 0});
    visited.insert(root);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.node->parents.size()) {
            TensorNode* p = f.node->parents[f.next++].node();
            if (p->requires_grad && visited.insert(p).second) {
                stack.push_back({p, 0});
            }
        } else {
            topo.push_back(f.node);
            stack.pop_back();
        }
    }

    loss.accumulate_grad(Array::Ones(1));
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        TensorNode* node = *it;
        if (node->backward_fn && node->grad.size() > 0) {
            node->backward_fn(node->grad);
        }
    }
}

}  // namespace saltseg
