#include "cpattn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cpattn/kernels.hpp"

namespace cpattn {

Var make_var(Tensor value) {
    auto n = std::make_shared<Node>();
    n->grad = Tensor(value.shape());
    n->value = std::move(value);
    n->requires_grad = true;
    return n;
}

Var make_const(Tensor value) {
    auto n = make_var(std::move(value));
    n->requires_grad = false;
    return n;
}

void Tape::backward(const Var& loss) {
    if (!loss || !loss->value.is_scalar()) {
        throw std::invalid_argument("backward: loss must be a scalar tensor");
    }
    for (auto& n : touched_) n->grad.fill(0.0);
    loss->grad.fill(0.0);
    loss->grad[0] = 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

void Tape::clear() {
    steps_.clear();
    touched_.clear();
}

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

namespace ops {

namespace {

void check_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) {
        throw std::runtime_error(std::string(op) + ": non-finite value in result");
    }
}

Var emit(Tape& tape, Tensor value, const char* op, std::initializer_list<Var> inputs) {
    check_finite(value, op);
    bool needs = false;
    for (const auto& in : inputs) {
        if (in && in->requires_grad) needs = true;
        if (in) tape.touch(in);
    }
    Var out = make_var(std::move(value));
    out->requires_grad = needs;
    tape.touch(out);
    return out;
}

std::vector<int> broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.ndim() != b.ndim()) {
        throw std::invalid_argument(std::string(op) + ": rank mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    std::vector<int> out(a.shape());
    for (int i = 0; i < a.ndim(); ++i) {
        const int ea = a.extent(i), eb = b.extent(i);
        if (ea == eb) {
            out[static_cast<std::size_t>(i)] = ea;
        } else if (ea == 1 || eb == 1) {
            out[static_cast<std::size_t>(i)] = std::max(ea, eb);
        } else {
            throw std::invalid_argument(std::string(op) + ": shapes not broadcastable " +
                                        shape_str(a.shape()) + " vs " + shape_str(b.shape()));
        }
    }
    return out;
}

// Maps a linear index in `out_shape` to a linear index in `in_shape`, where
// in_shape may have singleton axes broadcast against out_shape.
struct BroadcastMap {
    std::vector<int> out_shape;
    std::vector<std::size_t> in_strides;  // 0 on broadcast axes

    BroadcastMap(const std::vector<int>& out, const std::vector<int>& in) : out_shape(out) {
        in_strides.resize(in.size());
        std::size_t s = 1;
        for (int i = static_cast<int>(in.size()) - 1; i >= 0; --i) {
            const auto ui = static_cast<std::size_t>(i);
            in_strides[ui] = (in[ui] == 1 && out[ui] != 1) ? 0 : s;
            s *= static_cast<std::size_t>(in[ui]);
        }
    }

    std::size_t map(std::size_t lin) const {
        std::size_t off = 0;
        for (int i = static_cast<int>(out_shape.size()) - 1; i >= 0; --i) {
            const auto ui = static_cast<std::size_t>(i);
            const auto e = static_cast<std::size_t>(out_shape[ui]);
            off += (lin % e) * in_strides[ui];
            lin /= e;
        }
        return off;
    }
};

kernels::Conv2dGeom conv_geom(const Tensor& in, const Tensor& ker, Stride2 stride, Pad2 pad) {
    if (in.ndim() != 3 || ker.ndim() != 4) {
        throw std::invalid_argument("conv2d: expected input [ci x h x w] and kernel "
                                    "[co x ci x fh x fw], got " +
                                    shape_str(in.shape()) + " and " + shape_str(ker.shape()));
    }
    if (ker.extent(1) != in.extent(0)) {
        throw std::invalid_argument("conv2d: channel mismatch, input " + shape_str(in.shape()) +
                                    " vs kernel " + shape_str(ker.shape()));
    }
    if (stride.h < 1 || stride.w < 1 || pad.h < 0 || pad.w < 0) {
        throw std::invalid_argument("conv2d: stride must be >= 1 and padding >= 0");
    }
    kernels::Conv2dGeom g;
    g.ci = in.extent(0);
    g.h = in.extent(1);
    g.w = in.extent(2);
    g.co = ker.extent(0);
    g.fh = ker.extent(2);
    g.fw = ker.extent(3);
    g.sh = stride.h;
    g.sw = stride.w;
    g.ph = pad.h;
    g.pw = pad.w;
    if (g.fh > g.h + 2 * g.ph || g.fw > g.w + 2 * g.pw) {
        throw std::invalid_argument("conv2d: kernel " + shape_str(ker.shape()) +
                                    " larger than padded input " + shape_str(in.shape()));
    }
    return g;
}

}  // namespace

Var matmul(Tape& tape, const Var& a, const Var& b) {
    const Tensor& av = a->value;
    const Tensor& bv = b->value;
    if (av.ndim() != 2 || (bv.ndim() != 2 && bv.ndim() != 1)) {
        throw std::invalid_argument("matmul: expected [m x k] by [k x n] or [k], got " +
                                    shape_str(av.shape()) + " and " + shape_str(bv.shape()));
    }
    const int m = av.extent(0), k = av.extent(1);
    const bool vec = bv.ndim() == 1;
    const int kb = bv.extent(0);
    const int n = vec ? 1 : bv.extent(1);
    if (kb != k) {
        throw std::invalid_argument("matmul: inner extents mismatch " + shape_str(av.shape()) +
                                    " vs " + shape_str(bv.shape()));
    }
    Tensor out(vec ? std::vector<int>{m} : std::vector<int>{m, n});
    kernels::matmul_serial(av.data(), bv.data(), out.data(), m, k, n);
    Var o = emit(tape, std::move(out), "matmul", {a, b});
    tape.record([a, b, o, m, k, n] {
        const double* g = o->grad.data();
        if (a->requires_grad) {
            double* ga = a->grad.data();
            const double* bd = b->value.data();
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (int j = 0; j < n; ++j)
                        acc += g[static_cast<std::size_t>(i) * n + j] *
                               bd[static_cast<std::size_t>(p) * n + j];
                    ga[static_cast<std::size_t>(i) * k + p] += acc;
                }
        }
        if (b->requires_grad) {
            double* gb = b->grad.data();
            const double* ad = a->value.data();
            for (int p = 0; p < k; ++p)
                for (int j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (int i = 0; i < m; ++i)
                        acc += ad[static_cast<std::size_t>(i) * k + p] *
                               g[static_cast<std::size_t>(i) * n + j];
                    gb[static_cast<std::size_t>(p) * n + j] += acc;
                }
        }
    });
    return o;
}

Var conv2d(Tape& tape, const Var& input, const Var& kernel, const Var& bias,
           Stride2 stride, Pad2 pad) {
    const kernels::Conv2dGeom g = conv_geom(input->value, kernel->value, stride, pad);
    if (bias && (bias->value.ndim() != 1 || bias->value.extent(0) != g.co)) {
        throw std::invalid_argument("conv2d: bias shape " + shape_str(bias->value.shape()) +
                                    " does not match output channels " + std::to_string(g.co));
    }
    Tensor out({g.co, g.out_h(), g.out_w()});
    kernels::conv2d_forward(g, input->value.data(), kernel->value.data(),
                            bias ? bias->value.data() : nullptr, out.data());
    Var o = bias ? emit(tape, std::move(out), "conv2d", {input, kernel, bias})
                 : emit(tape, std::move(out), "conv2d", {input, kernel});
    tape.record([input, kernel, bias, o, g] {
        const double* gout = o->grad.data();
        if (input->requires_grad) {
            Tensor gin({g.ci, g.h, g.w});
            kernels::conv2d_input_grad(g, gout, kernel->value.data(), gin.data());
            double* dst = input->grad.data();
            for (std::size_t i = 0; i < gin.numel(); ++i) dst[i] += gin[i];
        }
        if (kernel->requires_grad || (bias && bias->requires_grad)) {
            Tensor gker({g.co, g.ci, g.fh, g.fw});
            Tensor gb = bias ? Tensor({g.co}) : Tensor::scalar(0.0);
            kernels::conv2d_param_grad(g, gout, input->value.data(), gker.data(),
                                       bias ? gb.data() : nullptr);
            if (kernel->requires_grad) {
                double* dst = kernel->grad.data();
                for (std::size_t i = 0; i < gker.numel(); ++i) dst[i] += gker[i];
            }
            if (bias && bias->requires_grad) {
                double* dst = bias->grad.data();
                for (std::size_t i = 0; i < gb.numel(); ++i) dst[i] += gb[i];
            }
        }
    });
    return o;
}

Var global_average_pool(Tape& tape, const Var& input, int channel_axis) {
    const Tensor& x = input->value;
    if (channel_axis < 0 || channel_axis >= x.ndim()) {
        throw std::invalid_argument("global_average_pool: channel axis " +
                                    std::to_string(channel_axis) + " out of range for " +
                                    shape_str(x.shape()));
    }
    const int j_extent = x.extent(channel_axis);
    const std::size_t other = x.numel() / static_cast<std::size_t>(j_extent);
    if (other == 0) {
        throw std::invalid_argument("global_average_pool: empty non-channel axes in " +
                                    shape_str(x.shape()));
    }
    // suffix stride of the channel axis in row-major order
    std::size_t suffix = 1;
    for (int i = channel_axis + 1; i < x.ndim(); ++i)
        suffix *= static_cast<std::size_t>(x.extent(i));

    Tensor out({j_extent});
    const double* xd = x.data();
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const std::size_t j = (i / suffix) % static_cast<std::size_t>(j_extent);
        out[j] += xd[i];
    }
    const double inv = 1.0 / static_cast<double>(other);
    for (int j = 0; j < j_extent; ++j) out[static_cast<std::size_t>(j)] *= inv;

    Var o = emit(tape, std::move(out), "global_average_pool", {input});
    tape.record([input, o, suffix, j_extent, inv] {
        if (!input->requires_grad) return;
        double* gin = input->grad.data();
        const double* g = o->grad.data();
        const std::size_t n = input->value.numel();
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j = (i / suffix) % static_cast<std::size_t>(j_extent);
            gin[i] += g[j] * inv;
        }
    });
    return o;
}

Var relu(Tape& tape, const Var& x) {
    Tensor out(x->value.shape());
    const double* xd = x->value.data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = xd[i] > 0.0 ? xd[i] : 0.0;
    Var o = emit(tape, std::move(out), "relu", {x});
    tape.record([x, o] {
        if (!x->requires_grad) return;
        double* gin = x->grad.data();
        const double* g = o->grad.data();
        const double* xd = x->value.data();
        // relu'(0) := 0
        for (std::size_t i = 0; i < x->value.numel(); ++i)
            if (xd[i] > 0.0) gin[i] += g[i];
    });
    return o;
}

Var sigmoid(Tape& tape, const Var& x) {
    Tensor out(x->value.shape());
    const double* xd = x->value.data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = stable_sigmoid(xd[i]);
    Var o = emit(tape, std::move(out), "sigmoid", {x});
    tape.record([x, o] {
        if (!x->requires_grad) return;
        double* gin = x->grad.data();
        const double* g = o->grad.data();
        const double* y = o->value.data();
        for (std::size_t i = 0; i < x->value.numel(); ++i) gin[i] += g[i] * y[i] * (1.0 - y[i]);
    });
    return o;
}

namespace {

Var binary_broadcast(Tape& tape, const Var& a, const Var& b, const char* name, bool is_add) {
    const std::vector<int> os = broadcast_shape(a->value, b->value, name);
    const BroadcastMap ma(os, a->value.shape());
    const BroadcastMap mb(os, b->value.shape());
    Tensor out(os);
    const double* ad = a->value.data();
    const double* bd = b->value.data();
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double av = ad[ma.map(i)];
        const double bv = bd[mb.map(i)];
        out[i] = is_add ? av + bv : av * bv;
    }
    Var o = emit(tape, std::move(out), name, {a, b});
    tape.record([a, b, o, ma, mb, is_add] {
        const double* g = o->grad.data();
        const std::size_t n = o->value.numel();
        if (a->requires_grad) {
            double* ga = a->grad.data();
            const double* bd = b->value.data();
            for (std::size_t i = 0; i < n; ++i)
                ga[ma.map(i)] += is_add ? g[i] : g[i] * bd[mb.map(i)];
        }
        if (b->requires_grad) {
            double* gb = b->grad.data();
            const double* ad = a->value.data();
            for (std::size_t i = 0; i < n; ++i)
                gb[mb.map(i)] += is_add ? g[i] : g[i] * ad[ma.map(i)];
        }
    });
    return o;
}

}  // namespace

Var add(Tape& tape, const Var& a, const Var& b) { return binary_broadcast(tape, a, b, "add", true); }
Var mul(Tape& tape, const Var& a, const Var& b) { return binary_broadcast(tape, a, b, "mul", false); }

Var scale(Tape& tape, const Var& x, double c) {
    Tensor out(x->value.shape());
    const double* xd = x->value.data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = c * xd[i];
    Var o = emit(tape, std::move(out), "scale", {x});
    tape.record([x, o, c] {
        if (!x->requires_grad) return;
        double* gin = x->grad.data();
        const double* g = o->grad.data();
        for (std::size_t i = 0; i < x->value.numel(); ++i) gin[i] += c * g[i];
    });
    return o;
}

Var softmax(Tape& tape, const Var& logits) {
    const Tensor& x = logits->value;
    if (x.ndim() != 1 || x.extent(0) < 1) {
        throw std::invalid_argument("softmax: expected non-empty 1-D logits, got " +
                                    shape_str(x.shape()));
    }
    const int n = x.extent(0);
    double mx = x[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, x[static_cast<std::size_t>(i)]);
    Tensor out({n});
    double denom = 0.0;
    for (int i = 0; i < n; ++i) {
        out[static_cast<std::size_t>(i)] = std::exp(x[static_cast<std::size_t>(i)] - mx);
        denom += out[static_cast<std::size_t>(i)];
    }
    for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] /= denom;
    Var o = emit(tape, std::move(out), "softmax", {logits});
    tape.record([logits, o, n] {
        if (!logits->requires_grad) return;
        const double* g = o->grad.data();
        const double* y = o->value.data();
        double dot = 0.0;
        for (int i = 0; i < n; ++i) dot += g[i] * y[i];
        double* gin = logits->grad.data();
        for (int i = 0; i < n; ++i) gin[i] += y[i] * (g[i] - dot);
    });
    return o;
}

Var sum(Tape& tape, const Var& x) {
    double acc = 0.0;
    const double* xd = x->value.data();
    for (std::size_t i = 0; i < x->value.numel(); ++i) acc += xd[i];
    Var o = emit(tape, Tensor::scalar(acc), "sum", {x});
    tape.record([x, o] {
        if (!x->requires_grad) return;
        const double g = o->grad[0];
        double* gin = x->grad.data();
        for (std::size_t i = 0; i < x->value.numel(); ++i) gin[i] += g;
    });
    return o;
}

Var permute(Tape& tape, const Var& x, const std::vector<int>& axes) {
    const Tensor& xv = x->value;
    const int nd = xv.ndim();
    if (static_cast<int>(axes.size()) != nd) {
        throw std::invalid_argument("permute: axes size " + std::to_string(axes.size()) +
                                    " does not match rank of " + shape_str(xv.shape()));
    }
    std::vector<bool> seen(static_cast<std::size_t>(nd), false);
    std::vector<int> os(static_cast<std::size_t>(nd));
    for (int i = 0; i < nd; ++i) {
        const int a = axes[static_cast<std::size_t>(i)];
        if (a < 0 || a >= nd || seen[static_cast<std::size_t>(a)]) {
            throw std::invalid_argument("permute: invalid axis list");
        }
        seen[static_cast<std::size_t>(a)] = true;
        os[static_cast<std::size_t>(i)] = xv.extent(a);
    }
    // strides of the source, reordered to the output axis order
    std::vector<std::size_t> in_strides(static_cast<std::size_t>(nd), 1);
    for (int i = nd - 2; i >= 0; --i)
        in_strides[static_cast<std::size_t>(i)] =
            in_strides[static_cast<std::size_t>(i + 1)] *
            static_cast<std::size_t>(xv.extent(i + 1));
    std::vector<std::size_t> strides(static_cast<std::size_t>(nd));
    for (int i = 0; i < nd; ++i)
        strides[static_cast<std::size_t>(i)] =
            in_strides[static_cast<std::size_t>(axes[static_cast<std::size_t>(i)])];

    Tensor out(os);
    const double* xd = xv.data();
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t lin = i, off = 0;
        for (int d = nd - 1; d >= 0; --d) {
            const auto e = static_cast<std::size_t>(os[static_cast<std::size_t>(d)]);
            off += (lin % e) * strides[static_cast<std::size_t>(d)];
            lin /= e;
        }
        out[i] = xd[off];
    }
    Var o = emit(tape, std::move(out), "permute", {x});
    tape.record([x, o, os, strides, nd] {
        if (!x->requires_grad) return;
        double* gin = x->grad.data();
        const double* g = o->grad.data();
        const std::size_t n = o->value.numel();
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t lin = i, off = 0;
            for (int d = nd - 1; d >= 0; --d) {
                const auto e = static_cast<std::size_t>(os[static_cast<std::size_t>(d)]);
                off += (lin % e) * strides[static_cast<std::size_t>(d)];
                lin /= e;
            }
            gin[off] += g[i];
        }
    });
    return o;
}

Var reshape(Tape& tape, const Var& x, const std::vector<int>& shape) {
    if (checked_numel(shape) != x->value.numel()) {
        throw std::invalid_argument("reshape: cannot view " + shape_str(x->value.shape()) +
                                    " as " + shape_str(shape));
    }
    Tensor out(shape);
    const double* xd = x->value.data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = xd[i];
    Var o = emit(tape, std::move(out), "reshape", {x});
    tape.record([x, o] {
        if (!x->requires_grad) return;
        double* gin = x->grad.data();
        const double* g = o->grad.data();
        for (std::size_t i = 0; i < x->value.numel(); ++i) gin[i] += g[i];
    });
    return o;
}

Var weighted_nll(Tape& tape, const Var& probs, int label, double alpha) {
    const Tensor& p = probs->value;
    if (p.ndim() != 1) {
        throw std::invalid_argument("weighted_nll: expected 1-D probabilities, got " +
                                    shape_str(p.shape()));
    }
    if (label < 0 || label >= p.extent(0)) {
        throw std::invalid_argument("weighted_nll: label " + std::to_string(label) +
                                    " out of range for " + shape_str(p.shape()));
    }
    constexpr double kFloor = 1e-12;
    const double pl = p[static_cast<std::size_t>(label)];
    const double clamped = std::max(pl, kFloor);
    Var o = emit(tape, Tensor::scalar(-alpha * std::log(clamped)), "weighted_nll", {probs});
    tape.record([probs, o, label, alpha, pl, clamped] {
        if (!probs->requires_grad || pl <= 1e-12) return;
        probs->grad[static_cast<std::size_t>(label)] += o->grad[0] * (-alpha / clamped);
    });
    return o;
}

Var param_norm(Tape& tape, const std::vector<Var>& params, bool squared) {
    double sq = 0.0;
    for (const auto& p : params) {
        const double* d = p->value.data();
        for (std::size_t i = 0; i < p->value.numel(); ++i) sq += d[i] * d[i];
    }
    const double norm = std::sqrt(sq);
    Tensor out = Tensor::scalar(squared ? sq : norm);
    check_finite(out, "param_norm");
    Var o = make_var(std::move(out));
    o->requires_grad = true;
    tape.touch(o);
    for (const auto& p : params) tape.touch(p);
    auto ps = params;
    tape.record([ps, o, norm, squared] {
        const double g = o->grad[0];
        for (const auto& p : ps) {
            if (!p->requires_grad) continue;
            const double* d = p->value.data();
            double* gd = p->grad.data();
            if (squared) {
                for (std::size_t i = 0; i < p->value.numel(); ++i) gd[i] += g * 2.0 * d[i];
            } else if (norm >= 1e-12) {
                for (std::size_t i = 0; i < p->value.numel(); ++i) gd[i] += g * d[i] / norm;
            }
        }
    });
    return o;
}

}  // namespace ops
}  // namespace cpattn
