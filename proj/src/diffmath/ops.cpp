#include "gtalk/diffmath/ops.hpp"

#include "gtalk/util/error.hpp"
#include "gtalk/util/rng.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <memory>
#include <cmath>
#include <string>

namespace gtalk::diff {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}

Tape& tape_of(Var v, const char* op) {
    if (!v.valid()) throw Error(std::string(op) + ": unbound input");
    return *v.tape();
}

bool is_scalar(const Shape& s) { return s.size() == 1 && s[0] == 1; }

template <typename F, typename D>
Var unary(const char* kind, Var a, F f, D dfdx_from_xy) {
    const Array& x = a.value();
    Array y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    return tape_of(a, kind).record(kind, {a}, std::move(y), [dfdx_from_xy](const BackwardContext& c) {
        if (!c.input_grads[0]) return;
        const Array& x = *c.inputs[0];
        Array& gx = *c.input_grads[0];
        for (std::size_t i = 0; i < x.size(); ++i) gx[i] += c.grad_output[i] * dfdx_from_xy(x[i], c.output[i]);
    });
}

// Splits a shape around `axis` into (outer, extent, inner) element counts.
struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split(const Shape& s, std::size_t axis) {
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    r.extent = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

} // namespace

Var matmul(Var a, Var b) {
    const Array& A = a.value();
    const Array& B = b.value();
    if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) shape_fail("matmul", A.shape(), B.shape());
    const auto m = A.dim(0), k = A.dim(1), n = B.dim(1);
    Array out({m, n});
    Map(out.data(), m, n).noalias() = MapC(A.data(), m, k) * MapC(B.data(), k, n);
    return tape_of(a, "matmul").record("matmul", {a, b}, std::move(out), [m, k, n](const BackwardContext& c) {
        MapC G(c.grad_output.data(), m, n);
        if (c.input_grads[0]) Map(c.input_grads[0]->data(), m, k).noalias() += G * MapC(c.inputs[1]->data(), k, n).transpose();
        if (c.input_grads[1]) Map(c.input_grads[1]->data(), k, n).noalias() += MapC(c.inputs[0]->data(), m, k).transpose() * G;
    });
}

namespace {

// Shared by add/sub: out = a + sign * b with scalar broadcast on either side.
Var add_signed(const char* kind, Var a, Var b, double sign) {
    const Array& A = a.value();
    const Array& B = b.value();
    const bool sa = is_scalar(A.shape()) && !is_scalar(B.shape());
    const bool sb = is_scalar(B.shape()) && !is_scalar(A.shape());
    if (!sa && !sb && A.shape() != B.shape()) shape_fail(kind, A.shape(), B.shape());
    Array out(sa ? B.shape() : A.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[sa ? 0 : i] + sign * B[sb ? 0 : i];
    return tape_of(a, kind).record(kind, {a, b}, std::move(out), [sa, sb, sign](const BackwardContext& c) {
        const Array& g = c.grad_output;
        if (Array* ga = c.input_grads[0])
            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[sa ? 0 : i] += g[i];
        if (Array* gb = c.input_grads[1])
            for (std::size_t i = 0; i < g.size(); ++i) (*gb)[sb ? 0 : i] += sign * g[i];
    });
}

} // namespace

Var add(Var a, Var b) { return add_signed("add", a, b, 1.0); }
Var sub(Var a, Var b) { return add_signed("sub", a, b, -1.0); }

Var mul(Var a, Var b) {
    const Array& A = a.value();
    const Array& B = b.value();
    const bool sa = is_scalar(A.shape()) && !is_scalar(B.shape());
    const bool sb = is_scalar(B.shape()) && !is_scalar(A.shape());
    if (!sa && !sb && A.shape() != B.shape()) shape_fail("mul", A.shape(), B.shape());
    Array out(sa ? B.shape() : A.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[sa ? 0 : i] * B[sb ? 0 : i];
    return tape_of(a, "mul").record("mul", {a, b}, std::move(out), [sa, sb](const BackwardContext& c) {
        const Array& g = c.grad_output;
        const Array& A = *c.inputs[0];
        const Array& B = *c.inputs[1];
        if (Array* ga = c.input_grads[0])
            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[sa ? 0 : i] += g[i] * B[sb ? 0 : i];
        if (Array* gb = c.input_grads[1])
            for (std::size_t i = 0; i < g.size(); ++i) (*gb)[sb ? 0 : i] += g[i] * A[sa ? 0 : i];
    });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& first = parts[0].shape();
    if (axis >= first.size()) throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + shape_string(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    std::vector<std::size_t> extents;
    for (const Var& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != first.size()) shape_fail("concat", first, s);
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != first[i]) shape_fail("concat", first, s);
        out_shape[axis] += s[axis];
        extents.push_back(s[axis]);
    }
    const AxisSplit os = split(out_shape, axis);
    Array out(out_shape);
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const Array& v = parts[p].value();
        const std::size_t block = extents[p] * os.inner;
        for (std::size_t o = 0; o < os.outer; ++o)
            std::copy_n(v.data() + o * block, block, out.data() + o * os.extent * os.inner + offset * os.inner);
        offset += extents[p];
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return tape_of(parts[0], "concat").record("concat", std::move(inputs), std::move(out), [os, extents](const BackwardContext& c) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < extents.size(); ++p) {
            const std::size_t block = extents[p] * os.inner;
            if (Array* g = c.input_grads[p]) {
                for (std::size_t o = 0; o < os.outer; ++o) {
                    const double* src = c.grad_output.data() + o * os.extent * os.inner + offset * os.inner;
                    double* dst = g->data() + o * block;
                    for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                }
            }
            offset += extents[p];
        }
    });
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
    const Shape& s = a.shape();
    if (axis >= s.size() || begin >= end || end > s[axis])
        throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                         std::to_string(axis) + " invalid for " + shape_string(s));
    const AxisSplit is = split(s, axis);
    Shape out_shape = s;
    out_shape[axis] = end - begin;
    Array out(out_shape);
    const std::size_t block = (end - begin) * is.inner;
    const Array& v = a.value();
    for (std::size_t o = 0; o < is.outer; ++o)
        std::copy_n(v.data() + o * is.extent * is.inner + begin * is.inner, block, out.data() + o * block);
    return tape_of(a, "slice").record("slice", {a}, std::move(out), [is, begin, block](const BackwardContext& c) {
        Array* g = c.input_grads[0];
        if (!g) return;
        for (std::size_t o = 0; o < is.outer; ++o) {
            const double* src = c.grad_output.data() + o * block;
            double* dst = g->data() + o * is.extent * is.inner + begin * is.inner;
            for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
        }
    });
}

Var softmax(Var a) {
    const Array& x = a.value();
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.size() / n;
    Array y(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * n;
        double* yr = y.data() + r * n;
        const double m = *std::max_element(xr, xr + n);
        double z = 0.0;
        for (std::size_t i = 0; i < n; ++i) z += (yr[i] = std::exp(xr[i] - m));
        for (std::size_t i = 0; i < n; ++i) yr[i] /= z;
    }
    return tape_of(a, "softmax").record("softmax", {a}, std::move(y), [n, rows](const BackwardContext& c) {
        Array* g = c.input_grads[0];
        if (!g) return;
        for (std::size_t r = 0; r < rows; ++r) {
            const double* yr = c.output.data() + r * n;
            const double* gr = c.grad_output.data() + r * n;
            double dot = 0.0;
            for (std::size_t i = 0; i < n; ++i) dot += yr[i] * gr[i];
            for (std::size_t i = 0; i < n; ++i) (*g)[r * n + i] += yr[i] * (gr[i] - dot);
        }
    });
}

Var relu(Var a) {
    return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var a) {
    return unary("tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
    return unary("sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

Var exp(Var a) {
    return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var scale(Var a, double k) {
    return unary("scale", a, [k](double x) { return k * x; }, [k](double, double) { return k; });
}

Var reduce_sum(Var a) {
    const Array& x = a.value();
    double s = 0.0;
    for (double v : x.values()) s += v;
    return tape_of(a, "reduce_sum").record("reduce_sum", {a}, Array::scalar(s), [](const BackwardContext& c) {
        if (Array* g = c.input_grads[0]) {
            const double go = c.grad_output[0];
            for (double& v : g->values()) v += go;
        }
    });
}

Var mean_abs(Var a) {
    const Array& x = a.value();
    double s = 0.0;
    for (double v : x.values()) s += std::abs(v);
    const double inv_n = 1.0 / static_cast<double>(x.size());
    return tape_of(a, "mean_abs").record("mean_abs", {a}, Array::scalar(s * inv_n), [inv_n](const BackwardContext& c) {
        Array* g = c.input_grads[0];
        if (!g) return;
        const Array& x = *c.inputs[0];
        const double go = c.grad_output[0] * inv_n;
        for (std::size_t i = 0; i < x.size(); ++i) (*g)[i] += go * (x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0));
    });
}

Var layer_norm(Var a, double eps) {
    const Array& x = a.value();
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.size() / n;
    Array y(x.shape());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * n;
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += xr[i];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (xr[i] - mean) * (xr[i] - mean);
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t i = 0; i < n; ++i) y[r * n + i] = (xr[i] - mean) * is;
    }
    return tape_of(a, "layer_norm").record("layer_norm", {a}, std::move(y), [n, rows, inv_std](const BackwardContext& c) {
        Array* g = c.input_grads[0];
        if (!g) return;
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* yr = c.output.data() + r * n;
            const double* gr = c.grad_output.data() + r * n;
            double mg = 0.0, mgy = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                mg += gr[i];
                mgy += gr[i] * yr[i];
            }
            mg *= inv_n;
            mgy *= inv_n;
            for (std::size_t i = 0; i < n; ++i) (*g)[r * n + i] += (*inv_std)[r] * (gr[i] - mg - yr[i] * mgy);
        }
    });
}

Var transpose(Var a) {
    const Array& x = a.value();
    if (x.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_string(x.shape()));
    const auto m = x.dim(0), n = x.dim(1);
    Array y({n, m});
    Map(y.data(), n, m) = MapC(x.data(), m, n).transpose();
    return tape_of(a, "transpose").record("transpose", {a}, std::move(y), [m, n](const BackwardContext& c) {
        if (Array* g = c.input_grads[0]) Map(g->data(), m, n) += MapC(c.grad_output.data(), n, m).transpose();
    });
}

Var reshape(Var a, Shape shape) {
    Array y = a.value().reshaped(std::move(shape));
    return tape_of(a, "reshape").record("reshape", {a}, std::move(y), [](const BackwardContext& c) {
        if (Array* g = c.input_grads[0])
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.grad_output[i];
    });
}

Var tile_rows(Var row, std::size_t rows) {
    const Array& x = row.value();
    if (x.rank() != 2 || x.dim(0) != 1) throw ShapeError("tile_rows: expected [1,n], got " + shape_string(x.shape()));
    if (rows == 0) throw ShapeError("tile_rows: zero rows");
    const std::size_t n = x.dim(1);
    Array y({rows, n});
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.data(), n, y.data() + r * n);
    return tape_of(row, "tile_rows").record("tile_rows", {row}, std::move(y), [rows, n](const BackwardContext& c) {
        Array* g = c.input_grads[0];
        if (!g) return;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < n; ++i) (*g)[i] += c.grad_output[r * n + i];
    });
}

Var normalize_rows(Var a) {
    const Array& x = a.value();
    if (x.rank() != 2) throw ShapeError("normalize_rows: expected rank 2, got " + shape_string(x.shape()));
    const auto rows = x.dim(0), n = x.dim(1);
    Array y(x.shape());
    auto norms = std::make_shared<std::vector<double>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += x.at(r, i) * x.at(r, i);
        const double len = std::sqrt(s);
        if (!(len > 0.0)) throw NumericError("normalize_rows: row " + std::to_string(r) + " has zero length");
        (*norms)[r] = len;
        for (std::size_t i = 0; i < n; ++i) y.at(r, i) = x.at(r, i) / len;
    }
    return tape_of(a, "normalize_rows").record("normalize_rows", {a}, std::move(y), [rows, n, norms](const BackwardContext& c) {
        Array* g = c.input_grads[0];
        if (!g) return;
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t i = 0; i < n; ++i) dot += c.output.at(r, i) * c.grad_output.at(r, i);
            for (std::size_t i = 0; i < n; ++i)
                g->at(r, i) += (c.grad_output.at(r, i) - c.output.at(r, i) * dot) / (*norms)[r];
        }
    });
}

double finite_difference_check(const RecordedFn& f, const Array& x, double eps, std::optional<Array> seed) {
    auto weighted = [&](const Array& at, const Array* w, Array* grad_out) -> double {
        Tape tape;
        Var xv = tape.leaf(at, true);
        Var y = f(tape, xv);
        const Array& yv = y.value();
        if (!yv.all_finite()) throw NumericError("finite_difference_check: non-finite forward value");
        Array weights = w ? *w : Array(yv.shape(), 1.0);
        if (weights.shape() != yv.shape())
            throw ShapeError("finite_difference_check: seed shape " + shape_string(weights.shape()) + " vs output " +
                             shape_string(yv.shape()));
        double s = 0.0;
        for (std::size_t i = 0; i < yv.size(); ++i) s += weights[i] * yv[i];
        if (grad_out) *grad_out = tape.backward(y, weights)[xv];
        return s;
    };

    // Probe the output shape once to build the default seed.
    Array weights;
    if (seed) {
        weights = std::move(*seed);
    } else {
        Tape probe;
        const Shape out_shape = f(probe, probe.leaf(x, true)).shape();
        weights = Array(out_shape);
        Rng rng(0x5eedf00d);
        for (double& v : weights.values()) v = rng.uniform(0.5, 1.5) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    }

    Array analytic;
    weighted(x, &weights, &analytic);
    double worst = 0.0;
    Array probe_x = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        probe_x[i] = x[i] + eps;
        const double up = weighted(probe_x, &weights, nullptr);
        probe_x[i] = x[i] - eps;
        const double down = weighted(probe_x, &weights, nullptr);
        probe_x[i] = x[i];
        const double numeric = (up - down) / (2.0 * eps);
        worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
    return worst;
}

} // namespace gtalk::diff
