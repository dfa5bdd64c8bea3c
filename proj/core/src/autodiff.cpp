#include "rccr/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "rccr/errors.hpp"

namespace rccr::ad {

namespace {

constexpr double kLogFloor = 1e-12;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

NodePtr fresh(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return n;
}

bool flows(const Value& a) { return a.requires_grad(); }

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

void check_finite(const char* op, const Tensor& t) {
    if (!t.all_finite()) {
        throw NumericError(std::string(op) + ": non-finite value in result");
    }
}

// Decompose a shape around one axis: extents before it, at it, and after it.
struct AxisSplit {
    std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const char* op, const std::vector<std::size_t>& shape,
                     std::size_t axis) {
    if (axis >= shape.size()) {
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                             " out of range for shape " + shape_str(shape));
    }
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.n = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

template <class F, class DF>
Value unary_elementwise(const Value& a, const char*, F f, DF df) {
    Tensor out(a.tensor().shape());
    for (std::size_t i = 0; i < a.tensor().size(); ++i) out[i] = f(a.tensor()[i]);
    auto n = fresh(std::move(out));
    if (flows(a)) {
        n->requires_grad = true;
        n->parents = {a.node()};
        NodePtr pa = a.node();
        n->backprop = [pa, df](Node& self) {
            Tensor& ga = pa->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                ga[i] += self.grad[i] * df(pa->value[i], self.value[i]);
            }
        };
    }
    return Value(n);
}

}  // namespace

Tensor& Node::ensure_grad() {
    if (!grad_present) {
        grad = Tensor(value.shape());
        grad_present = true;
    }
    return grad;
}

const Tensor& Value::grad() const {
    if (!node_ || !node_->grad_present) {
        throw ContractError("Value::grad: no gradient present (did backward run?)");
    }
    return node_->grad;
}

void Value::zero_grad() {
    if (node_) node_->grad_present = false;
}

Value constant(Tensor t) { return Value(fresh(std::move(t))); }

Value constant(double v) { return Value(fresh(Tensor::scalar(v))); }

Value parameter(Tensor t) {
    auto n = fresh(std::move(t));
    n->requires_grad = true;
    return Value(n);
}

Value add(const Value& a, const Value& b) {
    if (!a.tensor().same_shape(b.tensor())) shape_error("add", a.tensor(), b.tensor());
    Tensor out = a.tensor();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.tensor()[i];
    auto n = fresh(std::move(out));
    if (flows(a) || flows(b)) {
        n->requires_grad = true;
        n->parents = {a.node(), b.node()};
        NodePtr pa = a.node(), pb = b.node();
        bool fa = flows(a), fb = flows(b);
        n->backprop = [pa, pb, fa, fb](Node& self) {
            if (fa) {
                Tensor& g = pa->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            }
            if (fb) {
                Tensor& g = pb->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            }
        };
    }
    return Value(n);
}

Value sub(const Value& a, const Value& b) {
    if (!a.tensor().same_shape(b.tensor())) shape_error("sub", a.tensor(), b.tensor());
    Tensor out = a.tensor();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.tensor()[i];
    auto n = fresh(std::move(out));
    if (flows(a) || flows(b)) {
        n->requires_grad = true;
        n->parents = {a.node(), b.node()};
        NodePtr pa = a.node(), pb = b.node();
        bool fa = flows(a), fb = flows(b);
        n->backprop = [pa, pb, fa, fb](Node& self) {
            if (fa) {
                Tensor& g = pa->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            }
            if (fb) {
                Tensor& g = pb->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
            }
        };
    }
    return Value(n);
}

Value mul(const Value& a, const Value& b) {
    if (!a.tensor().same_shape(b.tensor())) shape_error("mul", a.tensor(), b.tensor());
    Tensor out = a.tensor();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.tensor()[i];
    auto n = fresh(std::move(out));
    if (flows(a) || flows(b)) {
        n->requires_grad = true;
        n->parents = {a.node(), b.node()};
        NodePtr pa = a.node(), pb = b.node();
        bool fa = flows(a), fb = flows(b);
        n->backprop = [pa, pb, fa, fb](Node& self) {
            if (fa) {
                Tensor& g = pa->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value[i];
            }
            if (fb) {
                Tensor& g = pb->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value[i];
            }
        };
    }
    return Value(n);
}

Value neg(const Value& a) { return scale(a, -1.0); }

Value scale(const Value& a, double c) {
    Tensor out = a.tensor();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
    auto n = fresh(std::move(out));
    if (flows(a)) {
        n->requires_grad = true;
        n->parents = {a.node()};
        NodePtr pa = a.node();
        n->backprop = [pa, c](Node& self) {
            Tensor& g = pa->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c;
        };
    }
    return Value(n);
}

Value relu(const Value& a) {
    return unary_elementwise(
        a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Value gelu(const Value& a) {
    return unary_elementwise(
        a, "gelu",
        [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
        [](double x, double) {
            double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            return cdf + x * pdf;
        });
}

Value exp(const Value& a) {
    Value v = unary_elementwise(
        a, "exp", [](double x) { return std::exp(x); },
        [](double, double y) { return y; });
    check_finite("exp", v.tensor());
    return v;
}

Value log(const Value& a) {
    for (std::size_t i = 0; i < a.tensor().size(); ++i) {
        if (!(a.tensor()[i] > 0.0)) {
            throw NumericError("log: non-positive input " + std::to_string(a.tensor()[i]));
        }
    }
    return unary_elementwise(
        a, "log", [](double x) { return std::log(x); },
        [](double x, double) { return 1.0 / x; });
}

Value log_clamped(const Value& a) {
    return unary_elementwise(
        a, "log_clamped",
        [](double x) { return std::log(x > kLogFloor ? x : kLogFloor); },
        [](double x, double) { return x > kLogFloor ? 1.0 / x : 0.0; });
}

Value log1p(const Value& a) {
    for (std::size_t i = 0; i < a.tensor().size(); ++i) {
        if (!(a.tensor()[i] > -1.0)) {
            throw NumericError("log1p: input " + std::to_string(a.tensor()[i]) +
                               " outside domain (-1, inf)");
        }
    }
    return unary_elementwise(
        a, "log1p", [](double x) { return std::log1p(x); },
        [](double x, double) { return 1.0 / (1.0 + x); });
}

Value huber(const Value& a, double delta) {
    if (!(delta > 0.0)) throw ConfigError("huber: delta must be positive");
    return unary_elementwise(
        a, "huber",
        [delta](double x) {
            double ax = std::abs(x);
            return ax <= delta ? 0.5 * x * x : delta * (ax - 0.5 * delta);
        },
        [delta](double x, double) { return std::clamp(x, -delta, delta); });
}

Value matmul(const Value& a, const Value& b) {
    const Tensor& ta = a.tensor();
    const Tensor& tb = b.tensor();
    if (ta.rank() != 2 || tb.rank() != 2 || ta.extent(1) != tb.extent(0)) {
        shape_error("matmul", ta, tb);
    }
    const std::size_t m = ta.extent(0), k = ta.extent(1), n2 = tb.extent(1);
    Tensor out({m, n2});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = ta[i * k + kk];
            if (av == 0.0) continue;
            const double* brow = tb.data() + kk * n2;
            double* orow = out.data() + i * n2;
            for (std::size_t j = 0; j < n2; ++j) orow[j] += av * brow[j];
        }
    }
    auto node = fresh(std::move(out));
    if (flows(a) || flows(b)) {
        node->requires_grad = true;
        node->parents = {a.node(), b.node()};
        NodePtr pa = a.node(), pb = b.node();
        bool fa = flows(a), fb = flows(b);
        node->backprop = [pa, pb, fa, fb, m, k, n2](Node& self) {
            if (fa) {
                Tensor& ga = pa->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        double acc = 0.0;
                        const double* grow = self.grad.data() + i * n2;
                        const double* brow = pb->value.data() + kk * n2;
                        for (std::size_t j = 0; j < n2; ++j) acc += grow[j] * brow[j];
                        ga[i * k + kk] += acc;
                    }
                }
            }
            if (fb) {
                Tensor& gb = pb->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    const double* grow = self.grad.data() + i * n2;
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        const double av = pa->value[i * k + kk];
                        if (av == 0.0) continue;
                        double* gbrow = gb.data() + kk * n2;
                        for (std::size_t j = 0; j < n2; ++j) gbrow[j] += av * grow[j];
                    }
                }
            }
        };
    }
    return Value(node);
}

Value affine(const Value& x, const Value& w, const Value& b) {
    const Tensor& tx = x.tensor();
    const Tensor& tw = w.tensor();
    const Tensor& tb = b.tensor();
    if (tx.rank() < 1 || tw.rank() != 2 || tb.rank() != 1 ||
        tx.shape().back() != tw.extent(0) || tw.extent(1) != tb.extent(0)) {
        throw DimensionError("affine: x " + shape_str(tx.shape()) + ", w " +
                             shape_str(tw.shape()) + ", b " + shape_str(tb.shape()));
    }
    const std::size_t in = tw.extent(0), out_dim = tw.extent(1);
    const std::size_t rows = tx.size() / in;
    std::vector<std::size_t> out_shape = tx.shape();
    out_shape.back() = out_dim;
    Tensor out(out_shape);
    for (std::size_t r = 0; r < rows; ++r) {
        double* orow = out.data() + r * out_dim;
        for (std::size_t o = 0; o < out_dim; ++o) orow[o] = tb[o];
        const double* xrow = tx.data() + r * in;
        for (std::size_t i = 0; i < in; ++i) {
            const double xv = xrow[i];
            if (xv == 0.0) continue;
            const double* wrow = tw.data() + i * out_dim;
            for (std::size_t o = 0; o < out_dim; ++o) orow[o] += xv * wrow[o];
        }
    }
    auto node = fresh(std::move(out));
    if (flows(x) || flows(w) || flows(b)) {
        node->requires_grad = true;
        node->parents = {x.node(), w.node(), b.node()};
        NodePtr px = x.node(), pw = w.node(), pb = b.node();
        bool fx = flows(x), fw = flows(w), fb = flows(b);
        node->backprop = [px, pw, pb, fx, fw, fb, rows, in, out_dim](Node& self) {
            if (fx) {
                Tensor& gx = px->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* grow = self.grad.data() + r * out_dim;
                    double* gxrow = gx.data() + r * in;
                    for (std::size_t i = 0; i < in; ++i) {
                        const double* wrow = pw->value.data() + i * out_dim;
                        double acc = 0.0;
                        for (std::size_t o = 0; o < out_dim; ++o) acc += grow[o] * wrow[o];
                        gxrow[i] += acc;
                    }
                }
            }
            if (fw) {
                Tensor& gw = pw->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* grow = self.grad.data() + r * out_dim;
                    const double* xrow = px->value.data() + r * in;
                    for (std::size_t i = 0; i < in; ++i) {
                        const double xv = xrow[i];
                        if (xv == 0.0) continue;
                        double* gwrow = gw.data() + i * out_dim;
                        for (std::size_t o = 0; o < out_dim; ++o) gwrow[o] += xv * grow[o];
                    }
                }
            }
            if (fb) {
                Tensor& gb = pb->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* grow = self.grad.data() + r * out_dim;
                    for (std::size_t o = 0; o < out_dim; ++o) gb[o] += grow[o];
                }
            }
        };
    }
    return Value(node);
}

Value conv1d(const Value& x, const Value& w, const Value& b, std::size_t stride) {
    const Tensor& tx = x.tensor();
    const Tensor& tw = w.tensor();
    const Tensor& tb = b.tensor();
    if (tx.rank() != 3 || tw.rank() != 3 || tb.rank() != 1 ||
        tx.extent(2) != tw.extent(1) || tw.extent(0) != tb.extent(0)) {
        throw DimensionError("conv1d: x " + shape_str(tx.shape()) + ", w " +
                             shape_str(tw.shape()) + ", b " + shape_str(tb.shape()));
    }
    const std::size_t kernel = tw.extent(2);
    if (kernel % 2 == 0) throw ConfigError("conv1d: kernel width must be odd");
    if (stride == 0) throw ConfigError("conv1d: stride must be positive");
    const std::size_t batch = tx.extent(0), len = tx.extent(1), cin = tx.extent(2);
    const std::size_t cout = tw.extent(0);
    const std::size_t pad = (kernel - 1) / 2;
    const std::size_t out_len = (len + 2 * pad - kernel) / stride + 1;

    // Transposed weight scratch (ci, k, o) keeps the hot output-channel loop
    // contiguous; the (o, ci, k) layout is the public/checkpoint order.
    std::vector<double> wt(cin * kernel * cout);
    for (std::size_t o = 0; o < cout; ++o) {
        for (std::size_t ci = 0; ci < cin; ++ci) {
            for (std::size_t k = 0; k < kernel; ++k) {
                wt[(ci * kernel + k) * cout + o] = tw[(o * cin + ci) * kernel + k];
            }
        }
    }

    Tensor out({batch, out_len, cout});
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t t = 0; t < out_len; ++t) {
            double* orow = out.data() + (n * out_len + t) * cout;
            for (std::size_t o = 0; o < cout; ++o) orow[o] = tb[o];
            const long long base = static_cast<long long>(t * stride) -
                                   static_cast<long long>(pad);
            for (std::size_t k = 0; k < kernel; ++k) {
                const long long pos = base + static_cast<long long>(k);
                if (pos < 0 || pos >= static_cast<long long>(len)) continue;
                const double* xrow = tx.data() + (n * len + pos) * cin;
                for (std::size_t ci = 0; ci < cin; ++ci) {
                    const double xv = xrow[ci];
                    if (xv == 0.0) continue;
                    const double* wrow = wt.data() + (ci * kernel + k) * cout;
                    for (std::size_t o = 0; o < cout; ++o) {
                        orow[o] += xv * wrow[o];
                    }
                }
            }
        }
    }
    auto node = fresh(std::move(out));
    if (flows(x) || flows(w) || flows(b)) {
        node->requires_grad = true;
        node->parents = {x.node(), w.node(), b.node()};
        NodePtr px = x.node(), pw = w.node(), pb = b.node();
        bool fx = flows(x), fw = flows(w), fb = flows(b);
        node->backprop = [px, pw, pb, fx, fw, fb, batch, len, cin, cout, kernel, pad,
                          stride](Node& self) {
            const std::size_t out_len = self.value.extent(1);
            const Tensor& tw = pw->value;
            // Same (ci, k, o) transposition as the forward pass; gradients
            // for w accumulate in a transposed scratch and scatter once.
            std::vector<double> wt;
            if (fx) {
                wt.resize(cin * kernel * cout);
                for (std::size_t o = 0; o < cout; ++o) {
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        for (std::size_t k = 0; k < kernel; ++k) {
                            wt[(ci * kernel + k) * cout + o] =
                                tw[(o * cin + ci) * kernel + k];
                        }
                    }
                }
            }
            std::vector<double> gwt;
            if (fw) gwt.assign(cin * kernel * cout, 0.0);
            Tensor* gx = fx ? &px->ensure_grad() : nullptr;
            Tensor* gb = fb ? &pb->ensure_grad() : nullptr;

            for (std::size_t n = 0; n < batch; ++n) {
                for (std::size_t t = 0; t < out_len; ++t) {
                    const double* grow = self.grad.data() + (n * out_len + t) * cout;
                    const long long base = static_cast<long long>(t * stride) -
                                           static_cast<long long>(pad);
                    if (gb) {
                        double* gbd = gb->data();
                        for (std::size_t o = 0; o < cout; ++o) gbd[o] += grow[o];
                    }
                    for (std::size_t k = 0; k < kernel; ++k) {
                        const long long pos = base + static_cast<long long>(k);
                        if (pos < 0 || pos >= static_cast<long long>(len)) continue;
                        const double* xrow = px->value.data() + (n * len + pos) * cin;
                        double* gxrow =
                            gx ? gx->data() + (n * len + pos) * cin : nullptr;
                        for (std::size_t ci = 0; ci < cin; ++ci) {
                            const double xv = xrow[ci];
                            const std::size_t woff = (ci * kernel + k) * cout;
                            if (fx && fw) {
                                const double* wrow = wt.data() + woff;
                                double* grow_w = gwt.data() + woff;
                                double acc = 0.0;
                                for (std::size_t o = 0; o < cout; ++o) {
                                    const double g = grow[o];
                                    acc += g * wrow[o];
                                    grow_w[o] += g * xv;
                                }
                                gxrow[ci] += acc;
                            } else if (fx) {
                                const double* wrow = wt.data() + woff;
                                double acc = 0.0;
                                for (std::size_t o = 0; o < cout; ++o) {
                                    acc += grow[o] * wrow[o];
                                }
                                gxrow[ci] += acc;
                            } else if (fw && xv != 0.0) {
                                double* grow_w = gwt.data() + woff;
                                for (std::size_t o = 0; o < cout; ++o) {
                                    grow_w[o] += grow[o] * xv;
                                }
                            }
                        }
                    }
                }
            }
            if (fw) {
                Tensor& gw = pw->ensure_grad();
                for (std::size_t o = 0; o < cout; ++o) {
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        for (std::size_t k = 0; k < kernel; ++k) {
                            gw[(o * cin + ci) * kernel + k] +=
                                gwt[(ci * kernel + k) * cout + o];
                        }
                    }
                }
            }
        };
    }
    return Value(node);
}

Value max_pool1d(const Value& x, std::size_t window, std::size_t stride) {
    const Tensor& tx = x.tensor();
    if (tx.rank() != 3) {
        throw DimensionError("max_pool1d: expected (N,L,C), got " + shape_str(tx.shape()));
    }
    if (window == 0 || stride == 0) throw ConfigError("max_pool1d: window/stride must be positive");
    const std::size_t batch = tx.extent(0), len = tx.extent(1), ch = tx.extent(2);
    if (len < window) {
        throw DimensionError("max_pool1d: window " + std::to_string(window) +
                             " exceeds length " + std::to_string(len));
    }
    const std::size_t out_len = (len - window) / stride + 1;
    Tensor out({batch, out_len, ch});
    auto argmax = std::make_shared<std::vector<std::size_t>>(batch * out_len * ch);
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t t = 0; t < out_len; ++t) {
            for (std::size_t c = 0; c < ch; ++c) {
                std::size_t best = (n * len + t * stride) * ch + c;
                double bv = tx[best];
                for (std::size_t k = 1; k < window; ++k) {
                    std::size_t idx = (n * len + t * stride + k) * ch + c;
                    if (tx[idx] > bv) {
                        bv = tx[idx];
                        best = idx;
                    }
                }
                out[(n * out_len + t) * ch + c] = bv;
                (*argmax)[(n * out_len + t) * ch + c] = best;
            }
        }
    }
    auto node = fresh(std::move(out));
    if (flows(x)) {
        node->requires_grad = true;
        node->parents = {x.node()};
        NodePtr px = x.node();
        node->backprop = [px, argmax](Node& self) {
            Tensor& gx = px->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                gx[(*argmax)[i]] += self.grad[i];
            }
        };
    }
    return Value(node);
}

Value mean_pool1d(const Value& x, std::size_t window, std::size_t stride) {
    const Tensor& tx = x.tensor();
    if (tx.rank() != 3) {
        throw DimensionError("mean_pool1d: expected (N,L,C), got " + shape_str(tx.shape()));
    }
    if (window == 0 || stride == 0) throw ConfigError("mean_pool1d: window/stride must be positive");
    const std::size_t batch = tx.extent(0), len = tx.extent(1), ch = tx.extent(2);
    if (len < window) {
        throw DimensionError("mean_pool1d: window " + std::to_string(window) +
                             " exceeds length " + std::to_string(len));
    }
    const std::size_t out_len = (len - window) / stride + 1;
    Tensor out({batch, out_len, ch});
    const double inv = 1.0 / static_cast<double>(window);
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t t = 0; t < out_len; ++t) {
            for (std::size_t k = 0; k < window; ++k) {
                const double* xrow = tx.data() + (n * len + t * stride + k) * ch;
                double* orow = out.data() + (n * out_len + t) * ch;
                for (std::size_t c = 0; c < ch; ++c) orow[c] += xrow[c] * inv;
            }
        }
    }
    auto node = fresh(std::move(out));
    if (flows(x)) {
        node->requires_grad = true;
        node->parents = {x.node()};
        NodePtr px = x.node();
        node->backprop = [px, batch, len, ch, window, stride, inv](Node& self) {
            const std::size_t out_len = self.value.extent(1);
            Tensor& gx = px->ensure_grad();
            for (std::size_t n = 0; n < batch; ++n) {
                for (std::size_t t = 0; t < out_len; ++t) {
                    const double* grow = self.grad.data() + (n * out_len + t) * ch;
                    for (std::size_t k = 0; k < window; ++k) {
                        double* gxrow = gx.data() + (n * len + t * stride + k) * ch;
                        for (std::size_t c = 0; c < ch; ++c) gxrow[c] += grow[c] * inv;
                    }
                }
            }
        };
    }
    return Value(node);
}

Value adaptive_mean_pool1d(const Value& x, std::size_t bins) {
    const Tensor& tx = x.tensor();
    if (tx.rank() != 3) {
        throw DimensionError("adaptive_mean_pool1d: expected (N,L,C), got " +
                             shape_str(tx.shape()));
    }
    if (bins == 0) throw ConfigError("adaptive_mean_pool1d: bins must be positive");
    const std::size_t batch = tx.extent(0), len = tx.extent(1), ch = tx.extent(2);
    Tensor out({batch, bins, ch});
    auto bounds = std::make_shared<std::vector<std::pair<std::size_t, std::size_t>>>();
    bounds->reserve(bins);
    for (std::size_t b = 0; b < bins; ++b) {
        std::size_t start = (b * len) / bins;
        std::size_t end = ((b + 1) * len + bins - 1) / bins;
        bounds->emplace_back(start, end);
    }
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t b = 0; b < bins; ++b) {
            auto [start, end] = (*bounds)[b];
            const double inv = 1.0 / static_cast<double>(end - start);
            double* orow = out.data() + (n * bins + b) * ch;
            for (std::size_t p = start; p < end; ++p) {
                const double* xrow = tx.data() + (n * len + p) * ch;
                for (std::size_t c = 0; c < ch; ++c) orow[c] += xrow[c] * inv;
            }
        }
    }
    auto node = fresh(std::move(out));
    if (flows(x)) {
        node->requires_grad = true;
        node->parents = {x.node()};
        NodePtr px = x.node();
        node->backprop = [px, bounds, batch, len, ch, bins](Node& self) {
            Tensor& gx = px->ensure_grad();
            for (std::size_t n = 0; n < batch; ++n) {
                for (std::size_t b = 0; b < bins; ++b) {
                    auto [start, end] = (*bounds)[b];
                    const double inv = 1.0 / static_cast<double>(end - start);
                    const double* grow = self.grad.data() + (n * bins + b) * ch;
                    for (std::size_t p = start; p < end; ++p) {
                        double* gxrow = gx.data() + (n * len + p) * ch;
                        for (std::size_t c = 0; c < ch; ++c) gxrow[c] += grow[c] * inv;
                    }
                }
            }
        };
    }
    return Value(node);
}

namespace {

Value reduce(const Value& x, std::size_t axis, bool mean, const char* op) {
    const Tensor& tx = x.tensor();
    AxisSplit s = split_axis(op, tx.shape(), axis);
    std::vector<std::size_t> out_shape;
    for (std::size_t i = 0; i < tx.rank(); ++i) {
        if (i != axis) out_shape.push_back(tx.shape()[i]);
    }
    Tensor out(out_shape.empty() ? std::vector<std::size_t>{} : out_shape);
    const double w = mean ? 1.0 / static_cast<double>(s.n) : 1.0;
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.n; ++i) {
            const double* in_row = tx.data() + (o * s.n + i) * s.inner;
            double* out_row = out.data() + o * s.inner;
            for (std::size_t k = 0; k < s.inner; ++k) out_row[k] += in_row[k] * w;
        }
    }
    auto node = fresh(std::move(out));
    if (flows(x)) {
        node->requires_grad = true;
        node->parents = {x.node()};
        NodePtr px = x.node();
        node->backprop = [px, s, w](Node& self) {
            Tensor& gx = px->ensure_grad();
            for (std::size_t o = 0; o < s.outer; ++o) {
                const double* grow = self.grad.data() + o * s.inner;
                for (std::size_t i = 0; i < s.n; ++i) {
                    double* gxrow = gx.data() + (o * s.n + i) * s.inner;
                    for (std::size_t k = 0; k < s.inner; ++k) gxrow[k] += grow[k] * w;
                }
            }
        };
    }
    return Value(node);
}

}  // namespace

Value reduce_sum(const Value& x, std::size_t axis) { return reduce(x, axis, false, "reduce_sum"); }

Value reduce_mean(const Value& x, std::size_t axis) { return reduce(x, axis, true, "reduce_mean"); }

Value sum_all(const Value& x) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.tensor().size(); ++i) acc += x.tensor()[i];
    auto node = fresh(Tensor::scalar(acc));
    if (flows(x)) {
        node->requires_grad = true;
        node->parents = {x.node()};
        NodePtr px = x.node();
        node->backprop = [px](Node& self) {
            Tensor& gx = px->ensure_grad();
            const double g = self.grad[0];
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
        };
    }
    return Value(node);
}

Value mean_all(const Value& x) {
    return scale(sum_all(x), 1.0 / static_cast<double>(x.tensor().size()));
}

Value reverse_axis(const Value& x, std::size_t axis) {
    const Tensor& tx = x.tensor();
    AxisSplit s = split_axis("reverse_axis", tx.shape(), axis);
    Tensor out(tx.shape());
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.n; ++i) {
            const double* in_row = tx.data() + (o * s.n + i) * s.inner;
            double* out_row = out.data() + (o * s.n + (s.n - 1 - i)) * s.inner;
            std::copy(in_row, in_row + s.inner, out_row);
        }
    }
    auto node = fresh(std::move(out));
    if (flows(x)) {
        node->requires_grad = true;
        node->parents = {x.node()};
        NodePtr px = x.node();
        node->backprop = [px, s](Node& self) {
            Tensor& gx = px->ensure_grad();
            for (std::size_t o = 0; o < s.outer; ++o) {
                for (std::size_t i = 0; i < s.n; ++i) {
                    const double* grow =
                        self.grad.data() + (o * s.n + (s.n - 1 - i)) * s.inner;
                    double* gxrow = gx.data() + (o * s.n + i) * s.inner;
                    for (std::size_t k = 0; k < s.inner; ++k) gxrow[k] += grow[k];
                }
            }
        };
    }
    return Value(node);
}

Value permute_last_axis(const Value& x, const std::vector<std::size_t>& perm) {
    const Tensor& tx = x.tensor();
    if (tx.rank() < 1 || perm.size() != tx.shape().back()) {
        throw DimensionError("permute_last_axis: permutation size " +
                             std::to_string(perm.size()) + " vs shape " +
                             shape_str(tx.shape()));
    }
    std::vector<bool> seen(perm.size(), false);
    for (std::size_t p : perm) {
        if (p >= perm.size() || seen[p]) {
            throw ContractError("permute_last_axis: not a permutation");
        }
        seen[p] = true;
    }
    const std::size_t c = perm.size();
    const std::size_t rows = tx.size() / c;
    Tensor out(tx.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in_row = tx.data() + r * c;
        double* out_row = out.data() + r * c;
        for (std::size_t k = 0; k < c; ++k) out_row[k] = in_row[perm[k]];
    }
    auto node = fresh(std::move(out));
    if (flows(x)) {
        node->requires_grad = true;
        node->parents = {x.node()};
        NodePtr px = x.node();
        auto p = std::make_shared<std::vector<std::size_t>>(perm);
        node->backprop = [px, p, rows, c](Node& self) {
            Tensor& gx = px->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* grow = self.grad.data() + r * c;
                double* gxrow = gx.data() + r * c;
                for (std::size_t k = 0; k < c; ++k) gxrow[(*p)[k]] += grow[k];
            }
        };
    }
    return Value(node);
}

Value mask_last_axis(const Value& x, const Tensor& mask) {
    const Tensor& tx = x.tensor();
    if (mask.rank() != 1 || tx.rank() < 1 || mask.extent(0) != tx.shape().back()) {
        throw DimensionError("mask_last_axis: mask " + shape_str(mask.shape()) +
                             " vs x " + shape_str(tx.shape()));
    }
    const std::size_t c = mask.extent(0);
    const std::size_t rows = tx.size() / c;
    Tensor out(tx.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in_row = tx.data() + r * c;
        double* out_row = out.data() + r * c;
        for (std::size_t k = 0; k < c; ++k) out_row[k] = in_row[k] * mask[k];
    }
    auto node = fresh(std::move(out));
    if (flows(x)) {
        node->requires_grad = true;
        node->parents = {x.node()};
        NodePtr px = x.node();
        auto m = std::make_shared<Tensor>(mask);
        node->backprop = [px, m, rows, c](Node& self) {
            Tensor& gx = px->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* grow = self.grad.data() + r * c;
                double* gxrow = gx.data() + r * c;
                for (std::size_t k = 0; k < c; ++k) gxrow[k] += grow[k] * (*m)[k];
            }
        };
    }
    return Value(node);
}

Value slice(const Value& x, std::size_t axis, std::size_t start, std::size_t stop) {
    const Tensor& tx = x.tensor();
    AxisSplit s = split_axis("slice", tx.shape(), axis);
    if (start >= stop || stop > s.n) {
        throw DimensionError("slice: range [" + std::to_string(start) + "," +
                             std::to_string(stop) + ") invalid for extent " +
                             std::to_string(s.n));
    }
    std::vector<std::size_t> out_shape = tx.shape();
    out_shape[axis] = stop - start;
    Tensor out(out_shape);
    const std::size_t m = stop - start;
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < m; ++i) {
            const double* in_row = tx.data() + (o * s.n + start + i) * s.inner;
            double* out_row = out.data() + (o * m + i) * s.inner;
            std::copy(in_row, in_row + s.inner, out_row);
        }
    }
    auto node = fresh(std::move(out));
    if (flows(x)) {
        node->requires_grad = true;
        node->parents = {x.node()};
        NodePtr px = x.node();
        node->backprop = [px, s, start, m](Node& self) {
            Tensor& gx = px->ensure_grad();
            for (std::size_t o = 0; o < s.outer; ++o) {
                for (std::size_t i = 0; i < m; ++i) {
                    const double* grow = self.grad.data() + (o * m + i) * s.inner;
                    double* gxrow = gx.data() + (o * s.n + start + i) * s.inner;
                    for (std::size_t k = 0; k < s.inner; ++k) gxrow[k] += grow[k];
                }
            }
        };
    }
    return Value(node);
}

Value concat(const Value& a, const Value& b, std::size_t axis) {
    const Tensor& ta = a.tensor();
    const Tensor& tb = b.tensor();
    if (ta.rank() != tb.rank()) shape_error("concat", ta, tb);
    for (std::size_t i = 0; i < ta.rank(); ++i) {
        if (i != axis && ta.shape()[i] != tb.shape()[i]) shape_error("concat", ta, tb);
    }
    AxisSplit sa = split_axis("concat", ta.shape(), axis);
    AxisSplit sb = split_axis("concat", tb.shape(), axis);
    std::vector<std::size_t> out_shape = ta.shape();
    out_shape[axis] = sa.n + sb.n;
    Tensor out(out_shape);
    const std::size_t n_total = sa.n + sb.n;
    for (std::size_t o = 0; o < sa.outer; ++o) {
        for (std::size_t i = 0; i < sa.n; ++i) {
            std::copy(ta.data() + (o * sa.n + i) * sa.inner,
                      ta.data() + (o * sa.n + i + 1) * sa.inner,
                      out.data() + (o * n_total + i) * sa.inner);
        }
        for (std::size_t i = 0; i < sb.n; ++i) {
            std::copy(tb.data() + (o * sb.n + i) * sb.inner,
                      tb.data() + (o * sb.n + i + 1) * sb.inner,
                      out.data() + (o * n_total + sa.n + i) * sb.inner);
        }
    }
    auto node = fresh(std::move(out));
    if (flows(a) || flows(b)) {
        node->requires_grad = true;
        node->parents = {a.node(), b.node()};
        NodePtr pa = a.node(), pb = b.node();
        bool fa = flows(a), fb = flows(b);
        node->backprop = [pa, pb, fa, fb, sa, sb, n_total](Node& self) {
            for (std::size_t o = 0; o < sa.outer; ++o) {
                if (fa) {
                    Tensor& ga = pa->ensure_grad();
                    for (std::size_t i = 0; i < sa.n; ++i) {
                        const double* grow =
                            self.grad.data() + (o * n_total + i) * sa.inner;
                        double* garow = ga.data() + (o * sa.n + i) * sa.inner;
                        for (std::size_t k = 0; k < sa.inner; ++k) garow[k] += grow[k];
                    }
                }
                if (fb) {
                    Tensor& gb = pb->ensure_grad();
                    for (std::size_t i = 0; i < sb.n; ++i) {
                        const double* grow =
                            self.grad.data() + (o * n_total + sa.n + i) * sb.inner;
                        double* gbrow = gb.data() + (o * sb.n + i) * sb.inner;
                        for (std::size_t k = 0; k < sb.inner; ++k) gbrow[k] += grow[k];
                    }
                }
            }
        };
    }
    return Value(node);
}

Value reshape(const Value& x, std::vector<std::size_t> shape) {
    const Tensor& tx = x.tensor();
    if (Tensor::count(shape) != tx.size()) {
        throw DimensionError("reshape: " + shape_str(tx.shape()) + " to " +
                             shape_str(shape) + " changes element count");
    }
    Tensor out = Tensor::from(std::move(shape),
                              std::vector<double>(tx.data(), tx.data() + tx.size()));
    auto node = fresh(std::move(out));
    if (flows(x)) {
        node->requires_grad = true;
        node->parents = {x.node()};
        NodePtr px = x.node();
        node->backprop = [px](Node& self) {
            Tensor& gx = px->ensure_grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
        };
    }
    return Value(node);
}

Value softmax(const Value& x, double temperature) {
    if (!(temperature > 0.0)) throw ConfigError("softmax: temperature must be positive");
    const Tensor& tx = x.tensor();
    if (tx.rank() < 1) throw DimensionError("softmax: rank-0 input");
    const std::size_t c = tx.shape().back();
    const std::size_t rows = tx.size() / c;
    Tensor out(tx.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in_row = tx.data() + r * c;
        double* out_row = out.data() + r * c;
        double mx = in_row[0];
        for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, in_row[k]);
        double sum = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
            out_row[k] = std::exp((in_row[k] - mx) / temperature);
            sum += out_row[k];
        }
        for (std::size_t k = 0; k < c; ++k) out_row[k] /= sum;
    }
    check_finite("softmax", out);
    auto node = fresh(std::move(out));
    if (flows(x)) {
        node->requires_grad = true;
        node->parents = {x.node()};
        NodePtr px = x.node();
        node->backprop = [px, rows, c, temperature](Node& self) {
            Tensor& gx = px->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* p = self.value.data() + r * c;
                const double* g = self.grad.data() + r * c;
                double dot = 0.0;
                for (std::size_t k = 0; k < c; ++k) dot += g[k] * p[k];
                double* gxrow = gx.data() + r * c;
                for (std::size_t k = 0; k < c; ++k) {
                    gxrow[k] += p[k] * (g[k] - dot) / temperature;
                }
            }
        };
    }
    return Value(node);
}

Value cross_entropy(const Value& logits, const std::vector<int>& labels) {
    const Tensor& tz = logits.tensor();
    if (tz.rank() < 1) throw DimensionError("cross_entropy: rank-0 logits");
    const std::size_t c = tz.shape().back();
    const std::size_t rows = tz.size() / c;
    if (labels.size() != rows) {
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                             " labels for " + std::to_string(rows) + " rows");
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= c) {
            throw ContractError("cross_entropy: label " + std::to_string(y) +
                                " out of range [0," + std::to_string(c) + ")");
        }
    }
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* z = tz.data() + r * c;
        double mx = z[0];
        for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, z[k]);
        double sum = 0.0;
        for (std::size_t k = 0; k < c; ++k) sum += std::exp(z[k] - mx);
        total += mx + std::log(sum) - z[labels[r]];
    }
    auto node = fresh(Tensor::scalar(total / static_cast<double>(rows)));
    check_finite("cross_entropy", node->value);
    if (flows(logits)) {
        node->requires_grad = true;
        node->parents = {logits.node()};
        NodePtr pz = logits.node();
        auto ls = std::make_shared<std::vector<int>>(labels);
        node->backprop = [pz, ls, rows, c](Node& self) {
            Tensor& gz = pz->ensure_grad();
            const double g = self.grad[0] / static_cast<double>(rows);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* z = pz->value.data() + r * c;
                double mx = z[0];
                for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, z[k]);
                double sum = 0.0;
                for (std::size_t k = 0; k < c; ++k) sum += std::exp(z[k] - mx);
                double* grow = gz.data() + r * c;
                for (std::size_t k = 0; k < c; ++k) {
                    double p = std::exp(z[k] - mx) / sum;
                    grow[k] += g * (p - (static_cast<std::size_t>((*ls)[r]) == k ? 1.0 : 0.0));
                }
            }
        };
    }
    return Value(node);
}

void backward(const Value& root) {
    if (!root.defined()) throw ContractError("backward: undefined root");
    if (root.tensor().size() != 1) {
        throw ContractError("backward: root must be scalar, got shape " +
                            shape_str(root.tensor().shape()));
    }
    Node* r = root.node().get();
    if (!r->requires_grad) return;

    // Post-order over the ancestor graph: inputs land before consumers, so the
    // reversed order visits each consumer before any of its inputs.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    struct Frame {
        Node* n;
        std::size_t next;
    };
    std::vector<Frame> stack;
    stack.push_back({r, 0});
    visited.insert(r);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            Node* p = f.n->parents[f.next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    r->ensure_grad()[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && n->grad_present) n->backprop(*n);
    }
}

double grad_check(const std::function<Value(const std::vector<Value>&)>& f,
                  const std::vector<Tensor>& inputs, double eps) {
    if (!(eps > 0.0) || eps > 1e-2) {
        throw ContractError("grad_check: eps must lie in (0, 1e-2]");
    }
    std::vector<Value> vars;
    vars.reserve(inputs.size());
    for (const Tensor& t : inputs) vars.push_back(parameter(t));
    Value out = f(vars);
    if (out.tensor().size() != 1) {
        throw ContractError("grad_check: f must be scalar-valued");
    }
    if (!out.tensor().all_finite()) throw NumericError("grad_check: non-finite objective");
    backward(out);

    auto eval_at = [&](const std::vector<Tensor>& pts) {
        std::vector<Value> consts;
        consts.reserve(pts.size());
        for (const Tensor& t : pts) consts.push_back(constant(t));
        double v = f(consts).tensor()[0];
        if (!std::isfinite(v)) throw NumericError("grad_check: non-finite objective");
        return v;
    };

    double max_rel = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const bool has_grad = vars[i].node()->grad_present;
        for (std::size_t j = 0; j < inputs[i].size(); ++j) {
            std::vector<Tensor> pts = inputs;
            pts[i][j] = inputs[i][j] + eps;
            const double fp = eval_at(pts);
            pts[i][j] = inputs[i][j] - eps;
            const double fm = eval_at(pts);
            const double numeric = (fp - fm) / (2.0 * eps);
            const double analytic = has_grad ? vars[i].node()->grad[j] : 0.0;
            const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
        }
    }
    return max_rel;
}

double grad_check(const std::function<Value(const Value&)>& f, const Tensor& input,
                  double eps) {
    return grad_check(
        [&f](const std::vector<Value>& vs) { return f(vs[0]); },
        std::vector<Tensor>{input}, eps);
}

}  // namespace rccr::ad
