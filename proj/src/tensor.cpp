#include "fastlr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace fastlr {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

namespace {

void check_shape_valid(const Shape& s) {
    // Zero-sized dims are allowed so callers can represent empty sequences
    // (e.g. zero fired embeddings); ops guard against them where they matter.
    if (s.empty()) throw ShapeError("empty shape");
}

[[noreturn]] void throw_mismatch(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                     shape_str(b) + " do not conform");
}

}  // namespace

Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
               std::function<void(const std::vector<double>&, GradientMap&)> backprop) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    if (node->value.size() != shape_numel(node->shape))
        throw ShapeError("op value size " + std::to_string(node->value.size()) +
                         " does not match shape " + shape_str(node->shape));
    for (const auto& p : parents) {
        node->parents.push_back(p.shared_node());
        if (p.node() && (p.node()->requires_grad || p.node()->backprop))
            node->requires_grad = true;
    }
    if (node->requires_grad) node->backprop = std::move(backprop);
    Tensor t;
    t.node_ = node;
    return t;
}

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return from_data(shape, std::vector<double>(shape_numel(shape), 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
    return from_data(shape, std::vector<double>(shape_numel(shape), fill), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    check_shape_valid(shape);
    if (data.size() != shape_numel(shape))
        throw ShapeError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    node->leaf = true;
    Tensor t;
    t.node_ = node;
    return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return from_data({1}, {v}, requires_grad);
}

const Shape& Tensor::shape() const {
    if (!node_) throw Error("undefined tensor");
    return node_->shape;
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }
std::size_t Tensor::rank() const { return shape().size(); }

std::size_t Tensor::dim(std::size_t i) const {
    const auto& s = shape();
    if (i >= s.size()) throw ShapeError("dim index out of range for " + shape_str(s));
    return s[i];
}

const std::vector<double>& Tensor::data() const {
    if (!node_) throw Error("undefined tensor");
    return node_->value;
}

std::vector<double>& Tensor::mutable_data() {
    if (!node_) throw Error("undefined tensor");
    if (!node_->leaf) throw Error("mutable_data on a non-leaf tensor");
    return node_->value;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

double Tensor::value() const {
    if (numel() != 1) throw ShapeError("value() on non-scalar tensor " + shape_str(shape()));
    return data()[0];
}

double Tensor::at2(std::size_t r, std::size_t c) const {
    if (rank() != 2) throw ShapeError("at2 on non-2D tensor " + shape_str(shape()));
    return data()[r * dim(1) + c];
}

// ---- GradientMap ----------------------------------------------------------

std::vector<double>& GradientMap::buffer(const TensorNode* n, std::size_t numel) {
    auto it = grads_.find(n);
    if (it == grads_.end())
        it = grads_.emplace(n, std::vector<double>(numel, 0.0)).first;
    return it->second;
}

const std::vector<double>* GradientMap::find(const Tensor& t) const {
    auto it = grads_.find(t.node());
    return it == grads_.end() ? nullptr : &it->second;
}

const std::vector<double>& GradientMap::at(const Tensor& t) const {
    auto* g = find(t);
    if (!g) throw Error("no gradient recorded for tensor");
    return *g;
}

bool GradientMap::contains(const Tensor& t) const { return grads_.count(t.node()) > 0; }

void GradientMap::accumulate(const GradientMap& other) {
    for (const auto& [node, g] : other.grads_) {
        auto it = grads_.find(node);
        if (it == grads_.end()) {
            grads_.emplace(node, g);
        } else {
            if (it->second.size() != g.size())
                throw ShapeError("gradient accumulate: buffer size mismatch");
            for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
        }
    }
}

void GradientMap::prune_non_leaf() {
    for (auto it = grads_.begin(); it != grads_.end();) {
        if (!it->first->leaf)
            it = grads_.erase(it);
        else
            ++it;
    }
}

void GradientMap::scale(double s) {
    for (auto& [node, g] : grads_)
        for (auto& v : g) v *= s;
}

double GradientMap::global_norm() const {
    double sq = 0.0;
    for (const auto& [node, g] : grads_)
        for (auto v : g) sq += v * v;
    return std::sqrt(sq);
}

// ---- backward -------------------------------------------------------------

GradientMap backward(const Tensor& loss) {
    if (!loss.defined()) throw Error("backward on undefined tensor");
    if (loss.numel() != 1)
        throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    TensorNode* root = loss.node();
    if (root->leaf && !root->requires_grad)
        throw Error("backward on a detached tensor (no tape)");
    if (root->backward_done)
        throw Error("repeated backward on the same loss without reset");
    root->backward_done = true;

    // Iterative post-order topological sort.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            TensorNode* p = n->parents[idx++].get();
            if ((p->backprop || p->requires_grad) && visited.insert(p).second)
                stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    GradientMap grads;
    grads.buffer(root, 1)[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (!n->backprop) continue;
        auto& buf = grads.buffer(n, n->value.size());
        n->backprop(buf, grads);
    }
    grads.prune_non_leaf();
    return grads;
}

void reset_backward(const Tensor& loss) {
    if (loss.defined()) loss.node()->backward_done = false;
}

// ---- helpers for op construction ------------------------------------------

namespace {

// Adds g into the grads buffer of parent p.
void acc(GradientMap& grads, const std::shared_ptr<TensorNode>& p,
         const std::vector<double>& g) {
    if (!(p->requires_grad || p->backprop)) return;
    auto& buf = grads.buffer(p.get(), p->value.size());
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

bool row_broadcast(const Shape& a, const Shape& b) {
    // b is [d] applied to every row of a = [T×d].
    return a.size() == 2 && b.size() == 1 && a[1] == b[0];
}

enum class EwKind { Add, Sub, Mul, Div };

Tensor elementwise(const char* name, EwKind kind, const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    bool bcast = false;
    if (sa != sb) {
        if (row_broadcast(sa, sb))
            bcast = true;
        else
            throw_mismatch(name, sa, sb);
    }
    const auto& av = a.data();
    const auto& bv = b.data();
    std::size_t n = av.size();
    std::size_t d = bcast ? sb[0] : 0;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        double x = av[i];
        double y = bcast ? bv[i % d] : bv[i];
        switch (kind) {
            case EwKind::Add: out[i] = x + y; break;
            case EwKind::Sub: out[i] = x - y; break;
            case EwKind::Mul: out[i] = x * y; break;
            case EwKind::Div:
                if (y == 0.0) throw DomainError("div: division by zero");
                out[i] = x / y;
                break;
        }
    }
    auto pa = a.shared_node();
    auto pb = b.shared_node();
    return make_op(sa, std::move(out), {a, b},
        [pa, pb, kind, bcast, d](const std::vector<double>& og, GradientMap& grads) {
            std::size_t n = og.size();
            if (pa->requires_grad || pa->backprop) {
                std::vector<double> ga(n);
                for (std::size_t i = 0; i < n; ++i) {
                    double y = bcast ? pb->value[i % d] : pb->value[i];
                    switch (kind) {
                        case EwKind::Add:
                        case EwKind::Sub: ga[i] = og[i]; break;
                        case EwKind::Mul: ga[i] = og[i] * y; break;
                        case EwKind::Div: ga[i] = og[i] / y; break;
                    }
                }
                acc(grads, pa, ga);
            }
            if (pb->requires_grad || pb->backprop) {
                std::vector<double> gb(pb->value.size(), 0.0);
                for (std::size_t i = 0; i < n; ++i) {
                    std::size_t j = bcast ? i % d : i;
                    double x = pa->value[i];
                    double y = pb->value[j];
                    switch (kind) {
                        case EwKind::Add: gb[j] += og[i]; break;
                        case EwKind::Sub: gb[j] -= og[i]; break;
                        case EwKind::Mul: gb[j] += og[i] * x; break;
                        case EwKind::Div: gb[j] -= og[i] * x / (y * y); break;
                    }
                }
                acc(grads, pb, gb);
            }
        });
}

Tensor unary(const Tensor& a, const std::function<double(double)>& f,
             const std::function<double(double, double)>& dfdx_from_x_and_y) {
    const auto& av = a.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
    auto pa = a.shared_node();
    auto outcopy = out;
    return make_op(a.shape(), std::move(out), {a},
        [pa, outcopy, dfdx_from_x_and_y](const std::vector<double>& og, GradientMap& grads) {
            std::vector<double> ga(og.size());
            for (std::size_t i = 0; i < og.size(); ++i)
                ga[i] = og[i] * dfdx_from_x_and_y(pa->value[i], outcopy[i]);
            acc(grads, pa, ga);
        });
}

}  // namespace

// ---- arithmetic ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return elementwise("add", EwKind::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise("sub", EwKind::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise("mul", EwKind::Mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return elementwise("div", EwKind::Div, a, b); }

Tensor add_scalar(const Tensor& a, double s) {
    return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
    return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw_mismatch("matmul", a.shape(), b.shape());
    std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n, 0.0);
    const auto& av = a.data();
    const auto& bv = b.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            double x = av[i * k + p];
            if (x == 0.0) continue;
            const double* brow = bv.data() + p * n;
            double* orow = out.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += x * brow[j];
        }
    auto pa = a.shared_node();
    auto pb = b.shared_node();
    return make_op({m, n}, std::move(out), {a, b},
        [pa, pb, m, k, n](const std::vector<double>& og, GradientMap& grads) {
            if (pa->requires_grad || pa->backprop) {
                // dA = dY · B^T
                std::vector<double> ga(m * k, 0.0);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        double g = og[i * n + j];
                        if (g == 0.0) continue;
                        for (std::size_t p = 0; p < k; ++p)
                            ga[i * k + p] += g * pb->value[p * n + j];
                    }
                acc(grads, pa, ga);
            }
            if (pb->requires_grad || pb->backprop) {
                // dB = A^T · dY
                std::vector<double> gb(k * n, 0.0);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double x = pa->value[i * k + p];
                        if (x == 0.0) continue;
                        const double* grow = og.data() + i * n;
                        double* brow = gb.data() + p * n;
                        for (std::size_t j = 0; j < n; ++j) brow[j] += x * grow[j];
                    }
                acc(grads, pb, gb);
            }
        });
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose requires 2-D, got " + shape_str(a.shape()));
    std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(m * n);
    const auto& av = a.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
    auto pa = a.shared_node();
    return make_op({n, m}, std::move(out), {a},
        [pa, m, n](const std::vector<double>& og, GradientMap& grads) {
            std::vector<double> ga(m * n);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) ga[i * n + j] = og[j * m + i];
            acc(grads, pa, ga);
        });
}

// ---- nonlinearities --------------------------------------------------------

Tensor exp(const Tensor& a) {
    return unary(a, [](double x) { return std::exp(x); },
                 [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    for (double v : a.data())
        if (v <= 0.0)
            throw DomainError("log: input " + std::to_string(v) + " is not positive");
    return unary(a, [](double x) { return std::log(x); },
                 [](double x, double) { return 1.0 / x; });
}

Tensor tanh(const Tensor& a) {
    return unary(a, [](double x) { return std::tanh(x); },
                 [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
    return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                 [](double, double y) { return y * (1.0 - y); });
}

// ---- softmax / layer norm --------------------------------------------------

namespace {

// Shared machinery: rows = all leading dims flattened, cols = last dim.
std::pair<std::size_t, std::size_t> rows_cols(const Tensor& a) {
    const Shape& s = a.shape();
    std::size_t cols = s.back();
    std::size_t rows = shape_numel(s) / cols;
    return {rows, cols};
}

}  // namespace

Tensor softmax_rows(const Tensor& a) {
    auto [rows, cols] = rows_cols(a);
    const auto& av = a.data();
    std::vector<double> out(av.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = av.data() + r * cols;
        double* y = out.data() + r * cols;
        double mx = *std::max_element(x, x + cols);
        double z = 0.0;
        for (std::size_t j = 0; j < cols; ++j) z += (y[j] = std::exp(x[j] - mx));
        for (std::size_t j = 0; j < cols; ++j) y[j] /= z;
    }
    auto pa = a.shared_node();
    auto ycopy = out;
    std::size_t R = rows, C = cols;
    return make_op(a.shape(), std::move(out), {a},
        [pa, ycopy, R, C](const std::vector<double>& og, GradientMap& grads) {
            std::vector<double> ga(og.size());
            for (std::size_t r = 0; r < R; ++r) {
                const double* y = ycopy.data() + r * C;
                const double* g = og.data() + r * C;
                double dot = 0.0;
                for (std::size_t j = 0; j < C; ++j) dot += y[j] * g[j];
                for (std::size_t j = 0; j < C; ++j)
                    ga[r * C + j] = y[j] * (g[j] - dot);
            }
            acc(grads, pa, ga);
        });
}

Tensor log_softmax_rows(const Tensor& a) {
    auto [rows, cols] = rows_cols(a);
    const auto& av = a.data();
    std::vector<double> out(av.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = av.data() + r * cols;
        double* y = out.data() + r * cols;
        double mx = *std::max_element(x, x + cols);
        double z = 0.0;
        for (std::size_t j = 0; j < cols; ++j) z += std::exp(x[j] - mx);
        double lse = mx + std::log(z);
        for (std::size_t j = 0; j < cols; ++j) y[j] = x[j] - lse;
    }
    auto pa = a.shared_node();
    auto ycopy = out;
    std::size_t R = rows, C = cols;
    return make_op(a.shape(), std::move(out), {a},
        [pa, ycopy, R, C](const std::vector<double>& og, GradientMap& grads) {
            std::vector<double> ga(og.size());
            for (std::size_t r = 0; r < R; ++r) {
                const double* y = ycopy.data() + r * C;
                const double* g = og.data() + r * C;
                double gsum = 0.0;
                for (std::size_t j = 0; j < C; ++j) gsum += g[j];
                for (std::size_t j = 0; j < C; ++j)
                    ga[r * C + j] = g[j] - std::exp(y[j]) * gsum;
            }
            acc(grads, pa, ga);
        });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.rank() != 2) throw ShapeError("layer_norm expects 2-D input, got " + shape_str(x.shape()));
    std::size_t T = x.dim(0), d = x.dim(1);
    if (gain.shape() != Shape{d}) throw_mismatch("layer_norm gain", x.shape(), gain.shape());
    if (bias.shape() != Shape{d}) throw_mismatch("layer_norm bias", x.shape(), bias.shape());
    const auto& xv = x.data();
    const auto& gv = gain.data();
    const auto& bv = bias.data();
    std::vector<double> out(T * d), xhat(T * d), inv_std(T);
    for (std::size_t r = 0; r < T; ++r) {
        const double* xr = xv.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += xr[j];
        mu /= double(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= double(d);
        double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            double h = (xr[j] - mu) * is;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gv[j] + bv[j];
        }
    }
    auto px = x.shared_node();
    auto pg = gain.shared_node();
    auto pb = bias.shared_node();
    return make_op({T, d}, std::move(out), {x, gain, bias},
        [px, pg, pb, xhat, inv_std, T, d](const std::vector<double>& og, GradientMap& grads) {
            if (px->requires_grad || px->backprop) {
                std::vector<double> gx(T * d);
                for (std::size_t r = 0; r < T; ++r) {
                    const double* g = og.data() + r * d;
                    const double* h = xhat.data() + r * d;
                    double sum_gg = 0.0, sum_ggh = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        double gg = g[j] * pg->value[j];
                        sum_gg += gg;
                        sum_ggh += gg * h[j];
                    }
                    for (std::size_t j = 0; j < d; ++j) {
                        double gg = g[j] * pg->value[j];
                        gx[r * d + j] = inv_std[r] *
                            (gg - sum_gg / double(d) - h[j] * sum_ggh / double(d));
                    }
                }
                acc(grads, px, gx);
            }
            if (pg->requires_grad || pg->backprop) {
                std::vector<double> gg(d, 0.0);
                for (std::size_t r = 0; r < T; ++r)
                    for (std::size_t j = 0; j < d; ++j)
                        gg[j] += og[r * d + j] * xhat[r * d + j];
                acc(grads, pg, gg);
            }
            if (pb->requires_grad || pb->backprop) {
                std::vector<double> gb(d, 0.0);
                for (std::size_t r = 0; r < T; ++r)
                    for (std::size_t j = 0; j < d; ++j) gb[j] += og[r * d + j];
                acc(grads, pb, gb);
            }
        });
}

// ---- concat / slice / reshape ----------------------------------------------

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows of zero tensors");
    std::size_t cols = parts[0].dim(1);
    std::size_t rows = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(1) != cols)
            throw_mismatch("concat_rows", parts[0].shape(), p.shape());
        rows += p.dim(0);
    }
    std::vector<double> out;
    out.reserve(rows * cols);
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    std::vector<std::shared_ptr<TensorNode>> nodes;
    for (const auto& p : parts) nodes.push_back(p.shared_node());
    return make_op({rows, cols}, std::move(out), parts,
        [nodes](const std::vector<double>& og, GradientMap& grads) {
            std::size_t off = 0;
            for (const auto& p : nodes) {
                std::size_t n = p->value.size();
                if (p->requires_grad || p->backprop) {
                    std::vector<double> g(og.begin() + off, og.begin() + off + n);
                    acc(grads, p, g);
                }
                off += n;
            }
        });
}

Tensor concat1d(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat1d of zero tensors");
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != 1) throw ShapeError("concat1d expects 1-D parts, got " + shape_str(p.shape()));
        total += p.dim(0);
    }
    std::vector<double> out;
    out.reserve(total);
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    std::vector<std::shared_ptr<TensorNode>> nodes;
    for (const auto& p : parts) nodes.push_back(p.shared_node());
    return make_op({total}, std::move(out), parts,
        [nodes](const std::vector<double>& og, GradientMap& grads) {
            std::size_t off = 0;
            for (const auto& p : nodes) {
                std::size_t n = p->value.size();
                if (p->requires_grad || p->backprop) {
                    std::vector<double> g(og.begin() + off, og.begin() + off + n);
                    acc(grads, p, g);
                }
                off += n;
            }
        });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols of zero tensors");
    std::size_t rows = parts[0].dim(0);
    std::size_t cols = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(0) != rows)
            throw_mismatch("concat_cols", parts[0].shape(), p.shape());
        cols += p.dim(1);
    }
    std::vector<double> out(rows * cols);
    std::size_t coff = 0;
    for (const auto& p : parts) {
        std::size_t pc = p.dim(1);
        const auto& pv = p.data();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < pc; ++j) out[r * cols + coff + j] = pv[r * pc + j];
        coff += pc;
    }
    std::vector<std::shared_ptr<TensorNode>> nodes;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        nodes.push_back(p.shared_node());
        widths.push_back(p.dim(1));
    }
    return make_op({rows, cols}, std::move(out), parts,
        [nodes, widths, rows, cols](const std::vector<double>& og, GradientMap& grads) {
            std::size_t coff = 0;
            for (std::size_t k = 0; k < nodes.size(); ++k) {
                std::size_t pc = widths[k];
                if (nodes[k]->requires_grad || nodes[k]->backprop) {
                    std::vector<double> g(rows * pc);
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < pc; ++j)
                            g[r * pc + j] = og[r * cols + coff + j];
                    acc(grads, nodes[k], g);
                }
                coff += pc;
            }
        });
}

Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
    if (a.rank() != 2) throw ShapeError("slice_rows expects 2-D, got " + shape_str(a.shape()));
    std::size_t T = a.dim(0), d = a.dim(1);
    if (r0 >= r1 || r1 > T)
        throw ShapeError("slice_rows range [" + std::to_string(r0) + "," +
                         std::to_string(r1) + ") out of " + shape_str(a.shape()));
    std::vector<double> out(a.data().begin() + r0 * d, a.data().begin() + r1 * d);
    auto pa = a.shared_node();
    return make_op({r1 - r0, d}, std::move(out), {a},
        [pa, r0, d, T](const std::vector<double>& og, GradientMap& grads) {
            std::vector<double> ga(T * d, 0.0);
            std::copy(og.begin(), og.end(), ga.begin() + r0 * d);
            acc(grads, pa, ga);
        });
}

Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
    if (a.rank() != 2) throw ShapeError("slice_cols expects 2-D, got " + shape_str(a.shape()));
    std::size_t T = a.dim(0), d = a.dim(1);
    if (c0 >= c1 || c1 > d)
        throw ShapeError("slice_cols range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") out of " + shape_str(a.shape()));
    std::size_t w = c1 - c0;
    std::vector<double> out(T * w);
    const auto& av = a.data();
    for (std::size_t r = 0; r < T; ++r)
        for (std::size_t j = 0; j < w; ++j) out[r * w + j] = av[r * d + c0 + j];
    auto pa = a.shared_node();
    return make_op({T, w}, std::move(out), {a},
        [pa, c0, w, T, d](const std::vector<double>& og, GradientMap& grads) {
            std::vector<double> ga(T * d, 0.0);
            for (std::size_t r = 0; r < T; ++r)
                for (std::size_t j = 0; j < w; ++j) ga[r * d + c0 + j] = og[r * w + j];
            acc(grads, pa, ga);
        });
}

Tensor slice1d(const Tensor& a, std::size_t i0, std::size_t i1) {
    if (a.rank() != 1) throw ShapeError("slice1d expects 1-D, got " + shape_str(a.shape()));
    std::size_t n = a.dim(0);
    if (i0 >= i1 || i1 > n)
        throw ShapeError("slice1d range [" + std::to_string(i0) + "," +
                         std::to_string(i1) + ") out of " + shape_str(a.shape()));
    std::vector<double> out(a.data().begin() + i0, a.data().begin() + i1);
    auto pa = a.shared_node();
    return make_op({i1 - i0}, std::move(out), {a},
        [pa, i0, n](const std::vector<double>& og, GradientMap& grads) {
            std::vector<double> ga(n, 0.0);
            std::copy(og.begin(), og.end(), ga.begin() + i0);
            acc(grads, pa, ga);
        });
}

Tensor reshape(const Tensor& a, Shape shape) {
    check_shape_valid(shape);
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                         ": element count differs");
    auto pa = a.shared_node();
    std::vector<double> out = a.data();
    return make_op(std::move(shape), std::move(out), {a},
        [pa](const std::vector<double>& og, GradientMap& grads) { acc(grads, pa, og); });
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    auto pa = a.shared_node();
    return make_op({1}, {s}, {a},
        [pa](const std::vector<double>& og, GradientMap& grads) {
            std::vector<double> ga(pa->value.size(), og[0]);
            acc(grads, pa, ga);
        });
}

Tensor mean(const Tensor& a) {
    std::size_t n = a.numel();
    return mul_scalar(sum(a), 1.0 / double(n));
}

// ---- conv1d ----------------------------------------------------------------

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, ConvPadding padding) {
    if (x.rank() != 2 || w.rank() != 3)
        throw ShapeError("conv1d expects x [TxCin], w [kxCinxCout]; got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
    std::size_t T = x.dim(0), cin = x.dim(1);
    std::size_t k = w.dim(0), cout = w.dim(2);
    if (w.dim(1) != cin) throw_mismatch("conv1d channels", x.shape(), w.shape());
    if (b.shape() != Shape{cout}) throw_mismatch("conv1d bias", w.shape(), b.shape());
    // Same padding centers the kernel; causal padding puts it all on the left.
    std::ptrdiff_t left = (padding == ConvPadding::Same) ? std::ptrdiff_t(k - 1) / 2
                                                         : std::ptrdiff_t(k - 1);
    const auto& xv = x.data();
    const auto& wv = w.data();
    const auto& bv = b.data();
    std::vector<double> out(T * cout);
    for (std::size_t t = 0; t < T; ++t) {
        double* orow = out.data() + t * cout;
        for (std::size_t o = 0; o < cout; ++o) orow[o] = bv[o];
        for (std::size_t tap = 0; tap < k; ++tap) {
            std::ptrdiff_t src = std::ptrdiff_t(t) + std::ptrdiff_t(tap) - left;
            if (src < 0 || src >= std::ptrdiff_t(T)) continue;
            const double* xrow = xv.data() + src * cin;
            const double* wtap = wv.data() + tap * cin * cout;
            for (std::size_t c = 0; c < cin; ++c) {
                double xc = xrow[c];
                if (xc == 0.0) continue;
                const double* wrow = wtap + c * cout;
                for (std::size_t o = 0; o < cout; ++o) orow[o] += xc * wrow[o];
            }
        }
    }
    auto px = x.shared_node();
    auto pw = w.shared_node();
    auto pb = b.shared_node();
    return make_op({T, cout}, std::move(out), {x, w, b},
        [px, pw, pb, T, cin, k, cout, left](const std::vector<double>& og, GradientMap& grads) {
            bool need_x = px->requires_grad || px->backprop;
            bool need_w = pw->requires_grad || pw->backprop;
            std::vector<double> gx(need_x ? T * cin : 0, 0.0);
            std::vector<double> gw(need_w ? k * cin * cout : 0, 0.0);
            for (std::size_t t = 0; t < T; ++t) {
                const double* grow = og.data() + t * cout;
                for (std::size_t tap = 0; tap < k; ++tap) {
                    std::ptrdiff_t src = std::ptrdiff_t(t) + std::ptrdiff_t(tap) - left;
                    if (src < 0 || src >= std::ptrdiff_t(T)) continue;
                    const double* wtap = pw->value.data() + tap * cin * cout;
                    const double* xrow = px->value.data() + src * cin;
                    for (std::size_t c = 0; c < cin; ++c) {
                        const double* wrow = wtap + c * cout;
                        if (need_x) {
                            double s = 0.0;
                            for (std::size_t o = 0; o < cout; ++o) s += grow[o] * wrow[o];
                            gx[src * cin + c] += s;
                        }
                        if (need_w) {
                            double xc = xrow[c];
                            double* gwrow = gw.data() + tap * cin * cout + c * cout;
                            for (std::size_t o = 0; o < cout; ++o) gwrow[o] += xc * grow[o];
                        }
                    }
                }
            }
            if (need_x) acc(grads, px, gx);
            if (need_w) acc(grads, pw, gw);
            if (pb->requires_grad || pb->backprop) {
                std::vector<double> gb(cout, 0.0);
                for (std::size_t t = 0; t < T; ++t)
                    for (std::size_t o = 0; o < cout; ++o) gb[o] += og[t * cout + o];
                acc(grads, pb, gb);
            }
        });
}

// ---- embedding / cross-entropy ---------------------------------------------

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw ShapeError("embedding table must be 2-D, got " + shape_str(table.shape()));
    std::size_t V = table.dim(0), d = table.dim(1);
    std::size_t n = ids.size();
    if (n == 0) throw ShapeError("embedding lookup of zero ids");
    std::vector<double> out(n * d);
    const auto& tv = table.data();
    for (std::size_t i = 0; i < n; ++i) {
        int id = ids[i];
        if (id < 0 || std::size_t(id) >= V)
            throw ShapeError("embedding id " + std::to_string(id) + " out of vocab " +
                             std::to_string(V));
        std::copy(tv.begin() + id * d, tv.begin() + (id + 1) * d, out.begin() + i * d);
    }
    auto pt = table.shared_node();
    return make_op({n, d}, std::move(out), {table},
        [pt, ids, V, d, n](const std::vector<double>& og, GradientMap& grads) {
            std::vector<double> gt(V * d, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                double* row = gt.data() + std::size_t(ids[i]) * d;
                for (std::size_t j = 0; j < d; ++j) row[j] += og[i * d + j];
            }
            acc(grads, pt, gt);
        });
}

Tensor cross_entropy_sum(const Tensor& logits, const std::vector<int>& targets) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy expects 2-D logits, got " + shape_str(logits.shape()));
    std::size_t n = logits.dim(0), V = logits.dim(1);
    if (targets.size() != n)
        throw ShapeError("cross_entropy: " + std::to_string(n) + " logit rows vs " +
                         std::to_string(targets.size()) + " targets");
    const auto& lv = logits.data();
    std::vector<double> probs(n * V);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        int t = targets[i];
        if (t < 0 || std::size_t(t) >= V)
            throw ShapeError("cross_entropy target " + std::to_string(t) +
                             " out of vocab " + std::to_string(V));
        const double* x = lv.data() + i * V;
        double mx = *std::max_element(x, x + V);
        double z = 0.0;
        for (std::size_t j = 0; j < V; ++j) z += std::exp(x[j] - mx);
        double lse = mx + std::log(z);
        for (std::size_t j = 0; j < V; ++j) probs[i * V + j] = std::exp(x[j] - lse);
        loss += lse - x[t];
    }
    auto pl = logits.shared_node();
    return make_op({1}, {loss}, {logits},
        [pl, probs, targets, n, V](const std::vector<double>& og, GradientMap& grads) {
            std::vector<double> gl(n * V);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < V; ++j)
                    gl[i * V + j] = og[0] * (probs[i * V + j] -
                                             (std::size_t(targets[i]) == j ? 1.0 : 0.0));
            acc(grads, pl, gl);
        });
}

Tensor add_mask(const Tensor& scores, const std::vector<double>& mask) {
    if (mask.size() != scores.numel())
        throw ShapeError("mask size " + std::to_string(mask.size()) +
                         " does not match scores " + shape_str(scores.shape()));
    const auto& sv = scores.data();
    std::vector<double> out(sv.size());
    for (std::size_t i = 0; i < sv.size(); ++i) out[i] = sv[i] + mask[i];
    auto ps = scores.shared_node();
    return make_op(scores.shape(), std::move(out), {scores},
        [ps](const std::vector<double>& og, GradientMap& grads) { acc(grads, ps, og); });
}

}  // namespace fastlr
