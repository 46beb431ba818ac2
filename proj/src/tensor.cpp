#include "blindloss/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <utility>

namespace blindloss {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

namespace {

void check_shape_valid(const Shape& shape, const char* op) {
    if (shape.empty()) throw ContractViolation(std::string(op) + ": empty shape");
    for (int d : shape) {
        if (d <= 0) throw ContractViolation(std::string(op) + ": non-positive extent in " + shape_str(shape));
    }
}

[[noreturn]] void contract_fail(const char* op, const std::string& detail) {
    throw ContractViolation(std::string(op) + ": " + detail);
}

thread_local Tape* g_active_tape = nullptr;

using NodePtr = std::shared_ptr<detail::TensorNode>;

NodePtr make_node(Shape shape, std::vector<double> data) {
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    return node;
}

bool wants_grad(std::initializer_list<const Tensor*> inputs) {
    if (g_active_tape == nullptr) return false;
    for (const Tensor* t : inputs)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

Tensor finish_op(NodePtr out, std::initializer_list<const Tensor*> inputs,
                 std::function<void()> adjoint) {
    Tensor result = Tensor::wrap(out);
    if (wants_grad(inputs)) {
        out->requires_grad = true;
        out->grad.assign(out->data.size(), 0.0);
        g_active_tape->record(result, std::move(adjoint));
    }
    return result;
}

void check_finite_result(const NodePtr& node, const char* op) {
    for (double v : node->data) {
        if (!std::isfinite(v)) {
            throw DomainError(std::string(op) + ": non-finite result");
        }
    }
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    check_shape_valid(shape, "zeros");
    std::int64_t n = shape_numel(shape);
    Tensor t = wrap(make_node(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0)));
    t.set_requires_grad(requires_grad);
    return t;
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    check_shape_valid(shape, "full");
    std::int64_t n = shape_numel(shape);
    Tensor t = wrap(make_node(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value)));
    t.set_requires_grad(requires_grad);
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    check_shape_valid(shape, "from");
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
        contract_fail("from", "shape " + shape_str(shape) + " does not match " +
                                  std::to_string(values.size()) + " values");
    Tensor t = wrap(make_node(std::move(shape), std::move(values)));
    t.set_requires_grad(requires_grad);
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

Tensor Tensor::identity(int n) {
    if (n <= 0) contract_fail("identity", "n must be positive");
    std::vector<double> v(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i) * n + i] = 1.0;
    return from({n, n}, std::move(v));
}

const Shape& Tensor::shape() const {
    if (!node_) throw ContractViolation("shape: undefined tensor");
    return node_->shape;
}

int Tensor::dim(int axis) const {
    const Shape& s = shape();
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        contract_fail("dim", "axis out of range");
    return s[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::size() const {
    if (!node_) return 0;
    return static_cast<std::int64_t>(node_->data.size());
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::span<const double> Tensor::data() const {
    if (!node_) throw ContractViolation("data: undefined tensor");
    return node_->data;
}

std::span<double> Tensor::mutable_data() {
    if (!node_) throw ContractViolation("mutable_data: undefined tensor");
    return node_->data;
}

std::span<const double> Tensor::grad() const {
    if (!requires_grad()) throw ContractViolation("grad: tensor does not track gradients");
    return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
    if (!requires_grad()) throw ContractViolation("mutable_grad: tensor does not track gradients");
    return node_->grad;
}

double Tensor::value() const {
    if (size() != 1) throw ContractViolation("value: tensor is not scalar, shape " + shape_str(shape()));
    return node_->data[0];
}

double Tensor::at(std::initializer_list<int> index) const {
    const Shape& s = shape();
    if (index.size() != s.size()) contract_fail("at", "rank mismatch");
    std::int64_t flat = 0;
    std::size_t axis = 0;
    for (int i : index) {
        if (i < 0 || i >= s[axis]) contract_fail("at", "index out of range");
        flat = flat * s[axis] + i;
        ++axis;
    }
    return node_->data[static_cast<std::size_t>(flat)];
}

void Tensor::set_requires_grad(bool enabled) {
    if (!node_) throw ContractViolation("set_requires_grad: undefined tensor");
    node_->requires_grad = enabled;
    if (enabled) {
        node_->grad.assign(node_->data.size(), 0.0);
    } else {
        node_->grad.clear();
        node_->grad.shrink_to_fit();
    }
}

void Tensor::zero_grad() {
    if (!requires_grad()) throw ContractViolation("zero_grad: tensor does not track gradients");
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
    if (!node_) throw ContractViolation("detach: undefined tensor");
    return wrap(make_node(node_->shape, node_->data));
}

Tensor Tensor::clone() const {
    Tensor t = detach();
    t.set_requires_grad(requires_grad());
    return t;
}

// ---- Tape -------------------------------------------------------------------

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(const Tensor& output, std::function<void()> adjoint) {
    entries_.push_back(Entry{output.node(), std::move(adjoint)});
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
        throw ContractViolation("backward: loss must be a defined scalar");
    bool found = false;
    for (const Entry& e : entries_) {
        if (e.output == loss.node()) {
            found = true;
            break;
        }
    }
    if (!found) throw ContractViolation("backward: loss was not produced by operations recorded on this tape");
    for (Entry& e : entries_) std::fill(e.output->grad.begin(), e.output->grad.end(), 0.0);
    loss.node()->grad[0] = 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->adjoint();
}

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }

NoGradScope::~NoGradScope() { g_active_tape = previous_; }

// ---- elementwise -------------------------------------------------------------

namespace {

enum class BinKind { Add, Sub, Mul, Div };

const char* bin_name(BinKind k) {
    switch (k) {
        case BinKind::Add: return "add";
        case BinKind::Sub: return "sub";
        case BinKind::Mul: return "mul";
        default: return "div";
    }
}

double bin_eval(BinKind k, double x, double y) {
    switch (k) {
        case BinKind::Add: return x + y;
        case BinKind::Sub: return x - y;
        case BinKind::Mul: return x * y;
        default: return x / y;
    }
}

Tensor binary_op(BinKind kind, const Tensor& a, const Tensor& b) {
    if (!a.defined() || !b.defined()) contract_fail(bin_name(kind), "undefined operand");
    const bool b_scalar = b.size() == 1 && a.size() != 1;
    if (!b_scalar && a.shape() != b.shape())
        contract_fail(bin_name(kind),
                      "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));

    const auto& ad = a.node()->data;
    const auto& bd = b.node()->data;
    std::vector<double> out(ad.size());
    if (b_scalar) {
        const double y = bd[0];
        for (std::size_t i = 0; i < ad.size(); ++i) out[i] = bin_eval(kind, ad[i], y);
    } else {
        for (std::size_t i = 0; i < ad.size(); ++i) out[i] = bin_eval(kind, ad[i], bd[i]);
    }
    NodePtr node = make_node(a.shape(), std::move(out));
    if (kind == BinKind::Div) check_finite_result(node, "div");

    auto an = a.node();
    auto bn = b.node();
    return finish_op(node, {&a, &b}, [kind, b_scalar, an, bn, node]() {
        const auto& g = node->grad;
        const std::size_t n = g.size();
        if (an->requires_grad) {
            auto& ga = an->grad;
            switch (kind) {
                case BinKind::Add:
                case BinKind::Sub:
                    for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
                    break;
                case BinKind::Mul:
                    if (b_scalar) {
                        const double y = bn->data[0];
                        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * y;
                    } else {
                        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bn->data[i];
                    }
                    break;
                case BinKind::Div:
                    if (b_scalar) {
                        const double y = bn->data[0];
                        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / y;
                    } else {
                        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / bn->data[i];
                    }
                    break;
            }
        }
        if (bn->requires_grad) {
            auto& gb = bn->grad;
            switch (kind) {
                case BinKind::Add:
                    if (b_scalar) {
                        double s = 0;
                        for (std::size_t i = 0; i < n; ++i) s += g[i];
                        gb[0] += s;
                    } else {
                        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
                    }
                    break;
                case BinKind::Sub:
                    if (b_scalar) {
                        double s = 0;
                        for (std::size_t i = 0; i < n; ++i) s += g[i];
                        gb[0] -= s;
                    } else {
                        for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
                    }
                    break;
                case BinKind::Mul:
                    if (b_scalar) {
                        double s = 0;
                        for (std::size_t i = 0; i < n; ++i) s += g[i] * an->data[i];
                        gb[0] += s;
                    } else {
                        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * an->data[i];
                    }
                    break;
                case BinKind::Div:
                    if (b_scalar) {
                        const double y = bn->data[0];
                        double s = 0;
                        for (std::size_t i = 0; i < n; ++i) s += g[i] * an->data[i];
                        gb[0] -= s / (y * y);
                    } else {
                        for (std::size_t i = 0; i < n; ++i)
                            gb[i] -= g[i] * an->data[i] / (bn->data[i] * bn->data[i]);
                    }
                    break;
            }
        }
    });
}

Tensor binary_const(BinKind kind, const Tensor& a, double y) {
    if (!a.defined()) contract_fail(bin_name(kind), "undefined operand");
    const auto& ad = a.node()->data;
    std::vector<double> out(ad.size());
    for (std::size_t i = 0; i < ad.size(); ++i) out[i] = bin_eval(kind, ad[i], y);
    NodePtr node = make_node(a.shape(), std::move(out));
    if (kind == BinKind::Div) check_finite_result(node, "div");

    auto an = a.node();
    return finish_op(node, {&a}, [kind, y, an, node]() {
        if (!an->requires_grad) return;
        const auto& g = node->grad;
        auto& ga = an->grad;
        switch (kind) {
            case BinKind::Add:
            case BinKind::Sub:
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                break;
            case BinKind::Mul:
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y;
                break;
            case BinKind::Div:
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / y;
                break;
        }
    });
}

template <typename Fwd, typename Bwd>
Tensor unary_op(const char* name, const Tensor& a, bool check_finite, Fwd fwd, Bwd bwd) {
    if (!a.defined()) contract_fail(name, "undefined operand");
    const auto& ad = a.node()->data;
    std::vector<double> out(ad.size());
    for (std::size_t i = 0; i < ad.size(); ++i) out[i] = fwd(ad[i]);
    NodePtr node = make_node(a.shape(), std::move(out));
    if (check_finite) check_finite_result(node, name);

    auto an = a.node();
    return finish_op(node, {&a}, [an, node, bwd]() {
        if (!an->requires_grad) return;
        const auto& g = node->grad;
        auto& ga = an->grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bwd(an->data[i], node->data[i]);
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(BinKind::Add, a, b); }
Tensor add(const Tensor& a, double b) { return binary_const(BinKind::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(BinKind::Sub, a, b); }
Tensor sub(const Tensor& a, double b) { return binary_const(BinKind::Sub, a, b); }
Tensor sub(double a, const Tensor& b) { return binary_const(BinKind::Sub, mul(b, -1.0), -a); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(BinKind::Mul, a, b); }
Tensor mul(const Tensor& a, double b) { return binary_const(BinKind::Mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_op(BinKind::Div, a, b); }
Tensor div(const Tensor& a, double b) { return binary_const(BinKind::Div, a, b); }

Tensor exp(const Tensor& a) {
    return unary_op(
        "exp", a, true, [](double x) { return std::exp(x); },
        [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    return unary_op(
        "log", a, true, [](double x) { return std::log(x); },
        [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
    // Subgradient 0 at exactly 0: the losses built on Frobenius norms treat
    // the zero-loss point as a fixed point.
    return unary_op(
        "sqrt", a, true, [](double x) { return std::sqrt(x); },
        [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor relu(const Tensor& a) {
    return unary_op(
        "relu", a, false, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor clamp_min(const Tensor& a, double floor) {
    return unary_op(
        "clamp_min", a, false, [floor](double x) { return x > floor ? x : floor; },
        [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

// ---- linear algebra -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (!a.defined() || !b.defined()) contract_fail("matmul", "undefined operand");
    if (a.rank() != 2 || b.rank() != 2)
        contract_fail("matmul", "operands must be rank 2, got " + shape_str(a.shape()) + " and " +
                                    shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        contract_fail("matmul", "inner extents differ: " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));

    std::vector<double> out(static_cast<std::size_t>(m) * static_cast<std::size_t>(n));
    {
        ConstMatMap am(a.data().data(), m, k);
        ConstMatMap bm(b.data().data(), k, n);
        MatMap om(out.data(), m, n);
        om.noalias() = am * bm;
    }
    NodePtr node = make_node({m, n}, std::move(out));

    auto an = a.node();
    auto bn = b.node();
    return finish_op(node, {&a, &b}, [an, bn, node, m, k, n]() {
        ConstMatMap g(node->grad.data(), m, n);
        if (an->requires_grad) {
            ConstMatMap bm(bn->data.data(), k, n);
            MatMap ga(an->grad.data(), m, k);
            ga.noalias() += g * bm.transpose();
        }
        if (bn->requires_grad) {
            ConstMatMap am(an->data.data(), m, k);
            MatMap gb(bn->grad.data(), k, n);
            gb.noalias() += am.transpose() * g;
        }
    });
}

Tensor transpose(const Tensor& a) {
    if (!a.defined() || a.rank() != 2) contract_fail("transpose", "operand must be rank 2");
    const int m = a.dim(0), n = a.dim(1);
    std::vector<double> out(a.node()->data.size());
    {
        ConstMatMap am(a.data().data(), m, n);
        MatMap om(out.data(), n, m);
        om = am.transpose();
    }
    NodePtr node = make_node({n, m}, std::move(out));
    auto an = a.node();
    return finish_op(node, {&a}, [an, node, m, n]() {
        if (!an->requires_grad) return;
        ConstMatMap g(node->grad.data(), n, m);
        MatMap ga(an->grad.data(), m, n);
        ga.noalias() += g.transpose();
    });
}

Tensor diagonal(const Tensor& a) {
    if (!a.defined() || a.rank() != 2 || a.dim(0) != a.dim(1))
        contract_fail("diagonal", "operand must be square, got " +
                                      (a.defined() ? shape_str(a.shape()) : std::string("undefined")));
    const int n = a.dim(0);
    std::vector<double> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = a.data()[static_cast<std::size_t>(i) * n + i];
    NodePtr node = make_node({n}, std::move(out));
    auto an = a.node();
    return finish_op(node, {&a}, [an, node, n]() {
        if (!an->requires_grad) return;
        for (int i = 0; i < n; ++i)
            an->grad[static_cast<std::size_t>(i) * n + i] += node->grad[static_cast<std::size_t>(i)];
    });
}

// ---- reductions ------------------------------------------------------------------

namespace {

struct ReducePlan {
    Shape out_shape;
    std::vector<std::int64_t> out_stride_per_axis;  // 0 for reduced axes
    std::int64_t count = 1;                         // elements folded per output cell
};

ReducePlan make_reduce_plan(const char* op, const Shape& in, const std::vector<int>& axes) {
    if (axes.empty()) contract_fail(op, "empty axis set");
    std::vector<bool> reduced(in.size(), false);
    for (int ax : axes) {
        if (ax < 0 || ax >= static_cast<int>(in.size()))
            contract_fail(op, "axis " + std::to_string(ax) + " out of range for " + shape_str(in));
        if (reduced[static_cast<std::size_t>(ax)]) contract_fail(op, "duplicate axis");
        reduced[static_cast<std::size_t>(ax)] = true;
    }
    ReducePlan plan;
    for (std::size_t i = 0; i < in.size(); ++i) {
        if (reduced[i]) {
            plan.count *= in[i];
        } else {
            plan.out_shape.push_back(in[i]);
        }
    }
    if (plan.out_shape.empty()) plan.out_shape = {1};
    plan.out_stride_per_axis.assign(in.size(), 0);
    std::int64_t stride = 1;
    for (int i = static_cast<int>(in.size()) - 1; i >= 0; --i) {
        if (!reduced[static_cast<std::size_t>(i)]) {
            plan.out_stride_per_axis[static_cast<std::size_t>(i)] = stride;
            stride *= in[static_cast<std::size_t>(i)];
        }
    }
    return plan;
}

// Calls fn(in_flat, out_flat) for every input element.
template <typename Fn>
void for_each_mapped(const Shape& in, const std::vector<std::int64_t>& out_stride, Fn fn) {
    const std::size_t rank = in.size();
    std::vector<int> idx(rank, 0);
    std::int64_t out_flat = 0;
    const std::int64_t total = shape_numel(in);
    for (std::int64_t flat = 0; flat < total; ++flat) {
        fn(flat, out_flat);
        for (int ax = static_cast<int>(rank) - 1; ax >= 0; --ax) {
            auto uax = static_cast<std::size_t>(ax);
            if (++idx[uax] < in[uax]) {
                out_flat += out_stride[uax];
                break;
            }
            idx[uax] = 0;
            out_flat -= out_stride[uax] * (in[uax] - 1);
        }
    }
}

enum class RedKind { Sum, Mean, Max };

Tensor reduce_op(RedKind kind, const Tensor& a, const std::vector<int>& axes) {
    const char* name = kind == RedKind::Sum ? "sum" : (kind == RedKind::Mean ? "mean" : "max");
    if (!a.defined()) contract_fail(name, "undefined operand");
    ReducePlan plan = make_reduce_plan(name, a.shape(), axes);
    const std::int64_t out_n = shape_numel(plan.out_shape);
    const auto& ad = a.node()->data;

    std::vector<double> out;
    std::vector<std::int64_t> argmax;
    if (kind == RedKind::Max) {
        out.assign(static_cast<std::size_t>(out_n), -std::numeric_limits<double>::infinity());
        argmax.assign(static_cast<std::size_t>(out_n), -1);
        for_each_mapped(a.shape(), plan.out_stride_per_axis, [&](std::int64_t i, std::int64_t o) {
            // strict > keeps the lowest flat index on ties
            if (ad[static_cast<std::size_t>(i)] > out[static_cast<std::size_t>(o)]) {
                out[static_cast<std::size_t>(o)] = ad[static_cast<std::size_t>(i)];
                argmax[static_cast<std::size_t>(o)] = i;
            }
        });
    } else {
        out.assign(static_cast<std::size_t>(out_n), 0.0);
        for_each_mapped(a.shape(), plan.out_stride_per_axis, [&](std::int64_t i, std::int64_t o) {
            out[static_cast<std::size_t>(o)] += ad[static_cast<std::size_t>(i)];
        });
        if (kind == RedKind::Mean) {
            const double inv = 1.0 / static_cast<double>(plan.count);
            for (double& v : out) v *= inv;
        }
    }
    NodePtr node = make_node(plan.out_shape, std::move(out));

    auto an = a.node();
    Shape in_shape = a.shape();
    return finish_op(node, {&a},
                     [kind, an, node, in_shape, plan, argmax = std::move(argmax)]() {
                         if (!an->requires_grad) return;
                         const auto& g = node->grad;
                         auto& ga = an->grad;
                         if (kind == RedKind::Max) {
                             for (std::size_t o = 0; o < g.size(); ++o)
                                 ga[static_cast<std::size_t>(argmax[o])] += g[o];
                             return;
                         }
                         const double scl = kind == RedKind::Mean ? 1.0 / static_cast<double>(plan.count) : 1.0;
                         for_each_mapped(in_shape, plan.out_stride_per_axis,
                                         [&](std::int64_t i, std::int64_t o) {
                                             ga[static_cast<std::size_t>(i)] +=
                                                 g[static_cast<std::size_t>(o)] * scl;
                                         });
                     });
}

std::vector<int> all_axes(const Tensor& a) {
    std::vector<int> axes(static_cast<std::size_t>(a.rank()));
    std::iota(axes.begin(), axes.end(), 0);
    return axes;
}

}  // namespace

Tensor sum(const Tensor& a, const std::vector<int>& axes) { return reduce_op(RedKind::Sum, a, axes); }
Tensor mean(const Tensor& a, const std::vector<int>& axes) { return reduce_op(RedKind::Mean, a, axes); }
Tensor reduce_max(const Tensor& a, const std::vector<int>& axes) { return reduce_op(RedKind::Max, a, axes); }
Tensor sum(const Tensor& a) { return reduce_op(RedKind::Sum, a, all_axes(a)); }
Tensor mean(const Tensor& a) { return reduce_op(RedKind::Mean, a, all_axes(a)); }
Tensor reduce_max(const Tensor& a) { return reduce_op(RedKind::Max, a, all_axes(a)); }

// ---- shape and indexing -------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
    if (!a.defined()) contract_fail("reshape", "undefined operand");
    check_shape_valid(shape, "reshape");
    if (shape_numel(shape) != a.size())
        contract_fail("reshape", "cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
    NodePtr node = make_node(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()));
    auto an = a.node();
    return finish_op(node, {&a}, [an, node]() {
        if (!an->requires_grad) return;
        for (std::size_t i = 0; i < node->grad.size(); ++i) an->grad[i] += node->grad[i];
    });
}

Tensor tile_rows(const Tensor& a, int rows) {
    if (!a.defined() || a.rank() != 1) contract_fail("tile_rows", "operand must be rank 1");
    if (rows <= 0) contract_fail("tile_rows", "rows must be positive");
    const int c = a.dim(0);
    std::vector<double> out(static_cast<std::size_t>(rows) * static_cast<std::size_t>(c));
    for (int r = 0; r < rows; ++r)
        std::copy(a.data().begin(), a.data().end(), out.begin() + static_cast<std::ptrdiff_t>(r) * c);
    NodePtr node = make_node({rows, c}, std::move(out));
    auto an = a.node();
    return finish_op(node, {&a}, [an, node, rows, c]() {
        if (!an->requires_grad) return;
        for (int r = 0; r < rows; ++r) {
            const double* g = node->grad.data() + static_cast<std::ptrdiff_t>(r) * c;
            for (int j = 0; j < c; ++j) an->grad[static_cast<std::size_t>(j)] += g[j];
        }
    });
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& rows) {
    if (!a.defined() || a.rank() != 2) contract_fail("gather_rows", "operand must be rank 2");
    if (rows.empty()) contract_fail("gather_rows", "empty row list");
    const int r_in = a.dim(0), c = a.dim(1);
    for (int r : rows)
        if (r < 0 || r >= r_in) contract_fail("gather_rows", "row index out of range");
    std::vector<double> out(rows.size() * static_cast<std::size_t>(c));
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(a.data().data() + static_cast<std::ptrdiff_t>(rows[i]) * c, c,
                    out.data() + static_cast<std::ptrdiff_t>(i) * c);
    NodePtr node = make_node({static_cast<int>(rows.size()), c}, std::move(out));
    auto an = a.node();
    return finish_op(node, {&a}, [an, node, rows, c]() {
        if (!an->requires_grad) return;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const double* g = node->grad.data() + static_cast<std::ptrdiff_t>(i) * c;
            double* ga = an->grad.data() + static_cast<std::ptrdiff_t>(rows[i]) * c;
            for (int j = 0; j < c; ++j) ga[j] += g[j];
        }
    });
}

Tensor gather(const Tensor& a, const std::vector<std::int64_t>& indices) {
    if (!a.defined()) contract_fail("gather", "undefined operand");
    if (indices.empty()) contract_fail("gather", "empty index list");
    for (std::int64_t i : indices)
        if (i < 0 || i >= a.size()) contract_fail("gather", "flat index out of range");
    std::vector<double> out(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i)
        out[i] = a.data()[static_cast<std::size_t>(indices[i])];
    NodePtr node = make_node({static_cast<int>(indices.size())}, std::move(out));
    auto an = a.node();
    return finish_op(node, {&a}, [an, node, indices]() {
        if (!an->requires_grad) return;
        for (std::size_t i = 0; i < indices.size(); ++i)
            an->grad[static_cast<std::size_t>(indices[i])] += node->grad[i];
    });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) contract_fail("stack_rows", "empty row list");
    const int c = rows.front().dim(0);
    for (const Tensor& t : rows)
        if (!t.defined() || t.rank() != 1 || t.dim(0) != c)
            contract_fail("stack_rows", "rows must all be rank 1 of equal length");
    std::vector<double> out(rows.size() * static_cast<std::size_t>(c));
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy(rows[i].data().begin(), rows[i].data().end(),
                  out.begin() + static_cast<std::ptrdiff_t>(i) * c);
    NodePtr node = make_node({static_cast<int>(rows.size()), c}, std::move(out));

    std::vector<const Tensor*> ptrs;
    ptrs.reserve(rows.size());
    bool any_grad = false;
    for (const Tensor& t : rows) any_grad = any_grad || t.requires_grad();
    Tensor result = Tensor::wrap(node);
    if (Tape::active() != nullptr && any_grad) {
        node->requires_grad = true;
        node->grad.assign(node->data.size(), 0.0);
        std::vector<NodePtr> row_nodes;
        row_nodes.reserve(rows.size());
        for (const Tensor& t : rows) row_nodes.push_back(t.node());
        Tape::active()->record(result, [row_nodes, node, c]() {
            for (std::size_t i = 0; i < row_nodes.size(); ++i) {
                if (!row_nodes[i]->requires_grad) continue;
                const double* g = node->grad.data() + static_cast<std::ptrdiff_t>(i) * c;
                for (int j = 0; j < c; ++j) row_nodes[i]->grad[static_cast<std::size_t>(j)] += g[j];
            }
        });
    }
    return result;
}

// ---- fused numerical kernels ----------------------------------------------------------

Tensor dot(const Tensor& a, const Tensor& b) {
    if (!a.defined() || !b.defined() || a.rank() != 1 || b.rank() != 1 || a.dim(0) != b.dim(0))
        contract_fail("dot", "operands must be rank-1 tensors of equal length");
    double acc = 0;
    for (std::size_t i = 0; i < a.data().size(); ++i) acc += a.data()[i] * b.data()[i];
    NodePtr node = make_node({1}, {acc});
    auto an = a.node();
    auto bn = b.node();
    return finish_op(node, {&a, &b}, [an, bn, node]() {
        const double g = node->grad[0];
        if (an->requires_grad)
            for (std::size_t i = 0; i < an->data.size(); ++i) an->grad[i] += g * bn->data[i];
        if (bn->requires_grad)
            for (std::size_t i = 0; i < bn->data.size(); ++i) bn->grad[i] += g * an->data[i];
    });
}

Tensor logsumexp_rows(const Tensor& a) {
    if (!a.defined() || a.rank() != 2) contract_fail("logsumexp_rows", "operand must be rank 2");
    const int r = a.dim(0), c = a.dim(1);
    std::vector<double> out(static_cast<std::size_t>(r));
    std::vector<double> probs(a.data().size());
    for (int i = 0; i < r; ++i) {
        const double* x = a.data().data() + static_cast<std::ptrdiff_t>(i) * c;
        double m = x[0];
        for (int j = 1; j < c; ++j) m = std::max(m, x[j]);
        double s = 0;
        double* p = probs.data() + static_cast<std::ptrdiff_t>(i) * c;
        for (int j = 0; j < c; ++j) {
            p[j] = std::exp(x[j] - m);
            s += p[j];
        }
        const double inv = 1.0 / s;
        for (int j = 0; j < c; ++j) p[j] *= inv;
        out[static_cast<std::size_t>(i)] = m + std::log(s);
    }
    NodePtr node = make_node({r}, std::move(out));
    check_finite_result(node, "logsumexp_rows");
    auto an = a.node();
    return finish_op(node, {&a}, [an, node, probs = std::move(probs), r, c]() {
        if (!an->requires_grad) return;
        for (int i = 0; i < r; ++i) {
            const double g = node->grad[static_cast<std::size_t>(i)];
            const double* p = probs.data() + static_cast<std::ptrdiff_t>(i) * c;
            double* ga = an->grad.data() + static_cast<std::ptrdiff_t>(i) * c;
            for (int j = 0; j < c; ++j) ga[j] += g * p[j];
        }
    });
}

Tensor l2_normalize_rows(const Tensor& a, double eps) {
    if (!a.defined() || a.rank() != 2) contract_fail("l2_normalize_rows", "operand must be rank 2");
    if (eps <= 0) contract_fail("l2_normalize_rows", "eps must be positive");
    const int r = a.dim(0), c = a.dim(1);
    std::vector<double> out(a.data().size());
    std::vector<double> norms(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) {
        const double* x = a.data().data() + static_cast<std::ptrdiff_t>(i) * c;
        double s = 0;
        for (int j = 0; j < c; ++j) s += x[j] * x[j];
        const double n = std::sqrt(s);
        norms[static_cast<std::size_t>(i)] = n;
        double* o = out.data() + static_cast<std::ptrdiff_t>(i) * c;
        if (n <= eps) {
            std::fill_n(o, c, 0.0);  // degenerate row; callers drop it
        } else {
            const double inv = 1.0 / n;
            for (int j = 0; j < c; ++j) o[j] = x[j] * inv;
        }
    }
    NodePtr node = make_node({r, c}, std::move(out));
    auto an = a.node();
    return finish_op(node, {&a}, [an, node, norms = std::move(norms), eps, r, c]() {
        if (!an->requires_grad) return;
        for (int i = 0; i < r; ++i) {
            const double n = norms[static_cast<std::size_t>(i)];
            if (n <= eps) continue;
            const double* g = node->grad.data() + static_cast<std::ptrdiff_t>(i) * c;
            const double* o = node->data.data() + static_cast<std::ptrdiff_t>(i) * c;
            double* ga = an->grad.data() + static_cast<std::ptrdiff_t>(i) * c;
            double go = 0;
            for (int j = 0; j < c; ++j) go += g[j] * o[j];
            const double inv = 1.0 / n;
            for (int j = 0; j < c; ++j) ga[j] += (g[j] - o[j] * go) * inv;
        }
    });
}

// ---- verification ---------------------------------------------------------------------

void assert_all_finite(const Tensor& t, const char* what) {
    if (!t.defined()) throw ContractViolation(std::string(what) + ": undefined tensor");
    for (double v : t.data())
        if (!std::isfinite(v)) throw DomainError(std::string(what) + ": non-finite value");
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h) {
    if (!x.defined()) throw ContractViolation("grad_check: undefined input");
    if (h <= 0) throw ContractViolation("grad_check: step must be positive");
    assert_all_finite(x, "grad_check input");

    x.set_requires_grad(true);
    std::vector<double> analytic;
    double base_value = 0;
    {
        Tape tape;
        Tensor y = f(x);
        if (y.size() != 1) throw ContractViolation("grad_check: f must return a scalar");
        if (!std::isfinite(y.value())) throw DomainError("grad_check: f returned a non-finite value");
        base_value = y.value();
        tape.backward(y);
        analytic.assign(x.grad().begin(), x.grad().end());
    }
    x.zero_grad();

    // A central difference cannot resolve derivatives below a few ulps of f
    // over the step; differences under that resolution are rounding noise,
    // not mismatch.
    const double fd_resolution =
        256.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(base_value)) / h;

    double max_rel = 0;
    {
        NoGradScope eval_only;
        auto xd = x.mutable_data();
        for (std::size_t i = 0; i < xd.size(); ++i) {
            const double orig = xd[i];
            xd[i] = orig + h;
            const double fp = f(x).value();
            xd[i] = orig - h;
            const double fm = f(x).value();
            xd[i] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw DomainError("grad_check: f returned a non-finite value");
            const double central = (fp - fm) / (2.0 * h);
            const double diff = std::abs(analytic[i] - central);
            if (diff <= fd_resolution) continue;
            const double denom = std::max({std::abs(analytic[i]), std::abs(central), 1e-8});
            max_rel = std::max(max_rel, diff / denom);
        }
    }
    return max_rel;
}

}  // namespace blindloss
