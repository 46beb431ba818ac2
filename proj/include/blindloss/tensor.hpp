#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace blindloss {

// Thrown when a caller breaks an operation's precondition (shape mismatch,
// invalid axis, non-scalar loss, ...).
struct ContractViolation : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Thrown when an operation produces or would produce non-finite values
// (division by zero, log of a non-positive number, ...).
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorNode {
    Shape shape;
    std::vector<double> data;  // row-major
    std::vector<double> grad;  // sized like data iff requires_grad
    bool requires_grad = false;
};
}  // namespace detail

// Dense n-dimensional array of doubles with an optional gradient buffer.
// Tensor is a cheap shared handle: copies alias the same storage. Operations
// on tensors are free functions; when a Tape is active and an input requires
// gradient, the operation records an adjoint so Tape::backward can later
// accumulate d(loss)/d(leaf) into each leaf's grad buffer.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor identity(int n);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int rank() const { return static_cast<int>(shape().size()); }
    int dim(int axis) const;
    std::int64_t size() const;
    bool requires_grad() const;

    std::span<const double> data() const;
    std::span<double> mutable_data();
    std::span<const double> grad() const;
    std::span<double> mutable_grad();

    double value() const;  // scalar tensors only
    double at(std::initializer_list<int> index) const;

    void set_requires_grad(bool enabled);
    void zero_grad();

    // Same values, no gradient tracking, independent storage.
    Tensor detach() const;
    Tensor clone() const;

    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

    const std::shared_ptr<detail::TensorNode>& node() const { return node_; }
    static Tensor wrap(std::shared_ptr<detail::TensorNode> node) { return Tensor(std::move(node)); }

  private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::TensorNode> node_;
};

// Define-by-run record of executed operations. Constructing a Tape makes it
// the active record for the current thread; destruction restores the previous
// one. A tape must only be used by one logical thread at a time; independent
// tapes on different threads are fine.
class Tape {
  public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    // Registers `output` as produced on this tape. `adjoint` reads
    // output->grad and accumulates into the grads of the operation's inputs.
    void record(const Tensor& output, std::function<void()> adjoint);

    // Accumulates d(loss)/d(leaf) into every grad-tracked leaf reachable from
    // `loss`. Grads of tensors produced on this tape are reset first, so
    // calling backward twice accumulates twice into the leaves.
    void backward(const Tensor& loss);

    std::size_t op_count() const { return entries_.size(); }

  private:
    struct Entry {
        std::shared_ptr<detail::TensorNode> output;
        std::function<void()> adjoint;
    };
    std::vector<Entry> entries_;
    Tape* previous_ = nullptr;
};

// Suspends recording for its lifetime (evaluation mode).
class NoGradScope {
  public:
    NoGradScope();
    ~NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

  private:
    Tape* previous_;
};

// ---- elementwise --------------------------------------------------------
// Binary forms accept a same-shape tensor, a single-element tensor
// (broadcast), or a plain double (constant).

Tensor add(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, double b);
Tensor sub(double a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, double b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, double b);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor relu(const Tensor& a);
// max(a, floor); gradient flows to `a` only where a > floor.
Tensor clamp_min(const Tensor& a, double floor);
inline Tensor scale(const Tensor& a, double k) { return mul(a, k); }
inline Tensor shift(const Tensor& a, double k) { return add(a, k); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator-(const Tensor& a, double b) { return sub(a, b); }
inline Tensor operator-(double a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, b); }
inline Tensor operator*(double a, const Tensor& b) { return mul(b, a); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator/(const Tensor& a, double b) { return div(a, b); }

// ---- linear algebra ------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n] -> [m,n]
Tensor transpose(const Tensor& a);                // [m,n] -> [n,m]
Tensor diagonal(const Tensor& a);                 // [n,n] -> [n]

// ---- reductions ----------------------------------------------------------

Tensor sum(const Tensor& a, const std::vector<int>& axes);
Tensor mean(const Tensor& a, const std::vector<int>& axes);
Tensor reduce_max(const Tensor& a, const std::vector<int>& axes);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reduce_max(const Tensor& a);

// ---- shape and indexing ---------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape);
// [c] -> [rows, c], repeating a as every row.
Tensor tile_rows(const Tensor& a, int rows);
// [r, c] -> [|rows|, c]; duplicate indices allowed, grads scatter-add back.
Tensor gather_rows(const Tensor& a, const std::vector<int>& rows);
// flat-index gather: -> [|indices|]
Tensor gather(const Tensor& a, const std::vector<std::int64_t>& indices);
// k tensors of shape [c] -> [k, c]
Tensor stack_rows(const std::vector<Tensor>& rows);

// ---- fused numerical kernels ----------------------------------------------

Tensor dot(const Tensor& a, const Tensor& b);  // [n] . [n] -> scalar
// [r, c] -> [r]; max-shifted, so finite for any finite input.
Tensor logsumexp_rows(const Tensor& a);
// Rows scaled to unit Euclidean length; rows with norm <= eps come out as
// all-zero (degenerate) and receive zero gradient.
Tensor l2_normalize_rows(const Tensor& a, double eps = 1e-12);

// ---- verification ----------------------------------------------------------

// Max over components of |analytic - central difference| scaled by
// max(|analytic|, |central|, 1e-8). `f` must be re-evaluable; it is called
// under a fresh tape once and without recording 2*numel(x) times.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h = 1e-5);

void assert_all_finite(const Tensor& t, const char* what);

}  // namespace blindloss
