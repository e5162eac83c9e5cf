#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "graft/error.hpp"
#include "graft/rng.hpp"

namespace graft {

// Global scalar precision. f32 rounds every op result (and, after a
// backward pass, every gradient) to float; f64 keeps full doubles.
// Training defaults to f32, gradient checks and determinism runs use f64.
enum class Precision { f32, f64 };

void set_precision(Precision p);
Precision precision();

// Round every element to the nearest binary32 value regardless of the
// precision mode; for persisted artifacts that must reload bitwise.
std::vector<double> rounded_to_f32(std::vector<double> v);

// While a NoGradGuard is alive, ops compute values only: no parents, no
// backward closures. Used for evaluation and finite-difference probes.
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_enabled();

struct TensorData;

/// Dense row-major tensor of rank 0..2 with reverse-mode autodiff.
/// Copies are shallow (shared handle); ops build a dynamic tape.
class Tensor {
public:
    Tensor() = default;

    static Tensor scalar(double v);
    static Tensor zeros(std::vector<size_t> shape);
    static Tensor full(std::vector<size_t> shape, double v);
    static Tensor constant(std::vector<size_t> shape, std::vector<double> data);
    // leaf that participates in autodiff (gradients are accumulated on it)
    static Tensor leaf(std::vector<size_t> shape, std::vector<double> data);

    bool defined() const { return node_ != nullptr; }
    const std::vector<size_t>& shape() const;
    size_t rank() const { return shape().size(); }
    size_t numel() const;
    size_t rows() const;  // 1 for rank<2
    size_t cols() const;  // numel for rank 1, last dim for rank 2

    const std::vector<double>& values() const;
    std::vector<double>& mutable_values();  // leaves only; invalidates nothing
    double value_at(size_t i) const;
    double scalar_value() const;  // requires numel()==1

    bool requires_grad() const;
    const std::vector<double>& grad() const;
    std::vector<double>& mutable_grad();  // for in-place rescaling (clipping)
    void zero_grad();

    /// Reverse-mode sweep from a scalar. Gradients accumulate (+=) into
    /// every reachable leaf with requires_grad; caller zeroes between steps.
    void backward() const;

    /// Value snapshot with the tape cut: result is a constant leaf.
    Tensor detach() const;

    std::shared_ptr<TensorData> node() const { return node_; }
    explicit Tensor(std::shared_ptr<TensorData> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<TensorData> node_;
};

// ---- elementwise / arithmetic ----
Tensor add(const Tensor& a, const Tensor& b);  // equal shapes, [n,d]+[d], [n,d]+[n,1]
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // same broadcast set as add
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);  // domain error on input <= 0

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k]x[k,n]; rank-1 a is a row
Tensor transpose(const Tensor& a);                // 2-d
Tensor dot(const Tensor& a, const Tensor& b);     // rank-1, equal length -> scalar

// ---- shape ----
Tensor reshape(const Tensor& a, std::vector<size_t> shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);  // 0 = rows, 1 = cols
Tensor concat_rows(const std::vector<Tensor>& parts);       // rank-1 parts become rows
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, size_t start, size_t count);
Tensor slice_cols(const Tensor& a, size_t start, size_t count);
Tensor row(const Tensor& a, size_t i);  // rank-1 view of one row
Tensor gather_rows(const Tensor& table, const std::vector<size_t>& ids);

// ---- reductions ----
Tensor sum(const Tensor& a);                 // -> scalar
Tensor sum_axis(const Tensor& a, int axis);  // 2-d only
Tensor mean(const Tensor& a);                // -> scalar
Tensor mean_axis(const Tensor& a, int axis);

// ---- normalization / attention ----
Tensor row_softmax(const Tensor& a);  // last axis; domain error on empty axis
Tensor l2_normalize(const Tensor& a); // last axis; domain error on zero norm
Tensor layer_norm(const Tensor& a, double eps = 1e-5);  // last axis, no affine
// softmax over ragged groups: rows of `a` ([e] or [e,h]) grouped by segment
// id, softmax within each (group, column)
Tensor segment_softmax(const Tensor& a, const std::vector<size_t>& segments,
                       size_t num_segments);
// out[s] = sum of rows of `a` with segment id s
Tensor segment_sum(const Tensor& a, const std::vector<size_t>& segments,
                   size_t num_segments);

// ---- compositions (no new tape ops) ----
Tensor clamp_min(const Tensor& a, double floor);  // relu(a - floor) + floor
// rowwise log(sum(exp(.))) with a constant max shift; gradient is exact
Tensor row_logsumexp(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// Distance of the nearest relu input to its kink since the last reset;
// grad_check uses this to flag unreliable finite differences.
void reset_relu_kink_gap();
double relu_kink_gap();

// Test hook: when set to "matmul", the matmul backward for the left
// operand is deliberately scaled wrong. Drives gradient-check mutation
// tests and the CLI fault-injection flag.
void set_backward_fault(const std::string& op_name);

/// Named, optionally trainable tensor tracked by optimizers/checkpoints.
/// Gradients accumulate on non-trainable parameters too (they sit inside
/// frozen stacks that trainable modules backprop through); only the
/// optimizer distinguishes trainable from frozen.
class Parameter {
public:
    Parameter() = default;
    Parameter(std::string name, Tensor value, bool trainable = true);

    static Parameter zeros(std::string name, std::vector<size_t> shape, bool trainable = true);
    static Parameter normal(std::string name, std::vector<size_t> shape, Rng& rng,
                            double stddev, bool trainable = true);
    // N(0, sqrt(2/(fan_in+fan_out)))
    static Parameter xavier(std::string name, size_t fan_in, size_t fan_out, Rng& rng,
                            bool trainable = true);

    const std::string& name() const { return name_; }
    bool trainable() const { return trainable_; }
    void set_trainable(bool t) { trainable_ = t; }

    Tensor& tensor() { return value_; }
    const Tensor& tensor() const { return value_; }
    size_t numel() const { return value_.numel(); }
    const std::vector<double>& values() const { return value_.values(); }
    const std::vector<double>& grad() const { return value_.grad(); }
    void zero_grad() { value_.zero_grad(); }

    // in-place update from the optimizer; keeps values f32-representable
    // so checkpoints round-trip losslessly
    void assign(const std::vector<double>& new_values);

private:
    std::string name_;
    Tensor value_;
    bool trainable_ = true;
};

using ParamRefs = std::vector<Parameter*>;

}  // namespace graft
