#include "graft/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

namespace graft {

namespace {

Precision g_precision = Precision::f32;
int g_no_grad_depth = 0;
uint64_t g_next_node_id = 1;
thread_local double g_relu_kink_gap = std::numeric_limits<double>::infinity();
std::string g_fault_op;

}  // namespace

void set_precision(Precision p) { g_precision = p; }
Precision precision() { return g_precision; }

std::vector<double> rounded_to_f32(std::vector<double> v) {
    for (double& x : v) x = static_cast<double>(static_cast<float>(x));
    return v;
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

void reset_relu_kink_gap() { g_relu_kink_gap = std::numeric_limits<double>::infinity(); }
double relu_kink_gap() { return g_relu_kink_gap; }
void set_backward_fault(const std::string& op_name) { g_fault_op = op_name; }

struct TensorData {
    std::vector<size_t> shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    uint64_t id = 0;
    std::vector<std::shared_ptr<TensorData>> parents;
    std::function<void(TensorData&)> backprop;

    size_t numel() const { return value.size(); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

namespace {

size_t shape_numel(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

void quantize_f32(std::vector<double>& v) {
    for (double& x : v) x = static_cast<double>(static_cast<float>(x));
}

void finalize_value(std::vector<double>& v, const char* op) {
    if (g_precision == Precision::f32) quantize_f32(v);
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw domain_error(std::string("non-finite result in op '") + op + "'");
        }
    }
}

std::shared_ptr<TensorData> new_node(std::vector<size_t> shape, std::vector<double> value) {
    auto n = std::make_shared<TensorData>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->id = g_next_node_id++;
    return n;
}

// Builds the result node: wires parents and the backward closure only when
// the tape is live and some parent needs gradients.
Tensor make_op(const char* op, std::vector<size_t> shape, std::vector<double> value,
               std::vector<std::shared_ptr<TensorData>> parents,
               std::function<void(TensorData&)> backward) {
    finalize_value(value, op);
    auto n = new_node(std::move(shape), std::move(value));
    bool needs = false;
    if (grad_enabled()) {
        for (const auto& p : parents) {
            if (p && p->requires_grad) {
                needs = true;
                break;
            }
        }
    }
    if (needs) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backprop = std::move(backward);
    }
    return Tensor(n);
}

const std::vector<double>& vals(const Tensor& t) { return t.node()->value; }

void check_defined(const Tensor& t, const char* op) {
    if (!t.defined()) throw contract_error(std::string("undefined tensor passed to '") + op + "'");
}

enum class Broadcast { equal, row_vec, col_vec };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return Broadcast::equal;
    if (a.rank() == 2) {
        if (b.rank() == 1 && b.numel() == a.cols()) return Broadcast::row_vec;
        if (b.rank() == 2 && b.shape()[0] == 1 && b.shape()[1] == a.cols()) return Broadcast::row_vec;
        if (b.rank() == 2 && b.shape()[0] == a.rows() && b.shape()[1] == 1) return Broadcast::col_vec;
    }
    throw shape_error(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
}

// y[i] = f(a[i], b[bc(i)]) with the broadcast patterns above
template <typename Fwd, typename BwdA, typename BwdB>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, BwdA bwd_a, BwdB bwd_b) {
    check_defined(a, op);
    check_defined(b, op);
    Broadcast bc = broadcast_kind(a, b, op);
    const auto& av = vals(a);
    const auto& bv = vals(b);
    const size_t n = av.size();
    const size_t ncols = a.cols();
    std::vector<double> out(n);
    auto bindex = [bc, ncols](size_t i) -> size_t {
        switch (bc) {
            case Broadcast::equal: return i;
            case Broadcast::row_vec: return i % ncols;
            case Broadcast::col_vec: return i / ncols;
        }
        return i;
    };
    for (size_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[bindex(i)]);

    TensorData* pa = a.node().get();
    TensorData* pb = b.node().get();
    return make_op(op, a.shape(), std::move(out), {a.node(), b.node()},
                   [pa, pb, bwd_a, bwd_b, bindex](TensorData& o) {
                       const size_t n2 = o.value.size();
                       if (pa->requires_grad) {
                           pa->ensure_grad();
                           for (size_t i = 0; i < n2; ++i)
                               pa->grad[i] += bwd_a(pa->value[i], pb->value[bindex(i)]) * o.grad[i];
                       }
                       if (pb->requires_grad) {
                           pb->ensure_grad();
                           for (size_t i = 0; i < n2; ++i)
                               pb->grad[bindex(i)] +=
                                   bwd_b(pa->value[i], pb->value[bindex(i)]) * o.grad[i];
                       }
                   });
}

template <typename Fwd, typename Bwd>
Tensor unary_op(const char* op, const Tensor& a, Fwd fwd, Bwd bwd) {
    check_defined(a, op);
    const auto& av = vals(a);
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
    TensorData* pa = a.node().get();
    return make_op(op, a.shape(), std::move(out), {a.node()}, [pa, bwd](TensorData& o) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < o.value.size(); ++i) pa->grad[i] += bwd(pa->value[i], o.value[i]) * o.grad[i];
    });
}

void matmul_accum(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    // c[m,n] += a[m,k] * b[k,n]; ikj order keeps the inner loop contiguous
    for (size_t i = 0; i < m; ++i) {
        for (size_t kk = 0; kk < k; ++kk) {
            const double aik = a[i * k + kk];
            if (aik == 0.0) continue;
            const double* brow = b + kk * n;
            double* crow = c + i * n;
            for (size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

}  // namespace

// ---- Tensor basics ----

Tensor Tensor::scalar(double v) { return constant({}, {v}); }

Tensor Tensor::zeros(std::vector<size_t> shape) {
    size_t n = shape_numel(shape);
    return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<size_t> shape, double v) {
    size_t n = shape_numel(shape);
    return constant(std::move(shape), std::vector<double>(n, v));
}

Tensor Tensor::constant(std::vector<size_t> shape, std::vector<double> data) {
    if (shape_numel(shape) != data.size())
        throw shape_error("constant: shape " + shape_str(shape) + " does not match data length");
    finalize_value(data, "constant");
    return Tensor(new_node(std::move(shape), std::move(data)));
}

Tensor Tensor::leaf(std::vector<size_t> shape, std::vector<double> data) {
    Tensor t = constant(std::move(shape), std::move(data));
    t.node()->requires_grad = true;
    return t;
}

const std::vector<size_t>& Tensor::shape() const { return node_->shape; }
size_t Tensor::numel() const { return node_->value.size(); }

size_t Tensor::rows() const { return rank() == 2 ? node_->shape[0] : 1; }
size_t Tensor::cols() const {
    if (rank() == 2) return node_->shape[1];
    return numel();
}

const std::vector<double>& Tensor::values() const { return node_->value; }
std::vector<double>& Tensor::mutable_values() { return node_->value; }
double Tensor::value_at(size_t i) const { return node_->value.at(i); }

double Tensor::scalar_value() const {
    if (numel() != 1) throw contract_error("scalar_value on tensor with numel != 1");
    return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

const std::vector<double>& Tensor::grad() const {
    node_->ensure_grad();
    return node_->grad;
}

std::vector<double>& Tensor::mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    node_->grad.assign(node_->value.size(), 0.0);
}

Tensor Tensor::detach() const {
    return Tensor::constant(node_->shape, node_->value);
}

void Tensor::backward() const {
    if (!node_) throw contract_error("backward on undefined tensor");
    if (numel() != 1) throw contract_error("backward requires a scalar loss");
    if (!node_->requires_grad) return;  // nothing reachable

    // creation order is a topological order of the dynamically built DAG
    std::vector<TensorData*> order;
    std::unordered_set<TensorData*> seen;
    std::vector<TensorData*> stack{node_.get()};
    seen.insert(node_.get());
    while (!stack.empty()) {
        TensorData* cur = stack.back();
        stack.pop_back();
        order.push_back(cur);
        for (const auto& p : cur->parents) {
            if (p && p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(),
              [](const TensorData* a, const TensorData* b) { return a->id > b->id; });

    // interior grads are scratch for this sweep; only leaves accumulate
    for (TensorData* n : order) {
        if (n->backprop) n->grad.assign(n->value.size(), 0.0);
    }
    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (TensorData* n : order) {
        if (n->backprop) n->backprop(*n);
    }
    if (g_precision == Precision::f32) {
        for (TensorData* n : order) quantize_f32(n->grad);
    }
}

// ---- arithmetic ----

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double s) {
    return unary_op(
        "scale", a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
    return unary_op(
        "add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
    check_defined(a, "relu");
    for (double x : vals(a)) g_relu_kink_gap = std::min(g_relu_kink_gap, std::fabs(x));
    return unary_op(
        "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(
        "sigmoid", a,
        [](double x) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& a) {
    return unary_op(
        "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    for (double x : vals(a)) {
        if (x <= 0.0) throw domain_error("log: nonpositive input");
    }
    return unary_op(
        "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_defined(a, "matmul");
    check_defined(b, "matmul");
    if (a.rank() < 1 || a.rank() > 2 || b.rank() < 1 || b.rank() > 2)
        throw shape_error("matmul: operands must be rank 1 or 2");
    if (a.rank() == 1 && b.rank() == 1) throw shape_error("matmul: use dot for two vectors");

    const size_t m = a.rank() == 2 ? a.shape()[0] : 1;
    const size_t k = a.rank() == 2 ? a.shape()[1] : a.numel();
    const size_t k2 = b.rank() == 2 ? b.shape()[0] : b.numel();
    const size_t n = b.rank() == 2 ? b.shape()[1] : 1;
    if (k != k2)
        throw shape_error("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));

    std::vector<double> out(m * n, 0.0);
    matmul_accum(vals(a).data(), vals(b).data(), out.data(), m, k, n);

    std::vector<size_t> out_shape;
    if (a.rank() == 1)
        out_shape = {n};  // row vector in, vector out
    else if (b.rank() == 1)
        out_shape = {m};
    else
        out_shape = {m, n};

    TensorData* pa = a.node().get();
    TensorData* pb = b.node().get();
    return make_op("matmul", std::move(out_shape), std::move(out), {a.node(), b.node()},
                   [pa, pb, m, k, n](TensorData& o) {
                       const double* g = o.grad.data();
                       const double fault = (g_fault_op == "matmul") ? 1.5 : 1.0;
                       if (pa->requires_grad) {
                           // dA = dC * B^T
                           pa->ensure_grad();
                           for (size_t i = 0; i < m; ++i)
                               for (size_t kk = 0; kk < k; ++kk) {
                                   double acc = 0.0;
                                   const double* grow = g + i * n;
                                   const double* brow = pb->value.data() + kk * n;
                                   for (size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                                   pa->grad[i * k + kk] += fault * acc;
                               }
                       }
                       if (pb->requires_grad) {
                           // dB = A^T * dC
                           pb->ensure_grad();
                           for (size_t i = 0; i < m; ++i) {
                               const double* arow = pa->value.data() + i * k;
                               const double* grow = g + i * n;
                               for (size_t kk = 0; kk < k; ++kk) {
                                   const double aik = arow[kk];
                                   if (aik == 0.0) continue;
                                   double* brow = pb->grad.data() + kk * n;
                                   for (size_t j = 0; j < n; ++j) brow[j] += aik * grow[j];
                               }
                           }
                       }
                   });
}

Tensor transpose(const Tensor& a) {
    check_defined(a, "transpose");
    if (a.rank() != 2) throw shape_error("transpose: rank-2 tensor required");
    const size_t m = a.shape()[0], n = a.shape()[1];
    std::vector<double> out(m * n);
    const auto& av = vals(a);
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
    TensorData* pa = a.node().get();
    return make_op("transpose", {n, m}, std::move(out), {a.node()}, [pa, m, n](TensorData& o) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) pa->grad[i * n + j] += o.grad[j * m + i];
    });
}

Tensor dot(const Tensor& a, const Tensor& b) {
    check_defined(a, "dot");
    check_defined(b, "dot");
    if (a.rank() != 1 || b.rank() != 1 || a.numel() != b.numel())
        throw shape_error("dot: two equal-length vectors required");
    double acc = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) acc += vals(a)[i] * vals(b)[i];
    TensorData* pa = a.node().get();
    TensorData* pb = b.node().get();
    return make_op("dot", {}, {acc}, {a.node(), b.node()}, [pa, pb](TensorData& o) {
        const double g = o.grad[0];
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < pa->value.size(); ++i) pa->grad[i] += g * pb->value[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < pb->value.size(); ++i) pb->grad[i] += g * pa->value[i];
        }
    });
}

// ---- shape ----

Tensor reshape(const Tensor& a, std::vector<size_t> shape) {
    check_defined(a, "reshape");
    if (shape_numel(shape) != a.numel())
        throw shape_error("reshape: numel mismatch " + shape_str(a.shape()) + " -> " + shape_str(shape));
    TensorData* pa = a.node().get();
    return make_op("reshape", std::move(shape), vals(a), {a.node()}, [pa](TensorData& o) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i];
    });
}

namespace {

// rank-1 parts are promoted to single rows
std::pair<size_t, size_t> row_dims(const Tensor& t) {
    if (t.rank() == 1) return {1, t.numel()};
    if (t.rank() == 2) return {t.shape()[0], t.shape()[1]};
    throw shape_error("concat: rank-1 or rank-2 parts required");
}

}  // namespace

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw shape_error("concat: no parts");
    for (const auto& p : parts) check_defined(p, "concat");
    if (axis != 0 && axis != 1) throw shape_error("concat: axis must be 0 or 1");

    std::vector<std::shared_ptr<TensorData>> parents;
    parents.reserve(parts.size());
    for (const auto& p : parts) parents.push_back(p.node());

    if (axis == 0) {
        const size_t d = row_dims(parts[0]).second;
        size_t total_rows = 0;
        for (const auto& p : parts) {
            auto [r, c] = row_dims(p);
            if (c != d) throw shape_error("concat rows: column counts differ");
            total_rows += r;
        }
        std::vector<double> out;
        out.reserve(total_rows * d);
        for (const auto& p : parts) out.insert(out.end(), vals(p).begin(), vals(p).end());
        return make_op("concat", {total_rows, d}, std::move(out), std::move(parents),
                       [](TensorData& o) {
                           size_t offset = 0;
                           for (const auto& p : o.parents) {
                               const size_t n = p->value.size();
                               if (p->requires_grad) {
                                   p->ensure_grad();
                                   for (size_t i = 0; i < n; ++i) p->grad[i] += o.grad[offset + i];
                               }
                               offset += n;
                           }
                       });
    }

    // axis == 1
    const size_t rows = row_dims(parts[0]).first;
    bool all_vectors = true;
    size_t total_cols = 0;
    for (const auto& p : parts) {
        auto [r, c] = row_dims(p);
        if (r != rows) throw shape_error("concat cols: row counts differ");
        all_vectors = all_vectors && (p.rank() == 1);
        total_cols += c;
    }
    std::vector<double> out(rows * total_cols);
    std::vector<size_t> col_of_part(parts.size());
    {
        size_t col = 0;
        for (size_t pi = 0; pi < parts.size(); ++pi) {
            col_of_part[pi] = col;
            auto [r, c] = row_dims(parts[pi]);
            const auto& pv = vals(parts[pi]);
            for (size_t i = 0; i < r; ++i)
                std::memcpy(out.data() + i * total_cols + col, pv.data() + i * c, c * sizeof(double));
            col += c;
        }
    }
    std::vector<size_t> shape =
        all_vectors ? std::vector<size_t>{total_cols} : std::vector<size_t>{rows, total_cols};
    return make_op("concat", std::move(shape), std::move(out), std::move(parents),
                   [rows, total_cols](TensorData& o) {
                       size_t col = 0;
                       for (const auto& p : o.parents) {
                           const size_t c = p->shape.size() == 2 ? p->shape[1] : p->value.size();
                           if (p->requires_grad) {
                               p->ensure_grad();
                               for (size_t i = 0; i < rows; ++i)
                                   for (size_t j = 0; j < c; ++j)
                                       p->grad[i * c + j] += o.grad[i * total_cols + col + j];
                           }
                           col += c;
                       }
                   });
}

Tensor concat_rows(const std::vector<Tensor>& parts) { return concat(parts, 0); }
Tensor concat_cols(const std::vector<Tensor>& parts) { return concat(parts, 1); }

Tensor slice_rows(const Tensor& a, size_t start, size_t count) {
    check_defined(a, "slice_rows");
    if (a.rank() != 2) throw shape_error("slice_rows: rank-2 tensor required");
    const size_t m = a.shape()[0], d = a.shape()[1];
    if (start + count > m) throw shape_error("slice_rows: range out of bounds");
    std::vector<double> out(vals(a).begin() + start * d, vals(a).begin() + (start + count) * d);
    TensorData* pa = a.node().get();
    return make_op("slice_rows", {count, d}, std::move(out), {a.node()},
                   [pa, start, d](TensorData& o) {
                       if (!pa->requires_grad) return;
                       pa->ensure_grad();
                       for (size_t i = 0; i < o.grad.size(); ++i) pa->grad[start * d + i] += o.grad[i];
                   });
}

Tensor slice_cols(const Tensor& a, size_t start, size_t count) {
    check_defined(a, "slice_cols");
    if (a.rank() != 2) throw shape_error("slice_cols: rank-2 tensor required");
    const size_t m = a.shape()[0], d = a.shape()[1];
    if (start + count > d) throw shape_error("slice_cols: range out of bounds");
    std::vector<double> out(m * count);
    const auto& av = vals(a);
    for (size_t i = 0; i < m; ++i)
        std::memcpy(out.data() + i * count, av.data() + i * d + start, count * sizeof(double));
    TensorData* pa = a.node().get();
    return make_op("slice_cols", {m, count}, std::move(out), {a.node()},
                   [pa, start, count, d, m](TensorData& o) {
                       if (!pa->requires_grad) return;
                       pa->ensure_grad();
                       for (size_t i = 0; i < m; ++i)
                           for (size_t j = 0; j < count; ++j)
                               pa->grad[i * d + start + j] += o.grad[i * count + j];
                   });
}

Tensor row(const Tensor& a, size_t i) {
    if (a.rank() == 1) {
        if (i != 0) throw shape_error("row: index out of bounds for vector");
        return a;
    }
    return reshape(slice_rows(a, i, 1), {a.shape()[1]});
}

Tensor gather_rows(const Tensor& table, const std::vector<size_t>& ids) {
    check_defined(table, "gather_rows");
    if (table.rank() != 2) throw shape_error("gather_rows: rank-2 table required");
    const size_t m = table.shape()[0], d = table.shape()[1];
    std::vector<double> out(ids.size() * d);
    const auto& tv = vals(table);
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= m) throw shape_error("gather_rows: row id out of range");
        std::memcpy(out.data() + i * d, tv.data() + ids[i] * d, d * sizeof(double));
    }
    TensorData* pt = table.node().get();
    return make_op("gather_rows", {ids.size(), d}, std::move(out), {table.node()},
                   [pt, ids, d](TensorData& o) {
                       if (!pt->requires_grad) return;
                       pt->ensure_grad();
                       for (size_t i = 0; i < ids.size(); ++i)
                           for (size_t j = 0; j < d; ++j)
                               pt->grad[ids[i] * d + j] += o.grad[i * d + j];
                   });
}

// ---- reductions ----

Tensor sum(const Tensor& a) {
    check_defined(a, "sum");
    double acc = 0.0;
    for (double x : vals(a)) acc += x;
    TensorData* pa = a.node().get();
    return make_op("sum", {}, {acc}, {a.node()}, [pa](TensorData& o) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        const double g = o.grad[0];
        for (double& gx : pa->grad) gx += g;
    });
}

Tensor sum_axis(const Tensor& a, int axis) {
    check_defined(a, "sum_axis");
    if (a.rank() != 2) throw shape_error("sum_axis: rank-2 tensor required");
    if (axis != 0 && axis != 1) throw shape_error("sum_axis: axis must be 0 or 1");
    const size_t m = a.shape()[0], d = a.shape()[1];
    const auto& av = vals(a);
    std::vector<double> out(axis == 0 ? d : m, 0.0);
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < d; ++j) out[axis == 0 ? j : i] += av[i * d + j];
    TensorData* pa = a.node().get();
    return make_op("sum_axis", {axis == 0 ? d : m}, std::move(out), {a.node()},
                   [pa, m, d, axis](TensorData& o) {
                       if (!pa->requires_grad) return;
                       pa->ensure_grad();
                       for (size_t i = 0; i < m; ++i)
                           for (size_t j = 0; j < d; ++j)
                               pa->grad[i * d + j] += o.grad[axis == 0 ? j : i];
                   });
}

Tensor mean(const Tensor& a) {
    check_defined(a, "mean");
    if (a.numel() == 0) throw domain_error("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor mean_axis(const Tensor& a, int axis) {
    check_defined(a, "mean_axis");
    if (a.rank() != 2) throw shape_error("mean_axis: rank-2 tensor required");
    const size_t n = axis == 0 ? a.shape()[0] : a.shape()[1];
    if (n == 0) throw domain_error("mean_axis: empty axis");
    return scale(sum_axis(a, axis), 1.0 / static_cast<double>(n));
}

// ---- normalization / attention ----

Tensor row_softmax(const Tensor& a) {
    check_defined(a, "row_softmax");
    const size_t d = a.cols();
    const size_t m = a.numel() / std::max<size_t>(d, 1);
    if (d == 0) throw domain_error("row_softmax: empty axis");
    const auto& av = vals(a);
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < m; ++i) {
        const double* x = av.data() + i * d;
        double* y = out.data() + i * d;
        double mx = x[0];
        for (size_t j = 1; j < d; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (size_t j = 0; j < d; ++j) {
            y[j] = std::exp(x[j] - mx);
            z += y[j];
        }
        for (size_t j = 0; j < d; ++j) y[j] /= z;
    }
    TensorData* pa = a.node().get();
    return make_op("row_softmax", a.shape(), std::move(out), {a.node()},
                   [pa, m, d](TensorData& o) {
                       if (!pa->requires_grad) return;
                       pa->ensure_grad();
                       for (size_t i = 0; i < m; ++i) {
                           const double* y = o.value.data() + i * d;
                           const double* gy = o.grad.data() + i * d;
                           double s = 0.0;
                           for (size_t j = 0; j < d; ++j) s += y[j] * gy[j];
                           for (size_t j = 0; j < d; ++j) pa->grad[i * d + j] += y[j] * (gy[j] - s);
                       }
                   });
}

Tensor l2_normalize(const Tensor& a) {
    check_defined(a, "l2_normalize");
    const size_t d = a.cols();
    const size_t m = a.numel() / std::max<size_t>(d, 1);
    if (d == 0) throw domain_error("l2_normalize: empty axis");
    const auto& av = vals(a);
    std::vector<double> out(a.numel());
    std::vector<double> norms(m);
    for (size_t i = 0; i < m; ++i) {
        const double* x = av.data() + i * d;
        double s = 0.0;
        for (size_t j = 0; j < d; ++j) s += x[j] * x[j];
        const double norm = std::sqrt(s);
        if (norm < 1e-30) throw domain_error("l2_normalize: zero-norm row");
        norms[i] = norm;
        for (size_t j = 0; j < d; ++j) out[i * d + j] = x[j] / norm;
    }
    TensorData* pa = a.node().get();
    return make_op("l2_normalize", a.shape(), std::move(out), {a.node()},
                   [pa, m, d, norms](TensorData& o) {
                       if (!pa->requires_grad) return;
                       pa->ensure_grad();
                       for (size_t i = 0; i < m; ++i) {
                           const double* y = o.value.data() + i * d;
                           const double* gy = o.grad.data() + i * d;
                           double ydotg = 0.0;
                           for (size_t j = 0; j < d; ++j) ydotg += y[j] * gy[j];
                           for (size_t j = 0; j < d; ++j)
                               pa->grad[i * d + j] += (gy[j] - y[j] * ydotg) / norms[i];
                       }
                   });
}

Tensor layer_norm(const Tensor& a, double eps) {
    check_defined(a, "layer_norm");
    const size_t d = a.cols();
    const size_t m = a.numel() / std::max<size_t>(d, 1);
    if (d == 0) throw domain_error("layer_norm: empty axis");
    const auto& av = vals(a);
    std::vector<double> out(a.numel());
    std::vector<double> inv_std(m);
    for (size_t i = 0; i < m; ++i) {
        const double* x = av.data() + i * d;
        double mu = 0.0;
        for (size_t j = 0; j < d; ++j) mu += x[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (size_t j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= static_cast<double>(d);
        const double istd = 1.0 / std::sqrt(var + eps);
        inv_std[i] = istd;
        for (size_t j = 0; j < d; ++j) out[i * d + j] = (x[j] - mu) * istd;
    }
    TensorData* pa = a.node().get();
    return make_op("layer_norm", a.shape(), std::move(out), {a.node()},
                   [pa, m, d, inv_std](TensorData& o) {
                       if (!pa->requires_grad) return;
                       pa->ensure_grad();
                       const double dn = static_cast<double>(d);
                       for (size_t i = 0; i < m; ++i) {
                           const double* y = o.value.data() + i * d;
                           const double* gy = o.grad.data() + i * d;
                           double mean_gy = 0.0, mean_gyy = 0.0;
                           for (size_t j = 0; j < d; ++j) {
                               mean_gy += gy[j];
                               mean_gyy += gy[j] * y[j];
                           }
                           mean_gy /= dn;
                           mean_gyy /= dn;
                           for (size_t j = 0; j < d; ++j)
                               pa->grad[i * d + j] +=
                                   inv_std[i] * (gy[j] - mean_gy - y[j] * mean_gyy);
                       }
                   });
}

Tensor segment_softmax(const Tensor& a, const std::vector<size_t>& segments, size_t num_segments) {
    check_defined(a, "segment_softmax");
    const size_t h = a.rank() == 2 ? a.shape()[1] : 1;
    const size_t e = a.rank() == 2 ? a.shape()[0] : a.numel();
    if (segments.size() != e) throw shape_error("segment_softmax: segment ids do not match rows");
    for (size_t s : segments)
        if (s >= num_segments) throw shape_error("segment_softmax: segment id out of range");

    const auto& av = vals(a);
    std::vector<double> out(a.numel());
    // per (segment, column) max then normalize
    std::vector<double> mx(num_segments * h, -std::numeric_limits<double>::infinity());
    for (size_t i = 0; i < e; ++i)
        for (size_t j = 0; j < h; ++j)
            mx[segments[i] * h + j] = std::max(mx[segments[i] * h + j], av[i * h + j]);
    std::vector<double> z(num_segments * h, 0.0);
    for (size_t i = 0; i < e; ++i)
        for (size_t j = 0; j < h; ++j) {
            out[i * h + j] = std::exp(av[i * h + j] - mx[segments[i] * h + j]);
            z[segments[i] * h + j] += out[i * h + j];
        }
    for (size_t i = 0; i < e; ++i)
        for (size_t j = 0; j < h; ++j) out[i * h + j] /= z[segments[i] * h + j];

    TensorData* pa = a.node().get();
    return make_op("segment_softmax", a.shape(), std::move(out), {a.node()},
                   [pa, segments, num_segments, e, h](TensorData& o) {
                       if (!pa->requires_grad) return;
                       pa->ensure_grad();
                       std::vector<double> s(num_segments * h, 0.0);
                       for (size_t i = 0; i < e; ++i)
                           for (size_t j = 0; j < h; ++j)
                               s[segments[i] * h + j] += o.value[i * h + j] * o.grad[i * h + j];
                       for (size_t i = 0; i < e; ++i)
                           for (size_t j = 0; j < h; ++j)
                               pa->grad[i * h + j] += o.value[i * h + j] *
                                                      (o.grad[i * h + j] - s[segments[i] * h + j]);
                   });
}

Tensor segment_sum(const Tensor& a, const std::vector<size_t>& segments, size_t num_segments) {
    check_defined(a, "segment_sum");
    const size_t d = a.rank() == 2 ? a.shape()[1] : 1;
    const size_t e = a.rank() == 2 ? a.shape()[0] : a.numel();
    if (segments.size() != e) throw shape_error("segment_sum: segment ids do not match rows");
    for (size_t s : segments)
        if (s >= num_segments) throw shape_error("segment_sum: segment id out of range");
    const auto& av = vals(a);
    std::vector<double> out(num_segments * d, 0.0);
    for (size_t i = 0; i < e; ++i)
        for (size_t j = 0; j < d; ++j) out[segments[i] * d + j] += av[i * d + j];
    std::vector<size_t> shape =
        a.rank() == 2 ? std::vector<size_t>{num_segments, d} : std::vector<size_t>{num_segments};
    TensorData* pa = a.node().get();
    return make_op("segment_sum", std::move(shape), std::move(out), {a.node()},
                   [pa, segments, e, d](TensorData& o) {
                       if (!pa->requires_grad) return;
                       pa->ensure_grad();
                       for (size_t i = 0; i < e; ++i)
                           for (size_t j = 0; j < d; ++j)
                               pa->grad[i * d + j] += o.grad[segments[i] * d + j];
                   });
}

// ---- compositions ----

Tensor clamp_min(const Tensor& a, double floor) {
    return add_scalar(relu(add_scalar(a, -floor)), floor);
}

Tensor row_logsumexp(const Tensor& a) {
    check_defined(a, "row_logsumexp");
    if (a.rank() == 1) {
        double mx = vals(a)[0];
        for (double x : vals(a)) mx = std::max(mx, x);
        Tensor shifted = add_scalar(a, -mx);
        return add_scalar(log(sum(exp(shifted))), mx);
    }
    if (a.rank() != 2) throw shape_error("row_logsumexp: rank-1 or rank-2 tensor required");
    const size_t m = a.shape()[0], d = a.shape()[1];
    if (d == 0) throw domain_error("row_logsumexp: empty axis");
    std::vector<double> mx(m, -std::numeric_limits<double>::infinity());
    const auto& av = vals(a);
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < d; ++j) mx[i] = std::max(mx[i], av[i * d + j]);
    // the shift is constant, so the gradient of the composition is exact
    Tensor shift_col = Tensor::constant({m, 1}, mx);
    Tensor shift_vec = Tensor::constant({m}, mx);
    return add(log(sum_axis(exp(sub(a, shift_col)), 1)), shift_vec);
}

// ---- Parameter ----

namespace {
void quantize_param(std::vector<double>& v) {
    // parameters stay f32-representable so the f32 checkpoint format
    // round-trips bitwise in either precision mode
    quantize_f32(v);
}
}  // namespace

Parameter::Parameter(std::string name, Tensor value, bool trainable)
    : name_(std::move(name)), value_(std::move(value)), trainable_(trainable) {
    quantize_param(value_.mutable_values());
    value_.node()->requires_grad = true;
}

Parameter Parameter::zeros(std::string name, std::vector<size_t> shape, bool trainable) {
    return Parameter(std::move(name), Tensor::zeros(std::move(shape)), trainable);
}

Parameter Parameter::normal(std::string name, std::vector<size_t> shape, Rng& rng, double stddev,
                            bool trainable) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    std::vector<double> data(n);
    for (double& x : data) x = rng.normal(0.0, stddev);
    return Parameter(std::move(name), Tensor::constant(std::move(shape), std::move(data)), trainable);
}

Parameter Parameter::xavier(std::string name, size_t fan_in, size_t fan_out, Rng& rng,
                            bool trainable) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
    return normal(std::move(name), {fan_in, fan_out}, rng, stddev, trainable);
}

void Parameter::assign(const std::vector<double>& new_values) {
    auto& v = value_.mutable_values();
    if (new_values.size() != v.size()) throw shape_error("Parameter::assign: size mismatch");
    v = new_values;
    quantize_param(v);
}

}  // namespace graft
