#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rforge {

using Shape = std::vector<std::size_t>;

/// Lower bound applied inside log so cross-entropy and KL stay finite.
inline constexpr double kLogEpsilon = 1e-8;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool has_grad = false;
    bool requires_grad = false;
    bool leaf = true;

    void ensure_grad();
};

} // namespace detail

/// Dense row-major float64 tensor with reverse-mode autodiff.
///
/// A Tensor is a cheap handle; copies share storage. Parameters are leaves
/// created with requires_grad; every op applied to a grad-requiring input is
/// recorded on the calling thread's Tape.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor vector(std::vector<double> values, bool requires_grad = false);

    bool defined() const noexcept { return static_cast<bool>(m_impl); }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> data() const;
    /// Direct write access, for parameter initialisation and optimizer updates.
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t flat) const;
    double at(std::size_t row, std::size_t col) const;
    std::vector<double> to_vector() const;

    bool requires_grad() const;
    void set_requires_grad(bool value);
    bool is_leaf() const;

    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    /// Deep copy as a fresh leaf (no grad, same requires_grad flag unless overridden).
    Tensor clone(bool requires_grad) const;
    /// Deep copy that never participates in autodiff.
    Tensor detach() const { return clone(false); }

    bool same_storage(const Tensor& other) const noexcept { return m_impl == other.m_impl; }
    const std::shared_ptr<detail::TensorImpl>& impl() const noexcept { return m_impl; }

    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : m_impl(std::move(impl)) {}

private:
    std::shared_ptr<detail::TensorImpl> m_impl;
};

/// Backward rule for a recorded op: receives the output gradient and one
/// writable gradient buffer per input (nullptr when that input needs none).
using BackwardFn = std::function<void(std::span<const double>, std::span<double* const>)>;

/// Ordered log of executed ops for the current thread.
class Tape {
public:
    struct Record {
        const char* op;
        std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
        std::shared_ptr<detail::TensorImpl> output;
        BackwardFn backward;
    };

    void push(Record record) { m_records.push_back(std::move(record)); }
    std::size_t size() const noexcept { return m_records.size(); }
    bool empty() const noexcept { return m_records.empty(); }
    void clear() { m_records.clear(); }

    /// Runs every record once, newest first, then clears the tape. A second
    /// call without a fresh forward pass is rejected because the tape is empty.
    void backward(const Tensor& loss);

private:
    std::vector<Record> m_records;
};

Tape& active_tape();
bool grad_recording_enabled();

/// Disables tape recording on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool m_previous;
};

/// Backpropagates from a scalar loss through the active tape.
void backward(const Tensor& loss);

// Differentiable ops. Rank-1 and rank-2 tensors only; no implicit broadcasting.

Tensor matmul(const Tensor& a, const Tensor& b);
/// a * transpose(b) without materialising the transpose.
Tensor matmul_bt(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
/// Adds bias[n] to every row of a[m,n].
Tensor add_rowwise(const Tensor& a, const Tensor& bias);
/// Multiplies row i of a[m,n] by factors[i].
Tensor scale_rows(const Tensor& a, const Tensor& factors);
Tensor exp(const Tensor& a);
/// Natural log with inputs clamped below at kLogEpsilon.
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor abs(const Tensor& a);
/// Softmax over the last axis.
Tensor softmax(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor squared_distance(const Tensor& a, const Tensor& b);
Tensor gather_rows(const Tensor& table, std::span<const std::uint32_t> rows);
Tensor concat_cols(const Tensor& a, const Tensor& b);
/// Elements [begin, end) of a rank-1 tensor, or rows [begin, end) of a rank-2 tensor.
Tensor slice(const Tensor& a, std::size_t begin, std::size_t end);
Tensor column(const Tensor& a, std::size_t col);
Tensor reshape(const Tensor& a, Shape shape);
Tensor pick(const Tensor& a, std::size_t flat_index);

/// Forward: one-hot argmax of each row (ties to the lowest index).
/// Backward: the incoming gradient passes through unchanged.
Tensor straight_through(const Tensor& soft);

/// Per-row softmax((log_probs + noise) / tau).
Tensor gumbel_softmax(const Tensor& log_probs, const Tensor& noise, double tau);

} // namespace rforge
