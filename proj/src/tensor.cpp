#include "rforge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "rforge/errors.hpp"

namespace rforge {

std::string shape_to_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            out << ',';
        }
        out << shape[i];
    }
    out << ']';
    return out.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        n *= d;
    }
    return n;
}

void detail::TensorImpl::ensure_grad() {
    if (!has_grad) {
        grad.assign(data.size(), 0.0);
        has_grad = true;
    }
}

namespace {

thread_local Tape t_tape;
thread_local bool t_recording = true;

[[noreturn]] void dimension_error(const char* op, const Shape& a, const Shape& b) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_to_string(a) +
                         " and " + shape_to_string(b));
}

[[noreturn]] void rank_error(const char* op, const Shape& a) {
    throw DimensionError(std::string(op) + ": unsupported shape " + shape_to_string(a));
}

std::shared_ptr<detail::TensorImpl> make_impl(Shape shape, std::vector<double> data) {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    return impl;
}

// Builds an op result and records it when any input requires grad.
Tensor record(const char* op, Shape shape, std::vector<double> data,
              std::initializer_list<const Tensor*> inputs, BackwardFn backward) {
    auto out = make_impl(std::move(shape), std::move(data));
    bool needs_grad = false;
    if (t_recording) {
        for (const Tensor* in : inputs) {
            needs_grad = needs_grad || in->requires_grad();
        }
    }
    if (needs_grad) {
        out->requires_grad = true;
        out->leaf = false;
        Tape::Record rec{op, {}, out, std::move(backward)};
        rec.inputs.reserve(inputs.size());
        for (const Tensor* in : inputs) {
            rec.inputs.push_back(in->impl());
        }
        t_tape.push(std::move(rec));
    }
    return Tensor(std::move(out));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        dimension_error(op, a.shape(), b.shape());
    }
}

void require_matrix(const char* op, const Tensor& a) {
    if (a.rank() != 2) {
        rank_error(op, a.shape());
    }
}

template <typename Forward, typename Derivative>
Tensor unary(const char* op, const Tensor& a, Forward f, Derivative df) {
    const auto in = a.data();
    std::vector<double> out(in.size());
    std::transform(in.begin(), in.end(), out.begin(), f);
    Tensor keep = a;
    return record(op, a.shape(), std::move(out), {&a},
                  [keep, df](std::span<const double> g, std::span<double* const> gin) {
                      if (gin[0] == nullptr) {
                          return;
                      }
                      const auto x = keep.data();
                      for (std::size_t i = 0; i < x.size(); ++i) {
                          gin[0][i] += g[i] * df(x[i]);
                      }
                  });
}

} // namespace

Tape& active_tape() { return t_tape; }

bool grad_recording_enabled() { return t_recording; }

NoGradGuard::NoGradGuard() : m_previous(t_recording) { t_recording = false; }

NoGradGuard::~NoGradGuard() { t_recording = m_previous; }

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward: loss must be a scalar, got shape " +
                            (loss.defined() ? shape_to_string(loss.shape()) : std::string("<undefined>")));
    }
    if (m_records.empty()) {
        throw ContractError("backward: tape is empty (run a forward pass before calling backward again)");
    }
    if (!loss.requires_grad()) {
        throw ContractError("backward: loss does not depend on any tensor that requires grad");
    }
    auto& root = *loss.impl();
    root.ensure_grad();
    root.grad[0] = 1.0;

    std::vector<double*> sinks;
    for (auto it = m_records.rbegin(); it != m_records.rend(); ++it) {
        if (!it->output->has_grad) {
            continue;
        }
        sinks.assign(it->inputs.size(), nullptr);
        for (std::size_t i = 0; i < it->inputs.size(); ++i) {
            auto& in = *it->inputs[i];
            if (in.requires_grad) {
                in.ensure_grad();
                sinks[i] = in.grad.data();
            }
        }
        it->backward(it->output->grad, sinks);
    }
    m_records.clear();
}

void backward(const Tensor& loss) { t_tape.backward(loss); }

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    auto impl = make_impl(std::move(shape), std::vector<double>(n, value));
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("Tensor::from: shape " + shape_to_string(shape) + " does not hold " +
                             std::to_string(values.size()) + " values");
    }
    auto impl = make_impl(std::move(shape), std::move(values));
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
    const std::size_t n = values.size();
    return from({n}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const {
    if (!m_impl) {
        throw ContractError("Tensor: use of undefined tensor");
    }
    return m_impl->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw DimensionError("Tensor::dim: axis " + std::to_string(axis) + " out of range for " +
                             shape_to_string(s));
    }
    return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
    shape();
    return m_impl->data;
}

std::span<double> Tensor::mutable_data() {
    shape();
    return m_impl->data;
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ContractError("Tensor::item: tensor of shape " + shape_to_string(shape()) + " is not a scalar");
    }
    return m_impl->data[0];
}

double Tensor::at(std::size_t flat) const { return data()[flat]; }

double Tensor::at(std::size_t row, std::size_t col) const { return data()[row * shape().back() + col]; }

std::vector<double> Tensor::to_vector() const {
    const auto d = data();
    return {d.begin(), d.end()};
}

bool Tensor::requires_grad() const { return m_impl && m_impl->requires_grad; }

void Tensor::set_requires_grad(bool value) {
    shape();
    m_impl->requires_grad = value;
}

bool Tensor::is_leaf() const { return m_impl && m_impl->leaf; }

bool Tensor::has_grad() const { return m_impl && m_impl->has_grad; }

std::span<const double> Tensor::grad() const {
    if (!has_grad()) {
        throw ContractError("Tensor::grad: no gradient has been populated");
    }
    return m_impl->grad;
}

std::span<double> Tensor::mutable_grad() {
    shape();
    m_impl->ensure_grad();
    return m_impl->grad;
}

void Tensor::zero_grad() {
    if (m_impl) {
        m_impl->grad.clear();
        m_impl->has_grad = false;
    }
}

Tensor Tensor::clone(bool requires_grad) const {
    auto impl = make_impl(shape(), m_impl->data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

// ---- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix("matmul", a);
    require_matrix("matmul", b);
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        dimension_error("matmul", a.shape(), b.shape());
    }
    const auto x = a.data();
    const auto y = b.data();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double xv = x[i * k + p];
            const double* yr = &y[p * n];
            double* orow = &out[i * n];
            for (std::size_t j = 0; j < n; ++j) {
                orow[j] += xv * yr[j];
            }
        }
    }
    Tensor ka = a, kb = b;
    return record("matmul", {m, n}, std::move(out), {&a, &b},
                  [ka, kb, m, k, n](std::span<const double> g, std::span<double* const> gin) {
                      const auto x = ka.data();
                      const auto y = kb.data();
                      if (gin[0] != nullptr) {
                          for (std::size_t i = 0; i < m; ++i) {
                              for (std::size_t p = 0; p < k; ++p) {
                                  double acc = 0.0;
                                  for (std::size_t j = 0; j < n; ++j) {
                                      acc += g[i * n + j] * y[p * n + j];
                                  }
                                  gin[0][i * k + p] += acc;
                              }
                          }
                      }
                      if (gin[1] != nullptr) {
                          for (std::size_t i = 0; i < m; ++i) {
                              for (std::size_t p = 0; p < k; ++p) {
                                  const double xv = x[i * k + p];
                                  for (std::size_t j = 0; j < n; ++j) {
                                      gin[1][p * n + j] += xv * g[i * n + j];
                                  }
                              }
                          }
                      }
                  });
}

Tensor matmul_bt(const Tensor& a, const Tensor& b) {
    require_matrix("matmul_bt", a);
    require_matrix("matmul_bt", b);
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k) {
        dimension_error("matmul_bt", a.shape(), b.shape());
    }
    const auto x = a.data();
    const auto y = b.data();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                acc += x[i * k + p] * y[j * k + p];
            }
            out[i * n + j] = acc;
        }
    }
    Tensor ka = a, kb = b;
    return record("matmul_bt", {m, n}, std::move(out), {&a, &b},
                  [ka, kb, m, k, n](std::span<const double> g, std::span<double* const> gin) {
                      const auto x = ka.data();
                      const auto y = kb.data();
                      for (std::size_t i = 0; i < m; ++i) {
                          for (std::size_t j = 0; j < n; ++j) {
                              const double gv = g[i * n + j];
                              if (gv == 0.0) {
                                  continue;
                              }
                              if (gin[0] != nullptr) {
                                  double* ga = gin[0] + i * k;
                                  const double* yr = &y[j * k];
                                  for (std::size_t p = 0; p < k; ++p) {
                                      ga[p] += gv * yr[p];
                                  }
                              }
                              if (gin[1] != nullptr) {
                                  double* gb = gin[1] + j * k;
                                  const double* xr = &x[i * k];
                                  for (std::size_t p = 0; p < k; ++p) {
                                      gb[p] += gv * xr[p];
                                  }
                              }
                          }
                      }
                  });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    const auto x = a.data();
    const auto y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = x[i] + y[i];
    }
    return record("add", a.shape(), std::move(out), {&a, &b},
                  [](std::span<const double> g, std::span<double* const> gin) {
                      for (std::size_t s = 0; s < 2; ++s) {
                          if (gin[s] != nullptr) {
                              for (std::size_t i = 0; i < g.size(); ++i) {
                                  gin[s][i] += g[i];
                              }
                          }
                      }
                  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    const auto x = a.data();
    const auto y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = x[i] - y[i];
    }
    return record("sub", a.shape(), std::move(out), {&a, &b},
                  [](std::span<const double> g, std::span<double* const> gin) {
                      for (std::size_t i = 0; i < g.size(); ++i) {
                          if (gin[0] != nullptr) {
                              gin[0][i] += g[i];
                          }
                          if (gin[1] != nullptr) {
                              gin[1][i] -= g[i];
                          }
                      }
                  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    const auto x = a.data();
    const auto y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = x[i] * y[i];
    }
    Tensor ka = a, kb = b;
    return record("mul", a.shape(), std::move(out), {&a, &b},
                  [ka, kb](std::span<const double> g, std::span<double* const> gin) {
                      const auto x = ka.data();
                      const auto y = kb.data();
                      for (std::size_t i = 0; i < g.size(); ++i) {
                          if (gin[0] != nullptr) {
                              gin[0][i] += g[i] * y[i];
                          }
                          if (gin[1] != nullptr) {
                              gin[1][i] += g[i] * x[i];
                          }
                      }
                  });
}

Tensor scale(const Tensor& a, double factor) {
    return unary("scale", a, [factor](double v) { return v * factor; },
                 [factor](double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
    return unary("add_scalar", a, [value](double v) { return v + value; }, [](double) { return 1.0; });
}

Tensor add_rowwise(const Tensor& a, const Tensor& bias) {
    require_matrix("add_rowwise", a);
    const std::size_t m = a.dim(0), n = a.dim(1);
    if (bias.rank() != 1 || bias.dim(0) != n) {
        dimension_error("add_rowwise", a.shape(), bias.shape());
    }
    const auto x = a.data();
    const auto b = bias.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = x[i * n + j] + b[j];
        }
    }
    return record("add_rowwise", a.shape(), std::move(out), {&a, &bias},
                  [m, n](std::span<const double> g, std::span<double* const> gin) {
                      for (std::size_t i = 0; i < m; ++i) {
                          for (std::size_t j = 0; j < n; ++j) {
                              if (gin[0] != nullptr) {
                                  gin[0][i * n + j] += g[i * n + j];
                              }
                              if (gin[1] != nullptr) {
                                  gin[1][j] += g[i * n + j];
                              }
                          }
                      }
                  });
}

Tensor scale_rows(const Tensor& a, const Tensor& factors) {
    require_matrix("scale_rows", a);
    const std::size_t m = a.dim(0), n = a.dim(1);
    if (factors.rank() != 1 || factors.dim(0) != m) {
        dimension_error("scale_rows", a.shape(), factors.shape());
    }
    const auto x = a.data();
    const auto s = factors.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = x[i * n + j] * s[i];
        }
    }
    Tensor ka = a, ks = factors;
    return record("scale_rows", a.shape(), std::move(out), {&a, &factors},
                  [ka, ks, m, n](std::span<const double> g, std::span<double* const> gin) {
                      const auto x = ka.data();
                      const auto s = ks.data();
                      for (std::size_t i = 0; i < m; ++i) {
                          double acc = 0.0;
                          for (std::size_t j = 0; j < n; ++j) {
                              if (gin[0] != nullptr) {
                                  gin[0][i * n + j] += g[i * n + j] * s[i];
                              }
                              acc += g[i * n + j] * x[i * n + j];
                          }
                          if (gin[1] != nullptr) {
                              gin[1][i] += acc;
                          }
                      }
                  });
}

Tensor exp(const Tensor& a) {
    return unary("exp", a, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Tensor log(const Tensor& a) {
    return unary("log", a, [](double v) { return std::log(std::max(v, kLogEpsilon)); },
                 [](double v) { return v > kLogEpsilon ? 1.0 / v : 0.0; });
}

Tensor tanh(const Tensor& a) {
    const auto in = a.data();
    std::vector<double> out(in.size());
    std::transform(in.begin(), in.end(), out.begin(), [](double v) { return std::tanh(v); });
    auto y = std::make_shared<std::vector<double>>(out);
    return record("tanh", a.shape(), std::move(out), {&a},
                  [y](std::span<const double> g, std::span<double* const> gin) {
                      if (gin[0] == nullptr) {
                          return;
                      }
                      for (std::size_t i = 0; i < g.size(); ++i) {
                          gin[0][i] += g[i] * (1.0 - (*y)[i] * (*y)[i]);
                      }
                  });
}

Tensor abs(const Tensor& a) {
    return unary("abs", a, [](double v) { return std::fabs(v); },
                 [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor softmax(const Tensor& a) {
    if (a.rank() != 1 && a.rank() != 2) {
        rank_error("softmax", a.shape());
    }
    const std::size_t cols = a.shape().back();
    const std::size_t rows = a.numel() / cols;
    const auto x = a.data();
    std::vector<double> out(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = &x[r * cols];
        double* yr = &out[r * cols];
        const double mx = *std::max_element(xr, xr + cols);
        double total = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            yr[c] = std::exp(xr[c] - mx);
            total += yr[c];
        }
        for (std::size_t c = 0; c < cols; ++c) {
            yr[c] /= total;
        }
    }
    auto y = std::make_shared<std::vector<double>>(out);
    return record("softmax", a.shape(), std::move(out), {&a},
                  [y, rows, cols](std::span<const double> g, std::span<double* const> gin) {
                      if (gin[0] == nullptr) {
                          return;
                      }
                      for (std::size_t r = 0; r < rows; ++r) {
                          double dot = 0.0;
                          for (std::size_t c = 0; c < cols; ++c) {
                              dot += g[r * cols + c] * (*y)[r * cols + c];
                          }
                          for (std::size_t c = 0; c < cols; ++c) {
                              gin[0][r * cols + c] += (*y)[r * cols + c] * (g[r * cols + c] - dot);
                          }
                      }
                  });
}

Tensor sum(const Tensor& a) {
    const auto x = a.data();
    double total = 0.0;
    for (double v : x) {
        total += v;
    }
    const std::size_t n = x.size();
    return record("sum", {}, {total}, {&a}, [n](std::span<const double> g, std::span<double* const> gin) {
        if (gin[0] == nullptr) {
            return;
        }
        for (std::size_t i = 0; i < n; ++i) {
            gin[0][i] += g[0];
        }
    });
}

Tensor mean(const Tensor& a) {
    const auto x = a.data();
    double total = 0.0;
    for (double v : x) {
        total += v;
    }
    const std::size_t n = x.size();
    return record("mean", {}, {total / static_cast<double>(n)}, {&a},
                  [n](std::span<const double> g, std::span<double* const> gin) {
                      if (gin[0] == nullptr) {
                          return;
                      }
                      const double share = g[0] / static_cast<double>(n);
                      for (std::size_t i = 0; i < n; ++i) {
                          gin[0][i] += share;
                      }
                  });
}

Tensor squared_distance(const Tensor& a, const Tensor& b) {
    require_same_shape("squared_distance", a, b);
    const auto x = a.data();
    const auto y = b.data();
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        total += d * d;
    }
    Tensor ka = a, kb = b;
    return record("squared_distance", {}, {total}, {&a, &b},
                  [ka, kb](std::span<const double> g, std::span<double* const> gin) {
                      const auto x = ka.data();
                      const auto y = kb.data();
                      for (std::size_t i = 0; i < x.size(); ++i) {
                          const double d = 2.0 * (x[i] - y[i]) * g[0];
                          if (gin[0] != nullptr) {
                              gin[0][i] += d;
                          }
                          if (gin[1] != nullptr) {
                              gin[1][i] -= d;
                          }
                      }
                  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::uint32_t> rows) {
    require_matrix("gather_rows", table);
    const std::size_t v = table.dim(0), d = table.dim(1);
    const auto x = table.data();
    std::vector<double> out(rows.size() * d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= v) {
            throw VocabularyError("gather_rows: id " + std::to_string(rows[i]) + " out of range for table of " +
                                  std::to_string(v) + " rows");
        }
        std::copy_n(&x[rows[i] * d], d, &out[i * d]);
    }
    std::vector<std::uint32_t> ids(rows.begin(), rows.end());
    return record("gather_rows", {rows.size(), d}, std::move(out), {&table},
                  [ids = std::move(ids), d](std::span<const double> g, std::span<double* const> gin) {
                      if (gin[0] == nullptr) {
                          return;
                      }
                      for (std::size_t i = 0; i < ids.size(); ++i) {
                          double* dst = gin[0] + ids[i] * d;
                          for (std::size_t j = 0; j < d; ++j) {
                              dst[j] += g[i * d + j];
                          }
                      }
                  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    require_matrix("concat_cols", a);
    require_matrix("concat_cols", b);
    const std::size_t m = a.dim(0), p = a.dim(1), q = b.dim(1);
    if (b.dim(0) != m) {
        dimension_error("concat_cols", a.shape(), b.shape());
    }
    const auto x = a.data();
    const auto y = b.data();
    std::vector<double> out(m * (p + q));
    for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(&x[i * p], p, &out[i * (p + q)]);
        std::copy_n(&y[i * q], q, &out[i * (p + q) + p]);
    }
    return record("concat_cols", {m, p + q}, std::move(out), {&a, &b},
                  [m, p, q](std::span<const double> g, std::span<double* const> gin) {
                      for (std::size_t i = 0; i < m; ++i) {
                          const double* gr = &g[i * (p + q)];
                          if (gin[0] != nullptr) {
                              for (std::size_t j = 0; j < p; ++j) {
                                  gin[0][i * p + j] += gr[j];
                              }
                          }
                          if (gin[1] != nullptr) {
                              for (std::size_t j = 0; j < q; ++j) {
                                  gin[1][i * q + j] += gr[p + j];
                              }
                          }
                      }
                  });
}

Tensor slice(const Tensor& a, std::size_t begin, std::size_t end) {
    if (a.rank() != 1 && a.rank() != 2) {
        rank_error("slice", a.shape());
    }
    const std::size_t rows = a.dim(0);
    if (begin > end || end > rows) {
        throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                             ") out of bounds for " + shape_to_string(a.shape()));
    }
    const std::size_t width = a.rank() == 2 ? a.dim(1) : 1;
    const auto x = a.data();
    std::vector<double> out(x.begin() + static_cast<std::ptrdiff_t>(begin * width),
                            x.begin() + static_cast<std::ptrdiff_t>(end * width));
    Shape shape = a.shape();
    shape[0] = end - begin;
    const std::size_t offset = begin * width;
    return record("slice", std::move(shape), std::move(out), {&a},
                  [offset](std::span<const double> g, std::span<double* const> gin) {
                      if (gin[0] == nullptr) {
                          return;
                      }
                      for (std::size_t i = 0; i < g.size(); ++i) {
                          gin[0][offset + i] += g[i];
                      }
                  });
}

Tensor column(const Tensor& a, std::size_t col) {
    require_matrix("column", a);
    const std::size_t m = a.dim(0), n = a.dim(1);
    if (col >= n) {
        throw DimensionError("column: index " + std::to_string(col) + " out of range for " +
                             shape_to_string(a.shape()));
    }
    const auto x = a.data();
    std::vector<double> out(m);
    for (std::size_t i = 0; i < m; ++i) {
        out[i] = x[i * n + col];
    }
    return record("column", {m}, std::move(out), {&a},
                  [m, n, col](std::span<const double> g, std::span<double* const> gin) {
                      if (gin[0] == nullptr) {
                          return;
                      }
                      for (std::size_t i = 0; i < m; ++i) {
                          gin[0][i * n + col] += g[i];
                      }
                  });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        dimension_error("reshape", a.shape(), shape);
    }
    return record("reshape", std::move(shape), a.to_vector(), {&a},
                  [](std::span<const double> g, std::span<double* const> gin) {
                      if (gin[0] == nullptr) {
                          return;
                      }
                      for (std::size_t i = 0; i < g.size(); ++i) {
                          gin[0][i] += g[i];
                      }
                  });
}

Tensor pick(const Tensor& a, std::size_t flat_index) {
    if (flat_index >= a.numel()) {
        throw DimensionError("pick: index " + std::to_string(flat_index) + " out of range for " +
                             shape_to_string(a.shape()));
    }
    return record("pick", {}, {a.data()[flat_index]}, {&a},
                  [flat_index](std::span<const double> g, std::span<double* const> gin) {
                      if (gin[0] != nullptr) {
                          gin[0][flat_index] += g[0];
                      }
                  });
}

Tensor straight_through(const Tensor& soft) {
    if (soft.rank() != 1 && soft.rank() != 2) {
        rank_error("straight_through", soft.shape());
    }
    const std::size_t cols = soft.shape().back();
    const std::size_t rows = soft.numel() / cols;
    const auto x = soft.data();
    std::vector<double> out(x.size(), 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = &x[r * cols];
        const auto best = static_cast<std::size_t>(std::max_element(xr, xr + cols) - xr);
        out[r * cols + best] = 1.0;
    }
    return record("straight_through", soft.shape(), std::move(out), {&soft},
                  [](std::span<const double> g, std::span<double* const> gin) {
                      if (gin[0] == nullptr) {
                          return;
                      }
                      for (std::size_t i = 0; i < g.size(); ++i) {
                          gin[0][i] += g[i];
                      }
                  });
}

Tensor gumbel_softmax(const Tensor& log_probs, const Tensor& noise, double tau) {
    if (!(tau > 0.0)) {
        throw DomainError("gumbel_softmax: temperature must be positive, got " + std::to_string(tau));
    }
    require_same_shape("gumbel_softmax", log_probs, noise);
    return softmax(scale(add(log_probs, noise), 1.0 / tau));
}

} // namespace rforge
