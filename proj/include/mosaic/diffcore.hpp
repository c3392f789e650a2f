#pragma once

// Dense float64 tensors with a dynamic reverse-mode tape and an Adam update.
//
// Tensors are cheap shared handles. A tensor created as a constant is never
// written after construction; parameters are mutated only through
// mutable_values() by an optimizer or checkpoint loader. Every operation
// takes the Tape it records onto; a tape built with Tape::inference() skips
// recording so evaluation passes cost nothing extra.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mosaic/error.hpp"

namespace mosaic {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty unless requires_grad
  bool requires_grad = false;
};

inline void check_finite(std::span<const double> values, std::string_view what) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      fail(ErrorKind::kDegenerate,
           "non-finite value produced by " + std::string(what));
    }
  }
}

}  // namespace detail

class Tape;

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values) {
    return make(std::move(shape), std::move(values), false);
  }
  static Tensor parameter(Shape shape, std::vector<double> values) {
    return make(std::move(shape), std::move(values), true);
  }
  static Tensor zeros(Shape shape) {
    const std::size_t n = shape_numel(shape);
    return constant(std::move(shape), std::vector<double>(n, 0.0));
  }
  static Tensor scalar(double value) { return constant({}, {value}); }
  static Tensor row(std::vector<double> values) {
    const std::size_t n = values.size();
    return constant({1, n}, std::move(values));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return constant({rows, cols}, std::move(values));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return node().shape.size(); }
  std::size_t numel() const { return node().value.size(); }
  std::size_t rows() const {
    require(rank() == 2, ErrorKind::kDimension,
            "rows(): expected a matrix, got " + shape_string(shape()));
    return node().shape[0];
  }
  std::size_t cols() const {
    require(rank() == 2, ErrorKind::kDimension,
            "cols(): expected a matrix, got " + shape_string(shape()));
    return node().shape[1];
  }
  bool requires_grad() const { return node().requires_grad; }

  std::span<const double> values() const { return node().value; }
  std::span<const double> grad() const {
    require(requires_grad(), ErrorKind::kContract, "grad() on a tensor without gradient");
    return node().grad;
  }

  // Parameters only: constants are immutable once created.
  std::span<double> mutable_values() {
    require(requires_grad(), ErrorKind::kContract, "attempt to mutate a constant tensor");
    return node().value;
  }
  // Gradient buffers belong to the tape's bookkeeping, not to the value, so
  // they are writable through const handles.
  std::span<double> mutable_grad() const {
    require(requires_grad(), ErrorKind::kContract, "grad() on a tensor without gradient");
    return node().grad;
  }
  void zero_grad() const {
    if (requires_grad()) std::fill(node().grad.begin(), node().grad.end(), 0.0);
  }

  double item() const {
    require(numel() == 1, ErrorKind::kContract,
            "item() on non-scalar tensor " + shape_string(shape()));
    return node().value[0];
  }
  double operator[](std::size_t i) const { return node().value[i]; }
  double at(std::size_t i, std::size_t j) const { return node().value[i * cols() + j]; }

  // Constant copy of the current values.
  Tensor detach() const { return constant(shape(), node().value); }

  bool is(const Tensor& other) const { return node_ == other.node_; }

 private:
  friend class Tape;

  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

  static Tensor make(Shape shape, std::vector<double> values, bool requires_grad) {
    for (std::size_t d : shape) {
      require(d > 0, ErrorKind::kDimension,
              "tensor dimensions must be positive, got " + shape_string(shape));
    }
    require(values.size() == shape_numel(shape), ErrorKind::kDimension,
            "tensor data length " + std::to_string(values.size()) +
                " does not match shape " + shape_string(shape));
    detail::check_finite(values, "tensor construction");
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    if (requires_grad) node->grad.assign(node->value.size(), 0.0);
    return Tensor(std::move(node));
  }

  detail::TensorNode& node() const {
    require(node_ != nullptr, ErrorKind::kContract, "use of an undefined tensor");
    return *node_;
  }

  std::shared_ptr<detail::TensorNode> node_;
};

// Ordered record of operations. Records are appended in execution order, so
// the vector is topologically sorted by construction; backward() walks it in
// reverse. A tape is single-use: after backward() it must be discarded.
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const double> out_grad)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  static Tape inference() { return Tape(false); }

  bool recording() const { return recording_; }
  std::size_t size() const { return records_.size(); }

  // `make_backward` receives nothing and returns the local gradient rule; it
  // is only invoked when the output actually needs a gradient.
  template <typename MakeBackward>
  Tensor emit(std::string_view op, std::initializer_list<Tensor> inputs, Shape shape,
              std::vector<double> value, MakeBackward&& make_backward) {
    return emit_impl(op, std::any_of(inputs.begin(), inputs.end(),
                                     [](const Tensor& t) { return t.requires_grad(); }),
                     std::move(shape), std::move(value),
                     std::forward<MakeBackward>(make_backward));
  }

  template <typename MakeBackward>
  Tensor emit(std::string_view op, const std::vector<Tensor>& inputs, Shape shape,
              std::vector<double> value, MakeBackward&& make_backward) {
    return emit_impl(op, std::any_of(inputs.begin(), inputs.end(),
                                     [](const Tensor& t) { return t.requires_grad(); }),
                     std::move(shape), std::move(value),
                     std::forward<MakeBackward>(make_backward));
  }

  void backward(const Tensor& loss) {
    require(loss.numel() == 1, ErrorKind::kContract,
            "backward() requires a scalar loss, got " + shape_string(loss.shape()));
    require(!consumed_, ErrorKind::kContract, "backward() called twice on the same tape");
    require(recording_ && loss.requires_grad(), ErrorKind::kContract,
            "loss is not reachable from any parameter on this tape");
    auto it = std::find_if(records_.rbegin(), records_.rend(),
                           [&](const Record& r) { return r.output == loss.node_; });
    require(it != records_.rend(), ErrorKind::kContract, "loss was not recorded on this tape");
    consumed_ = true;
    loss.node_->grad[0] = 1.0;
    for (; it != records_.rend(); ++it) {
      it->backward(it->output->grad);
    }
  }

 private:
  struct Record {
    std::string_view op;
    std::shared_ptr<detail::TensorNode> output;
    BackwardFn backward;
  };

  template <typename MakeBackward>
  Tensor emit_impl(std::string_view op, bool any_grad, Shape shape, std::vector<double> value,
                   MakeBackward&& make_backward) {
    detail::check_finite(value, op);
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    if (recording_ && any_grad) {
      node->requires_grad = true;
      node->grad.assign(node->value.size(), 0.0);
      records_.push_back({op, node, BackwardFn(make_backward())});
    }
    return Tensor(std::move(node));
  }

  std::vector<Record> records_;
  bool recording_;
  bool consumed_ = false;
};

namespace detail {

inline void require_matrix(const Tensor& t, std::string_view op) {
  require(t.rank() == 2, ErrorKind::kDimension,
          std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  require(a.shape() == b.shape(), ErrorKind::kDimension,
          std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
              shape_string(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  require(b.rows() == k, ErrorKind::kDimension,
          "matmul: shape mismatch " + shape_string(a.shape()) + " vs " +
              shape_string(b.shape()));
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  }
  return tape.emit("matmul", {a, b}, {m, n}, std::move(out), [=]() mutable {
    return [=](std::span<const double> gy) mutable {
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += gy[i * n + j] * bv[p * n + j];
            ga[i * k + p] += s;
          }
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * gy[i * n + j];
          }
      }
    };
  });
}

inline Tensor transpose(Tape& tape, const Tensor& a) {
  detail::require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  const auto av = a.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return tape.emit("transpose", {a}, {n, m}, std::move(out), [=]() mutable {
    return [=](std::span<const double> gy) mutable {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += gy[j * m + i];
    };
  });
}

// ---------------------------------------------------------------------------
// Elementwise

namespace detail {

template <typename Forward, typename Local>
Tensor binary(Tape& tape, std::string_view op, const Tensor& a, const Tensor& b,
              Forward forward, Local local) {
  require_same_shape(a, b, op);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = forward(av[i], bv[i]);
  return tape.emit(op, {a, b}, a.shape(), std::move(out), [=]() mutable {
    return [=](std::span<const double> gy) mutable {
      const bool need_a = a.requires_grad(), need_b = b.requires_grad();
      std::span<double> ga, gb;
      if (need_a) ga = a.mutable_grad();
      if (need_b) gb = b.mutable_grad();
      for (std::size_t i = 0; i < gy.size(); ++i) {
        const auto [da, db] = local(av[i], bv[i]);
        if (need_a) ga[i] += gy[i] * da;
        if (need_b) gb[i] += gy[i] * db;
      }
    };
  });
}

}  // namespace detail

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  return detail::binary(
      tape, "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return std::pair{1.0, 1.0}; });
}

inline Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  return detail::binary(
      tape, "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return std::pair{1.0, -1.0}; });
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  return detail::binary(
      tape, "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y) { return std::pair{y, x}; });
}

inline Tensor scale(Tape& tape, const Tensor& a, double factor) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = factor * av[i];
  return tape.emit("scale", {a}, a.shape(), std::move(out), [=]() mutable {
    return [=](std::span<const double> gy) mutable {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += factor * gy[i];
    };
  });
}

// Scalar tensor times tensor; the only tensor-tensor broadcast besides
// add_row_bias.
inline Tensor scale_by(Tape& tape, const Tensor& s, const Tensor& a) {
  require(s.numel() == 1, ErrorKind::kDimension,
          "scale_by: expected a scalar factor, got " + shape_string(s.shape()));
  const double sv = s.item();
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = sv * av[i];
  return tape.emit("scale_by", {s, a}, a.shape(), std::move(out), [=]() mutable {
    return [=](std::span<const double> gy) mutable {
      if (s.requires_grad()) {
        double acc = 0.0;
        for (std::size_t i = 0; i < gy.size(); ++i) acc += gy[i] * av[i];
        s.mutable_grad()[0] += acc;
      }
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += sv * gy[i];
      }
    };
  });
}

inline Tensor add_row_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  detail::require_matrix(x, "add_row_bias");
  const std::size_t m = x.rows(), n = x.cols();
  require(bias.numel() == n && (bias.rank() == 1 || (bias.rank() == 2 && bias.rows() == 1)),
          ErrorKind::kDimension,
          "add_row_bias: bias " + shape_string(bias.shape()) + " does not fit " +
              shape_string(x.shape()));
  const auto xv = x.values();
  const auto bv = bias.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + bv[j];
  return tape.emit("add_row_bias", {x, bias}, {m, n}, std::move(out), [=]() mutable {
    return [=](std::span<const double> gy) mutable {
      if (x.requires_grad()) {
        auto gx = x.mutable_grad();
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
      }
      if (bias.requires_grad()) {
        auto gb = bias.mutable_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gb[j] += gy[i * n + j];
      }
    };
  });
}

inline Tensor relu(Tape& tape, const Tensor& a) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  return tape.emit("relu", {a}, a.shape(), std::move(out), [=]() mutable {
    return [=](std::span<const double> gy) mutable {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < gy.size(); ++i)
        if (av[i] > 0.0) ga[i] += gy[i];
    };
  });
}

inline Tensor exp(Tape& tape, const Tensor& a) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::exp(av[i]);
  std::vector<double> y = out;
  return tape.emit("exp", {a}, a.shape(), std::move(out), [=]() mutable {
    return [=](std::span<const double> gy) mutable {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * y[i];
    };
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(Tape& tape, const Tensor& a) {
  const auto av = a.values();
  double s = 0.0;
  for (double v : av) s += v;
  return tape.emit("sum", {a}, {}, {s}, [=]() mutable {
    return [=](std::span<const double> gy) mutable {
      auto ga = a.mutable_grad();
      for (double& g : ga) g += gy[0];
    };
  });
}

inline Tensor mean(Tape& tape, const Tensor& a) {
  const auto av = a.values();
  const double n = static_cast<double>(av.size());
  double s = 0.0;
  for (double v : av) s += v;
  return tape.emit("mean", {a}, {}, {s / n}, [=]() mutable {
    return [=](std::span<const double> gy) mutable {
      auto ga = a.mutable_grad();
      for (double& g : ga) g += gy[0] / n;
    };
  });
}

// Column means of an m x n matrix -> 1 x n.
inline Tensor mean_rows(Tape& tape, const Tensor& a) {
  detail::require_matrix(a, "mean_rows");
  const std::size_t m = a.rows(), n = a.cols();
  const auto av = a.values();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += av[i * n + j];
  for (double& v : out) v /= static_cast<double>(m);
  return tape.emit("mean_rows", {a}, {1, n}, std::move(out), [=]() mutable {
    return [=](std::span<const double> gy) mutable {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += gy[j] / static_cast<double>(m);
    };
  });
}

// Divides each row by its Euclidean norm. A zero row is a degenerate input,
// never silently patched.
inline Tensor l2_normalize_rows(Tape& tape, const Tensor& a) {
  detail::require_matrix(a, "l2_normalize");
  const std::size_t m = a.rows(), n = a.cols();
  const auto av = a.values();
  std::vector<double> norms(m);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += av[i * n + j] * av[i * n + j];
    require(ss > 0.0, ErrorKind::kDegenerate,
            "l2_normalize: row " + std::to_string(i) + " has zero norm");
    norms[i] = std::sqrt(ss);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] / norms[i];
  }
  std::vector<double> y = out;
  return tape.emit("l2_normalize", {a}, {m, n}, std::move(out), [=]() mutable {
    return [=](std::span<const double> gy) mutable {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += y[i * n + j] * gy[i * n + j];
        for (std::size_t j = 0; j < n; ++j)
          ga[i * n + j] += (gy[i * n + j] - y[i * n + j] * dot) / norms[i];
      }
    };
  });
}

// ---------------------------------------------------------------------------
// Structural

inline Tensor concat(Tape& tape, const std::vector<Tensor>& parts, std::size_t axis) {
  require(!parts.empty(), ErrorKind::kContract, "concat: no inputs");
  require(axis < 2, ErrorKind::kDimension, "concat: axis must be 0 or 1");
  for (const auto& p : parts) detail::require_matrix(p, "concat");
  const std::size_t other = parts.front().shape()[1 - axis];
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p.shape()[1 - axis] == other, ErrorKind::kDimension,
            "concat: incompatible shapes " + shape_string(parts.front().shape()) + " and " +
                shape_string(p.shape()));
    total += p.shape()[axis];
  }
  const std::size_t m = axis == 0 ? total : other;
  const std::size_t n = axis == 0 ? other : total;
  std::vector<double> out(m * n);
  // Offsets of each part along the concatenation axis.
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t pm = p.rows(), pn = p.cols();
    const auto pv = p.values();
    for (std::size_t i = 0; i < pm; ++i)
      for (std::size_t j = 0; j < pn; ++j) {
        const std::size_t oi = axis == 0 ? offset + i : i;
        const std::size_t oj = axis == 0 ? j : offset + j;
        out[oi * n + oj] = pv[i * pn + j];
      }
    offset += p.shape()[axis];
  }
  return tape.emit("concat", parts, {m, n}, std::move(out), [=]() mutable {
    return [=](std::span<const double> gy) mutable {
      for (std::size_t k = 0; k < parts.size(); ++k) {
        Tensor p = parts[k];
        if (!p.requires_grad()) continue;
        auto gp = p.mutable_grad();
        const std::size_t pm = p.rows(), pn = p.cols();
        for (std::size_t i = 0; i < pm; ++i)
          for (std::size_t j = 0; j < pn; ++j) {
            const std::size_t oi = axis == 0 ? offsets[k] + i : i;
            const std::size_t oj = axis == 0 ? j : offsets[k] + j;
            gp[i * pn + j] += gy[oi * n + oj];
          }
      }
    };
  });
}

// Rows [begin, end) when axis == 0, columns [begin, end) when axis == 1.
inline Tensor slice(Tape& tape, const Tensor& a, std::size_t axis, std::size_t begin,
                    std::size_t end) {
  detail::require_matrix(a, "slice");
  require(axis < 2, ErrorKind::kDimension, "slice: axis must be 0 or 1");
  require(begin < end && end <= a.shape()[axis], ErrorKind::kIndex,
          "slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
              ") out of bounds for " + shape_string(a.shape()));
  const std::size_t m = a.rows(), n = a.cols();
  const std::size_t om = axis == 0 ? end - begin : m;
  const std::size_t on = axis == 0 ? n : end - begin;
  const std::size_t r0 = axis == 0 ? begin : 0;
  const std::size_t c0 = axis == 0 ? 0 : begin;
  const auto av = a.values();
  std::vector<double> out(om * on);
  for (std::size_t i = 0; i < om; ++i)
    for (std::size_t j = 0; j < on; ++j) out[i * on + j] = av[(r0 + i) * n + c0 + j];
  return tape.emit("slice", {a}, {om, on}, std::move(out), [=]() mutable {
    return [=](std::span<const double> gy) mutable {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < om; ++i)
        for (std::size_t j = 0; j < on; ++j) ga[(r0 + i) * n + c0 + j] += gy[i * on + j];
    };
  });
}

inline Tensor reshape(Tape& tape, const Tensor& a, Shape shape) {
  require(shape_numel(shape) == a.numel(), ErrorKind::kDimension,
          "reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  std::vector<double> out(a.values().begin(), a.values().end());
  return tape.emit("reshape", {a}, std::move(shape), std::move(out), [=]() mutable {
    return [=](std::span<const double> gy) mutable {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    };
  });
}

// ---------------------------------------------------------------------------
// Softmax and cross-entropy

// Softmax along `axis` of a vector (axis 0) or matrix (axis 0 or 1), with
// max subtraction.
inline Tensor softmax(Tape& tape, const Tensor& x, std::size_t axis) {
  require(x.rank() == 1 || x.rank() == 2, ErrorKind::kDimension,
          "softmax: expected a vector or matrix, got " + shape_string(x.shape()));
  require(axis < x.rank(), ErrorKind::kDimension,
          "softmax: axis " + std::to_string(axis) + " invalid for " + shape_string(x.shape()));
  // View as (outer x len) with stride between consecutive axis elements.
  std::size_t outer, len, stride, outer_stride;
  if (x.rank() == 1) {
    outer = 1, len = x.numel(), stride = 1, outer_stride = 0;
  } else if (axis == 1) {
    outer = x.rows(), len = x.cols(), stride = 1, outer_stride = x.cols();
  } else {
    outer = x.cols(), len = x.rows(), stride = x.cols(), outer_stride = 1;
  }
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    const std::size_t base = o * outer_stride;
    double mx = xv[base];
    for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, xv[base + i * stride]);
    double z = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const double e = std::exp(xv[base + i * stride] - mx);
      out[base + i * stride] = e;
      z += e;
    }
    for (std::size_t i = 0; i < len; ++i) out[base + i * stride] /= z;
  }
  std::vector<double> y = out;
  return tape.emit("softmax", {x}, x.shape(), std::move(out), [=]() mutable {
    return [=](std::span<const double> gy) mutable {
      auto gx = x.mutable_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        const std::size_t base = o * outer_stride;
        double dot = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
          const std::size_t k = base + i * stride;
          dot += y[k] * gy[k];
        }
        for (std::size_t i = 0; i < len; ++i) {
          const std::size_t k = base + i * stride;
          gx[k] += y[k] * (gy[k] - dot);
        }
      }
    };
  });
}

// Mean over rows of -log softmax(logits)[row, label].
inline Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const std::size_t> labels) {
  detail::require_matrix(logits, "cross_entropy");
  const std::size_t n = logits.rows(), c = logits.cols();
  require(labels.size() == n, ErrorKind::kDimension,
          "cross_entropy: " + std::to_string(labels.size()) + " labels for " +
              std::to_string(n) + " rows");
  for (std::size_t i = 0; i < n; ++i) {
    require(labels[i] < c, ErrorKind::kIndex,
            "cross_entropy: label " + std::to_string(labels[i]) + " out of range [0, " +
                std::to_string(c) + ")");
  }
  const auto xv = logits.values();
  std::vector<double> probs(n * c);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = xv[i * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, xv[i * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(xv[i * c + j] - mx);
      z += probs[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    total += (mx + std::log(z)) - xv[i * c + labels[i]];
  }
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return tape.emit("cross_entropy", {logits}, {}, {total / static_cast<double>(n)},
                   [=]() mutable {
                     return [=](std::span<const double> gy) mutable {
                       auto gx = logits.mutable_grad();
                       const double g = gy[0] / static_cast<double>(n);
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < c; ++j) {
                           const double target = j == lab[i] ? 1.0 : 0.0;
                           gx[i * c + j] += g * (probs[i * c + j] - target);
                         }
                     };
                   });
}

// ---------------------------------------------------------------------------
// Convolution stack primitives (channels x height x width)

inline Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias,
                     std::size_t pad_h, std::size_t pad_w) {
  require(x.rank() == 3, ErrorKind::kDimension,
          "conv2d: expected CxHxW input, got " + shape_string(x.shape()));
  require(weight.rank() == 4 && weight.shape()[1] == x.shape()[0], ErrorKind::kDimension,
          "conv2d: weight " + shape_string(weight.shape()) + " does not match input " +
              shape_string(x.shape()));
  const std::size_t cin = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t cout = weight.shape()[0], kh = weight.shape()[2], kw = weight.shape()[3];
  require(bias.numel() == cout, ErrorKind::kDimension,
          "conv2d: bias " + shape_string(bias.shape()) + " for " + std::to_string(cout) +
              " output channels");
  require(h + 2 * pad_h >= kh && w + 2 * pad_w >= kw, ErrorKind::kDimension,
          "conv2d: kernel larger than padded input " + shape_string(x.shape()));
  const std::size_t oh = h + 2 * pad_h - kh + 1, ow = w + 2 * pad_w - kw + 1;
  const auto xv = x.values();
  const auto wv = weight.values();
  const auto bv = bias.values();

  // Visits every (output, input, weight) triple that contributes.
  auto visit = [=](auto&& fn) {
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t a = 0; a < kh; ++a)
          for (std::size_t b = 0; b < kw; ++b) {
            const std::size_t widx = ((co * cin + ci) * kh + a) * kw + b;
            for (std::size_t i = 0; i < oh; ++i) {
              const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i + a) -
                                       static_cast<std::ptrdiff_t>(pad_h);
              if (r < 0 || r >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t j = 0; j < ow; ++j) {
                const std::ptrdiff_t c = static_cast<std::ptrdiff_t>(j + b) -
                                         static_cast<std::ptrdiff_t>(pad_w);
                if (c < 0 || c >= static_cast<std::ptrdiff_t>(w)) continue;
                const std::size_t xidx = (ci * h + static_cast<std::size_t>(r)) * w +
                                         static_cast<std::size_t>(c);
                fn((co * oh + i) * ow + j, xidx, widx);
              }
            }
          }
  };

  std::vector<double> out(cout * oh * ow);
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t k = 0; k < oh * ow; ++k) out[co * oh * ow + k] = bv[co];
  visit([&](std::size_t o, std::size_t xi, std::size_t wi) { out[o] += wv[wi] * xv[xi]; });

  return tape.emit("conv2d", {x, weight, bias}, {cout, oh, ow}, std::move(out), [=]() mutable {
    return [=](std::span<const double> gy) mutable {
      if (x.requires_grad()) {
        auto gx = x.mutable_grad();
        visit([&](std::size_t o, std::size_t xi, std::size_t wi) { gx[xi] += wv[wi] * gy[o]; });
      }
      if (weight.requires_grad()) {
        auto gw = weight.mutable_grad();
        visit([&](std::size_t o, std::size_t xi, std::size_t wi) { gw[wi] += xv[xi] * gy[o]; });
      }
      if (bias.requires_grad()) {
        auto gb = bias.mutable_grad();
        for (std::size_t co = 0; co < cout; ++co)
          for (std::size_t k = 0; k < oh * ow; ++k) gb[co] += gy[co * oh * ow + k];
      }
    };
  });
}

// Non-overlapping average pooling along the last (time) axis of CxHxW.
inline Tensor avg_pool_time(Tape& tape, const Tensor& x, std::size_t window) {
  require(x.rank() == 3, ErrorKind::kDimension,
          "avg_pool_time: expected CxHxW input, got " + shape_string(x.shape()));
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  require(window >= 1 && w >= window, ErrorKind::kDimension,
          "avg_pool_time: window " + std::to_string(window) + " exceeds width " +
              std::to_string(w));
  const std::size_t ow = w / window;
  const auto xv = x.values();
  std::vector<double> out(c * h * ow, 0.0);
  for (std::size_t r = 0; r < c * h; ++r)
    for (std::size_t j = 0; j < ow; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < window; ++k) s += xv[r * w + j * window + k];
      out[r * ow + j] = s / static_cast<double>(window);
    }
  return tape.emit("avg_pool_time", {x}, {c, h, ow}, std::move(out), [=]() mutable {
    return [=](std::span<const double> gy) mutable {
      auto gx = x.mutable_grad();
      for (std::size_t r = 0; r < c * h; ++r)
        for (std::size_t j = 0; j < ow; ++j)
          for (std::size_t k = 0; k < window; ++k)
            gx[r * w + j * window + k] += gy[r * ow + j] / static_cast<double>(window);
    };
  });
}

// Global spatial mean per channel: CxHxW -> 1xC.
inline Tensor channel_mean(Tape& tape, const Tensor& x) {
  require(x.rank() == 3, ErrorKind::kDimension,
          "channel_mean: expected CxHxW input, got " + shape_string(x.shape()));
  const std::size_t c = x.shape()[0], area = x.shape()[1] * x.shape()[2];
  const auto xv = x.values();
  std::vector<double> out(c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t p = 0; p < area; ++p) out[k] += xv[k * area + p];
    out[k] /= static_cast<double>(area);
  }
  return tape.emit("channel_mean", {x}, {1, c}, std::move(out), [=]() mutable {
    return [=](std::span<const double> gy) mutable {
      auto gx = x.mutable_grad();
      for (std::size_t k = 0; k < c; ++k)
        for (std::size_t p = 0; p < area; ++p)
          gx[k * area + p] += gy[k] / static_cast<double>(area);
    };
  });
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  static AdamState for_parameters(const std::vector<Tensor>& params, double learning_rate) {
    AdamState state;
    state.learning_rate = learning_rate;
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.numel(), 0.0);
      state.second_moment.emplace_back(p.numel(), 0.0);
    }
    return state;
  }
};

// Bias-corrected Adam update of `params` given matching `grads`.
inline void adam_step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads,
                      AdamState& state) {
  require(params.size() == grads.size() && params.size() == state.first_moment.size() &&
              params.size() == state.second_moment.size(),
          ErrorKind::kDimension,
          "adam_step: " + std::to_string(params.size()) + " parameters, " +
              std::to_string(grads.size()) + " gradients, " +
              std::to_string(state.first_moment.size()) + " moment slots");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const std::size_t n = params[k].numel();
    require(grads[k].size() == n && state.first_moment[k].size() == n &&
                state.second_moment[k].size() == n,
            ErrorKind::kDimension,
            "adam_step: parameter " + std::to_string(k) + " of shape " +
                shape_string(params[k].shape()) + " does not match its gradient or moments");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k].mutable_values();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    const auto& g = grads[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

// Convenience wrapper that reads gradients straight off the parameters.
class Adam {
 public:
  Adam(std::vector<Tensor> params, double learning_rate)
      : params_(std::move(params)), state_(AdamState::for_parameters(params_, learning_rate)) {}

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    std::vector<std::vector<double>> grads;
    grads.reserve(params_.size());
    for (const auto& p : params_) grads.emplace_back(p.grad().begin(), p.grad().end());
    adam_step(params_, grads, state_);
  }

  const AdamState& state() const { return state_; }

 private:
  std::vector<Tensor> params_;
  AdamState state_;
};

}  // namespace mosaic
