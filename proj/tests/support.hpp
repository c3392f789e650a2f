#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <unistd.h>

#include "mosaic/diffcore.hpp"
#include "mosaic/random.hpp"

namespace mosaic::testing {

inline std::vector<double> random_values(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = lo + (hi - lo) * uniform01(rng);
  return v;
}

// Values bounded away from zero so relu kinks sit far from +-h.
inline std::vector<double> off_zero_values(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) {
    const double m = 0.1 + 0.9 * uniform01(rng);
    x = uniform01(rng) < 0.5 ? -m : m;
  }
  return v;
}

inline Tensor random_parameter(Rng& rng, Shape shape) {
  const std::size_t n = shape_numel(shape);
  return Tensor::parameter(std::move(shape), off_zero_values(rng, n));
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

// Compares tape gradients of a scalar loss against central differences for
// every coordinate of every parameter.
inline GradCheck check_gradients(const std::function<Tensor(Tape&)>& loss_fn,
                                 std::vector<Tensor> params, double h = 1e-5) {
  for (auto& p : params) p.zero_grad();
  {
    Tape tape;
    const Tensor loss = loss_fn(tape);
    tape.backward(loss);
  }
  GradCheck out;
  for (auto& p : params) {
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double orig = p.values()[i];
      auto eval = [&](double x) {
        p.mutable_values()[i] = x;
        auto tape = Tape::inference();
        return loss_fn(tape).item();
      };
      const double numeric = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
      p.mutable_values()[i] = orig;
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
      out.max_rel_error = std::max(out.max_rel_error, std::abs(analytic[i] - numeric) / denom);
      ++out.coordinates;
    }
  }
  return out;
}

// Kind of the mosaic::Error thrown by fn, or nullopt if none.
template <class Fn>
std::optional<ErrorKind> kind_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

// sum(out * R) for a fixed random R, turning any tensor into a scalar whose
// gradient exercises the full Jacobian.
inline Tensor project(Tape& tape, const Tensor& out, std::uint64_t seed = 99) {
  Rng rng(seed);
  const Tensor r = Tensor::constant(out.shape(), random_values(rng, out.numel()));
  return sum(tape, mul(tape, out, r));
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("mosaic_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::filesystem::path path_;
};

}  // namespace mosaic::testing
