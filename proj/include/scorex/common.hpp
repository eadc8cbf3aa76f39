#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace scorex {

inline constexpr const char* kVersion = "0.1.0";

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Second-derivative tensor of a vector-valued map: H[i](j, k) = d^2 f_i / dx_j dx_k.
// Each H[i] is symmetric.
using HessianTensor = std::vector<Mat>;

struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SingularJacobian : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegenerateSlice : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyData : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SingularSystem : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConsistencyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalBlowup : std::runtime_error {
  NumericalBlowup(const std::string& what, std::size_t step)
      : std::runtime_error(what), step_index(step) {}
  std::size_t step_index;
};
struct ParseError : std::runtime_error {
  ParseError(const std::string& what, std::size_t line_number)
      : std::runtime_error(what), line(line_number) {}
  std::size_t line;
};

// Execution policy for the heavy kernels.  Both policies produce bitwise
// identical results: per-element work is self-contained (keyed RNG streams)
// and reductions always run in fixed index order.
enum class Exec { parallel, serial };

// Worker cap.  SCORE_XFORM_THREADS, when set to a positive integer, lowers the
// thread count below the OpenMP default.
inline int max_threads() {
#ifdef _OPENMP
  int n = omp_get_max_threads();
#else
  int n = 1;
#endif
  if (const char* env = std::getenv("SCORE_XFORM_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) n = std::min<long>(n, v);
  }
  return std::max(1, n);
}

namespace detail {

// Runs body(i) for i in [0, n).  Exceptions are captured per element and the
// one with the smallest index is rethrown after the loop, so failure behavior
// does not depend on scheduling.
template <class F>
void for_each_index(std::size_t n, Exec exec, F&& body) {
#ifdef _OPENMP
  if (exec == Exec::parallel && n > 1) {
    std::mutex mu;
    std::exception_ptr first_error = nullptr;
    std::size_t first_index = std::numeric_limits<std::size_t>::max();
    const int nt = max_threads();
#pragma omp parallel for schedule(static) num_threads(nt)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
      try {
        body(static_cast<std::size_t>(i));
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (static_cast<std::size_t>(i) < first_index) {
          first_index = static_cast<std::size_t>(i);
          first_error = std::current_exception();
        }
      }
    }
    if (first_error) std::rethrow_exception(first_error);
    return;
  }
#endif
  for (std::size_t i = 0; i < n; ++i) body(i);
}

}  // namespace detail

}  // namespace scorex
