#include "mtl/kernels.hpp"

#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mtl::kernels {

namespace {

std::atomic<bool> g_parallel{true};

// Row bodies shared by the serial and OpenMP variants. Keeping a single
// definition of the per-row arithmetic is what guarantees the two variants
// agree bitwise: the OpenMP loops only change which thread runs a row.

inline void forward_row(const double* xr, const double* w, const double* bias,
                        double* yr, int64_t in, int64_t out) {
  if (bias) {
    for (int64_t o = 0; o < out; ++o) yr[o] = bias[o];
  } else {
    for (int64_t o = 0; o < out; ++o) yr[o] = 0.0;
  }
  for (int64_t i = 0; i < in; ++i) {
    const double xv = xr[i];
    const double* wr = w + i * out;
    for (int64_t o = 0; o < out; ++o) yr[o] += xv * wr[o];
  }
}

inline void backward_input_row(const double* dyr, const double* w,
                               double* dxr, int64_t in, int64_t out) {
  for (int64_t i = 0; i < in; ++i) {
    const double* wr = w + i * out;
    double acc = 0.0;
    for (int64_t o = 0; o < out; ++o) acc += dyr[o] * wr[o];
    dxr[i] += acc;
  }
}

// One row of dw: dw[i,:] += sum_b x[b,i] * dy[b,:].
inline void backward_weight_row(const double* x, const double* dy,
                                double* dwr, int64_t i, int64_t n,
                                int64_t in, int64_t out) {
  for (int64_t b = 0; b < n; ++b) {
    const double xv = x[b * in + i];
    const double* dyr = dy + b * out;
    for (int64_t o = 0; o < out; ++o) dwr[o] += xv * dyr[o];
  }
}

inline void backward_bias(const double* dy, double* db, int64_t n, int64_t out) {
  for (int64_t b = 0; b < n; ++b) {
    const double* dyr = dy + b * out;
    for (int64_t o = 0; o < out; ++o) db[o] += dyr[o];
  }
}

inline bool use_omp(int64_t work) {
#ifdef _OPENMP
  return g_parallel.load(std::memory_order_relaxed) && omp_get_max_threads() > 1 &&
         work >= (1 << 15);
#else
  (void)work;
  return false;
#endif
}

}  // namespace

void linear_forward_serial(const double* x, const double* w, const double* bias,
                           double* y, int64_t n, int64_t in, int64_t out) {
  for (int64_t b = 0; b < n; ++b)
    forward_row(x + b * in, w, bias, y + b * out, in, out);
}

void linear_forward_omp(const double* x, const double* w, const double* bias,
                        double* y, int64_t n, int64_t in, int64_t out) {
#pragma omp parallel for schedule(static)
  for (int64_t b = 0; b < n; ++b)
    forward_row(x + b * in, w, bias, y + b * out, in, out);
}

void linear_forward(const double* x, const double* w, const double* bias,
                    double* y, int64_t n, int64_t in, int64_t out) {
  if (use_omp(n * in * out))
    linear_forward_omp(x, w, bias, y, n, in, out);
  else
    linear_forward_serial(x, w, bias, y, n, in, out);
}

void linear_backward_input_serial(const double* dy, const double* w,
                                  double* dx, int64_t n, int64_t in, int64_t out) {
  for (int64_t b = 0; b < n; ++b)
    backward_input_row(dy + b * out, w, dx + b * in, in, out);
}

void linear_backward_input_omp(const double* dy, const double* w,
                               double* dx, int64_t n, int64_t in, int64_t out) {
#pragma omp parallel for schedule(static)
  for (int64_t b = 0; b < n; ++b)
    backward_input_row(dy + b * out, w, dx + b * in, in, out);
}

void linear_backward_input(const double* dy, const double* w,
                           double* dx, int64_t n, int64_t in, int64_t out) {
  if (use_omp(n * in * out))
    linear_backward_input_omp(dy, w, dx, n, in, out);
  else
    linear_backward_input_serial(dy, w, dx, n, in, out);
}

void linear_backward_params_serial(const double* x, const double* dy,
                                   double* dw, double* db, int64_t n, int64_t in, int64_t out) {
  if (dw)
    for (int64_t i = 0; i < in; ++i)
      backward_weight_row(x, dy, dw + i * out, i, n, in, out);
  if (db) backward_bias(dy, db, n, out);
}

void linear_backward_params_omp(const double* x, const double* dy,
                                double* dw, double* db, int64_t n, int64_t in, int64_t out) {
  if (dw) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < in; ++i)
      backward_weight_row(x, dy, dw + i * out, i, n, in, out);
  }
  if (db) backward_bias(dy, db, n, out);
}

void linear_backward_params(const double* x, const double* dy,
                            double* dw, double* db, int64_t n, int64_t in, int64_t out) {
  if (use_omp(n * in * out))
    linear_backward_params_omp(x, dy, dw, db, n, in, out);
  else
    linear_backward_params_serial(x, dy, dw, db, n, in, out);
}

bool openmp_available() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_parallel_enabled(bool enabled) { g_parallel.store(enabled, std::memory_order_relaxed); }

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }

}  // namespace mtl::kernels
