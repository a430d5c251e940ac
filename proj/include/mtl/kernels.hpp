#pragma once

#include <cstdint>

namespace mtl::kernels {

// Dense-layer kernels, each in two variants: a plain serial reference and an
// OpenMP one parallelized over independent output rows. Every output element
// is produced by a single fixed-order serial accumulation in both variants,
// so results are bitwise identical between them and for any thread count.
// The unsuffixed entry points dispatch on problem size and thread budget.

// y = x * w + bias. x: [n,in], w: [in,out], bias: [out] (may be null), y: [n,out].
void linear_forward_serial(const double* x, const double* w, const double* bias,
                           double* y, int64_t n, int64_t in, int64_t out);
void linear_forward_omp(const double* x, const double* w, const double* bias,
                        double* y, int64_t n, int64_t in, int64_t out);
void linear_forward(const double* x, const double* w, const double* bias,
                    double* y, int64_t n, int64_t in, int64_t out);

// dx += dy * w^T. dy: [n,out], w: [in,out], dx: [n,in].
void linear_backward_input_serial(const double* dy, const double* w,
                                  double* dx, int64_t n, int64_t in, int64_t out);
void linear_backward_input_omp(const double* dy, const double* w,
                               double* dx, int64_t n, int64_t in, int64_t out);
void linear_backward_input(const double* dy, const double* w,
                           double* dx, int64_t n, int64_t in, int64_t out);

// dw += x^T * dy, db += column sums of dy. dw and db may each be null.
void linear_backward_params_serial(const double* x, const double* dy,
                                   double* dw, double* db, int64_t n, int64_t in, int64_t out);
void linear_backward_params_omp(const double* x, const double* dy,
                                double* dw, double* db, int64_t n, int64_t in, int64_t out);
void linear_backward_params(const double* x, const double* dy,
                            double* dw, double* db, int64_t n, int64_t in, int64_t out);

bool openmp_available();
int max_threads();

// Force the dispatching entry points onto the serial path (used by tests and
// the benchmark; defaults to allowing OpenMP).
void set_parallel_enabled(bool enabled);
bool parallel_enabled();

}  // namespace mtl::kernels
