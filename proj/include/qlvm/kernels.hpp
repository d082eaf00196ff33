#pragma once

#include <cstddef>

// Arithmetic inner loops used by the network engine. Every kernel has a
// scalar reference implementation and an AVX2+FMA variant; the active table
// is selected once at startup from cpuid and can be forced for testing.
//
// Contract notes:
//  - gemm_nn, gemm_tn, axpy, add_bias_rows, col_sum_acc, relu, relu_grad and
//    tanh_grad perform the same per-element FMA sequence in both backends and
//    match the scalar reference bit for bit.
//  - dot, sum and gemm_nt are reductions; the AVX2 variants use multiple
//    accumulators, so results may differ from scalar in the last bits.
//    Within one backend, gemm_nt(i, j) is computed by the same dot routine
//    as a standalone dot of row i and row j.

namespace qlvm::kernels {

struct Ops {
    // C[n x p] += A[n x k] * B[k x p]
    void (*gemm_nn)(const double* a, const double* b, double* c, int n, int k, int p);
    // C[n x p] += A[n x k] * B^T, with B stored [p x k]
    void (*gemm_nt)(const double* a, const double* b, double* c, int n, int k, int p);
    // C[k x p] += A^T * B, with A stored [n x k], B stored [n x p]
    void (*gemm_tn)(const double* a, const double* b, double* c, int n, int k, int p);

    void (*axpy)(int n, double alpha, const double* x, double* y);  // y += alpha*x
    double (*dot)(int n, const double* x, const double* y);
    double (*sum)(int n, const double* x);

    void (*add_bias_rows)(double* y, const double* bias, int n, int p);  // y[i][:] += bias
    void (*col_sum_acc)(const double* y, double* out, int n, int p);     // out += column sums

    void (*relu)(int n, const double* x, double* y);                      // y = max(x, 0)
    void (*relu_grad)(int n, const double* pre, const double* dy, double* dx);
    void (*tanh_grad)(int n, const double* post, const double* dy, double* dx);
};

enum class Backend { scalar, avx2 };

bool avx2_supported();

// Active kernel table. Defaults to the best supported backend.
const Ops& ops();
Backend active_backend();
void set_backend(Backend backend);  // throws std::invalid_argument if unsupported

// Direct access for equivalence tests.
const Ops& ops_for(Backend backend);

const char* backend_name(Backend backend);

}  // namespace qlvm::kernels
