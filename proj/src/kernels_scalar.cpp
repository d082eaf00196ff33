#include <cmath>

#include "qlvm/kernels.hpp"

// Reference kernels. Kept straightforward; the FMA-per-element loops define
// the bit-exact behaviour the AVX2 variants must reproduce.

namespace qlvm::kernels::scalar {

void gemm_nn(const double* a, const double* b, double* c, int n, int k, int p) {
    for (int i = 0; i < n; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * p;
        for (int l = 0; l < k; ++l) {
            const double av = arow[l];
            const double* brow = b + static_cast<std::size_t>(l) * p;
            for (int j = 0; j < p; ++j) crow[j] = std::fma(av, brow[j], crow[j]);
        }
    }
}

double dot(int n, const double* x, const double* y) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc = std::fma(x[i], y[i], acc);
    return acc;
}

void gemm_nt(const double* a, const double* b, double* c, int n, int k, int p) {
    for (int i = 0; i < n; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * p;
        for (int j = 0; j < p; ++j) crow[j] += dot(k, arow, b + static_cast<std::size_t>(j) * k);
    }
}

void gemm_tn(const double* a, const double* b, double* c, int n, int k, int p) {
    for (int i = 0; i < n; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        const double* brow = b + static_cast<std::size_t>(i) * p;
        for (int l = 0; l < k; ++l) {
            const double av = arow[l];
            double* crow = c + static_cast<std::size_t>(l) * p;
            for (int j = 0; j < p; ++j) crow[j] = std::fma(av, brow[j], crow[j]);
        }
    }
}

void axpy(int n, double alpha, const double* x, double* y) {
    for (int i = 0; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

double sum(int n, const double* x) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += x[i];
    return acc;
}

void add_bias_rows(double* y, const double* bias, int n, int p) {
    for (int i = 0; i < n; ++i) {
        double* row = y + static_cast<std::size_t>(i) * p;
        for (int j = 0; j < p; ++j) row[j] += bias[j];
    }
}

void col_sum_acc(const double* y, double* out, int n, int p) {
    for (int i = 0; i < n; ++i) {
        const double* row = y + static_cast<std::size_t>(i) * p;
        for (int j = 0; j < p; ++j) out[j] += row[j];
    }
}

void relu(int n, const double* x, double* y) {
    for (int i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_grad(int n, const double* pre, const double* dy, double* dx) {
    for (int i = 0; i < n; ++i) dx[i] = pre[i] > 0.0 ? dy[i] : 0.0;
}

void tanh_grad(int n, const double* post, const double* dy, double* dx) {
    for (int i = 0; i < n; ++i) dx[i] = dy[i] * std::fma(-post[i], post[i], 1.0);
}

}  // namespace qlvm::kernels::scalar
