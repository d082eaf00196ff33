#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cmath>

#include "qlvm/kernels.hpp"

// AVX2+FMA variants. This translation unit is compiled with -mavx2 -mfma and
// only reached after a cpuid check. Loops mirror the scalar reference: the
// vector body applies the same fused multiply-add per element and tails fall
// back to std::fma, so non-reduction kernels are bit-identical to scalar.

namespace qlvm::kernels::avx2 {

void gemm_nn(const double* a, const double* b, double* c, int n, int k, int p) {
    for (int i = 0; i < n; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * p;
        for (int l = 0; l < k; ++l) {
            const double av = arow[l];
            const double* brow = b + static_cast<std::size_t>(l) * p;
            const __m256d vav = _mm256_set1_pd(av);
            int j = 0;
            for (; j + 4 <= p; j += 4) {
                __m256d vc = _mm256_loadu_pd(crow + j);
                vc = _mm256_fmadd_pd(vav, _mm256_loadu_pd(brow + j), vc);
                _mm256_storeu_pd(crow + j, vc);
            }
            for (; j < p; ++j) crow[j] = std::fma(av, brow[j], crow[j]);
        }
    }
}

double dot(int n, const double* x, const double* y) {
    __m256d vacc = _mm256_setzero_pd();
    int i = 0;
    for (; i + 4 <= n; i += 4)
        vacc = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), vacc);
    double lanes[4];
    _mm256_storeu_pd(lanes, vacc);
    double acc = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for (; i < n; ++i) acc = std::fma(x[i], y[i], acc);
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
            const __m256d vav = _mm256_set1_pd(av);
            int j = 0;
            for (; j + 4 <= p; j += 4) {
                __m256d vc = _mm256_loadu_pd(crow + j);
                vc = _mm256_fmadd_pd(vav, _mm256_loadu_pd(brow + j), vc);
                _mm256_storeu_pd(crow + j, vc);
            }
            for (; j < p; ++j) crow[j] = std::fma(av, brow[j], crow[j]);
        }
    }
}

void axpy(int n, double alpha, const double* x, double* y) {
    const __m256d va = _mm256_set1_pd(alpha);
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

double sum(int n, const double* x) {
    __m256d vacc = _mm256_setzero_pd();
    int i = 0;
    for (; i + 4 <= n; i += 4) vacc = _mm256_add_pd(vacc, _mm256_loadu_pd(x + i));
    double lanes[4];
    _mm256_storeu_pd(lanes, vacc);
    double acc = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for (; i < n; ++i) acc += x[i];
    return acc;
}

void add_bias_rows(double* y, const double* bias, int n, int p) {
    for (int i = 0; i < n; ++i) {
        double* row = y + static_cast<std::size_t>(i) * p;
        int j = 0;
        for (; j + 4 <= p; j += 4) {
            __m256d v = _mm256_add_pd(_mm256_loadu_pd(row + j), _mm256_loadu_pd(bias + j));
            _mm256_storeu_pd(row + j, v);
        }
        for (; j < p; ++j) row[j] += bias[j];
    }
}

void col_sum_acc(const double* y, double* out, int n, int p) {
    for (int i = 0; i < n; ++i) {
        const double* row = y + static_cast<std::size_t>(i) * p;
        int j = 0;
        for (; j + 4 <= p; j += 4) {
            __m256d v = _mm256_add_pd(_mm256_loadu_pd(out + j), _mm256_loadu_pd(row + j));
            _mm256_storeu_pd(out + j, v);
        }
        for (; j < p; ++j) out[j] += row[j];
    }
}

void relu(int n, const double* x, double* y) {
    const __m256d vzero = _mm256_setzero_pd();
    int i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), vzero));
    for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_grad(int n, const double* pre, const double* dy, double* dx) {
    const __m256d vzero = _mm256_setzero_pd();
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(pre + i), vzero, _CMP_GT_OQ);
        _mm256_storeu_pd(dx + i, _mm256_and_pd(mask, _mm256_loadu_pd(dy + i)));
    }
    for (; i < n; ++i) dx[i] = pre[i] > 0.0 ? dy[i] : 0.0;
}

void tanh_grad(int n, const double* post, const double* dy, double* dx) {
    const __m256d vone = _mm256_set1_pd(1.0);
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vp = _mm256_loadu_pd(post + i);
        __m256d g = _mm256_fnmadd_pd(vp, vp, vone);
        _mm256_storeu_pd(dx + i, _mm256_mul_pd(_mm256_loadu_pd(dy + i), g));
    }
    for (; i < n; ++i) dx[i] = dy[i] * std::fma(-post[i], post[i], 1.0);
}

}  // namespace qlvm::kernels::avx2

#endif  // x86_64
