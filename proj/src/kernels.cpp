#include "qlvm/kernels.hpp"

#include <stdexcept>

namespace qlvm::kernels {

namespace scalar {
void gemm_nn(const double*, const double*, double*, int, int, int);
void gemm_nt(const double*, const double*, double*, int, int, int);
void gemm_tn(const double*, const double*, double*, int, int, int);
void axpy(int, double, const double*, double*);
double dot(int, const double*, const double*);
double sum(int, const double*);
void add_bias_rows(double*, const double*, int, int);
void col_sum_acc(const double*, double*, int, int);
void relu(int, const double*, double*);
void relu_grad(int, const double*, const double*, double*);
void tanh_grad(int, const double*, const double*, double*);
}  // namespace scalar

#if (defined(__x86_64__) || defined(_M_X64)) && !defined(QLVM_NO_AVX2)
#define QLVM_HAVE_AVX2_TU 1
namespace avx2 {
void gemm_nn(const double*, const double*, double*, int, int, int);
void gemm_nt(const double*, const double*, double*, int, int, int);
void gemm_tn(const double*, const double*, double*, int, int, int);
void axpy(int, double, const double*, double*);
double dot(int, const double*, const double*);
double sum(int, const double*);
void add_bias_rows(double*, const double*, int, int);
void col_sum_acc(const double*, double*, int, int);
void relu(int, const double*, double*);
void relu_grad(int, const double*, const double*, double*);
void tanh_grad(int, const double*, const double*, double*);
}  // namespace avx2
#endif

namespace {

constexpr Ops kScalarOps = {
    scalar::gemm_nn, scalar::gemm_nt, scalar::gemm_tn, scalar::axpy,
    scalar::dot,     scalar::sum,     scalar::add_bias_rows,
    scalar::col_sum_acc, scalar::relu, scalar::relu_grad, scalar::tanh_grad,
};

#ifdef QLVM_HAVE_AVX2_TU
constexpr Ops kAvx2Ops = {
    avx2::gemm_nn, avx2::gemm_nt, avx2::gemm_tn, avx2::axpy,
    avx2::dot,     avx2::sum,     avx2::add_bias_rows,
    avx2::col_sum_acc, avx2::relu, avx2::relu_grad, avx2::tanh_grad,
};
#endif

Backend g_backend = avx2_supported() ? Backend::avx2 : Backend::scalar;

}  // namespace

bool avx2_supported() {
#ifdef QLVM_HAVE_AVX2_TU
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const Ops& ops_for(Backend backend) {
#ifdef QLVM_HAVE_AVX2_TU
    if (backend == Backend::avx2) return kAvx2Ops;
#endif
    if (backend == Backend::avx2)
        throw std::invalid_argument("avx2 kernels not built for this target");
    return kScalarOps;
}

const Ops& ops() { return ops_for(g_backend); }

Backend active_backend() { return g_backend; }

void set_backend(Backend backend) {
    if (backend == Backend::avx2 && !avx2_supported())
        throw std::invalid_argument("avx2 kernels requested but not supported by this cpu");
    g_backend = backend;
}

const char* backend_name(Backend backend) {
    return backend == Backend::avx2 ? "avx2" : "scalar";
}

}  // namespace qlvm::kernels
