#pragma once

#include <cstdint>
#include <vector>

#include "qlvm/matrix.hpp"
#include "qlvm/net.hpp"

namespace qlvm {

// Amortized Gaussian posterior q(z|x): a tanh network whose final affine
// layer emits 2d values per datum, split into d means and d log-variances.
// Log-variances are clamped to [-10, 10] before exponentiation, with the
// gradient gated to zero at the clamp.
struct GaussianEncoder {
    Network net;
    int latent_dim = 0;
};

inline constexpr double kLogVarClamp = 10.0;

GaussianEncoder make_gaussian_encoder(int data_dim, const std::vector<int>& hidden,
                                      int latent_dim, std::uint64_t seed);

struct EncoderOutput {
    Matrix mean;          // n x d
    Matrix log_variance;  // n x d, clamped
};

EncoderOutput encode(const GaussianEncoder& enc, const Matrix& x);

// z = mean + exp(log_variance / 2) * noise, elementwise.
Matrix reparameterize(const Matrix& mean, const Matrix& log_variance, const Matrix& noise);

// KL(q || N(0, I)) per datum: 0.5 * sum_k(exp(lv_k) + mean_k^2 - 1 - lv_k).
std::vector<double> kl_to_standard_normal(const Matrix& mean, const Matrix& log_variance);

// Exact diagonal-Gaussian log densities, used by the importance weights.
double diag_gaussian_log_density(const double* z, const double* mean,
                                 const double* log_variance, int d);
double standard_normal_log_density(const double* z, int d);

enum class BoundKind { elbo, iwae };

struct BoundEstimate {
    std::vector<double> per_datum;  // nats
    double batch_mean = 0.0;
    BoundKind kind = BoundKind::elbo;
    int samples = 1;
};

// Reconstruction term averaged over m reparameterized samples minus the
// closed-form KL. The noise variant takes an (n*m) x d matrix of standard
// normal draws, row i*m+j belonging to datum i; the seeded variant draws
// them internally and is otherwise identical.
BoundEstimate elbo(const GaussianEncoder& enc, const Network& decoder, const Matrix& x,
                   int m, std::uint64_t seed);
BoundEstimate elbo_with_noise(const GaussianEncoder& enc, const Network& decoder,
                              const Matrix& x, const Matrix& noise, int m);

// LSE_j[log p(x|z_j) + log p(z_j) - log q(z_j|x)] - log m with a standard
// normal prior. m = 1 recovers the single-sample ELBO integrand.
BoundEstimate iwae_bound(const GaussianEncoder& enc, const Network& decoder, const Matrix& x,
                         int m, std::uint64_t seed);
BoundEstimate iwae_with_noise(const GaussianEncoder& enc, const Network& decoder,
                              const Matrix& x, const Matrix& noise, int m);

// Mean bound over the batch; accumulates the gradients of the negated mean
// into both networks' gradient buffers (direct differentiation of the bound,
// reparameterization path included).
double baseline_bound_and_gradients(BoundKind kind, GaussianEncoder& enc, Network& decoder,
                                    const Matrix& x, const Matrix& noise, int m);

struct BaselineConfig {
    int samples = 1;  // draws per datum; customary defaults are 1 (elbo), 10 (iwae)
    int epochs = 200;
    int batch_size = 100;
    std::uint64_t seed = 0;
    double learning_rate = 0.001;
};

struct BaselineResult {
    std::vector<double> epoch_objective;  // mean training bound per epoch
    std::vector<double> epoch_seconds;
};

// Joint Adam steps on encoder and decoder. Throws numerical_error with
// epoch/batch diagnostics if the objective turns non-finite.
BaselineResult train_baseline(BoundKind kind, const BaselineConfig& config, const Matrix& data,
                              GaussianEncoder& enc, Network& decoder, AdamState& enc_adam,
                              AdamState& dec_adam);

}  // namespace qlvm
