#include "qlvm/baselines.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>
#include <string>

#include "qlvm/errors.hpp"
#include "qlvm/rng.hpp"

namespace qlvm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

struct EncoderState {
    Tape tape;
    Matrix raw;           // n x 2d
    Matrix mean;          // n x d
    Matrix log_variance;  // n x d, clamped
    std::vector<char> clamped;
};

void encode_full(const GaussianEncoder& enc, const Matrix& x, EncoderState& st) {
    const int d = enc.latent_dim;
    if (enc.net.spec.output_dim() != 2 * d)
        throw std::invalid_argument("encoder output width must be twice the latent dimension");
    forward(enc.net, x, st.tape);
    st.raw = st.tape.out;
    const int n = x.rows;
    st.mean.resize(n, d);
    st.log_variance.resize(n, d);
    st.clamped.assign(static_cast<std::size_t>(n) * d, 0);
    for (int i = 0; i < n; ++i) {
        const double* r = st.raw.row(i);
        for (int k = 0; k < d; ++k) {
            st.mean(i, k) = r[k];
            const double lv = r[d + k];
            if (lv > kLogVarClamp) {
                st.log_variance(i, k) = kLogVarClamp;
                st.clamped[static_cast<std::size_t>(i) * d + k] = 1;
            } else if (lv < -kLogVarClamp) {
                st.log_variance(i, k) = -kLogVarClamp;
                st.clamped[static_cast<std::size_t>(i) * d + k] = 1;
            } else {
                st.log_variance(i, k) = lv;
            }
        }
    }
}

// z rows grouped by datum: row i*m+j is sample j of datum i.
Matrix build_latents(const EncoderState& st, const Matrix& noise, int m) {
    const int n = st.mean.rows, d = st.mean.cols;
    if (noise.rows != n * m || noise.cols != d)
        throw std::invalid_argument("noise must be (n*m) x latent_dim");
    Matrix z(n * m, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
            const int r = i * m + j;
            for (int k = 0; k < d; ++k)
                z(r, k) = st.mean(i, k) +
                          std::exp(0.5 * st.log_variance(i, k)) * noise(r, k);
        }
    return z;
}

Matrix repeat_rows(const Matrix& x, int m) {
    Matrix out(x.rows * m, x.cols);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < m; ++j)
            std::memcpy(out.row(i * m + j), x.row(i), sizeof(double) * x.cols);
    return out;
}

Matrix draw_noise(int rows, int cols, std::uint64_t seed) {
    RandomStream rng(derive_seed(seed, 5));
    Matrix noise(rows, cols);
    for (double& v : noise.data) v = rng.normal();
    return noise;
}

void validate_bound_args(const GaussianEncoder& enc, const Network& decoder, const Matrix& x,
                         int m) {
    if (m < 1) throw std::invalid_argument("bound needs at least one sample per datum");
    if (x.rows < 1) throw std::invalid_argument("bound needs at least one datum");
    if (x.cols != enc.net.spec.input_dim)
        throw std::invalid_argument("data width does not match the encoder input");
    if (x.cols != decoder.spec.output_dim())
        throw std::invalid_argument("data width does not match the decoder output");
    if (decoder.spec.input_dim != enc.latent_dim)
        throw std::invalid_argument("decoder latent dimension does not match the encoder");
}

// Importance weights w_ij = ll_ij + log p(z_ij) - log q(z_ij | x_i).
std::vector<double> importance_weights(const EncoderState& st, const Matrix& z,
                                       const std::vector<double>& ll, int m) {
    const int n = st.mean.rows, d = st.mean.cols;
    std::vector<double> w(ll.size());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
            const int r = i * m + j;
            w[r] = ll[r] + standard_normal_log_density(z.row(r), d) -
                   diag_gaussian_log_density(z.row(r), st.mean.row(i),
                                             st.log_variance.row(i), d);
        }
    return w;
}

double lse_block(const double* v, int m) {
    double mx = v[0];
    for (int j = 1; j < m; ++j) mx = std::max(mx, v[j]);
    if (!std::isfinite(mx)) return mx;
    double acc = 0.0;
    for (int j = 0; j < m; ++j) acc += std::exp(v[j] - mx);
    return mx + std::log(acc);
}

double finish(BoundEstimate& est) {
    double acc = 0.0;
    for (double v : est.per_datum) acc += v;
    est.batch_mean = acc / static_cast<double>(est.per_datum.size());
    return est.batch_mean;
}

}  // namespace

GaussianEncoder make_gaussian_encoder(int data_dim, const std::vector<int>& hidden,
                                      int latent_dim, std::uint64_t seed) {
    if (latent_dim < 1) throw std::invalid_argument("latent dimension must be positive");
    NetworkSpec spec;
    spec.embedding = Embedding::identity;
    spec.input_dim = data_dim;
    spec.layer_widths = hidden;
    spec.layer_widths.push_back(2 * latent_dim);
    spec.activation = Activation::tanh;
    GaussianEncoder enc;
    enc.net = init_network(spec, seed);
    enc.latent_dim = latent_dim;
    return enc;
}

EncoderOutput encode(const GaussianEncoder& enc, const Matrix& x) {
    EncoderState st;
    encode_full(enc, x, st);
    return {std::move(st.mean), std::move(st.log_variance)};
}

Matrix reparameterize(const Matrix& mean, const Matrix& log_variance, const Matrix& noise) {
    if (mean.rows != noise.rows || mean.cols != noise.cols ||
        log_variance.rows != noise.rows || log_variance.cols != noise.cols)
        throw std::invalid_argument("reparameterize: shape mismatch");
    Matrix z = noise;
    for (int i = 0; i < static_cast<int>(z.data.size()); ++i)
        z.data[i] = mean.data[i] + std::exp(0.5 * log_variance.data[i]) * noise.data[i];
    return z;
}

std::vector<double> kl_to_standard_normal(const Matrix& mean, const Matrix& log_variance) {
    if (mean.rows != log_variance.rows || mean.cols != log_variance.cols)
        throw std::invalid_argument("kl_to_standard_normal: shape mismatch");
    std::vector<double> kl(mean.rows, 0.0);
    for (int i = 0; i < mean.rows; ++i) {
        double acc = 0.0;
        for (int k = 0; k < mean.cols; ++k) {
            const double mu = mean(i, k), lv = log_variance(i, k);
            acc += std::exp(lv) + mu * mu - 1.0 - lv;
        }
        kl[i] = 0.5 * acc;
    }
    return kl;
}

double diag_gaussian_log_density(const double* z, const double* mean,
                                 const double* log_variance, int d) {
    double acc = 0.0;
    for (int k = 0; k < d; ++k) {
        const double diff = z[k] - mean[k];
        acc += -0.5 * ((diff * diff) * std::exp(-log_variance[k]) + log_variance[k] + kLog2Pi);
    }
    return acc;
}

double standard_normal_log_density(const double* z, int d) {
    double acc = 0.0;
    for (int k = 0; k < d; ++k) acc += -0.5 * ((z[k] * z[k]) * 1.0 + 0.0 + kLog2Pi);
    return acc;
}

BoundEstimate elbo_with_noise(const GaussianEncoder& enc, const Network& decoder,
                              const Matrix& x, const Matrix& noise, int m) {
    validate_bound_args(enc, decoder, x, m);
    EncoderState st;
    encode_full(enc, x, st);
    const Matrix z = build_latents(st, noise, m);
    const Matrix out = forward(decoder, z);
    const Matrix xrep = repeat_rows(x, m);
    const auto ll = log_likelihood_rows(decoder.spec, out, xrep);
    const auto kl = kl_to_standard_normal(st.mean, st.log_variance);

    BoundEstimate est;
    est.kind = BoundKind::elbo;
    est.samples = m;
    est.per_datum.resize(x.rows);
    for (int i = 0; i < x.rows; ++i) {
        double acc = 0.0;
        for (int j = 0; j < m; ++j) acc += ll[i * m + j];
        est.per_datum[i] = acc / m - kl[i];
    }
    finish(est);
    return est;
}

BoundEstimate elbo(const GaussianEncoder& enc, const Network& decoder, const Matrix& x,
                   int m, std::uint64_t seed) {
    validate_bound_args(enc, decoder, x, m);
    return elbo_with_noise(enc, decoder, x, draw_noise(x.rows * m, enc.latent_dim, seed), m);
}

BoundEstimate iwae_with_noise(const GaussianEncoder& enc, const Network& decoder,
                              const Matrix& x, const Matrix& noise, int m) {
    validate_bound_args(enc, decoder, x, m);
    EncoderState st;
    encode_full(enc, x, st);
    const Matrix z = build_latents(st, noise, m);
    const Matrix out = forward(decoder, z);
    const Matrix xrep = repeat_rows(x, m);
    const auto ll = log_likelihood_rows(decoder.spec, out, xrep);
    const auto w = importance_weights(st, z, ll, m);

    BoundEstimate est;
    est.kind = BoundKind::iwae;
    est.samples = m;
    est.per_datum.resize(x.rows);
    const double log_m = std::log(static_cast<double>(m));
    for (int i = 0; i < x.rows; ++i) est.per_datum[i] = lse_block(&w[i * m], m) - log_m;
    finish(est);
    return est;
}

BoundEstimate iwae_bound(const GaussianEncoder& enc, const Network& decoder, const Matrix& x,
                         int m, std::uint64_t seed) {
    validate_bound_args(enc, decoder, x, m);
    return iwae_with_noise(enc, decoder, x, draw_noise(x.rows * m, enc.latent_dim, seed), m);
}

double baseline_bound_and_gradients(BoundKind kind, GaussianEncoder& enc, Network& decoder,
                                    const Matrix& x, const Matrix& noise, int m) {
    validate_bound_args(enc, decoder, x, m);
    const int n = x.rows, d = enc.latent_dim;

    EncoderState st;
    encode_full(enc, x, st);
    const Matrix z = build_latents(st, noise, m);
    Tape dec_tape;
    forward(decoder, z, dec_tape);
    const Matrix& out = dec_tape.out;
    const Matrix xrep = repeat_rows(x, m);
    const auto ll = log_likelihood_rows(decoder.spec, out, xrep);

    // Row scale c_r = d(-mean bound)/d ll_r: uniform for the ELBO, the
    // normalized importance weight for the IWAE bound.
    std::vector<double> c(static_cast<std::size_t>(n) * m);
    BoundEstimate est;
    est.kind = kind;
    est.samples = m;
    est.per_datum.resize(n);
    std::vector<double> w;
    if (kind == BoundKind::elbo) {
        const auto kl = kl_to_standard_normal(st.mean, st.log_variance);
        for (int i = 0; i < n; ++i) {
            double acc = 0.0;
            for (int j = 0; j < m; ++j) acc += ll[i * m + j];
            est.per_datum[i] = acc / m - kl[i];
        }
        std::fill(c.begin(), c.end(), -1.0 / (static_cast<double>(n) * m));
    } else {
        w = importance_weights(st, z, ll, m);
        const double log_m = std::log(static_cast<double>(m));
        for (int i = 0; i < n; ++i) {
            const double lse = lse_block(&w[i * m], m);
            est.per_datum[i] = lse - log_m;
            for (int j = 0; j < m; ++j)
                c[i * m + j] = -std::exp(w[i * m + j] - lse) / n;
        }
    }

    Matrix dOut(out.rows, out.cols);
    head_backward_rows(decoder.spec, out, xrep, c, dOut);
    Matrix dz;
    backward(decoder, z, dec_tape, dOut, &dz);

    // Encoder gradient through the reparameterization path. For both bounds
    // dL/dmu collects dL/dz; the log-variance channel adds the 0.5*(z - mu)
    // scale-path term, the ELBO its closed-form KL derivative, and the IWAE
    // bound the surviving terms of the importance weight (the q terms cancel
    // against the path derivative except for the +1/2 constant).
    Matrix dEnc(n, 2 * d);
    for (int i = 0; i < n; ++i) {
        double* g = dEnc.row(i);
        for (int j = 0; j < m; ++j) {
            const int r = i * m + j;
            for (int k = 0; k < d; ++k) {
                double a = dz(r, k);
                if (kind == BoundKind::iwae) a += c[r] * (-z(r, k));
                g[k] += a;
                double glv = a * 0.5 * (z(r, k) - st.mean(i, k));
                if (kind == BoundKind::iwae) glv += c[r] * 0.5;
                g[d + k] += glv;
            }
        }
        if (kind == BoundKind::elbo) {
            for (int k = 0; k < d; ++k) {
                g[k] += st.mean(i, k) / n;
                g[d + k] += 0.5 * (std::exp(st.log_variance(i, k)) - 1.0) / n;
            }
        }
        for (int k = 0; k < d; ++k)
            if (st.clamped[static_cast<std::size_t>(i) * d + k]) g[d + k] = 0.0;
    }
    backward(enc.net, x, st.tape, dEnc);

    return finish(est);
}

BaselineResult train_baseline(BoundKind kind, const BaselineConfig& config, const Matrix& data,
                              GaussianEncoder& enc, Network& decoder, AdamState& enc_adam,
                              AdamState& dec_adam) {
    if (config.epochs < 1) throw std::invalid_argument("train_baseline: epochs must be >= 1");
    if (config.batch_size < 1)
        throw std::invalid_argument("train_baseline: batch size must be >= 1");
    if (config.samples < 1)
        throw std::invalid_argument("train_baseline: samples must be >= 1");
    if (data.rows < 1) throw std::invalid_argument("train_baseline: empty dataset");
    validate_bound_args(enc, decoder, Matrix(1, data.cols), 1);

    const int n = data.rows, m = config.samples, d = enc.latent_dim;
    enc_adam.lr = config.learning_rate;
    dec_adam.lr = config.learning_rate;
    RandomStream shuffle_rng(derive_seed(config.seed, 1));
    RandomStream noise_rng(derive_seed(config.seed, 2));

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);

    BaselineResult result;
    result.epoch_objective.reserve(config.epochs);
    Matrix xb, noise;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        for (int i = n - 1; i > 0; --i)
            std::swap(order[i], order[static_cast<int>(shuffle_rng.below(i + 1))]);

        double epoch_acc = 0.0;
        int batch_index = 0;
        for (int start = 0; start < n; start += config.batch_size, ++batch_index) {
            const int bn = std::min(config.batch_size, n - start);
            xb.resize(bn, data.cols);
            for (int i = 0; i < bn; ++i)
                std::memcpy(xb.row(i), data.row(order[start + i]),
                            sizeof(double) * data.cols);
            noise.resize(bn * m, d);
            for (double& v : noise.data) v = noise_rng.normal();

            const double objective =
                baseline_bound_and_gradients(kind, enc, decoder, xb, noise, m);
            if (!std::isfinite(objective)) {
                double mx = 0.0;
                for (int i = 0; i < decoder.param_count(); ++i)
                    mx = std::max(mx, std::fabs(decoder.params[i]));
                throw numerical_error(
                    "baseline objective became non-finite at epoch " +
                    std::to_string(epoch) + ", batch " + std::to_string(batch_index) +
                    " (max |decoder parameter| = " + std::to_string(mx) + ")");
            }
            epoch_acc += objective * bn;
            adam_step(enc.net, enc_adam);
            adam_step(decoder, dec_adam);
        }
        result.epoch_objective.push_back(epoch_acc / n);
        const auto t1 = std::chrono::steady_clock::now();
        result.epoch_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    return result;
}

}  // namespace qlvm
