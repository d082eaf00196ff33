#pragma once

#include <cstdint>
#include <vector>

#include "qlvm/matrix.hpp"
#include "qlvm/rng.hpp"

namespace qlvm {

enum class Embedding { periodic_sincos, identity, gaussian_icdf };
enum class Activation { relu, tanh };
enum class Head { bernoulli_logits, gaussian_mean };

struct NetworkSpec {
    Embedding embedding = Embedding::periodic_sincos;
    int input_dim = 2;
    std::vector<int> layer_widths;  // hidden widths, then the output width
    Activation activation = Activation::relu;
    Head head = Head::bernoulli_logits;
    double gaussian_variance = 0.1;

    // periodic_sincos expands each coordinate into a (sin, cos) pair.
    int embedded_dim() const {
        return embedding == Embedding::periodic_sincos ? 2 * input_dim : input_dim;
    }
    int output_dim() const { return layer_widths.empty() ? 0 : layer_widths.back(); }
};

// Feed-forward network with a flat parameter array. Weight matrices are
// stored row-major as [fan_in x fan_out]; per layer the weight block is
// followed by the bias block. The gradient accumulator mirrors the layout.
struct Network {
    NetworkSpec spec;
    std::vector<double> params;
    std::vector<double> grads;

    struct LayerView {
        int w_off, b_off, in, out;
    };
    std::vector<LayerView> layers;

    int layer_count() const { return static_cast<int>(layers.size()); }
    int param_count() const { return static_cast<int>(params.size()); }

    double* w(int l) { return params.data() + layers[l].w_off; }
    const double* w(int l) const { return params.data() + layers[l].w_off; }
    double* b(int l) { return params.data() + layers[l].b_off; }
    const double* b(int l) const { return params.data() + layers[l].b_off; }
    double* gw(int l) { return grads.data() + layers[l].w_off; }
    double* gb(int l) { return grads.data() + layers[l].b_off; }
};

// Zero-initialized network with the layout computed from its NetworkSpec.
Network make_network(const NetworkSpec& spec);

// Weights uniform in +-sqrt(6/(fan_in+fan_out)), biases zero.
Network init_network(const NetworkSpec& spec, std::uint64_t seed);
void init_params(Network& net, RandomStream& rng);

// Activation record of one forward pass, consumed by backward.
struct Tape {
    Matrix embedded;             // batch x embedded_dim
    std::vector<Matrix> hidden;  // post-activation hidden outputs
    Matrix out;                  // batch x output_dim, raw affine result
    int batch = -1;              // -1 until a forward pass fills the tape
};

// Raw head outputs: pre-sigmoid logits for bernoulli, means for gaussian.
void forward(const Network& net, const Matrix& z, Tape& tape);
Matrix forward(const Network& net, const Matrix& z);

// Accumulates d loss / d params into net.grads given d loss / d out.
// When dInput is non-null it is overwritten with d loss / d z, including the
// embedding chain (zero where an input clamp was active). Throws if the tape
// does not correspond to a forward pass over z.
void backward(Network& net, const Matrix& z, const Tape& tape, const Matrix& dOut,
              Matrix* dInput = nullptr);

struct AdamState {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t step = 0;
    std::vector<double> m, v;
};

AdamState make_adam_state(int n, double lr = 0.001);

// Bias-corrected update from net.grads; zeroes the accumulator afterward.
void adam_step(Network& net, AdamState& state);

// Bernoulli probabilities are clamped to [eps, 1-eps] so log-likelihoods
// stay finite for any logit. Gradients are gated to zero where the clamp is
// active, keeping them consistent with finite differences of the clamped
// value.
inline constexpr double kBernoulliClampEps = 1e-7;

// Every log-likelihood below decomposes as
//   log p(x | out) = dot(x, t(out)) + s(out) + datum_term(x),
// with t, s depending only on the decoder output and the datum term only on
// x. The per-datum and grid paths share this code so a value computed either
// way is identical.
void head_decompose(const NetworkSpec& spec, const double* out, double* t, double& s);
double head_datum_term(const NetworkSpec& spec, const double* x);

double log_likelihood(const NetworkSpec& spec, const double* out, const double* x);

// Row i of out paired with row i of x.
std::vector<double> log_likelihood_rows(const NetworkSpec& spec, const Matrix& out,
                                        const Matrix& x);

// ll(i, j) = log p(x_i | out_j) for every datum i and decoder output row j.
Matrix log_likelihood_grid(const NetworkSpec& spec, const Matrix& out, const Matrix& x);

// dOut(j,:) += sum_i weights(i,j) * d log p(x_i | out_j) / d out_j.
void head_weighted_backward(const NetworkSpec& spec, const Matrix& out, const Matrix& x,
                            const Matrix& weights, Matrix& dOut);

// dOut(i,:) += scale[i] * d log p(x_i | out_i) / d out_i.
void head_backward_rows(const NetworkSpec& spec, const Matrix& out, const Matrix& x,
                        const std::vector<double>& scale, Matrix& dOut);

// Mean output of the head: sigmoid of logits for bernoulli, identity for
// gaussian. Used for sampling, jacobian fields and image export.
Matrix head_mean(const NetworkSpec& spec, const Matrix& out);

}  // namespace qlvm
