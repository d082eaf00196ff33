#include "qlvm/net.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "qlvm/kernels.hpp"
#include "qlvm/lattice.hpp"

namespace qlvm {

namespace {

constexpr double kTwoPi = 6.28318530717958647692;

double softplus(double v) {
    return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

// Clamped log p and log(1-p) for one logit. Returns true when a clamp fired,
// in which case the local gradient is zero.
bool bernoulli_terms(double logit, double& lp, double& l1p) {
    static const double lo = std::log(kBernoulliClampEps);
    static const double hi = std::log1p(-kBernoulliClampEps);
    lp = -softplus(-logit);
    l1p = -softplus(logit);
    bool clamped = false;
    if (lp < lo) { lp = lo; clamped = true; }
    if (lp > hi) { lp = hi; clamped = true; }
    if (l1p < lo) { l1p = lo; clamped = true; }
    if (l1p > hi) { l1p = hi; clamped = true; }
    return clamped;
}

void validate_spec(const NetworkSpec& spec) {
    if (spec.input_dim < 1) throw std::invalid_argument("network: input_dim must be >= 1");
    if (spec.layer_widths.empty())
        throw std::invalid_argument("network: layer width list must not be empty");
    for (int w : spec.layer_widths)
        if (w < 1) throw std::invalid_argument("network: layer widths must be >= 1");
    if (spec.head == Head::gaussian_mean && !(spec.gaussian_variance > 0.0))
        throw std::invalid_argument("network: gaussian head needs positive variance");
}

void embed_forward(const NetworkSpec& spec, const Matrix& z, Matrix& e) {
    const int n = z.rows, d = z.cols;
    e.resize(n, spec.embedded_dim());
    switch (spec.embedding) {
        case Embedding::identity:
            e.data = z.data;
            break;
        case Embedding::periodic_sincos:
            for (int i = 0; i < n; ++i) {
                const double* zi = z.row(i);
                double* ei = e.row(i);
                for (int k = 0; k < d; ++k) {
                    double w = zi[k] - std::floor(zi[k]);
                    if (w >= 1.0) w = 0.0;
                    const double a = kTwoPi * w;
                    ei[2 * k] = std::sin(a);
                    ei[2 * k + 1] = std::cos(a);
                }
            }
            break;
        case Embedding::gaussian_icdf:
            for (int i = 0; i < n; ++i) {
                const double* zi = z.row(i);
                double* ei = e.row(i);
                for (int k = 0; k < d; ++k) {
                    double u = zi[k];
                    if (u < kPriorClampEps) u = kPriorClampEps;
                    if (u > 1.0 - kPriorClampEps) u = 1.0 - kPriorClampEps;
                    ei[k] = inverse_normal_cdf(u);
                }
            }
            break;
    }
}

void embed_backward(const NetworkSpec& spec, const Matrix& z, const Matrix& e,
                    const Matrix& de, Matrix& dz) {
    const int n = z.rows, d = z.cols;
    dz.resize(n, d);
    switch (spec.embedding) {
        case Embedding::identity:
            dz.data = de.data;
            break;
        case Embedding::periodic_sincos:
            for (int i = 0; i < n; ++i) {
                const double* ei = e.row(i);
                const double* dei = de.row(i);
                double* dzi = dz.row(i);
                for (int k = 0; k < d; ++k)
                    dzi[k] = kTwoPi * (dei[2 * k] * ei[2 * k + 1] - dei[2 * k + 1] * ei[2 * k]);
            }
            break;
        case Embedding::gaussian_icdf:
            for (int i = 0; i < n; ++i) {
                const double* zi = z.row(i);
                const double* ei = e.row(i);
                const double* dei = de.row(i);
                double* dzi = dz.row(i);
                for (int k = 0; k < d; ++k) {
                    if (zi[k] < kPriorClampEps || zi[k] > 1.0 - kPriorClampEps) {
                        dzi[k] = 0.0;
                    } else {
                        // d icdf(u) / du = 1 / pdf(icdf(u))
                        const double x = ei[k];
                        dzi[k] = dei[k] * 2.5066282746310005024 * std::exp(0.5 * x * x);
                    }
                }
            }
            break;
    }
}

void activation_forward(Activation act, Matrix& m) {
    const int n = static_cast<int>(m.data.size());
    if (act == Activation::relu) {
        kernels::ops().relu(n, m.data.data(), m.data.data());
    } else {
        for (double& v : m.data) v = std::tanh(v);
    }
}

}  // namespace

Network make_network(const NetworkSpec& spec) {
    validate_spec(spec);
    Network net;
    net.spec = spec;
    int off = 0;
    int in = spec.embedded_dim();
    for (int width : spec.layer_widths) {
        Network::LayerView lv;
        lv.in = in;
        lv.out = width;
        lv.w_off = off;
        off += in * width;
        lv.b_off = off;
        off += width;
        net.layers.push_back(lv);
        in = width;
    }
    net.params.assign(off, 0.0);
    net.grads.assign(off, 0.0);
    return net;
}

void init_params(Network& net, RandomStream& rng) {
    for (int l = 0; l < net.layer_count(); ++l) {
        const auto& lv = net.layers[l];
        const double bound = std::sqrt(6.0 / (lv.in + lv.out));
        double* w = net.w(l);
        for (int i = 0; i < lv.in * lv.out; ++i) w[i] = rng.uniform(-bound, bound);
        double* b = net.b(l);
        for (int i = 0; i < lv.out; ++i) b[i] = 0.0;
    }
}

Network init_network(const NetworkSpec& spec, std::uint64_t seed) {
    Network net = make_network(spec);
    RandomStream rng(seed);
    init_params(net, rng);
    return net;
}

void forward(const Network& net, const Matrix& z, Tape& tape) {
    if (z.cols != net.spec.input_dim)
        throw std::invalid_argument("forward: latent dimension mismatch (got " +
                                    std::to_string(z.cols) + ", expected " +
                                    std::to_string(net.spec.input_dim) + ")");
    const int n = z.rows;
    const int L = net.layer_count();
    const auto& k = kernels::ops();

    embed_forward(net.spec, z, tape.embedded);
    tape.hidden.resize(L - 1);

    const Matrix* cur = &tape.embedded;
    for (int l = 0; l < L; ++l) {
        const auto& lv = net.layers[l];
        Matrix& dst = (l == L - 1) ? tape.out : tape.hidden[l];
        dst.resize(n, lv.out);
        k.gemm_nn(cur->data.data(), net.w(l), dst.data.data(), n, lv.in, lv.out);
        k.add_bias_rows(dst.data.data(), net.b(l), n, lv.out);
        if (l < L - 1) activation_forward(net.spec.activation, dst);
        cur = &dst;
    }
    tape.batch = n;
}

Matrix forward(const Network& net, const Matrix& z) {
    Tape tape;
    forward(net, z, tape);
    return std::move(tape.out);
}

void backward(Network& net, const Matrix& z, const Tape& tape, const Matrix& dOut,
              Matrix* dInput) {
    const int n = z.rows;
    const int L = net.layer_count();
    if (tape.batch != n || tape.out.rows != n)
        throw std::logic_error("backward: tape does not match a forward pass over this batch");
    if (dOut.rows != n || dOut.cols != net.spec.output_dim())
        throw std::invalid_argument("backward: dOut shape mismatch");
    const auto& k = kernels::ops();

    Matrix dcur = dOut;
    Matrix dprev;
    for (int l = L - 1; l >= 0; --l) {
        const auto& lv = net.layers[l];
        const Matrix& input = (l == 0) ? tape.embedded : tape.hidden[l - 1];
        k.gemm_tn(input.data.data(), dcur.data.data(), net.gw(l), n, lv.in, lv.out);
        k.col_sum_acc(dcur.data.data(), net.gb(l), n, lv.out);

        if (l == 0 && dInput == nullptr) break;
        dprev.resize(n, lv.in);
        k.gemm_nt(dcur.data.data(), net.w(l), dprev.data.data(), n, lv.out, lv.in);
        if (l > 0) {
            // Through the hidden activation. For relu, gating on the
            // post-activation value matches gating on the pre-activation.
            const Matrix& post = tape.hidden[l - 1];
            const int cnt = static_cast<int>(post.data.size());
            if (net.spec.activation == Activation::relu)
                k.relu_grad(cnt, post.data.data(), dprev.data.data(), dprev.data.data());
            else
                k.tanh_grad(cnt, post.data.data(), dprev.data.data(), dprev.data.data());
        }
        std::swap(dcur, dprev);
    }
    if (dInput != nullptr) embed_backward(net.spec, z, tape.embedded, dcur, *dInput);
}

AdamState make_adam_state(int n, double lr) {
    AdamState st;
    st.lr = lr;
    st.m.assign(n, 0.0);
    st.v.assign(n, 0.0);
    return st;
}

void adam_step(Network& net, AdamState& state) {
    const int n = net.param_count();
    if (static_cast<int>(state.m.size()) != n)
        throw std::invalid_argument("adam_step: state size mismatch");
    state.step += 1;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (int i = 0; i < n; ++i) {
        const double g = net.grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        const double mhat = state.m[i] / c1;
        const double vhat = state.v[i] / c2;
        net.params[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
    std::fill(net.grads.begin(), net.grads.end(), 0.0);
}

void head_decompose(const NetworkSpec& spec, const double* out, double* t, double& s) {
    const int D = spec.output_dim();
    if (spec.head == Head::bernoulli_logits) {
        double acc = 0.0;
        for (int k = 0; k < D; ++k) {
            double lp, l1p;
            bernoulli_terms(out[k], lp, l1p);
            t[k] = lp - l1p;
            acc += l1p;
        }
        s = acc;
    } else {
        const double inv_var = 1.0 / spec.gaussian_variance;
        for (int k = 0; k < D; ++k) t[k] = out[k] * inv_var;
        const double sq = kernels::ops().dot(D, out, out);
        s = -0.5 * sq * inv_var -
            0.5 * D * std::log(kTwoPi * spec.gaussian_variance);
    }
}

double head_datum_term(const NetworkSpec& spec, const double* x) {
    if (spec.head == Head::bernoulli_logits) return 0.0;
    const int D = spec.output_dim();
    return -0.5 * kernels::ops().dot(D, x, x) / spec.gaussian_variance;
}

double log_likelihood(const NetworkSpec& spec, const double* out, const double* x) {
    const int D = spec.output_dim();
    std::vector<double> t(D);
    double s;
    head_decompose(spec, out, t.data(), s);
    return (kernels::ops().dot(D, x, t.data()) + s) + head_datum_term(spec, x);
}

std::vector<double> log_likelihood_rows(const NetworkSpec& spec, const Matrix& out,
                                        const Matrix& x) {
    if (out.rows != x.rows || out.cols != x.cols)
        throw std::invalid_argument("log_likelihood_rows: shape mismatch");
    std::vector<double> ll(x.rows);
    for (int i = 0; i < x.rows; ++i) ll[i] = log_likelihood(spec, out.row(i), x.row(i));
    return ll;
}

Matrix log_likelihood_grid(const NetworkSpec& spec, const Matrix& out, const Matrix& x) {
    const int D = spec.output_dim();
    if (out.cols != D || x.cols != D)
        throw std::invalid_argument("log_likelihood_grid: output width mismatch");
    const int m = out.rows, n = x.rows;
    const auto& k = kernels::ops();

    Matrix tmat(m, D);
    std::vector<double> s(m);
    for (int j = 0; j < m; ++j) head_decompose(spec, out.row(j), tmat.row(j), s[j]);

    Matrix ll(n, m);
    k.gemm_nt(x.data.data(), tmat.data.data(), ll.data.data(), n, D, m);
    for (int i = 0; i < n; ++i) {
        const double datum = head_datum_term(spec, x.row(i));
        double* row = ll.row(i);
        for (int j = 0; j < m; ++j) row[j] = (row[j] + s[j]) + datum;
    }
    return ll;
}

void head_weighted_backward(const NetworkSpec& spec, const Matrix& out, const Matrix& x,
                            const Matrix& weights, Matrix& dOut) {
    const int n = x.rows, m = out.rows, D = out.cols;
    if (weights.rows != n || weights.cols != m || dOut.rows != m || dOut.cols != D)
        throw std::invalid_argument("head_weighted_backward: shape mismatch");
    const auto& k = kernels::ops();

    // G = W^T X and per-point total weight.
    Matrix g(m, D);
    k.gemm_tn(weights.data.data(), x.data.data(), g.data.data(), n, m, D);
    std::vector<double> colw(m, 0.0);
    k.col_sum_acc(weights.data.data(), colw.data(), n, m);

    if (spec.head == Head::bernoulli_logits) {
        for (int j = 0; j < m; ++j) {
            const double* oj = out.row(j);
            const double* gj = g.row(j);
            double* dj = dOut.row(j);
            for (int c = 0; c < D; ++c) {
                double lp, l1p;
                if (bernoulli_terms(oj[c], lp, l1p)) continue;  // clamp active
                const double p = std::exp(lp);
                dj[c] += gj[c] - colw[j] * p;
            }
        }
    } else {
        const double inv_var = 1.0 / spec.gaussian_variance;
        for (int j = 0; j < m; ++j) {
            const double* oj = out.row(j);
            const double* gj = g.row(j);
            double* dj = dOut.row(j);
            for (int c = 0; c < D; ++c) dj[c] += (gj[c] - colw[j] * oj[c]) * inv_var;
        }
    }
}

void head_backward_rows(const NetworkSpec& spec, const Matrix& out, const Matrix& x,
                        const std::vector<double>& scale, Matrix& dOut) {
    const int n = x.rows, D = out.cols;
    if (out.rows != n || static_cast<int>(scale.size()) != n || dOut.rows != n ||
        dOut.cols != D)
        throw std::invalid_argument("head_backward_rows: shape mismatch");

    if (spec.head == Head::bernoulli_logits) {
        for (int i = 0; i < n; ++i) {
            const double* oi = out.row(i);
            const double* xi = x.row(i);
            double* di = dOut.row(i);
            for (int c = 0; c < D; ++c) {
                double lp, l1p;
                if (bernoulli_terms(oi[c], lp, l1p)) continue;
                di[c] += scale[i] * (xi[c] - std::exp(lp));
            }
        }
    } else {
        const double inv_var = 1.0 / spec.gaussian_variance;
        for (int i = 0; i < n; ++i) {
            const double* oi = out.row(i);
            const double* xi = x.row(i);
            double* di = dOut.row(i);
            for (int c = 0; c < D; ++c) di[c] += scale[i] * (xi[c] - oi[c]) * inv_var;
        }
    }
}

Matrix head_mean(const NetworkSpec& spec, const Matrix& out) {
    if (spec.head == Head::gaussian_mean) return out;
    Matrix p = out;
    for (double& v : p.data) v = 1.0 / (1.0 + std::exp(-v));
    return p;
}

}  // namespace qlvm
