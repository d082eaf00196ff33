#include "qlvm/qlvm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numeric>
#include <string>

#include "qlvm/errors.hpp"
#include "qlvm/kernels.hpp"

namespace qlvm {

namespace {

constexpr double kTwoPi = 6.28318530717958647692;

// Row-wise log-sum-exp with max subtraction.
double logsumexp_row(const double* v, int m) {
    double mx = v[0];
    for (int j = 1; j < m; ++j) mx = std::max(mx, v[j]);
    if (!std::isfinite(mx)) return mx;  // all -inf, or a nan/inf to report upstream
    double acc = 0.0;
    for (int j = 0; j < m; ++j) acc += std::exp(v[j] - mx);
    return mx + std::log(acc);
}

Matrix decoder_inputs(const PointSet& points, const PriorTransform& prior) {
    return apply_prior(points, prior);
}

double max_abs(const Matrix& m) {
    double v = 0.0;
    for (double x : m.data) v = std::max(v, std::fabs(x));
    return v;
}

}  // namespace

QmcEvidence qmc_log_evidence(const Network& net, const Matrix& x, const PointSet& points,
                             const PriorTransform& prior) {
    if (points.count() < 1) throw std::invalid_argument("qmc_log_evidence: empty point set");
    const int m = static_cast<int>(points.count());
    const Matrix latents = decoder_inputs(points, prior);
    const Matrix out = forward(net, latents);
    const Matrix ll = log_likelihood_grid(net.spec, out, x);

    QmcEvidence ev;
    ev.per_datum.resize(x.rows);
    const double logm = std::log(static_cast<double>(m));
    double acc = 0.0;
    for (int i = 0; i < x.rows; ++i) {
        ev.per_datum[i] = logsumexp_row(ll.row(i), m) - logm;
        acc += ev.per_datum[i];
    }
    ev.batch_mean = x.rows > 0 ? acc / x.rows : 0.0;
    return ev;
}

TrainResult train(const TrainConfig& config, const Matrix& data, Network& net,
                  AdamState& adam) {
    if (config.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (config.batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
    if (data.rows < 1) throw std::invalid_argument("train: empty dataset");
    if (data.cols != net.spec.output_dim())
        throw std::invalid_argument("train: data width does not match the decoder output");

    const int n = data.rows;
    const int m = static_cast<int>(config.rule.count);
    adam.lr = config.learning_rate;
    RandomStream shuffle_rng(derive_seed(config.seed, 1));
    RandomStream shift_rng(derive_seed(config.seed, 2));

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    result.epoch_objective.reserve(config.epochs);
    Tape tape;
    Matrix xb;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        for (int i = n - 1; i > 0; --i)
            std::swap(order[i],
                      order[static_cast<int>(shuffle_rng.below(static_cast<std::uint64_t>(i) + 1))]);

        double epoch_acc = 0.0;
        int batch_index = 0;
        for (int start = 0; start < n; start += config.batch_size, ++batch_index) {
            const int bn = std::min(config.batch_size, n - start);
            xb.resize(bn, data.cols);
            for (int i = 0; i < bn; ++i)
                std::memcpy(xb.row(i), data.row(order[start + i]),
                            sizeof(double) * static_cast<std::size_t>(data.cols));

            const PointSet points = generate_points(config.rule, config.mode, shift_rng);
            const Matrix latents = decoder_inputs(points, config.prior);
            forward(net, latents, tape);
            const Matrix ll = log_likelihood_grid(net.spec, tape.out, xb);

            const double logm = std::log(static_cast<double>(m));
            Matrix weights(bn, m);
            double batch_acc = 0.0;
            for (int i = 0; i < bn; ++i) {
                const double* row = ll.row(i);
                const double lse = logsumexp_row(row, m);
                batch_acc += lse - logm;
                double* wrow = weights.row(i);
                const double scale = -1.0 / bn;  // minimize the negative mean bound
                for (int j = 0; j < m; ++j) wrow[j] = scale * std::exp(row[j] - lse);
            }
            if (!std::isfinite(batch_acc))
                throw numerical_error(
                    "training objective became non-finite at epoch " + std::to_string(epoch) +
                    ", batch " + std::to_string(batch_index) +
                    " (max |logit| = " + std::to_string(max_abs(tape.out)) + ")");
            epoch_acc += batch_acc;

            Matrix dOut(m, data.cols);
            head_weighted_backward(net.spec, tape.out, xb, weights, dOut);
            backward(net, latents, tape, dOut);
            adam_step(net, adam);
        }
        result.epoch_objective.push_back(epoch_acc / n);
        result.epoch_seconds.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return result;
}

PosteriorTable posterior_from_loglik(std::shared_ptr<const PointSet> points, const Matrix& ll) {
    if (!points || ll.cols != points->count())
        throw std::invalid_argument("posterior_from_loglik: table width must equal point count");
    PosteriorTable table;
    table.points = std::move(points);
    table.weights.resize(ll.rows, ll.cols);
    const int m = ll.cols;
    for (int i = 0; i < ll.rows; ++i) {
        const double* row = ll.row(i);
        double* w = table.weights.row(i);
        const double lse = logsumexp_row(row, m);
        if (!std::isfinite(lse))
            throw numerical_error("posterior: row " + std::to_string(i) +
                                  " has no finite likelihood");
        double sum = 0.0;
        for (int j = 0; j < m; ++j) {
            w[j] = std::exp(row[j] - lse);
            sum += w[j];
        }
        for (int j = 0; j < m; ++j) w[j] /= sum;
    }
    return table;
}

PosteriorTable posterior_table(const Network& net, const Matrix& x,
                               std::shared_ptr<const PointSet> points,
                               const PriorTransform& prior) {
    if (!points || points->count() < 1)
        throw std::invalid_argument("posterior_table: empty point set");
    const Matrix latents = decoder_inputs(*points, prior);
    const Matrix out = forward(net, latents);
    const Matrix ll = log_likelihood_grid(net.spec, out, x);
    return posterior_from_loglik(std::move(points), ll);
}

LatentEmbedding embed(const PosteriorTable& table) {
    const PointSet& ps = *table.points;
    const int n = table.weights.rows;
    const int m = table.weights.cols;
    const int d = ps.dimension;

    LatentEmbedding emb;
    emb.mean.resize(n, d);
    emb.mode.resize(n, d);
    emb.mode_index.resize(n);
    emb.resultant.resize(n);

    for (int i = 0; i < n; ++i) {
        const double* w = table.weights.row(i);
        int best = 0;
        for (int j = 1; j < m; ++j)
            if (w[j] > w[best]) best = j;  // ties keep the lowest index
        emb.mode_index[i] = best;
        std::memcpy(emb.mode.row(i), ps.points.row(best),
                    sizeof(double) * static_cast<std::size_t>(d));

        double min_resultant = 1.0;
        for (int k = 0; k < d; ++k) {
            double s = 0.0, c = 0.0;
            for (int j = 0; j < m; ++j) {
                const double ang = kTwoPi * ps.points(j, k);
                s += w[j] * std::sin(ang);
                c += w[j] * std::cos(ang);
            }
            double v = std::atan2(s, c) / kTwoPi;
            v -= std::floor(v);
            if (v >= 1.0) v = 0.0;
            emb.mean(i, k) = v;
            min_resultant = std::min(min_resultant, std::hypot(s, c));
        }
        emb.resultant[i] = min_resultant;
    }
    return emb;
}

Matrix sample_prior(const Network& net, int n, std::uint64_t seed) {
    if (n < 0) throw std::invalid_argument("sample_prior: negative count");
    const int d = net.spec.input_dim;
    Matrix z(n, d);
    RandomStream rng(derive_seed(seed, 3));
    if (net.spec.embedding == Embedding::identity) {
        for (double& v : z.data) v = rng.normal();  // standard normal prior
    } else {
        for (double& v : z.data) v = rng.uniform01();
    }
    if (n == 0) return Matrix(0, net.spec.output_dim());
    return head_mean(net.spec, forward(net, z));
}

BoundReport evaluate_bound(const Network& net, const Matrix& x, const PointSet& points,
                           int n_shifts, std::uint64_t seed, const PriorTransform& prior) {
    if (n_shifts < 1) throw std::invalid_argument("evaluate_bound: need n_shifts >= 1");
    BoundReport report;
    if (n_shifts == 1) {
        report.per_shift.push_back(qmc_log_evidence(net, x, points, prior).batch_mean);
    } else {
        RandomStream rng(derive_seed(seed, 4));
        for (int s = 0; s < n_shifts; ++s) {
            const PointSet shifted = shift_points(points, rng);
            report.per_shift.push_back(qmc_log_evidence(net, x, shifted, prior).batch_mean);
        }
    }
    double acc = 0.0;
    for (double v : report.per_shift) acc += v;
    report.mean = acc / static_cast<double>(report.per_shift.size());
    if (report.per_shift.size() > 1) {
        double sq = 0.0;
        for (double v : report.per_shift) sq += (v - report.mean) * (v - report.mean);
        report.stddev = std::sqrt(sq / static_cast<double>(report.per_shift.size() - 1));
    }
    return report;
}

}  // namespace qlvm
