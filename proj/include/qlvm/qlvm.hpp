#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "qlvm/lattice.hpp"
#include "qlvm/matrix.hpp"
#include "qlvm/net.hpp"

namespace qlvm {

// Per-datum lattice estimates of the log evidence, in nats.
struct QmcEvidence {
    std::vector<double> per_datum;
    double batch_mean = 0.0;
};

// L(x_i) = LSE_j[ log p(x_i | z_j) ] - log m over the shared point set,
// computed with max subtraction. The prior transform maps [0,1)^d lattice
// coordinates into the decoder's input domain (pass-through for periodic and
// icdf-embedded decoders, inverse-normal mapping for identity decoders with
// a standard normal prior).
QmcEvidence qmc_log_evidence(const Network& net, const Matrix& x, const PointSet& points,
                             const PriorTransform& prior = {});

struct TrainConfig {
    LatticeRule rule;
    SampleMode mode = SampleMode::shifted_rqmc;
    PriorTransform prior;
    int epochs = 200;
    int batch_size = 100;
    std::uint64_t seed = 0;
    double learning_rate = 0.001;
};

struct TrainResult {
    std::vector<double> epoch_objective;  // mean training bound per epoch
    std::vector<double> epoch_seconds;
};

// Maximizes the mean lattice bound with Adam. One fresh point set per
// minibatch (a new random shift in shifted_rqmc mode, fresh draws in
// plain_mc mode), shared across the batch. Throws numerical_error with
// epoch/batch/max-logit diagnostics if the objective turns non-finite.
TrainResult train(const TrainConfig& config, const Matrix& data, Network& net,
                  AdamState& adam);

// Row i holds the posterior weights of datum i over the evaluation lattice:
// w_ij proportional to p(x_i | z_j), each row summing to 1.
struct PosteriorTable {
    std::shared_ptr<const PointSet> points;
    Matrix weights;
};

PosteriorTable posterior_from_loglik(std::shared_ptr<const PointSet> points, const Matrix& ll);
PosteriorTable posterior_table(const Network& net, const Matrix& x,
                               std::shared_ptr<const PointSet> points,
                               const PriorTransform& prior = {});

// Posterior summaries per datum. The mean is the circular mean per
// coordinate; the mode is the max-weight lattice point (ties to the lowest
// index); the concentration diagnostic is the minimum resultant length over
// coordinates (1 = point mass, 0 = no preferred direction).
struct LatentEmbedding {
    Matrix mean;
    std::vector<int> mode_index;
    Matrix mode;
    std::vector<double> resultant;
};

LatentEmbedding embed(const PosteriorTable& table);

// n independent prior draws decoded to mean outputs (probabilities for
// bernoulli heads). Identity-embedding decoders sample a standard normal
// prior; periodic and icdf-embedded decoders sample uniform on [0,1)^d.
Matrix sample_prior(const Network& net, int n, std::uint64_t seed);

struct BoundReport {
    double mean = 0.0;
    double stddev = 0.0;
    std::vector<double> per_shift;
};

// Held-out bound (mean over x of the per-datum evidence). n_shifts == 1
// evaluates the provided point set as is; n_shifts > 1 averages over fresh
// random shifts of it and reports the sample std across shifts.
BoundReport evaluate_bound(const Network& net, const Matrix& x, const PointSet& points,
                           int n_shifts, std::uint64_t seed, const PriorTransform& prior = {});

}  // namespace qlvm
