#pragma once

#include <memory>
#include <vector>

#include "qlvm/lattice.hpp"
#include "qlvm/matrix.hpp"
#include "qlvm/net.hpp"
#include "qlvm/qlvm.hpp"

namespace qlvm {

// Euclidean norm of per-coordinate wrapped differences
// min(|a_k - b_k|, 1 - |a_k - b_k|); coordinates in [0,1).
double toroidal_distance(const double* a, const double* b, int d);

// Aggregate posterior density over the evaluation lattice: per-point weight
// is the mean posterior weight across the dataset. Nonnegative, sums to 1.
struct DensityField {
    std::shared_ptr<const PointSet> points;
    std::vector<double> weights;
};

DensityField aggregate_posterior(const PosteriorTable& table);
// Batched variant; every table must reference the same point set.
DensityField aggregate_posterior(const std::vector<PosteriorTable>& tables);

// Weighted mean-shift on the torus. Each seed iterates
//   z <- sum_{p in N} p * rho(p) * exp(-(dist/h)^2) / (normalizer)
// over the points within 3h of the current iterate, with neighbor
// coordinates unwrapped around the iterate before averaging. Iteration stops
// when a step moves less than 1e-6 or after 500 rounds; converged modes
// within h of each other merge, keeping the highest-density representative.
struct ClusterResult {
    Matrix centroids;                       // c x d, pairwise distances >= h
    std::vector<double> centroid_density;   // kernel density at each centroid
    Matrix modes;                           // per-seed converged point
    std::vector<char> converged;            // per-seed convergence flag
    std::vector<int> assignment;            // per-seed centroid index, -1 if none
    double bandwidth = 0.0;
};

inline constexpr int kMeanShiftMaxIter = 500;
inline constexpr double kMeanShiftTol = 1e-6;

// Seeds default to the evaluation lattice itself.
ClusterResult mean_shift(const DensityField& field, double bandwidth);
ClusterResult mean_shift(const DensityField& field, double bandwidth, const Matrix& seeds);

// Frobenius norm of the decoder Jacobian d head_mean / d z per evaluation
// point, by central finite differences with step h_fd in (0, 0.01].
struct JacobianField {
    Matrix points;
    std::vector<double> norms;
    std::vector<double> smoothed;  // empty until a smoothing pass fills it
    double smoothing_bandwidth = 0.0;
};

JacobianField jacobian_frobenius(const Network& net, const Matrix& eval_points,
                                 double h_fd = 1e-4);

// Gaussian-kernel average of per-point values over the toroidal metric,
// normalized per output point. On a lattice the kernel matrix is doubly
// stochastic, so the field mean is preserved.
std::vector<double> smooth_field(const PointSet& points, const std::vector<double>& values,
                                 double bandwidth);

// Shortest path through the lattice graph (8 nearest toroidal neighbors per
// node) under the directed edge cost dist(u,v) * rho(u) / max(rho(v), eps):
// leaving high density for low density is expensive. Source and destination
// snap to their nearest lattice points.
struct GeodesicPath {
    std::vector<int> node_indices;
    double cost = 0.0;
};

GeodesicPath geodesic(const DensityField& field, const double* source,
                      const double* destination, double epsilon = 1e-12);

// Decoded mean outputs along start + (t / n_steps) * direction (mod 1) for
// t = 0 .. n_steps-1: one full period when direction has integer entries.
Matrix traversal(const Network& net, const double* start, const double* direction,
                 int n_steps);

}  // namespace qlvm
