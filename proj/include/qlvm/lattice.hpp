#pragma once

#include <cstdint>
#include <vector>

#include "qlvm/matrix.hpp"
#include "qlvm/rng.hpp"

namespace qlvm {

// Rank-1 lattice rule: u_j = (j * b / m) mod 1 for j = 0..m-1.
struct LatticeRule {
    int dimension = 0;
    std::int64_t count = 0;                // m
    std::vector<std::int64_t> generator;   // b, b[0] == 1, entries reduced mod m
};

enum class SampleMode { plain_mc, fixed_qmc, shifted_rqmc };

// Realized latent sample set on [0,1)^d.
struct PointSet {
    int dimension = 0;
    SampleMode mode = SampleMode::fixed_qmc;
    Matrix points;               // count x dimension
    std::vector<double> shift;   // dimension entries for shifted_rqmc, else empty

    std::int64_t count() const { return points.rows; }
};

enum class PriorKind { uniform_torus, gaussian_icdf, identity_nonperiodic };

struct PriorTransform {
    PriorKind kind = PriorKind::uniform_torus;
    std::vector<double> location;  // per-dimension, gaussian_icdf only; empty = zeros
    std::vector<double> scale;     // per-dimension, gaussian_icdf only; empty = ones
};

// 2D rule with m = Fib(k) and b = [1, Fib(k-1)]. Requires k >= 3.
LatticeRule fibonacci_rule(int k);

// b = [1, a, a^2 mod m, ..., a^(d-1) mod m]. Requires 2 <= a <= m-1.
LatticeRule korobov_rule(std::int64_t m, std::int64_t a, int d);

// Exhaustive search over a in {2..m-1} maximizing the minimum pairwise
// toroidal distance of the generated point set; ties resolved to smallest a.
LatticeRule korobov_search(std::int64_t m, int d);

// Minimum pairwise toroidal distance of the rule's point set.
double lattice_min_distance(const LatticeRule& rule);

PointSet generate_points(const LatticeRule& rule, SampleMode mode, RandomStream& rng);
PointSet generate_points(const LatticeRule& rule, SampleMode mode, std::uint64_t seed);

// Applies a fresh uniform shift modulo 1 to an existing point set. A shifted
// lattice stays a shifted copy of the same rule; plain-MC points stay
// uniform.
PointSet shift_points(const PointSet& base, RandomStream& rng);

// Coordinates are clamped to [eps, 1-eps] before a gaussian_icdf transform.
inline constexpr double kPriorClampEps = 1e-7;

// Maps points through the prior transform (inversion method). uniform_torus
// and identity_nonperiodic return the coordinates unchanged.
Matrix apply_prior(const PointSet& points, const PriorTransform& transform);

// Inverse standard normal CDF on (0,1). Rational approximation refined by a
// Halley step against erfc; absolute error is far below the 1e-9 budget.
double inverse_normal_cdf(double u);

}  // namespace qlvm
