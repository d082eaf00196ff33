#include "qlvm/lattice.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>
#include <string>

namespace qlvm {

namespace {

// Smallest integer figure of merit over nonzero lattice points. Pairwise
// distances on a rank-1 lattice reduce to distances from the origin because
// u_j - u_l = u_(j-l) mod 1. Kept in integer arithmetic so ties between
// mirrored generators (a and m-a) are exact and the smallest-a tie break is
// deterministic.
std::int64_t min_sq_merit(std::int64_t m, const std::vector<std::int64_t>& b) {
    std::int64_t best = -1;
    for (std::int64_t j = 1; j < m; ++j) {
        std::int64_t sq = 0;
        for (std::int64_t bk : b) {
            std::int64_t v = (j * bk) % m;
            std::int64_t w = v < m - v ? v : m - v;
            sq += w * w;
        }
        if (best < 0 || sq < best) best = sq;
    }
    return best;
}

}  // namespace

LatticeRule fibonacci_rule(int k) {
    if (k < 3)
        throw std::invalid_argument("fibonacci_rule: index k must be >= 3 (k=" +
                                    std::to_string(k) + " gives m <= 1)");
    if (k > 90) throw std::invalid_argument("fibonacci_rule: index k too large for 64-bit m");
    std::int64_t prev = 1, cur = 1;  // Fib(1), Fib(2)
    for (int i = 3; i <= k; ++i) {
        std::int64_t next = prev + cur;
        prev = cur;
        cur = next;
    }
    LatticeRule rule;
    rule.dimension = 2;
    rule.count = cur;
    rule.generator = {1, prev % cur};
    return rule;
}

LatticeRule korobov_rule(std::int64_t m, std::int64_t a, int d) {
    if (d < 1) throw std::invalid_argument("korobov_rule: dimension must be >= 1");
    if (m < 1) throw std::invalid_argument("korobov_rule: point count must be >= 1");
    if (a < 2 || a > m - 1)
        throw std::invalid_argument("korobov_rule: base a=" + std::to_string(a) +
                                    " outside {2..m-1} for m=" + std::to_string(m));
    LatticeRule rule;
    rule.dimension = d;
    rule.count = m;
    rule.generator.resize(d);
    std::int64_t pw = 1;
    for (int k = 0; k < d; ++k) {
        rule.generator[k] = pw;
        pw = (pw * a) % m;
    }
    return rule;
}

LatticeRule korobov_search(std::int64_t m, int d) {
    if (m < 3) throw std::invalid_argument("korobov_search: need m >= 3");
    if (d < 1) throw std::invalid_argument("korobov_search: dimension must be >= 1");
    std::int64_t best_a = 2;
    std::int64_t best_merit = -1;
    for (std::int64_t a = 2; a <= m - 1; ++a) {
        std::vector<std::int64_t> b(d);
        std::int64_t pw = 1;
        for (int k = 0; k < d; ++k) {
            b[k] = pw;
            pw = (pw * a) % m;
        }
        std::int64_t merit = min_sq_merit(m, b);
        if (merit > best_merit) {
            best_merit = merit;
            best_a = a;
        }
    }
    return korobov_rule(m, best_a, d);
}

double lattice_min_distance(const LatticeRule& rule) {
    std::int64_t sq = min_sq_merit(rule.count, rule.generator);
    if (sq < 0) return 0.0;
    return std::sqrt(static_cast<double>(sq)) / static_cast<double>(rule.count);
}

PointSet generate_points(const LatticeRule& rule, SampleMode mode, RandomStream& rng) {
    if (rule.count < 1 || rule.dimension < 1 ||
        rule.generator.size() != static_cast<std::size_t>(rule.dimension))
        throw std::invalid_argument("generate_points: malformed lattice rule");
    const std::int64_t m = rule.count;
    const int d = rule.dimension;
    PointSet ps;
    ps.dimension = d;
    ps.mode = mode;
    ps.points.resize(static_cast<int>(m), d);

    if (mode == SampleMode::plain_mc) {
        for (std::int64_t j = 0; j < m; ++j) {
            double* row = ps.points.row(static_cast<int>(j));
            for (int k = 0; k < d; ++k) row[k] = rng.uniform01();
        }
        return ps;
    }

    if (mode == SampleMode::shifted_rqmc) {
        ps.shift.resize(d);
        for (int k = 0; k < d; ++k) ps.shift[k] = rng.uniform01();
    }
    for (std::int64_t j = 0; j < m; ++j) {
        double* row = ps.points.row(static_cast<int>(j));
        for (int k = 0; k < d; ++k) {
            double u = static_cast<double>((j * rule.generator[k]) % m) / static_cast<double>(m);
            if (mode == SampleMode::shifted_rqmc) {
                double z = u + ps.shift[k];
                z -= std::floor(z);
                if (z >= 1.0) z = 0.0;
                u = z;
            }
            row[k] = u;
        }
    }
    return ps;
}

PointSet generate_points(const LatticeRule& rule, SampleMode mode, std::uint64_t seed) {
    RandomStream rng(seed);
    return generate_points(rule, mode, rng);
}

PointSet shift_points(const PointSet& base, RandomStream& rng) {
    PointSet out;
    out.dimension = base.dimension;
    out.mode = SampleMode::shifted_rqmc;
    out.shift.resize(base.dimension);
    for (int k = 0; k < base.dimension; ++k) out.shift[k] = rng.uniform01();
    out.points.resize(base.points.rows, base.points.cols);
    for (int j = 0; j < base.points.rows; ++j) {
        const double* src = base.points.row(j);
        double* dst = out.points.row(j);
        for (int k = 0; k < base.dimension; ++k) {
            double v = src[k] + out.shift[k];
            v -= std::floor(v);
            if (v >= 1.0) v = 0.0;
            dst[k] = v;
        }
    }
    return out;
}

Matrix apply_prior(const PointSet& points, const PriorTransform& transform) {
    const int d = points.dimension;
    Matrix out = points.points;
    if (transform.kind != PriorKind::gaussian_icdf) return out;

    for (int i = 0; i < out.rows; ++i) {
        double* row = out.row(i);
        for (int k = 0; k < d; ++k) {
            double u = row[k];
            if (u < kPriorClampEps) u = kPriorClampEps;
            if (u > 1.0 - kPriorClampEps) u = 1.0 - kPriorClampEps;
            double x = inverse_normal_cdf(u);
            double loc = transform.location.empty() ? 0.0 : transform.location[k];
            double scale = transform.scale.empty() ? 1.0 : transform.scale[k];
            double v = loc + scale * x;
            if (!std::isfinite(v))
                throw std::logic_error("apply_prior: non-finite output after clamping");
            row[k] = v;
        }
    }
    return out;
}

double inverse_normal_cdf(double u) {
    if (!(u > 0.0 && u < 1.0))
        throw std::invalid_argument("inverse_normal_cdf: argument must lie strictly in (0,1)");

    // Acklam's rational approximation, |relative error| < 1.15e-9.
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double dd[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425;
    double x;
    if (u < plow) {
        double q = std::sqrt(-2.0 * std::log(u));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1.0);
    } else if (u <= 1.0 - plow) {
        double q = u - 0.5;
        double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        double q = std::sqrt(-2.0 * std::log(1.0 - u));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1.0);
    }

    // One Halley refinement against the complementary error function.
    const double sqrt2pi = 2.5066282746310005024;
    double e = 0.5 * std::erfc(-x / 1.4142135623730950488) - u;
    double t = e * sqrt2pi * std::exp(0.5 * x * x);
    x -= t / (1.0 + 0.5 * x * t);

    assert(std::isfinite(x));
    return x;
}

}  // namespace qlvm
