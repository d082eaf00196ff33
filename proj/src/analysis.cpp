#include "qlvm/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <queue>
#include <stdexcept>

namespace qlvm {

namespace {

double wrap_unit(double v) {
    v -= std::floor(v);
    return v >= 1.0 ? 0.0 : v;
}

// Difference b - a wrapped into [-0.5, 0.5).
double wrap_diff(double a, double b) {
    double d = b - a;
    d -= std::floor(d + 0.5);
    return d;
}

void validate_field(const DensityField& field) {
    if (!field.points || field.points->count() < 1)
        throw std::invalid_argument("density field has no evaluation points");
    if (static_cast<int>(field.weights.size()) != field.points->count())
        throw std::invalid_argument("density field weight count does not match its points");
}

}  // namespace

double toroidal_distance(const double* a, const double* b, int d) {
    double acc = 0.0;
    for (int k = 0; k < d; ++k) {
        const double w = std::fabs(a[k] - b[k]);
        const double t = std::min(w, 1.0 - w);
        acc += t * t;
    }
    return std::sqrt(acc);
}

DensityField aggregate_posterior(const PosteriorTable& table) {
    return aggregate_posterior(std::vector<PosteriorTable>{table});
}

DensityField aggregate_posterior(const std::vector<PosteriorTable>& tables) {
    if (tables.empty()) throw std::invalid_argument("aggregate_posterior: no tables");
    const auto& points = tables.front().points;
    if (!points) throw std::invalid_argument("aggregate_posterior: table without points");
    const int m = points->count();
    std::int64_t n = 0;
    for (const auto& t : tables) {
        if (t.points.get() != points.get())
            throw std::invalid_argument(
                "aggregate_posterior: tables use different evaluation point sets");
        if (t.weights.cols != m)
            throw std::invalid_argument("aggregate_posterior: weight width mismatch");
        n += t.weights.rows;
    }
    if (n == 0) throw std::invalid_argument("aggregate_posterior: no data rows");

    DensityField field;
    field.points = points;
    field.weights.assign(m, 0.0);
    for (const auto& t : tables)
        for (int i = 0; i < t.weights.rows; ++i) {
            const double* row = t.weights.row(i);
            for (int j = 0; j < m; ++j) field.weights[j] += row[j];
        }
    const double inv = 1.0 / static_cast<double>(n);
    for (double& w : field.weights) w *= inv;
    return field;
}

namespace {

// One weighted mean-shift update; returns the kernel-density mass at cur and
// leaves the updated position in next. A zero mass means the truncated
// neighborhood was empty.
double shift_once(const DensityField& field, const double* cur, double* next, double h) {
    const Matrix& pts = field.points->points;
    const int m = pts.rows, d = pts.cols;
    const double r2 = 9.0 * h * h;
    const double inv_h2 = 1.0 / (h * h);
    double wsum = 0.0;
    double acc[3] = {0.0, 0.0, 0.0};
    for (int j = 0; j < m; ++j) {
        const double* p = pts.row(j);
        double diff[3];
        double d2 = 0.0;
        for (int k = 0; k < d; ++k) {
            diff[k] = wrap_diff(cur[k], p[k]);
            d2 += diff[k] * diff[k];
        }
        if (d2 > r2) continue;
        const double w = field.weights[j] * std::exp(-d2 * inv_h2);
        wsum += w;
        for (int k = 0; k < d; ++k) acc[k] += w * (cur[k] + diff[k]);
    }
    if (wsum > 0.0)
        for (int k = 0; k < d; ++k) next[k] = wrap_unit(acc[k] / wsum);
    return wsum;
}

}  // namespace

ClusterResult mean_shift(const DensityField& field, double bandwidth) {
    validate_field(field);
    return mean_shift(field, bandwidth, field.points->points);
}

ClusterResult mean_shift(const DensityField& field, double bandwidth, const Matrix& seeds) {
    validate_field(field);
    if (!(bandwidth > 0.0)) throw std::invalid_argument("mean_shift: bandwidth must be > 0");
    const int d = field.points->dimension;
    if (seeds.cols != d) throw std::invalid_argument("mean_shift: seed dimension mismatch");
    const int s = seeds.rows;

    ClusterResult result;
    result.bandwidth = bandwidth;
    result.modes.resize(s, d);
    result.converged.assign(s, 0);
    result.assignment.assign(s, -1);
    std::vector<double> density(s, 0.0);

    for (int i = 0; i < s; ++i) {
        double cur[3] = {0.0, 0.0, 0.0};
        for (int k = 0; k < d; ++k) cur[k] = wrap_unit(seeds(i, k));
        bool ok = false;
        double mass = 0.0;
        for (int iter = 0; iter < kMeanShiftMaxIter; ++iter) {
            double next[3];
            mass = shift_once(field, cur, next, bandwidth);
            if (mass <= 0.0) break;
            const double step = toroidal_distance(cur, next, d);
            std::memcpy(cur, next, sizeof(double) * d);
            if (step < kMeanShiftTol) {
                ok = true;
                break;
            }
        }
        for (int k = 0; k < d; ++k) result.modes(i, k) = cur[k];
        result.converged[i] = ok ? 1 : 0;
        density[i] = ok ? mass : 0.0;
    }

    // Merge converged modes within one bandwidth, highest density first.
    std::vector<int> order;
    for (int i = 0; i < s; ++i)
        if (result.converged[i]) order.push_back(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (density[a] != density[b]) return density[a] > density[b];
        return a < b;
    });

    std::vector<int> rep;  // seed index backing each centroid
    for (int i : order) {
        int found = -1;
        for (int c = 0; c < static_cast<int>(rep.size()); ++c)
            if (toroidal_distance(result.modes.row(i), result.modes.row(rep[c]), d) <
                bandwidth) {
                found = c;
                break;
            }
        if (found < 0) {
            found = static_cast<int>(rep.size());
            rep.push_back(i);
        }
        result.assignment[i] = found;
    }
    result.centroids.resize(static_cast<int>(rep.size()), d);
    result.centroid_density.resize(rep.size());
    for (int c = 0; c < static_cast<int>(rep.size()); ++c) {
        std::memcpy(result.centroids.row(c), result.modes.row(rep[c]), sizeof(double) * d);
        result.centroid_density[c] = density[rep[c]];
    }
    return result;
}

JacobianField jacobian_frobenius(const Network& net, const Matrix& eval_points, double h_fd) {
    if (!(h_fd > 0.0) || h_fd > 0.01)
        throw std::invalid_argument("jacobian step must lie in (0, 0.01]");
    const int n = eval_points.rows, d = eval_points.cols;
    if (d != net.spec.input_dim)
        throw std::invalid_argument("jacobian evaluation points have the wrong dimension");

    JacobianField field;
    field.points = eval_points;
    field.norms.assign(n, 0.0);
    const double inv_2h = 1.0 / (2.0 * h_fd);
    Matrix zp = eval_points, zm = eval_points;
    for (int k = 0; k < d; ++k) {
        for (int i = 0; i < n; ++i) {
            zp(i, k) = eval_points(i, k) + h_fd;
            zm(i, k) = eval_points(i, k) - h_fd;
        }
        const Matrix fp = head_mean(net.spec, forward(net, zp));
        const Matrix fm = head_mean(net.spec, forward(net, zm));
        for (int i = 0; i < n; ++i) {
            const double* a = fp.row(i);
            const double* b = fm.row(i);
            double acc = 0.0;
            for (int c = 0; c < fp.cols; ++c) {
                const double g = (a[c] - b[c]) * inv_2h;
                acc += g * g;
            }
            field.norms[i] += acc;
        }
        for (int i = 0; i < n; ++i) {
            zp(i, k) = eval_points(i, k);
            zm(i, k) = eval_points(i, k);
        }
    }
    for (double& v : field.norms) v = std::sqrt(v);
    return field;
}

std::vector<double> smooth_field(const PointSet& points, const std::vector<double>& values,
                                 double bandwidth) {
    if (!(bandwidth > 0.0)) throw std::invalid_argument("smooth_field: bandwidth must be > 0");
    const int m = points.count(), d = points.dimension;
    if (static_cast<int>(values.size()) != m)
        throw std::invalid_argument("smooth_field: value count does not match the points");
    const double inv_2b2 = 1.0 / (2.0 * bandwidth * bandwidth);
    std::vector<double> out(m, 0.0);
    for (int i = 0; i < m; ++i) {
        double wsum = 0.0, acc = 0.0;
        const double* pi = points.points.row(i);
        for (int j = 0; j < m; ++j) {
            double d2 = 0.0;
            const double* pj = points.points.row(j);
            for (int k = 0; k < d; ++k) {
                const double w = std::fabs(pi[k] - pj[k]);
                const double t = std::min(w, 1.0 - w);
                d2 += t * t;
            }
            const double w = std::exp(-d2 * inv_2b2);
            wsum += w;
            acc += w * values[j];
        }
        out[i] = acc / wsum;
    }
    return out;
}

GeodesicPath geodesic(const DensityField& field, const double* source,
                      const double* destination, double epsilon) {
    validate_field(field);
    if (!(epsilon > 0.0)) throw std::invalid_argument("geodesic: epsilon must be > 0");
    const Matrix& pts = field.points->points;
    const int m = pts.rows, d = pts.cols;

    auto snap = [&](const double* q) {
        int best = 0;
        double best_d = toroidal_distance(q, pts.row(0), d);
        for (int j = 1; j < m; ++j) {
            const double dist = toroidal_distance(q, pts.row(j), d);
            if (dist < best_d) {
                best_d = dist;
                best = j;
            }
        }
        return best;
    };
    const int src = snap(source), dst = snap(destination);

    GeodesicPath path;
    if (src == dst) {
        path.node_indices = {src};
        return path;
    }

    // 8 nearest toroidal neighbors per node, ties broken by index.
    const int kn = std::min(8, m - 1);
    std::vector<int> nbr(static_cast<std::size_t>(m) * kn);
    std::vector<std::pair<double, int>> cand(m - 1);
    for (int i = 0; i < m; ++i) {
        int c = 0;
        for (int j = 0; j < m; ++j)
            if (j != i) cand[c++] = {toroidal_distance(pts.row(i), pts.row(j), d), j};
        std::partial_sort(cand.begin(), cand.begin() + kn, cand.end());
        for (int t = 0; t < kn; ++t) nbr[static_cast<std::size_t>(i) * kn + t] = cand[t].second;
    }

    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(m, inf);
    std::vector<int> parent(m, -1);
    std::vector<char> done(m, 0);
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<Item>> heap;
    dist[src] = 0.0;
    heap.push({0.0, src});
    while (!heap.empty()) {
        const auto [cost, u] = heap.top();
        heap.pop();
        if (done[u]) continue;
        done[u] = 1;
        if (u == dst) break;
        const double rho_u = field.weights[u];
        for (int t = 0; t < kn; ++t) {
            const int v = nbr[static_cast<std::size_t>(u) * kn + t];
            const double edge = toroidal_distance(pts.row(u), pts.row(v), d) * rho_u /
                                std::max(field.weights[v], epsilon);
            if (cost + edge < dist[v]) {
                dist[v] = cost + edge;
                parent[v] = u;
                heap.push({dist[v], v});
            }
        }
    }
    if (!std::isfinite(dist[dst]))
        throw std::logic_error("geodesic: destination unreachable in the lattice graph");

    for (int v = dst; v != -1; v = parent[v]) path.node_indices.push_back(v);
    std::reverse(path.node_indices.begin(), path.node_indices.end());
    path.cost = dist[dst];
    return path;
}

Matrix traversal(const Network& net, const double* start, const double* direction,
                 int n_steps) {
    if (n_steps < 1) throw std::invalid_argument("traversal needs at least one step");
    const int d = net.spec.input_dim;
    double norm = 0.0;
    for (int k = 0; k < d; ++k) norm += std::fabs(direction[k]);
    if (norm == 0.0) throw std::invalid_argument("traversal direction must be nonzero");

    Matrix z(n_steps, d);
    for (int t = 0; t < n_steps; ++t) {
        const double frac = static_cast<double>(t) / n_steps;
        for (int k = 0; k < d; ++k) z(t, k) = wrap_unit(start[k] + frac * direction[k]);
    }
    return head_mean(net.spec, forward(net, z));
}

}  // namespace qlvm
