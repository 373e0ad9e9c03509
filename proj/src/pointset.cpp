#include "pcrec/pointset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "pcrec/rng.hpp"

namespace pcrec {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double sq_dist(const std::array<double, 3>& p, const std::array<double, 3>& q) {
    const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
    return dx * dx + dy * dy + dz * dz;
}

// Sum in ascending order so the result is independent of input row order.
double stable_sum(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc;
}

void nearest_neighbors(const std::array<double, 3>* a, std::size_t n,
                       const std::array<double, 3>* b, std::size_t m,
                       std::vector<std::size_t>& nn, std::vector<double>& dist_sq) {
    nn.resize(n);
    dist_sq.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double best = kInf;
        std::size_t best_j = 0;
        for (std::size_t j = 0; j < m; ++j) {
            const double d = sq_dist(a[i], b[j]);
            if (d < best) {
                best = d;
                best_j = j;
            }
        }
        nn[i] = best_j;
        dist_sq[i] = best;
    }
}

const std::array<double, 3>* rows_of(const Tensor& t, const char* op) {
    if (t.ndim() != 2 || t.cols() != 3)
        throw std::invalid_argument(std::string(op) + ": tensor must be [n, 3]");
    if (t.rows() == 0) throw std::invalid_argument(std::string(op) + ": empty cloud");
    return reinterpret_cast<const std::array<double, 3>*>(t.data());
}

// Exact square assignment via shortest augmenting paths with potentials.
std::vector<std::size_t> solve_assignment_exact(const std::vector<double>& cost, std::size_t n) {
    const std::size_t none = 0;
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> p(n + 1, none), way(n + 1, none);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, kInf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = kInf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != none);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> row_to_col(n, 0);
    for (std::size_t j = 1; j <= n; ++j)
        if (p[j] != none) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

double assignment_cost(const std::array<double, 3>* a, const std::array<double, 3>* b,
                       const std::vector<std::size_t>& mapping) {
    std::vector<double> terms(mapping.size());
    for (std::size_t i = 0; i < mapping.size(); ++i)
        terms[i] = std::sqrt(sq_dist(a[i], b[mapping[i]]));
    return stable_sum(std::move(terms));
}

// Forward auction for the minimization assignment problem with epsilon
// scaling and persistent prices. Deterministic: bidders are processed in
// FIFO order and ties go to the lowest target index.
Assignment auction_assignment(const std::array<double, 3>* a, const std::array<double, 3>* b,
                              std::size_t n, double eps_rel) {
    Assignment result;
    if (n == 1) {
        result.mapping = {0};
        result.cost = std::sqrt(sq_dist(a[0], b[0]));
        return result;
    }

    double max_cost = 0.0;
    const bool use_matrix = n <= 2048;
    std::vector<double> cost;
    if (use_matrix) {
        cost.resize(n * n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const double c = std::sqrt(sq_dist(a[i], b[j]));
                cost[i * n + j] = c;
                max_cost = std::max(max_cost, c);
            }
    } else {
        for (std::size_t i = 0; i < n; ++i) max_cost = std::max(max_cost, std::sqrt(sq_dist(a[i], b[0])));
        for (std::size_t j = 0; j < n; ++j) max_cost = std::max(max_cost, std::sqrt(sq_dist(a[0], b[j])));
    }
    auto cost_at = [&](std::size_t i, std::size_t j) {
        return use_matrix ? cost[i * n + j] : std::sqrt(sq_dist(a[i], b[j]));
    };

    const double eps_floor = 1e-13 * (max_cost + 1.0);
    double eps = std::max(max_cost / 5.0, eps_floor);
    std::vector<double> price(n, 0.0);
    std::vector<std::ptrdiff_t> owner(n);   // target -> bidder
    std::vector<std::ptrdiff_t> object(n);  // bidder -> target

    const std::size_t bid_cap = 2'000'000 + 2000 * n;
    std::size_t bids = 0;
    double best_feasible = kInf;

    while (true) {
        std::fill(owner.begin(), owner.end(), -1);
        std::fill(object.begin(), object.end(), -1);
        std::vector<std::size_t> queue(n);
        for (std::size_t i = 0; i < n; ++i) queue[i] = i;
        std::size_t head = 0;

        while (head < queue.size()) {
            const std::size_t i = queue[head++];
            if (object[i] != -1) continue;
            // value of target j for bidder i is -(cost + price); find the two best
            double best = -kInf, second = -kInf;
            std::size_t best_j = 0;
            for (std::size_t j = 0; j < n; ++j) {
                const double value = -(cost_at(i, j) + price[j]);
                if (value > best) {
                    second = best;
                    best = value;
                    best_j = j;
                } else if (value > second) {
                    second = value;
                }
            }
            const double increment = (best - second) + eps;
            price[best_j] += increment;
            const std::ptrdiff_t prev = owner[best_j];
            owner[best_j] = std::ptrdiff_t(i);
            object[i] = std::ptrdiff_t(best_j);
            if (prev != -1) {
                object[prev] = -1;
                queue.push_back(std::size_t(prev));
            }
            if (++bids > bid_cap) {
                throw std::runtime_error(
                    "emd_approx: auction did not converge within the iteration cap; "
                    "best feasible cost " +
                    (best_feasible == kInf ? std::string("unavailable")
                                           : std::to_string(best_feasible)));
            }
        }

        std::vector<std::size_t> mapping(n);
        for (std::size_t i = 0; i < n; ++i) mapping[i] = std::size_t(object[i]);
        const double feasible = assignment_cost(a, b, mapping);
        if (feasible < best_feasible) {
            best_feasible = feasible;
            result.mapping = std::move(mapping);
            result.cost = feasible;
        }
        // cost(assignment) <= cost(optimal) + n * eps, so this guarantees the
        // relative slack; the floor handles optima at or near zero
        if (best_feasible == 0.0) break;
        if (double(n) * eps <= 0.5 * eps_rel * best_feasible || eps <= eps_floor) break;
        eps = std::max(eps / 5.0, eps_floor);
    }
    return result;
}

}  // namespace

Tensor PointCloud::to_tensor() const {
    std::vector<double> flat(pts.size() * 3);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        flat[i * 3 + 0] = pts[i][0];
        flat[i * 3 + 1] = pts[i][1];
        flat[i * 3 + 2] = pts[i][2];
    }
    return Tensor({pts.size(), 3}, std::move(flat));
}

PointCloud PointCloud::from_tensor(const Tensor& t) {
    const std::array<double, 3>* rows = rows_of(t, "PointCloud::from_tensor");
    return PointCloud(std::vector<std::array<double, 3>>(rows, rows + t.rows()));
}

double triangle_area(const std::array<double, 3>& a, const std::array<double, 3>& b,
                     const std::array<double, 3>& c) {
    const double ux = b[0] - a[0], uy = b[1] - a[1], uz = b[2] - a[2];
    const double vx = c[0] - a[0], vy = c[1] - a[1], vz = c[2] - a[2];
    const double cx = uy * vz - uz * vy;
    const double cy = uz * vx - ux * vz;
    const double cz = ux * vy - uy * vx;
    return 0.5 * std::sqrt(cx * cx + cy * cy + cz * cz);
}

double chamfer(const PointCloud& a, const PointCloud& b) {
    if (a.size() == 0 || b.size() == 0) throw std::invalid_argument("chamfer: empty cloud");
    std::vector<std::size_t> nn;
    std::vector<double> d_ab, d_ba;
    nearest_neighbors(a.pts.data(), a.size(), b.pts.data(), b.size(), nn, d_ab);
    nearest_neighbors(b.pts.data(), b.size(), a.pts.data(), a.size(), nn, d_ba);
    return stable_sum(std::move(d_ab)) + stable_sum(std::move(d_ba));
}

Tensor chamfer(Tape& tape, const Tensor& a, const Tensor& b) {
    const std::array<double, 3>* ap = rows_of(a, "chamfer");
    const std::array<double, 3>* bp = rows_of(b, "chamfer");
    const std::size_t n = a.rows(), m = b.rows();

    std::vector<std::size_t> nn_ab, nn_ba;
    std::vector<double> d_ab, d_ba;
    nearest_neighbors(ap, n, bp, m, nn_ab, d_ab);
    nearest_neighbors(bp, m, ap, n, nn_ba, d_ba);
    const double value = stable_sum(d_ab) + stable_sum(d_ba);

    // snapshot coordinates: backward must see forward-time geometry
    std::vector<std::array<double, 3>> av(ap, ap + n), bv(bp, bp + m);
    const Tensor inputs[2] = {a, b};
    return tape.custom(
        inputs, {1}, {value},
        [av = std::move(av), bv = std::move(bv), nn_ab = std::move(nn_ab),
         nn_ba = std::move(nn_ba)](const double* out_grad, const std::vector<double*>& grads) {
            const double g = out_grad[0];
            double* ga = grads[0];
            double* gb = grads[1];
            for (std::size_t i = 0; i < av.size(); ++i) {
                const std::size_t j = nn_ab[i];
                for (int c = 0; c < 3; ++c) {
                    const double diff = 2.0 * (av[i][c] - bv[j][c]) * g;
                    ga[i * 3 + c] += diff;
                    gb[j * 3 + c] -= diff;
                }
            }
            for (std::size_t j = 0; j < bv.size(); ++j) {
                const std::size_t i = nn_ba[j];
                for (int c = 0; c < 3; ++c) {
                    const double diff = 2.0 * (bv[j][c] - av[i][c]) * g;
                    gb[j * 3 + c] += diff;
                    ga[i * 3 + c] -= diff;
                }
            }
        });
}

Assignment emd_exact(const PointCloud& a, const PointCloud& b, std::size_t cap) {
    if (a.size() == 0 || b.size() == 0) throw std::invalid_argument("emd_exact: empty cloud");
    if (a.size() != b.size())
        throw std::invalid_argument("emd_exact: clouds must have equal cardinality (" +
                                    std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
                                    "); a bijection is required");
    const std::size_t n = a.size();
    if (n > cap)
        throw std::invalid_argument("emd_exact: " + std::to_string(n) +
                                    " points exceeds the exact-solver cap of " +
                                    std::to_string(cap) + "; use emd_approx");
    std::vector<double> cost(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) cost[i * n + j] = std::sqrt(sq_dist(a[i], b[j]));
    Assignment result;
    result.mapping = solve_assignment_exact(cost, n);
    result.cost = assignment_cost(a.pts.data(), b.pts.data(), result.mapping);
    return result;
}

Assignment emd_approx(const PointCloud& a, const PointCloud& b, double eps) {
    if (a.size() == 0 || b.size() == 0) throw std::invalid_argument("emd_approx: empty cloud");
    if (a.size() != b.size())
        throw std::invalid_argument("emd_approx: clouds must have equal cardinality (" +
                                    std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
    if (!(eps > 0.0)) throw std::invalid_argument("emd_approx: eps must be positive");
    return auction_assignment(a.pts.data(), b.pts.data(), a.size(), eps);
}

Tensor emd_approx(Tape& tape, const Tensor& a, const Tensor& b, double eps, Assignment* out) {
    const std::array<double, 3>* ap = rows_of(a, "emd_approx");
    const std::array<double, 3>* bp = rows_of(b, "emd_approx");
    if (a.rows() != b.rows())
        throw std::invalid_argument("emd_approx: clouds must have equal cardinality (" +
                                    std::to_string(a.rows()) + " vs " + std::to_string(b.rows()) + ")");
    if (!(eps > 0.0)) throw std::invalid_argument("emd_approx: eps must be positive");
    const std::size_t n = a.rows();

    Assignment assignment = auction_assignment(ap, bp, n, eps);
    if (out) *out = assignment;

    std::vector<std::array<double, 3>> av(ap, ap + n), bv(bp, bp + n);
    const Tensor inputs[2] = {a, b};
    return tape.custom(
        inputs, {1}, {assignment.cost},
        [av = std::move(av), bv = std::move(bv), mapping = std::move(assignment.mapping)](
            const double* out_grad, const std::vector<double*>& grads) {
            const double g = out_grad[0];
            double* ga = grads[0];
            double* gb = grads[1];
            for (std::size_t i = 0; i < av.size(); ++i) {
                const std::size_t j = mapping[i];
                const double d = std::sqrt(sq_dist(av[i], bv[j]));
                if (d <= 0.0) continue;  // coincident pair: subgradient 0
                for (int c = 0; c < 3; ++c) {
                    const double u = (av[i][c] - bv[j][c]) / d * g;
                    ga[i * 3 + c] += u;
                    gb[j * 3 + c] -= u;
                }
            }
        });
}

std::vector<std::size_t> farthest_point_sample(const PointCloud& pc, std::size_t k,
                                               std::size_t start) {
    const std::size_t n = pc.size();
    if (n == 0) throw std::invalid_argument("farthest_point_sample: empty cloud");
    if (k < 1 || k > n)
        throw std::invalid_argument("farthest_point_sample: k=" + std::to_string(k) +
                                    " out of range for " + std::to_string(n) + " points");
    if (start >= n) throw std::invalid_argument("farthest_point_sample: start index out of range");

    // split coordinates so the min-distance update vectorizes
    std::vector<double> px(n), py(n), pz(n), min_d(n);
    for (std::size_t i = 0; i < n; ++i) {
        px[i] = pc[i][0];
        py[i] = pc[i][1];
        pz[i] = pc[i][2];
    }
    std::vector<std::size_t> picks;
    picks.reserve(k);
    picks.push_back(start);
    std::vector<char> taken(n, 0);
    taken[start] = 1;
    // single fused pass per pick: fold the latest pick into min_d and track
    // the next argmax at the same time (strict > keeps the lowest tied index)
    for (std::size_t t = 1; t < k; ++t) {
        const std::size_t last = picks.back();
        const double sx = px[last], sy = py[last], sz = pz[last];
        double best = -1.0;
        std::size_t best_i = 0;
        if (t == 1) {
            for (std::size_t i = 0; i < n; ++i) {
                const double dx = px[i] - sx, dy = py[i] - sy, dz = pz[i] - sz;
                const double d = dx * dx + dy * dy + dz * dz;
                min_d[i] = d;
                if (d > best) {
                    best = d;
                    best_i = i;
                }
            }
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                const double dx = px[i] - sx, dy = py[i] - sy, dz = pz[i] - sz;
                const double d = dx * dx + dy * dy + dz * dz;
                const double m = d < min_d[i] ? d : min_d[i];
                min_d[i] = m;
                if (m > best) {
                    best = m;
                    best_i = i;
                }
            }
        }
        if (best <= 0.0) {
            // every unpicked point coincides with a picked one; fall back to
            // the lowest unpicked index so the result stays a valid subset
            for (std::size_t i = 0; i < n; ++i) {
                if (!taken[i]) {
                    best_i = i;
                    break;
                }
            }
        }
        picks.push_back(best_i);
        taken[best_i] = 1;
    }
    return picks;
}

std::vector<std::size_t> ball_query(const PointCloud& pc, std::size_t center_idx, double radius,
                                    std::size_t cap) {
    if (center_idx >= pc.size()) throw std::invalid_argument("ball_query: center index out of range");
    if (!(radius > 0.0)) throw std::invalid_argument("ball_query: radius must be positive");
    if (cap < 1) throw std::invalid_argument("ball_query: cap must be >= 1");
    const double r2 = radius * radius;
    std::vector<std::pair<double, std::size_t>> hits;
    for (std::size_t i = 0; i < pc.size(); ++i) {
        const double d = sq_dist(pc[center_idx], pc[i]);
        if (d <= r2) hits.emplace_back(d, i);
    }
    std::sort(hits.begin(), hits.end());
    if (hits.size() > cap) hits.resize(cap);
    std::vector<std::size_t> idx(hits.size());
    for (std::size_t i = 0; i < hits.size(); ++i) idx[i] = hits[i].second;
    return idx;
}

PointCloud normalize_unit_bbox(const PointCloud& pc, BboxTransform* transform) {
    if (pc.size() == 0) throw std::invalid_argument("normalize_unit_bbox: empty cloud");
    std::array<double, 3> lo = pc[0], hi = pc[0];
    for (const auto& p : pc.pts)
        for (int c = 0; c < 3; ++c) {
            lo[c] = std::min(lo[c], p[c]);
            hi[c] = std::max(hi[c], p[c]);
        }
    const double longest = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
    if (!(longest > 0.0))
        throw std::invalid_argument("normalize_unit_bbox: all points coincident (zero extent)");
    BboxTransform t;
    t.scale = 1.0 / longest;
    for (int c = 0; c < 3; ++c) t.offset[c] = 0.5 * (lo[c] + hi[c]);
    PointCloud out;
    out.pts.resize(pc.size());
    for (std::size_t i = 0; i < pc.size(); ++i)
        for (int c = 0; c < 3; ++c) out[i][c] = (pc[i][c] - t.offset[c]) * t.scale;
    if (transform) *transform = t;
    return out;
}

PointCloud apply_inverse(const PointCloud& pc, const BboxTransform& t) {
    PointCloud out;
    out.pts.resize(pc.size());
    for (std::size_t i = 0; i < pc.size(); ++i)
        for (int c = 0; c < 3; ++c) out[i][c] = pc[i][c] / t.scale + t.offset[c];
    return out;
}

PointCloud sample_mesh_surface(const TriangleMesh& mesh, std::size_t count, std::uint64_t seed) {
    if (count < 1) throw std::invalid_argument("sample_mesh_surface: count must be >= 1");
    std::vector<double> cumulative;
    cumulative.reserve(mesh.triangles.size());
    double total = 0.0;
    for (const auto& tri : mesh.triangles) {
        for (std::uint32_t v : tri)
            if (v >= mesh.vertices.size())
                throw std::invalid_argument("sample_mesh_surface: triangle index out of range");
        total += triangle_area(mesh.vertices[tri[0]], mesh.vertices[tri[1]], mesh.vertices[tri[2]]);
        cumulative.push_back(total);
    }
    if (!(total > 0.0))
        throw std::invalid_argument("sample_mesh_surface: degenerate mesh (no positive-area triangle)");

    Rng rng(seed);
    const std::size_t pool_size = 4 * count;
    PointCloud pool;
    pool.pts.resize(pool_size);
    for (std::size_t s = 0; s < pool_size; ++s) {
        const double r = rng.uniform() * total;
        const std::size_t t =
            std::size_t(std::lower_bound(cumulative.begin(), cumulative.end(), r) - cumulative.begin());
        const auto& tri = mesh.triangles[std::min(t, mesh.triangles.size() - 1)];
        double u = rng.uniform(), v = rng.uniform();
        if (u + v > 1.0) {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        const auto& a = mesh.vertices[tri[0]];
        const auto& b = mesh.vertices[tri[1]];
        const auto& c = mesh.vertices[tri[2]];
        for (int k = 0; k < 3; ++k)
            pool.pts[s][k] = a[k] + u * (b[k] - a[k]) + v * (c[k] - a[k]);
    }

    const std::vector<std::size_t> picks = farthest_point_sample(pool, count, 0);
    PointCloud out;
    out.pts.reserve(count);
    for (std::size_t i : picks) out.pts.push_back(pool[i]);
    return out;
}

}  // namespace pcrec
