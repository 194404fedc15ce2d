#pragma once

// Feature-to-pixel assignment and image rendering.
//
// An embedding in the unit square is snapped onto a g x g grid (one feature
// per cell), then improved by swap/move hill climbing on the scaled raw
// stress between target distances and cell-centre distances.

#include "refined/common.hpp"
#include "refined/dataio.hpp"
#include "refined/distances.hpp"
#include "refined/embedding.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

namespace refined {

struct Cell {
    int row = 0;
    int col = 0;
    friend bool operator==(const Cell&, const Cell&) = default;
};

/// Injective feature -> cell map. `cells[j]` belongs to `labels[j]`.
struct PixelAssignment {
    int grid_size = 0;
    std::vector<std::string> labels;
    std::vector<Cell> cells;
    DistanceMatrix target;  // objective for hill climbing; may be empty after loading

    Index p() const { return static_cast<Index>(labels.size()); }

    friend bool operator==(const PixelAssignment& a, const PixelAssignment& b) {
        return a.grid_size == b.grid_size && a.labels == b.labels && a.cells == b.cells;
    }
};

inline void validate(const PixelAssignment& a) {
    const int g = a.grid_size;
    if (g < 1) throw data_error("BadGrid", "grid size must be positive");
    if (a.cells.size() != a.labels.size()) throw data_error("BadAssignment", "one cell per label required");
    if (static_cast<long>(g) * g < static_cast<long>(a.labels.size()))
        throw data_error("GridTooSmall", "grid has fewer cells than features");
    std::vector<int> used(static_cast<std::size_t>(g * g), 0);
    for (const auto& c : a.cells) {
        if (c.row < 0 || c.row >= g || c.col < 0 || c.col >= g)
            throw data_error("BadAssignment", "cell outside the grid");
        if (used[static_cast<std::size_t>(c.row * g + c.col)]++)
            throw data_error("BadAssignment", "two features share a cell");
    }
}

/// Smallest square grid holding p features.
inline int auto_grid_size(Index p) {
    int g = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(p))));
    while (static_cast<Index>(g) * g < p) ++g;
    while (g > 1 && static_cast<Index>(g - 1) * (g - 1) >= p) --g;
    return g;
}

/// Snaps a unit-square embedding onto the grid. Features farthest from the
/// grid centre go first (ties by feature index); each takes the free cell
/// whose centre is nearest to its coordinate (ties in row-major order).
/// Column follows x, row follows y.
inline PixelAssignment rasterize(const Embedding& e, int grid_size = 0) {
    const Index p = e.p();
    const int g = grid_size > 0 ? grid_size : auto_grid_size(p);
    if (static_cast<Index>(g) * g < p) throw data_error("GridTooSmall", "grid of " + std::to_string(g) + "^2 cells cannot hold " + std::to_string(p) + " features");
    if (static_cast<Index>(e.labels.size()) != p) throw data_error("LabelMismatch", "embedding labels");
    if (!e.coords.allFinite()) throw data_error("BadEmbedding", "non-finite embedding");

    std::vector<Index> order(static_cast<std::size_t>(p));
    std::iota(order.begin(), order.end(), Index{0});
    std::vector<double> centre_dist(static_cast<std::size_t>(p));
    for (Index j = 0; j < p; ++j)
        centre_dist[static_cast<std::size_t>(j)] = std::hypot(e.coords(j, 0) - 0.5, e.coords(j, 1) - 0.5);
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
        return centre_dist[static_cast<std::size_t>(a)] > centre_dist[static_cast<std::size_t>(b)];
    });

    PixelAssignment out;
    out.grid_size = g;
    out.labels = e.labels;
    out.cells.resize(static_cast<std::size_t>(p));
    std::vector<char> taken(static_cast<std::size_t>(g * g), 0);
    for (Index j : order) {
        const double x = e.coords(j, 0) * g, y = e.coords(j, 1) * g;
        int best = -1;
        double best_d = std::numeric_limits<double>::infinity();
        for (int cell = 0; cell < g * g; ++cell) {
            if (taken[static_cast<std::size_t>(cell)]) continue;
            const double cx = (cell % g) + 0.5, cy = (cell / g) + 0.5;
            const double dd = (cx - x) * (cx - x) + (cy - y) * (cy - y);
            if (dd < best_d) {
                best_d = dd;
                best = cell;
            }
        }
        taken[static_cast<std::size_t>(best)] = 1;
        out.cells[static_cast<std::size_t>(j)] = {best / g, best % g};
    }
    return out;
}

/// Distance between two cell centres on the grid rescaled to the unit square.
inline double cell_distance(const Cell& a, const Cell& b, int g) {
    return std::hypot(static_cast<double>(a.row - b.row), static_cast<double>(a.col - b.col)) / g;
}

/// Scaled raw stress sum_{j<k} (t_jk - pi * c_jk)^2 with the least-squares
/// scale pi = sum t c / sum c^2.
inline double assignment_cost(const PixelAssignment& a) {
    if (a.target.p() != a.p()) throw data_error("NoTarget", "assignment has no target distance matrix");
    double stc = 0.0, scc = 0.0;
    for (Index j = 0; j < a.p(); ++j)
        for (Index k = j + 1; k < a.p(); ++k) {
            const double c = cell_distance(a.cells[static_cast<std::size_t>(j)], a.cells[static_cast<std::size_t>(k)], a.grid_size);
            stc += a.target.d(j, k) * c;
            scc += c * c;
        }
    const double pi = scc > 0.0 ? stc / scc : 0.0;
    double cost = 0.0;
    for (Index j = 0; j < a.p(); ++j)
        for (Index k = j + 1; k < a.p(); ++k) {
            const double c = cell_distance(a.cells[static_cast<std::size_t>(j)], a.cells[static_cast<std::size_t>(k)], a.grid_size);
            const double r = a.target.d(j, k) - pi * c;
            cost += r * r;
        }
    return cost;
}

enum class Neighborhood { all_pairs, adjacent_cells };

inline std::string to_string(Neighborhood n) { return n == Neighborhood::all_pairs ? "all_pairs" : "adjacent_cells"; }

/// all_pairs up to 200 features, Chebyshev-radius-2 moves above that.
inline Neighborhood default_neighborhood(Index p) {
    return p <= 200 ? Neighborhood::all_pairs : Neighborhood::adjacent_cells;
}

struct HillClimbResult {
    PixelAssignment assignment;
    std::vector<double> cost_trace;  // initial cost, then the cost after every applied move
    int sweeps = 0;
    long moves = 0;
};

/// First-improvement local search. Each sweep scans occupied cells in
/// row-major order and, for each, candidate cells in row-major order: an
/// occupied candidate means a swap, an empty one a move. A change is applied
/// only when it lowers the cost by more than a relative 1e-12; the search
/// stops after a sweep with no change or after `max_sweeps`.
inline HillClimbResult hill_climb(const PixelAssignment& start, int max_sweeps = 100,
                                  Neighborhood hood = Neighborhood::all_pairs) {
    validate(start);
    if (start.target.p() != start.p()) throw data_error("NoTarget", "assignment has no target distance matrix");
    const int g = start.grid_size;
    const Index p = start.p();
    const Matrix& t = start.target.d;

    HillClimbResult res;
    res.assignment = start;
    auto& cells = res.assignment.cells;
    std::vector<Index> occ(static_cast<std::size_t>(g * g), -1);
    for (Index j = 0; j < p; ++j)
        occ[static_cast<std::size_t>(cells[static_cast<std::size_t>(j)].row * g + cells[static_cast<std::size_t>(j)].col)] = j;

    // cell-centre distance by |drow|, |dcol|
    Matrix offs(g, g);
    for (int r = 0; r < g; ++r)
        for (int c = 0; c < g; ++c) offs(r, c) = std::hypot(static_cast<double>(r), static_cast<double>(c)) / g;
    auto cdist = [&](int c1, int c2) { return offs(std::abs(c1 / g - c2 / g), std::abs(c1 % g - c2 % g)); };
    auto cell_of = [&](Index j) { return cells[static_cast<std::size_t>(j)].row * g + cells[static_cast<std::size_t>(j)].col; };

    double stt = 0.0, stc = 0.0, scc = 0.0;
    auto recompute = [&] {
        stt = stc = scc = 0.0;
        for (Index j = 0; j < p; ++j)
            for (Index k = j + 1; k < p; ++k) {
                const double c = cdist(cell_of(j), cell_of(k));
                stt += t(j, k) * t(j, k);
                stc += t(j, k) * c;
                scc += c * c;
            }
    };
    auto cost_of = [&](double tc, double cc) { return cc > 0.0 ? std::max(stt - tc * tc / cc, 0.0) : stt; };

    recompute();
    double cur = cost_of(stc, scc);
    res.cost_trace.push_back(cur);
    const double eps = 1e-12 * std::max(stt, 1e-300);
    const int radius = 2;

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool changed = false;
        for (int c1 = 0; c1 < g * g; ++c1) {
            for (int c2 = 0; c2 < g * g; ++c2) {
                const Index f = occ[static_cast<std::size_t>(c1)];
                if (f < 0) break;
                if (c2 == c1) continue;
                if (hood == Neighborhood::adjacent_cells &&
                    (std::abs(c1 / g - c2 / g) > radius || std::abs(c1 % g - c2 % g) > radius))
                    continue;
                const Index f2 = occ[static_cast<std::size_t>(c2)];
                double dtc = 0.0, dcc = 0.0;
                for (Index h = 0; h < p; ++h) {
                    if (h == f || h == f2) continue;
                    const int ch = cell_of(h);
                    const double old1 = cdist(c1, ch), new1 = cdist(c2, ch);
                    dtc += t(f, h) * (new1 - old1);
                    dcc += new1 * new1 - old1 * old1;
                    if (f2 >= 0) {
                        dtc += t(f2, h) * (old1 - new1);
                        dcc += old1 * old1 - new1 * new1;
                    }
                }
                const double cand = cost_of(stc + dtc, scc + dcc);
                if (cand < cur - eps) {
                    occ[static_cast<std::size_t>(c1)] = f2;
                    occ[static_cast<std::size_t>(c2)] = f;
                    cells[static_cast<std::size_t>(f)] = {c2 / g, c2 % g};
                    if (f2 >= 0) cells[static_cast<std::size_t>(f2)] = {c1 / g, c1 % g};
                    stc += dtc;
                    scc += dcc;
                    cur = cand;
                    res.cost_trace.push_back(cur);
                    ++res.moves;
                    changed = true;
                }
            }
        }
        ++res.sweeps;
#ifndef NDEBUG
        validate(res.assignment);
#endif
        recompute();
        cur = cost_of(stc, scc);
        if (!changed) break;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Rendering

/// One g x g image per sample, in sample order.
struct RefinedImageSet {
    PixelAssignment assignment;
    std::vector<Matrix> images;
    double fill = 0.0;
    std::vector<std::string> sample_ids;

    int grid_size() const { return assignment.grid_size; }
};

namespace detail {

/// Column of `t` for every assignment label.
inline std::vector<Index> feature_columns(const PixelAssignment& a, const FeatureTable& t) {
    std::unordered_map<std::string, Index> col;
    for (Index j = 0; j < t.p(); ++j) col.emplace(t.feature_names[static_cast<std::size_t>(j)], j);
    if (static_cast<Index>(col.size()) != a.p() || t.p() != a.p())
        throw data_error("LabelMismatch", "table features do not match the assignment labels");
    std::vector<Index> out;
    for (const auto& l : a.labels) {
        auto it = col.find(l);
        if (it == col.end()) throw data_error("LabelMismatch", "feature '" + l + "' not in table");
        out.push_back(it->second);
    }
    return out;
}

}  // namespace detail

inline RefinedImageSet render_images(const PixelAssignment& a, const FeatureTable& t, double fill = 0.0) {
    validate(a);
    const auto cols = detail::feature_columns(a, t);
    if (t.n() > 0 && (t.values.minCoeff() < 0.0 || t.values.maxCoeff() > 1.0 || !t.values.allFinite()))
        throw data_error("NotNormalized", "render_images needs feature values in [0,1]");
    RefinedImageSet set;
    set.assignment = a;
    set.fill = fill;
    set.sample_ids = t.sample_ids;
    set.images.reserve(static_cast<std::size_t>(t.n()));
    for (Index i = 0; i < t.n(); ++i) {
        Matrix img = Matrix::Constant(a.grid_size, a.grid_size, fill);
        for (Index j = 0; j < a.p(); ++j) {
            const auto& c = a.cells[static_cast<std::size_t>(j)];
            img(c.row, c.col) = t.values(i, cols[static_cast<std::size_t>(j)]);
        }
        set.images.push_back(std::move(img));
    }
    return set;
}

/// Feature values of one image, in assignment-label order.
inline Vector read_back(const PixelAssignment& a, const Matrix& image) {
    Vector v(a.p());
    for (Index j = 0; j < a.p(); ++j) v(j) = image(a.cells[static_cast<std::size_t>(j)].row, a.cells[static_cast<std::size_t>(j)].col);
    return v;
}

/// Pairwise cell-centre distances of an assignment, as a distance matrix.
inline DistanceMatrix cell_distances(const PixelAssignment& a) {
    Matrix d = Matrix::Zero(a.p(), a.p());
    for (Index j = 0; j < a.p(); ++j)
        for (Index k = j + 1; k < a.p(); ++k) {
            d(j, k) = cell_distance(a.cells[static_cast<std::size_t>(j)], a.cells[static_cast<std::size_t>(k)], a.grid_size);
            d(k, j) = d(j, k);
        }
    return {a.labels, d};
}

/// Uniformly random injective placement (baseline layouts).
inline PixelAssignment random_assignment(const std::vector<std::string>& labels, int grid_size, std::uint64_t seed) {
    const auto p = static_cast<int>(labels.size());
    if (grid_size * grid_size < p) throw data_error("GridTooSmall", "grid too small for random assignment");
    std::vector<int> cells(static_cast<std::size_t>(grid_size * grid_size));
    std::iota(cells.begin(), cells.end(), 0);
    Rng rng(seed);
    rng.shuffle(cells);
    PixelAssignment a;
    a.grid_size = grid_size;
    a.labels = labels;
    for (int j = 0; j < p; ++j) a.cells.push_back({cells[static_cast<std::size_t>(j)] / grid_size, cells[static_cast<std::size_t>(j)] % grid_size});
    return a;
}

}  // namespace refined
