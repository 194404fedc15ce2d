#pragma once

// End-to-end layouts: single-projection REFINED and the fused (integrated)
// variant that produces one assignment from A candidate projections.

#include "refined/bmds.hpp"
#include "refined/common.hpp"
#include "refined/dataio.hpp"
#include "refined/distances.hpp"
#include "refined/ensemble.hpp"
#include "refined/evaluation.hpp"
#include "refined/projections.hpp"
#include "refined/refined.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <set>
#include <string>
#include <vector>

namespace refined {

enum class ProjectionMethod { mds, isomap, lle, le };

inline std::string to_string(ProjectionMethod m) {
    switch (m) {
        case ProjectionMethod::mds: return "mds";
        case ProjectionMethod::isomap: return "isomap";
        case ProjectionMethod::lle: return "lle";
        case ProjectionMethod::le: return "le";
    }
    return "?";
}

inline ProjectionMethod parse_projection_method(const std::string& s) {
    if (s == "mds") return ProjectionMethod::mds;
    if (s == "isomap") return ProjectionMethod::isomap;
    if (s == "lle") return ProjectionMethod::lle;
    if (s == "le") return ProjectionMethod::le;
    throw config_error("BadProjection", "unknown projection method '" + s + "'");
}

/// One candidate metric: a projection method and its hyperparameters.
struct ProjectionSpec {
    ProjectionMethod method = ProjectionMethod::mds;
    Index k = 6;            // neighbours for isomap / lle / le
    HeatKernel heat;        // le only
    std::string tag;        // defaults to the method name

    std::string name() const { return tag.empty() ? to_string(method) : tag; }
};

enum class DistanceSource { ambient, projection };

inline DistanceSource parse_distance_source(const std::string& s) {
    if (s == "ambient") return DistanceSource::ambient;
    if (s == "projection") return DistanceSource::projection;
    throw config_error("BadDistanceSource", "unknown distance source '" + s + "'");
}

inline std::string to_string(DistanceSource s) { return s == DistanceSource::ambient ? "ambient" : "projection"; }

struct LayoutOptions {
    DistanceSource distance_source = DistanceSource::projection;
    bool rescale = true;
    int grid_size = 0;  // 0: smallest square grid
    int max_sweeps = 100;
    std::optional<Neighborhood> neighborhood;  // default by feature count
    int smacof_max_iter = 1000;
    double smacof_tol = 1e-10;
    int fusion_max_iter = 200;
    double fusion_tol = 1e-12;
    bool use_bmds = false;  // replace SMACOF with the posterior-mean BMDS configuration
    BmdsOptions bmds;
    InverseGammaPrior prior;
};

/// Feature-space dissimilarities a projection method works from: geodesic
/// for Isomap, Euclidean otherwise.
inline DistanceMatrix ambient_distances(const ProjectionSpec& spec, const DistanceMatrix& euclid) {
    if (spec.method == ProjectionMethod::isomap) return geodesic_distances(euclid, spec.k);
    return euclid;
}

inline Embedding project(const ProjectionSpec& spec, const FeatureTable& t, const DistanceMatrix& euclid) {
    Embedding e;
    switch (spec.method) {
        case ProjectionMethod::mds: e = classical_mds(euclid); break;
        case ProjectionMethod::isomap: e = isomap(euclid, spec.k); break;
        case ProjectionMethod::lle: e = lle(t, spec.k); break;
        case ProjectionMethod::le: e = laplacian_eigenmaps(euclid, spec.k, spec.heat); break;
    }
    e.method_tag = spec.name();
    return e;
}

/// Candidate distance matrix for one spec under the chosen distance source.
inline DistanceMatrix candidate_distances(const ProjectionSpec& spec, const FeatureTable& t, const DistanceMatrix& euclid,
                                          const LayoutOptions& opt, PipelineCounters* counters, Embedding* out_embedding = nullptr) {
    Embedding e = project(spec, t, euclid);
    if (counters) ++counters->projections_run;
    if (out_embedding) *out_embedding = e;
    DistanceMatrix d = opt.distance_source == DistanceSource::projection
                           ? embedding_distances(normalize_to_unit_square(e))
                           : ambient_distances(spec, euclid);
    return opt.rescale ? rescale_unit_mean(d) : d;
}

struct LayoutResult {
    Embedding layout;               // unit-square configuration fed to rasterize
    std::vector<double> stress;     // SMACOF trace (empty on the BMDS path)
    HillClimbResult climb;
    std::optional<BmdsResult> bmds;
};

/// target -> classical MDS -> SMACOF -> unit square -> grid -> hill climbing.
inline LayoutResult build_layout(const DistanceMatrix& target, const LayoutOptions& opt, PipelineCounters* counters,
                                 const std::vector<DistanceMatrix>* candidates = nullptr,
                                 std::optional<DistanceModel> model = std::nullopt) {
    LayoutResult res;
    const Embedding init = classical_mds(target);
    if (opt.use_bmds && candidates && model) {
        res.bmds = bmds_sample(*candidates, *model, opt.prior, init, opt.bmds);
        res.layout = normalize_to_unit_square(res.bmds->embedding);
    } else {
        auto sm = smacof_refine(target, init, opt.smacof_max_iter, opt.smacof_tol);
        res.stress = std::move(sm.stress);
        res.layout = normalize_to_unit_square(sm.embedding);
    }
    PixelAssignment start = rasterize(res.layout, opt.grid_size);
    start.target = target;
    res.climb = hill_climb(start, opt.max_sweeps, opt.neighborhood.value_or(default_neighborhood(target.p())));
    if (counters) ++counters->hill_climbs_run;
    return res;
}

struct SingleResult {
    Embedding embedding;
    DistanceMatrix target;
    LayoutResult layout;

    const PixelAssignment& assignment() const { return layout.climb.assignment; }
};

/// Single-projection REFINED on a normalized table (rows: fitting samples).
inline SingleResult refined_single(const FeatureTable& t, const ProjectionSpec& spec, const LayoutOptions& opt,
                                   PipelineCounters* counters = nullptr) {
    require_embeddable(t);
    const auto euclid = pairwise_euclidean(t);
    SingleResult r;
    r.target = candidate_distances(spec, t, euclid, opt, counters, &r.embedding);
    r.layout = build_layout(r.target, opt, counters);
    return r;
}

struct IntegratedResult {
    std::vector<Embedding> embeddings;
    std::vector<DistanceMatrix> candidates;
    PrecisionEstimate precision;
    LayoutResult layout;
    nlohmann::json report;

    const PixelAssignment& assignment() const { return layout.climb.assignment; }
    const FusedDistance& fused() const { return precision.fused; }
};

/// Fused pipeline: every spec is projected, the candidate matrices are fused
/// with estimated precision weights, and exactly one assignment is built from
/// the fused matrix regardless of how many candidates there are.
inline IntegratedResult irefined_pipeline(const FeatureTable& t, const std::vector<ProjectionSpec>& specs, FusionMode mode,
                                          const LayoutOptions& opt, PipelineCounters* counters = nullptr) {
    if (specs.size() < 2) throw config_error("TooFewMetrics", "integrated REFINED requires at least 2 projection specs");
    require_embeddable(t);
    const auto euclid = pairwise_euclidean(t);
    IntegratedResult r;
    for (const auto& s : specs) {
        Embedding e;
        r.candidates.push_back(candidate_distances(s, t, euclid, opt, counters, &e));
        r.embeddings.push_back(std::move(e));
    }
    r.precision = estimate_precisions(r.candidates, mode, opt.fusion_max_iter, opt.fusion_tol);
    const auto model = mode == FusionMode::arithmetic ? DistanceModel::truncated_normal : DistanceModel::log_normal;
    r.layout = build_layout(r.precision.fused.d_bar, opt, counters, &r.candidates, model);

    nlohmann::json rep;
    rep["mode"] = to_string(mode);
    rep["distance_source"] = to_string(opt.distance_source);
    std::vector<std::string> tags;
    for (const auto& s : specs) tags.push_back(s.name());
    rep["metrics"] = tags;
    rep["sigma2"] = std::vector<double>(r.precision.weights.sigma2.data(), r.precision.weights.sigma2.data() + r.precision.weights.sigma2.size());
    rep["fusion_iterations"] = r.precision.iterations;
    rep["fusion_converged"] = r.precision.converged;
    rep["hill_climb"] = {{"initial_cost", r.layout.climb.cost_trace.front()},
                         {"final_cost", r.layout.climb.cost_trace.back()},
                         {"moves", r.layout.climb.moves},
                         {"sweeps", r.layout.climb.sweeps}};
    nlohmann::json tau = nlohmann::json::object();
    for (std::size_t a = 0; a < r.candidates.size(); ++a)
        tau[tags[a]] = kendall_tau_distances(r.candidates[a], r.precision.fused.d_bar);
    rep["kendall_tau_vs_fused"] = tau;
    r.report = rep;
    return r;
}

/// Rank agreement of two layouts' pairwise cell distances.
inline double assignment_agreement(const PixelAssignment& a, const PixelAssignment& b) {
    return kendall_tau_distances(cell_distances(a), cell_distances(b));
}

}  // namespace refined
