#pragma once

// Bayesian MDS over several candidate distance matrices sharing one
// configuration s in [0,1]^2.
//
// Data models for metric a and pair j<k, with delta_jk = ||s_j - s_k||:
//   truncated normal  d_jk,a ~ N(delta_jk, sigma2_a) I(d_jk,a > 0)
//   log-normal        log d_jk,a ~ N(log delta_jk, sigma2_a)
// Locations are uniform on the unit square (homogeneous Poisson process) and
// every sigma2_a has an Inverse-Gamma(alpha, beta) prior.

#include "refined/common.hpp"
#include "refined/distances.hpp"
#include "refined/embedding.hpp"
#include "refined/projections.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

namespace refined {

enum class DistanceModel { truncated_normal, log_normal };

inline std::string to_string(DistanceModel m) {
    return m == DistanceModel::truncated_normal ? "truncated_normal" : "log_normal";
}

inline DistanceModel parse_distance_model(const std::string& s) {
    if (s == "truncated_normal") return DistanceModel::truncated_normal;
    if (s == "log_normal") return DistanceModel::log_normal;
    throw config_error("BadModel", "unknown distance model '" + s + "'");
}

struct InverseGammaPrior {
    double alpha = 3.0;
    double beta = 0.01;
};

struct BmdsOptions {
    int iters = 5000;
    int burn_in = 2000;
    double step = 0.02;          // initial random-walk sd for a location
    bool adapt_step = true;      // tune `step` toward ~30% acceptance during burn-in only
    double log_sigma_step = 0.2; // random-walk sd on log sigma2 (truncated normal)
    std::uint64_t seed = 1;
};

struct BmdsTracePoint {
    int iteration = 0;
    double log_posterior = 0.0;
    std::vector<double> sigma2;
};

inline void to_json(nlohmann::json& j, const BmdsTracePoint& t) {
    j = nlohmann::json{{"iteration", t.iteration}, {"log_posterior", t.log_posterior}, {"sigma2", t.sigma2}};
}

struct BmdsResult {
    Embedding embedding;         // posterior-mean coordinates
    PrecisionWeights weights;    // posterior-mean sigma2
    std::vector<BmdsTracePoint> trace;
    double acceptance_rate = 0;  // location moves, post burn-in
    double final_step = 0;
};

/// Writes the trace as JSON lines.
inline void write_trace_jsonl(const std::vector<BmdsTracePoint>& trace, std::ostream& out) {
    for (const auto& t : trace) out << nlohmann::json(t).dump() << '\n';
}

namespace detail {

inline double log_std_normal_cdf(double x) {
    if (x < -30.0) return -0.5 * x * x - std::log(-x) - 0.5 * std::log(2.0 * M_PI);
    return std::log(0.5 * std::erfc(-x / std::sqrt(2.0)));
}

/// Log-likelihood of one observed distance given delta and sigma2, up to constants.
inline double pair_loglik(DistanceModel model, double d, double log_d, double delta, double sigma2) {
    if (model == DistanceModel::truncated_normal) {
        const double sd = std::sqrt(sigma2);
        const double r = d - delta;
        return -0.5 * std::log(sigma2) - 0.5 * r * r / sigma2 - log_std_normal_cdf(delta / sd);
    }
    if (!(delta > 0.0)) return -std::numeric_limits<double>::infinity();
    const double r = log_d - std::log(delta);
    return -0.5 * std::log(sigma2) - 0.5 * r * r / sigma2;
}

inline double log_inverse_gamma(double x, const InverseGammaPrior& pr) {
    return -(pr.alpha + 1.0) * std::log(x) - pr.beta / x;
}

inline double reflect_unit(double v) {
    // Fold into [0,1]; proposals are small so a couple of folds suffice.
    for (int i = 0; i < 8 && (v < 0.0 || v > 1.0); ++i) v = v < 0.0 ? -v : 2.0 - v;
    return std::clamp(v, 0.0, 1.0);
}

class BmdsChain {
public:
    BmdsChain(const std::vector<DistanceMatrix>& ds, DistanceModel model, InverseGammaPrior prior,
              const Matrix& init, const BmdsOptions& opt)
        : ds_(ds), model_(model), prior_(prior), opt_(opt), rng_(opt.seed), x_(init), step_(opt.step) {
        p_ = x_.rows();
        A_ = static_cast<Index>(ds_.size());
        logd_.resize(ds_.size());
        for (std::size_t a = 0; a < ds_.size(); ++a) logd_[a] = ds_[a].d.array().max(1e-300).log().matrix();
        delta_ = pairwise_euclidean_rows(x_);
        sigma2_.resize(A_);
        const double m = static_cast<double>(p_ * (p_ - 1) / 2);
        for (Index a = 0; a < A_; ++a) sigma2_(a) = std::max(residual_ss(a) / m, 1e-8);
    }

    BmdsResult run() {
        BmdsResult res;
        Matrix coord_sum = Matrix::Zero(p_, 2);
        Vector sigma_sum = Vector::Zero(A_);
        long accepted = 0, proposed = 0, kept = 0;
        long window_acc = 0, window_prop = 0;
        for (int it = 0; it < opt_.iters; ++it) {
            const bool post = it >= opt_.burn_in;
            int acc = sweep_locations();
            update_sigma();
            window_acc += acc;
            window_prop += p_;
            if (post) {
                accepted += acc;
                proposed += p_;
                coord_sum += x_;
                sigma_sum += sigma2_;
                ++kept;
            } else if (opt_.adapt_step && (it + 1) % 50 == 0) {
                const double rate = static_cast<double>(window_acc) / static_cast<double>(window_prop);
                step_ = std::clamp(step_ * std::exp(rate - 0.3), 1e-6, 0.5);
                window_acc = window_prop = 0;
            }
            res.trace.push_back({it, log_posterior(), std::vector<double>(sigma2_.data(), sigma2_.data() + A_)});
        }
        res.embedding.coords = coord_sum / static_cast<double>(kept);
        res.embedding.labels = ds_.front().labels;
        res.embedding.method_tag = "bmds-" + to_string(model_);
        res.weights.sigma2 = sigma_sum / static_cast<double>(kept);
        res.acceptance_rate = proposed ? static_cast<double>(accepted) / static_cast<double>(proposed) : 0.0;
        res.final_step = step_;
        return res;
    }

    double log_posterior() const {
        double lp = 0.0;
        for (Index a = 0; a < A_; ++a) {
            for (Index j = 0; j < p_; ++j)
                for (Index k = j + 1; k < p_; ++k) lp += loglik(a, j, k, delta_(j, k), sigma2_(a));
            lp += log_inverse_gamma(sigma2_(a), prior_);
        }
        return lp;
    }

private:
    double loglik(Index a, Index j, Index k, double delta, double s2) const {
        const auto ua = static_cast<std::size_t>(a);
        return pair_loglik(model_, ds_[ua].d(j, k), logd_[ua](j, k), delta, s2);
    }

    double residual_ss(Index a) const {
        double ss = 0.0;
        const auto ua = static_cast<std::size_t>(a);
        for (Index j = 0; j < p_; ++j)
            for (Index k = j + 1; k < p_; ++k) {
                const double r = model_ == DistanceModel::truncated_normal
                                     ? ds_[ua].d(j, k) - delta_(j, k)
                                     : logd_[ua](j, k) - std::log(std::max(delta_(j, k), 1e-300));
                ss += r * r;
            }
        return ss;
    }

    int sweep_locations() {
        int acc = 0;
        Vector prop_delta(p_);
        for (Index j = 0; j < p_; ++j) {
            const double px = reflect_unit(x_(j, 0) + step_ * rng_.normal());
            const double py = reflect_unit(x_(j, 1) + step_ * rng_.normal());
            double diff = 0.0;
            for (Index k = 0; k < p_; ++k) {
                if (k == j) continue;
                const double dx = px - x_(k, 0), dy = py - x_(k, 1);
                prop_delta(k) = std::sqrt(dx * dx + dy * dy);
                for (Index a = 0; a < A_; ++a)
                    diff += loglik(a, j, k, prop_delta(k), sigma2_(a)) - loglik(a, j, k, delta_(j, k), sigma2_(a));
            }
            if (std::isnan(diff)) continue;
            if (diff >= 0.0 || std::log(rng_.uniform()) < diff) {
                x_(j, 0) = px;
                x_(j, 1) = py;
                for (Index k = 0; k < p_; ++k) {
                    if (k == j) continue;
                    delta_(j, k) = prop_delta(k);
                    delta_(k, j) = prop_delta(k);
                }
                ++acc;
            }
        }
        return acc;
    }

    void update_sigma() {
        const double m = static_cast<double>(p_ * (p_ - 1) / 2);
        for (Index a = 0; a < A_; ++a) {
            if (model_ == DistanceModel::log_normal) {
                // Conjugate: sigma2 | rest ~ IG(alpha + m/2, beta + SS/2).
                const double shape = prior_.alpha + 0.5 * m;
                const double scale = prior_.beta + 0.5 * residual_ss(a);
                sigma2_(a) = scale / rng_.gamma(shape);
            } else {
                const double cur = sigma2_(a);
                const double prop = cur * std::exp(opt_.log_sigma_step * rng_.normal());
                auto target = [&](double s2) {
                    double t = log_inverse_gamma(s2, prior_) + std::log(s2);  // log-scale Jacobian
                    for (Index j = 0; j < p_; ++j)
                        for (Index k = j + 1; k < p_; ++k) t += loglik(a, j, k, delta_(j, k), s2);
                    return t;
                };
                const double diff = target(prop) - target(cur);
                if (diff >= 0.0 || std::log(rng_.uniform()) < diff) sigma2_(a) = prop;
            }
        }
    }

    const std::vector<DistanceMatrix>& ds_;
    DistanceModel model_;
    InverseGammaPrior prior_;
    BmdsOptions opt_;
    Rng rng_;
    Matrix x_;
    Matrix delta_;
    std::vector<Matrix> logd_;
    Vector sigma2_;
    Index p_ = 0, A_ = 0;
    double step_;
};

}  // namespace detail

/// Metropolis-within-Gibbs sampler. Each sweep proposes a reflected Gaussian
/// random-walk move for every location, then updates every sigma2_a (exact
/// Inverse-Gamma draw under the log-normal model, a log-scale Metropolis step
/// under the truncated normal model because of the Phi normaliser).
/// The initial configuration is mapped onto the unit square first.
inline BmdsResult bmds_sample(const std::vector<DistanceMatrix>& ds, DistanceModel model, InverseGammaPrior prior,
                              const Embedding& init, const BmdsOptions& opt) {
    detail::check_compatible(ds);
    if (!(prior.alpha > 2.0) || !(prior.beta > 0.0))
        throw config_error("BadPrior", "Inverse-Gamma prior needs alpha > 2 and beta > 0");
    if (!(opt.step > 0.0)) throw config_error("BadStep", "step must be positive");
    if (opt.iters <= opt.burn_in || opt.burn_in < 0) throw config_error("BadIterations", "iters must exceed burn_in");
    if (init.p() != ds.front().p()) throw data_error("ShapeMismatch", "initial embedding does not match distances");
    if (model == DistanceModel::log_normal) detail::check_positive_offdiag(ds);
    const Embedding start = normalize_to_unit_square(init);
    detail::BmdsChain chain(ds, model, prior, start.coords, opt);
    return chain.run();
}

/// Independent chains (seeds seed, seed+1, ...) run concurrently; post-burn-in
/// samples are pooled, so the merged means are averages of the chain means.
inline BmdsResult bmds_sample_chains(const std::vector<DistanceMatrix>& ds, DistanceModel model,
                                     InverseGammaPrior prior, const Embedding& init, const BmdsOptions& opt,
                                     int chains) {
    if (chains < 1) throw config_error("BadChains", "need at least one chain");
    std::vector<BmdsResult> results(static_cast<std::size_t>(chains));
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(chains));
    for (int c = 0; c < chains; ++c) {
        workers.emplace_back([&, c] {
            try {
                BmdsOptions o = opt;
                o.seed = opt.seed + static_cast<std::uint64_t>(c);
                results[static_cast<std::size_t>(c)] = bmds_sample(ds, model, prior, init, o);
            } catch (...) {
                errors[static_cast<std::size_t>(c)] = std::current_exception();
            }
        });
    }
    for (auto& w : workers) w.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    BmdsResult merged = results.front();
    for (std::size_t c = 1; c < results.size(); ++c) {
        merged.embedding.coords += results[c].embedding.coords;
        merged.weights.sigma2 += results[c].weights.sigma2;
        merged.acceptance_rate += results[c].acceptance_rate;
        merged.trace.insert(merged.trace.end(), results[c].trace.begin(), results[c].trace.end());
    }
    merged.embedding.coords /= static_cast<double>(chains);
    merged.weights.sigma2 /= static_cast<double>(chains);
    merged.acceptance_rate /= static_cast<double>(chains);
    return merged;
}

}  // namespace refined
