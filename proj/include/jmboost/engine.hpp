#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "jmboost/baselearners.hpp"
#include "jmboost/data.hpp"
#include "jmboost/jointlik.hpp"

namespace jmboost {

struct BoostConfig {
    double nu = 0.1;
    int mstop_l = 0;
    int mstop_ls = 0;
    double alpha0 = 0.1;
    double lambda0_0 = 0.1;
    double re_df = 1.5;  // random-effects df per individual, in (0, 2)
    GradientOptions gradient;
    bool record_paths = true;
};

// Aggregated per-learner intercepts fold into one sub-predictor intercept;
// slopes stay per covariate.
struct CoefficientTable {
    double intercept = 0.0;
    std::vector<double> slopes;
    std::vector<std::string> names;
};

struct FitResult {
    PredictorState state;
    NuisanceParams nuisance;
    CoefficientTable coef_l, coef_ls;  // standardized scale
    std::vector<int> selection_l, selection_ls;  // -1 = step skipped
    std::vector<double> loglik_trace;
    std::vector<std::vector<double>> path_l, path_ls;  // iteration-major slopes
    std::vector<double> path_beta_t;
    std::vector<long long> train_ids;
    BoostConfig config;
    ScalingManifest manifest;

    double beta_t() const { return state.beta_t; }

    nlohmann::json to_json() const;
    static FitResult from_json(const nlohmann::json& j);
};

// Invoked with the in-progress fit after the listed iterations complete;
// the partial FitResult is fully consistent at that point.
using CheckpointFn = std::function<void(int, const FitResult&)>;

namespace detail {

inline void apply_longitudinal_update(const LearnerBank& bank, std::size_t j,
                                      const LearnerFit& f, double nu,
                                      PredictorState& s, CoefficientTable& coef) {
    const auto& spec = bank.specs[j];
    const auto& x = bank.columns[j];
    for (std::size_t k = 0; k < s.eta_l.size(); ++k)
        s.eta_l[k] += nu * (f.intercept + f.slope * x[k]);
    coef.intercept += nu * f.intercept;
    coef.slopes[spec.column] += nu * f.slope;
}

inline void apply_shared_update(const JointDataset& ds, const LearnerBank& bank,
                                std::size_t j, const LearnerFit& f, double nu,
                                PredictorState& s, CoefficientTable& coef) {
    const auto& spec = bank.specs[j];
    const std::size_t N = ds.n_individuals();
    switch (spec.kind) {
        case LearnerKind::linear:
            for (std::size_t k = 0; k < ds.n_obs(); ++k)
                s.eta_ls[k] += nu * (f.intercept + f.slope * bank.columns[j][k]);
            for (std::size_t i = 0; i < N; ++i)
                s.eta_ls_timefree[i] +=
                    nu * (f.intercept + f.slope * ds.shared_cols[spec.column][i]);
            coef.intercept += nu * f.intercept;
            coef.slopes[spec.column] += nu * f.slope;
            break;
        case LearnerKind::time_effect:
            for (std::size_t k = 0; k < ds.n_obs(); ++k)
                s.eta_ls[k] += nu * (f.intercept + f.slope * ds.time[k]);
            for (std::size_t i = 0; i < N; ++i)
                s.eta_ls_timefree[i] += nu * f.intercept;
            s.beta_t += nu * f.slope;
            coef.intercept += nu * f.intercept;
            break;
        case LearnerKind::random_effects:
            for (std::size_t k = 0; k < ds.n_obs(); ++k) {
                const std::size_t i = ds.obs_individual[k];
                s.eta_ls[k] += nu * (f.g0[i] + f.g1[i] * ds.time[k]);
            }
            for (std::size_t i = 0; i < N; ++i) {
                s.gamma0[i] += nu * f.g0[i];
                s.gamma1[i] += nu * f.g1[i];
                s.eta_ls_timefree[i] += nu * f.g0[i];
            }
            break;
    }
}

// Penalized per-individual refit of the accumulated random effects. The
// target is the longitudinal residual with the current random-effect
// contribution added back, so the refit replaces (rather than increments)
// the effects:
//   (g0_i, g1_i) = argmin sum_j (rho_ij - g0 - g1 t_ij)^2 + pen (g0^2 + g1^2),
//   rho_ij = y_ij - eta_l_ij - (eta_ls_ij - g0_i^cur - g1_i^cur t_ij).
// Repeating this every shared iteration keeps the accumulated effects
// regularized toward the ridge solution given the current fixed predictors:
// fixed-effect signal absorbed early leaks back into the gradient and is
// reclaimed by the covariate learners, while the converse (a fixed-effect
// learner holding individual-level signal) is impossible. Without the
// refit the effects either starve the shared covariates or never converge,
// depending on the penalty.
// The refit is centered: the random effects are mean-zero by model
// assumption, so the across-individual means of the per-individual
// solutions are subtracted and left in the residual for the fixed-effect
// learners (a common intercept or time-slope gap is not individual-level
// signal and must stay visible to the competition).
inline void refit_random_effects(const JointDataset& ds, double penalty,
                                 PredictorState& s) {
    const std::size_t N = ds.n_individuals();
    std::vector<double> g0(N), g1(N);
    for (std::size_t i = 0; i < N; ++i) {
        double n_i = 0.0, t1 = 0.0, stt = 0.0, sr = 0.0, srt = 0.0;
        for (std::size_t k = ds.obs_offset[i]; k < ds.obs_offset[i + 1]; ++k) {
            const double fixed = s.eta_ls[k] - s.gamma0[i] - s.gamma1[i] * ds.time[k];
            const double rho = ds.response[k] - s.eta_l[k] - fixed;
            n_i += 1.0;
            t1 += ds.time[k];
            stt += ds.time[k] * ds.time[k];
            sr += rho;
            srt += rho * ds.time[k];
        }
        const double a11 = n_i + penalty, a12 = t1, a22 = stt + penalty;
        const double det = a11 * a22 - a12 * a12;
        if (det <= 0.0)
            throw numeric_error("singular random-effects system for individual index " +
                                std::to_string(i));
        g0[i] = (a22 * sr - a12 * srt) / det;
        g1[i] = (a11 * srt - a12 * sr) / det;
    }
    double m0 = 0.0, m1 = 0.0;
    for (std::size_t i = 0; i < N; ++i) { m0 += g0[i]; m1 += g1[i]; }
    m0 /= static_cast<double>(N);
    m1 /= static_cast<double>(N);
    for (std::size_t i = 0; i < N; ++i) {
        const double d0 = (g0[i] - m0) - s.gamma0[i];
        const double d1 = (g1[i] - m1) - s.gamma1[i];
        for (std::size_t k = ds.obs_offset[i]; k < ds.obs_offset[i + 1]; ++k)
            s.eta_ls[k] += d0 + d1 * ds.time[k];
        s.gamma0[i] += d0;
        s.gamma1[i] += d1;
        s.eta_ls_timefree[i] += d0;
    }
}

} // namespace detail

inline std::pair<LearnerBank, LearnerBank> make_default_banks(const JointDataset& ds,
                                                              const BoostConfig& cfg) {
    return {LearnerBank::longitudinal(ds), LearnerBank::shared(ds, cfg.re_df)};
}

// Algorithm driver: per iteration, a longitudinal boosting step while
// m <= mstop_l, a shared boosting step (using the freshly updated eta_l)
// while m <= mstop_ls, then a nuisance update where sigma2 is refreshed
// every iteration and (alpha, lambda0) freeze once m > mstop_ls.
inline FitResult fit(const JointDataset& ds, const LearnerBank& bank_l,
                     const LearnerBank& bank_ls, const BoostConfig& cfg,
                     const std::vector<int>& checkpoints = {},
                     const CheckpointFn& on_checkpoint = nullptr) {
    if (bank_l.rows() != ds.n_obs() || bank_ls.rows() != ds.n_obs())
        throw validation_error("bank row count does not match dataset");
    if (!(cfg.nu > 0.0 && cfg.nu <= 1.0))
        throw validation_error("step length must lie in (0,1]");
    if (cfg.mstop_l < 0 || cfg.mstop_ls < 0)
        throw validation_error("stopping iterations must be nonnegative");

    FitResult r;
    r.config = cfg;
    r.train_ids = ds.ids;
    r.state = PredictorState::init(ds);
    r.coef_l.intercept = r.state.eta_l.empty() ? 0.0 : r.state.eta_l[0];
    r.coef_l.slopes.assign(ds.p_l(), 0.0);
    r.coef_l.names = ds.names_l;
    r.coef_ls.slopes.assign(ds.p_ls(), 0.0);
    r.coef_ls.names = ds.names_ls;

    double ss = 0.0;
    for (std::size_t k = 0; k < ds.n_obs(); ++k) {
        const double d = ds.response[k] - r.state.eta_l[k];
        ss += d * d;
    }
    r.nuisance = {ss / static_cast<double>(ds.n_obs()), cfg.alpha0, cfg.lambda0_0};

    auto record = [&]() {
        if (!cfg.record_paths) return;
        r.path_l.push_back(r.coef_l.slopes);
        r.path_ls.push_back(r.coef_ls.slopes);
        r.path_beta_t.push_back(r.state.beta_t);
    };
    record();
    r.loglik_trace.push_back(log_likelihood(ds, r.state, r.nuisance));

    const int mmax = std::max(cfg.mstop_l, cfg.mstop_ls);
    for (int m = 1; m <= mmax; ++m) {
        try {
            if (m <= cfg.mstop_l) {
                auto u = gradient_l(ds, r.state, r.nuisance);
                auto [j, f] = bank_l.select_best(u);
                detail::apply_longitudinal_update(bank_l, j, f, cfg.nu, r.state, r.coef_l);
                r.selection_l.push_back(static_cast<int>(j));
            } else {
                r.selection_l.push_back(-1);
            }
        } catch (const numeric_error& e) {
            throw numeric_error("iteration " + std::to_string(m) +
                                ", longitudinal step: " + e.what());
        }
        try {
            if (m <= cfg.mstop_ls) {
                auto u = gradient_ls(ds, r.state, r.nuisance, cfg.gradient);
                // The per-iteration refit below maintains the random effects,
                // so the shared competition runs over the fixed-effect
                // learners only; an incremental random-effects winner would
                // be overwritten by the refit anyway.
                auto [j, f] = bank_ls.select_best(u, /*include_random_effects=*/false);
                detail::apply_shared_update(ds, bank_ls, j, f, cfg.nu, r.state, r.coef_ls);
                detail::refit_random_effects(ds, bank_ls.random_effects_penalty(), r.state);
                r.selection_ls.push_back(static_cast<int>(j));
            } else {
                r.selection_ls.push_back(-1);
            }
        } catch (const numeric_error& e) {
            throw numeric_error("iteration " + std::to_string(m) +
                                ", shared step: " + e.what());
        }
        try {
            r.nuisance = update_nuisance(ds, r.state, r.nuisance,
                                         /*freeze_survival=*/m > cfg.mstop_ls);
        } catch (const numeric_error& e) {
            throw numeric_error("iteration " + std::to_string(m) +
                                ", nuisance step: " + e.what());
        }
        record();
        r.loglik_trace.push_back(log_likelihood(ds, r.state, r.nuisance));
        if (on_checkpoint &&
            std::find(checkpoints.begin(), checkpoints.end(), m) != checkpoints.end())
            on_checkpoint(m, r);
    }
    return r;
}

inline FitResult fit(const JointDataset& ds, const BoostConfig& cfg) {
    auto [bl, bls] = make_default_banks(ds, cfg);
    return fit(ds, bl, bls, cfg);
}

// ---------------------------------------------------------------------------
// Prediction and predictive risk
// ---------------------------------------------------------------------------

// Reconstructs a predictor state for new data from the aggregated
// coefficient tables. Individuals never seen in training get zero
// random-effect contributions.
inline PredictorState reconstruct_state(const FitResult& fit, const JointDataset& ds) {
    if (ds.p_l() != fit.coef_l.slopes.size() || ds.p_ls() != fit.coef_ls.slopes.size())
        throw validation_error("covariate arity does not match fitted model");
    std::map<long long, std::size_t> train_index;
    for (std::size_t i = 0; i < fit.train_ids.size(); ++i)
        train_index[fit.train_ids[i]] = i;

    PredictorState s;
    const std::size_t n = ds.n_obs(), N = ds.n_individuals();
    s.eta_l.assign(n, fit.coef_l.intercept);
    for (std::size_t j = 0; j < ds.p_l(); ++j) {
        const double b = fit.coef_l.slopes[j];
        if (b == 0.0) continue;
        for (std::size_t k = 0; k < n; ++k) s.eta_l[k] += b * ds.long_cols[j][k];
    }
    s.beta_t = fit.state.beta_t;
    s.gamma0.assign(N, 0.0);
    s.gamma1.assign(N, 0.0);
    s.eta_ls_timefree.assign(N, fit.coef_ls.intercept);
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t j = 0; j < ds.p_ls(); ++j)
            s.eta_ls_timefree[i] += fit.coef_ls.slopes[j] * ds.shared_cols[j][i];
        auto it = train_index.find(ds.ids[i]);
        if (it != train_index.end()) {
            s.gamma0[i] = fit.state.gamma0[it->second];
            s.gamma1[i] = fit.state.gamma1[it->second];
            s.eta_ls_timefree[i] += s.gamma0[i];
        }
    }
    s.eta_ls.resize(n);
    for (std::size_t k = 0; k < n; ++k)
        s.eta_ls[k] = s.eta_ls_at(ds.obs_individual[k], ds.time[k]);
    return s;
}

// Fitted longitudinal mean eta_l + eta_ls at the given rows.
inline std::vector<double> predict_longitudinal(const FitResult& fit,
                                                const JointDataset& ds) {
    PredictorState s = reconstruct_state(fit, ds);
    std::vector<double> out(ds.n_obs());
    for (std::size_t k = 0; k < ds.n_obs(); ++k) out[k] = s.eta_l[k] + s.eta_ls[k];
    return out;
}

// Negative joint log-likelihood of eval data under the fitted model
// (the predictive risk used for early stopping). Individuals seen in
// training keep their fitted random effects (so risk on the training set
// equals the negative in-sample log-likelihood). For unseen individuals
// the Gaussian factor is the marginal likelihood with the standard-normal
// random effects integrated out, and the survival factor is evaluated at
// their posterior-mean effects. Plugging in zero effects instead makes the
// risk depend mostly on how far the fitted error variance sits from the
// unexplained individual-level variance, which rewards underfitting;
// refitting the effects without the prior variance soaks up
// between-individual prediction errors, which rewards overfitting. The
// marginal likelihood penalizes both.
inline double evaluate_risk(const FitResult& fit, const JointDataset& eval_ds) {
    PredictorState s = reconstruct_state(fit, eval_ds);
    const NuisanceParams& nu = fit.nuisance;
    if (!(nu.sigma2 > 0.0)) throw validation_error("sigma2 must be positive");
    std::map<long long, bool> trained;
    for (long long id : fit.train_ids) trained[id] = true;

    double ll = 0.0;
    for (std::size_t i = 0; i < eval_ds.n_individuals(); ++i) {
        const std::size_t k0 = eval_ds.obs_offset[i], k1 = eval_ds.obs_offset[i + 1];
        const double n_i = static_cast<double>(k1 - k0);
        if (trained.count(eval_ds.ids[i])) {
            ll += -0.5 * n_i * std::log(2.0 * M_PI * nu.sigma2);
            for (std::size_t k = k0; k < k1; ++k) {
                const double r = eval_ds.response[k] - s.eta_l[k] - s.eta_ls[k];
                ll -= r * r / (2.0 * nu.sigma2);
            }
            continue;
        }
        // Marginal Gaussian factor: y_i ~ N(eta_fixed, sigma2 I + Z Z')
        // with Z = [1, t]; Woodbury through M = sigma2 I_2 + Z'Z.
        double t1 = 0.0, stt = 0.0, sr = 0.0, srt = 0.0, srr = 0.0;
        for (std::size_t k = k0; k < k1; ++k) {
            const double r = eval_ds.response[k] - s.eta_l[k] - s.eta_ls[k];
            t1 += eval_ds.time[k];
            stt += eval_ds.time[k] * eval_ds.time[k];
            sr += r;
            srt += r * eval_ds.time[k];
            srr += r * r;
        }
        const double a11 = n_i + nu.sigma2, a12 = t1, a22 = stt + nu.sigma2;
        const double detM = a11 * a22 - a12 * a12;
        if (detM <= 0.0)
            throw numeric_error("singular random-effects system for individual index " +
                                std::to_string(i));
        const double g0 = (a22 * sr - a12 * srt) / detM;  // posterior mean
        const double g1 = (a11 * srt - a12 * sr) / detM;
        const double quad = (srr - (g0 * sr + g1 * srt)) / nu.sigma2;
        const double logdet =
            (n_i - 2.0) * std::log(nu.sigma2) + std::log(detM);
        ll += -0.5 * (n_i * std::log(2.0 * M_PI) + logdet + quad);
        s.gamma0[i] = g0;
        s.gamma1[i] = g1;
        s.eta_ls_timefree[i] += g0;
        for (std::size_t k = k0; k < k1; ++k)
            s.eta_ls[k] += g0 + g1 * eval_ds.time[k];
    }
    if (!(nu.lambda0 > 0.0)) throw validation_error("lambda0 must be positive");
    for (std::size_t i = 0; i < eval_ds.n_individuals(); ++i) {
        if (eval_ds.status[i])
            ll += std::log(nu.lambda0) + nu.alpha * s.eta_ls_at(i, eval_ds.event_time[i]);
        ll -= cum_hazard_integral(s, nu, i, eval_ds.event_time[i]);
    }
    return -ll;
}

// ---------------------------------------------------------------------------
// Back-transformation and serialization
// ---------------------------------------------------------------------------

// Maps standardized-scale coefficients back to the original covariate
// scale through the scaling manifest.
inline CoefficientTable back_transform(const CoefficientTable& coef,
                                       const std::map<std::string, ColumnScale>& scales) {
    CoefficientTable out = coef;
    for (std::size_t j = 0; j < coef.slopes.size(); ++j) {
        auto it = scales.find(coef.names[j]);
        if (it == scales.end()) continue;
        out.slopes[j] = coef.slopes[j] / it->second.sd;
        out.intercept -= coef.slopes[j] * it->second.mean / it->second.sd;
    }
    return out;
}

namespace detail {

inline nlohmann::json coef_to_json(const CoefficientTable& c) {
    return {{"intercept", c.intercept}, {"slopes", c.slopes}, {"names", c.names}};
}

inline CoefficientTable coef_from_json(const nlohmann::json& j) {
    CoefficientTable c;
    c.intercept = j["intercept"];
    c.slopes = j["slopes"].get<std::vector<double>>();
    c.names = j["names"].get<std::vector<std::string>>();
    return c;
}

} // namespace detail

inline nlohmann::json FitResult::to_json() const {
    nlohmann::json j;
    j["config"] = {{"nu", config.nu},
                   {"mstop_l", config.mstop_l},
                   {"mstop_ls", config.mstop_ls},
                   {"alpha0", config.alpha0},
                   {"lambda0_0", config.lambda0_0},
                   {"re_df", config.re_df},
                   {"normalize_survival", config.gradient.normalize_survival},
                   {"survival_last_row_only", config.gradient.survival_last_row_only}};
    j["nuisance"] = {{"sigma2", nuisance.sigma2},
                     {"alpha", nuisance.alpha},
                     {"lambda0", nuisance.lambda0}};
    j["coefficients"]["longitudinal"] = detail::coef_to_json(coef_l);
    j["coefficients"]["shared"] = detail::coef_to_json(coef_ls);
    j["coefficients"]["beta_t"] = state.beta_t;
    j["coefficients_original_scale"]["longitudinal"] =
        detail::coef_to_json(back_transform(coef_l, manifest.long_scales));
    j["coefficients_original_scale"]["shared"] =
        detail::coef_to_json(back_transform(coef_ls, manifest.shared_scales));
    j["random_effects"] = {{"ids", train_ids},
                           {"gamma0", state.gamma0},
                           {"gamma1", state.gamma1}};
    j["selection"] = {{"longitudinal", selection_l}, {"shared", selection_ls}};
    j["loglik_trace"] = loglik_trace;
    j["manifest"] = manifest.to_json();
    return j;
}

inline FitResult FitResult::from_json(const nlohmann::json& j) {
    FitResult r;
    const auto& c = j["config"];
    r.config.nu = c["nu"];
    r.config.mstop_l = c["mstop_l"];
    r.config.mstop_ls = c["mstop_ls"];
    r.config.alpha0 = c["alpha0"];
    r.config.lambda0_0 = c["lambda0_0"];
    r.config.re_df = c["re_df"];
    r.config.gradient.normalize_survival = c["normalize_survival"];
    r.config.gradient.survival_last_row_only = c["survival_last_row_only"];
    r.nuisance = {j["nuisance"]["sigma2"], j["nuisance"]["alpha"],
                  j["nuisance"]["lambda0"]};
    r.coef_l = detail::coef_from_json(j["coefficients"]["longitudinal"]);
    r.coef_ls = detail::coef_from_json(j["coefficients"]["shared"]);
    r.state.beta_t = j["coefficients"]["beta_t"];
    r.train_ids = j["random_effects"]["ids"].get<std::vector<long long>>();
    r.state.gamma0 = j["random_effects"]["gamma0"].get<std::vector<double>>();
    r.state.gamma1 = j["random_effects"]["gamma1"].get<std::vector<double>>();
    r.selection_l = j["selection"]["longitudinal"].get<std::vector<int>>();
    r.selection_ls = j["selection"]["shared"].get<std::vector<int>>();
    r.loglik_trace = j["loglik_trace"].get<std::vector<double>>();
    r.manifest = ScalingManifest::from_json(j["manifest"]);
    return r;
}

} // namespace jmboost
