#pragma once

#include <cmath>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include <boost/math/tools/minima.hpp>

#include "jmboost/data.hpp"
#include "jmboost/errors.hpp"

namespace jmboost {

// Error variance, association parameter and constant baseline hazard,
// updated jointly by likelihood maximization between boosting steps.
struct NuisanceParams {
    double sigma2 = 1.0;
    double alpha = 0.1;
    double lambda0 = 0.1;
};

// Current fitted values of the two sub-predictors. The shared predictor
// decomposes per observation as
//   eta_ls[k] = eta_ls_timefree[i] + (beta_t + gamma1[i]) * t_k
// where i is the observation's individual and eta_ls_timefree carries all
// time-constant contributions including the random intercept gamma0.
struct PredictorState {
    std::vector<double> eta_l;            // per observation
    std::vector<double> eta_ls;           // per observation
    std::vector<double> eta_ls_timefree;  // per individual
    double beta_t = 0.0;
    std::vector<double> gamma0;           // per individual
    std::vector<double> gamma1;           // per individual

    // Offsets: eta_l starts at the response mean, eta_ls at zero.
    static PredictorState init(const JointDataset& ds) {
        PredictorState s;
        const std::size_t n = ds.n_obs(), N = ds.n_individuals();
        double ybar = 0.0;
        for (double y : ds.response) ybar += y;
        ybar /= static_cast<double>(n);
        s.eta_l.assign(n, ybar);
        s.eta_ls.assign(n, 0.0);
        s.eta_ls_timefree.assign(N, 0.0);
        s.gamma0.assign(N, 0.0);
        s.gamma1.assign(N, 0.0);
        return s;
    }

    // Shared predictor evaluated at an arbitrary time for individual i.
    double eta_ls_at(std::size_t i, double t) const {
        return eta_ls_timefree[i] + (beta_t + gamma1[i]) * t;
    }
};

namespace detail {

inline double checked_exp(double x) {
    if (x > 700.0)
        throw numeric_error("exp overflow in hazard evaluation (exponent " +
                            std::to_string(x) + ")");
    return std::exp(x);
}

} // namespace detail

// Closed form of lambda0 * int_0^T exp(alpha * (eta_tf + slope * u)) du
// for a predictor linear in time. The |alpha*slope| -> 0 limit is
// lambda0 * T * exp(alpha * eta_tf).
inline double cum_hazard_raw(double eta_tf, double slope, double alpha,
                             double lambda0, double T) {
    const double k = alpha * slope;
    const double base = detail::checked_exp(alpha * eta_tf);
    if (std::abs(k) < 1e-10) return lambda0 * T * base;
    if (k * T > 700.0)
        throw numeric_error("exp overflow in hazard evaluation (exponent " +
                            std::to_string(k * T) + ")");
    return lambda0 * base * std::expm1(k * T) / k;
}

inline double cum_hazard_integral(const PredictorState& s, const NuisanceParams& nu,
                                  std::size_t i, double T) {
    return cum_hazard_raw(s.eta_ls_timefree[i], s.beta_t + s.gamma1[i],
                          nu.alpha, nu.lambda0, T);
}

// P(event before t) implied by the constant-baseline proportional hazard.
inline double event_cdf_raw(double eta_tf, double slope, double alpha,
                            double lambda0, double t) {
    return -std::expm1(-cum_hazard_raw(eta_tf, slope, alpha, lambda0, t));
}

inline double event_cdf(const PredictorState& s, const NuisanceParams& nu,
                        std::size_t i, double t) {
    return event_cdf_raw(s.eta_ls_timefree[i], s.beta_t + s.gamma1[i],
                         nu.alpha, nu.lambda0, t);
}

// Joint log-likelihood: Gaussian longitudinal factor plus the survival
// factor with constant baseline hazard.
inline double log_likelihood(const JointDataset& ds, const PredictorState& s,
                             const NuisanceParams& nu) {
    if (!(nu.sigma2 > 0.0)) throw validation_error("sigma2 must be positive");
    if (!(nu.lambda0 > 0.0)) throw validation_error("lambda0 must be positive");
    const std::size_t n = ds.n_obs(), N = ds.n_individuals();
    double ll = -0.5 * static_cast<double>(n) *
                std::log(2.0 * M_PI * nu.sigma2);
    double ss = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double r = ds.response[k] - s.eta_l[k] - s.eta_ls[k];
        ss += r * r;
    }
    ll -= ss / (2.0 * nu.sigma2);
    for (std::size_t i = 0; i < N; ++i) {
        if (ds.status[i])
            ll += std::log(nu.lambda0) + nu.alpha * s.eta_ls_at(i, ds.event_time[i]);
        ll -= cum_hazard_integral(s, nu, i, ds.event_time[i]);
    }
    return ll;
}

// Negative gradient of the loss w.r.t. eta_l: scaled residuals.
inline std::vector<double> gradient_l(const JointDataset& ds, const PredictorState& s,
                                      const NuisanceParams& nu) {
    std::vector<double> u(ds.n_obs());
    for (std::size_t k = 0; k < ds.n_obs(); ++k)
        u[k] = (ds.response[k] - s.eta_ls[k] - s.eta_l[k]) / nu.sigma2;
    return u;
}

struct GradientOptions {
    // Scale the replicated per-individual survival summand by 1/n_i.
    bool normalize_survival = false;
    // Attach the survival summand only to each individual's last row.
    bool survival_last_row_only = false;
};

// Negative gradient of the loss w.r.t. eta_ls. The survival summand is
// computed once per individual at T_i and replicated across that
// individual's rows.
inline std::vector<double> gradient_ls(const JointDataset& ds, const PredictorState& s,
                                       const NuisanceParams& nu,
                                       const GradientOptions& opt = {}) {
    std::vector<double> u(ds.n_obs());
    for (std::size_t i = 0; i < ds.n_individuals(); ++i) {
        const double slope = s.beta_t + s.gamma1[i];
        const double eta_tf = s.eta_ls_timefree[i];
        const double T = ds.event_time[i];
        double ratio;
        if (std::abs(slope) < 1e-10) {
            ratio = nu.alpha * T * detail::checked_exp(nu.alpha * eta_tf);
        } else {
            // (exp(alpha*eta_ls(T)) - exp(alpha*eta_tf)) / slope
            const double k = nu.alpha * slope;
            if (nu.alpha * eta_tf + k * T > 700.0 || nu.alpha * eta_tf > 700.0)
                throw numeric_error("exp overflow in gradient_ls for individual index " +
                                    std::to_string(i));
            ratio = detail::checked_exp(nu.alpha * eta_tf) * std::expm1(k * T) / slope;
        }
        double surv = ds.status[i] * nu.alpha - nu.lambda0 * ratio;
        const std::size_t ni = ds.n_obs_of(i);
        if (opt.normalize_survival) surv /= static_cast<double>(ni);
        for (std::size_t k = ds.obs_begin(i); k < ds.obs_end(i); ++k) {
            u[k] = (ds.response[k] - s.eta_l[k] - s.eta_ls[k]) / nu.sigma2;
            if (!opt.survival_last_row_only || k + 1 == ds.obs_end(i)) u[k] += surv;
        }
    }
    return u;
}

namespace detail {

// Scalar maximizer on [lo, hi] with bracket doubling when the optimum
// lands on the edge. Returns the argmax.
template <class F>
double maximize_scalar(F&& f, double lo, double hi, double lo_cap, double hi_cap) {
    for (;;) {
        auto neg = [&](double x) { return -f(x); };
        auto [x, fx] = boost::math::tools::brent_find_minima(neg, lo, hi, 40);
        (void)fx;
        const double span = hi - lo;
        const bool at_lo = (x - lo) < 1e-3 * span && lo > lo_cap;
        const bool at_hi = (hi - x) < 1e-3 * span && hi < hi_cap;
        if (!at_lo && !at_hi) return x;
        lo = std::max(lo_cap, 2.0 * lo);
        hi = std::min(hi_cap, 2.0 * hi);
    }
}

} // namespace detail

// Step3 of the boosting cycle: exact Gaussian MLE for sigma2 and, unless
// frozen, profile-likelihood maximization over alpha with lambda0 profiled
// out in closed form. Never decreases the joint log-likelihood at fixed
// predictors.
inline NuisanceParams update_nuisance(const JointDataset& ds, const PredictorState& s,
                                      const NuisanceParams& cur,
                                      bool freeze_survival = false) {
    const std::size_t n = ds.n_obs(), N = ds.n_individuals();
    double ss = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double r = ds.response[k] - s.eta_l[k] - s.eta_ls[k];
        ss += r * r;
    }
    NuisanceParams out = cur;
    out.sigma2 = std::max(ss / static_cast<double>(n),
                          std::numeric_limits<double>::min());
    if (freeze_survival) return out;

    double events = 0.0;
    for (std::size_t i = 0; i < N; ++i) events += ds.status[i];

    // Unit-hazard cumulative integral summed over individuals.
    auto total_H = [&](double alpha) {
        double H = 0.0;
        for (std::size_t i = 0; i < N; ++i)
            H += cum_hazard_raw(s.eta_ls_timefree[i], s.beta_t + s.gamma1[i],
                                alpha, 1.0, ds.event_time[i]);
        return H;
    };

    const double neg_inf = -std::numeric_limits<double>::infinity();
    if (events == 0.0) {
        // lambda0 profile undefined without events; keep it and tune alpha.
        std::cerr << "jmboost: warning: no events in dataset, keeping lambda0 fixed\n";
        auto obj = [&](double alpha) {
            try {
                return -cur.lambda0 * total_H(alpha);
            } catch (const numeric_error&) {
                return neg_inf;
            }
        };
        out.alpha = detail::maximize_scalar(obj, -5.0, 5.0, -40.0, 40.0);
        if (obj(out.alpha) < obj(cur.alpha)) out.alpha = cur.alpha;
        return out;
    }

    double sum_delta_eta = 0.0;
    for (std::size_t i = 0; i < N; ++i)
        if (ds.status[i]) sum_delta_eta += s.eta_ls_at(i, ds.event_time[i]);

    auto profile = [&](double alpha) {
        try {
            const double H = total_H(alpha);
            if (!(H > 0.0) || !std::isfinite(H)) return neg_inf;
            return events * std::log(events / H) + alpha * sum_delta_eta - events;
        } catch (const numeric_error&) {
            return neg_inf;
        }
    };
    const double alpha_hat = detail::maximize_scalar(profile, -5.0, 5.0, -40.0, 40.0);

    // Candidate triples; keep the best so the update is monotone even if
    // the scalar search under-resolves.
    NuisanceParams best = out;
    double best_ll = neg_inf;
    auto consider = [&](double alpha, double lambda0) {
        if (!(lambda0 > 0.0) || !std::isfinite(lambda0)) return;
        NuisanceParams cand{out.sigma2, alpha, lambda0};
        try {
            const double ll = log_likelihood(ds, s, cand);
            if (ll > best_ll) { best_ll = ll; best = cand; }
        } catch (const numeric_error&) {
        }
    };
    auto lam_of = [&](double alpha) {
        try {
            return events / total_H(alpha);
        } catch (const numeric_error&) {
            return std::numeric_limits<double>::quiet_NaN();
        }
    };
    consider(alpha_hat, lam_of(alpha_hat));
    consider(cur.alpha, lam_of(cur.alpha));
    consider(cur.alpha, cur.lambda0);
    return best;
}

} // namespace jmboost
