#pragma once

#include <random>
#include <vector>

#include "jmboost/jmboost.hpp"

namespace testutil {

// Two individuals, 3 + 2 observations, one covariate per block.
inline jmboost::JointDataset make_toy() {
    using jmboost::LongObservation;
    using jmboost::SurvivalRecord;
    std::vector<LongObservation> obs = {
        {1, 0.2, 1.0, {0.5}}, {1, 1.1, 1.5, {-0.2}}, {1, 2.3, 2.0, {1.0}},
        {2, 0.4, -0.5, {0.1}}, {2, 1.6, 0.3, {-1.0}},
    };
    std::vector<SurvivalRecord> surv = {
        {1, 3.0, 1, {0.7}},
        {2, 2.0, 0, {-0.3}},
    };
    return jmboost::JointDataset::from_records(obs, surv, {"x1"}, {"z1"});
}

// Random dataset with a joint-model flavour: random covariates, random
// effects, events from the model's own hazard.
inline jmboost::JointDataset make_random_ds(std::size_t N, int ni, std::size_t p_l,
                                            std::size_t p_ls, std::uint64_t seed,
                                            double alpha = 0.4, double lambda0 = 0.08) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> norm(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<jmboost::LongObservation> obs;
    std::vector<jmboost::SurvivalRecord> surv;
    for (std::size_t i = 0; i < N; ++i) {
        const double g0 = norm(rng), g1 = norm(rng);
        std::vector<double> zi(p_ls);
        for (auto& v : zi) v = norm(rng);
        double eta_tf = g0 + 0.8 * zi[0];
        const double slope = 1.0 + g1;
        std::vector<double> t(ni);
        for (int j = 0; j < ni; ++j)
            t[j] = j + std::uniform_int_distribution<int>(1, 365)(rng) / 365.0;
        // event from the true hazard via a single uniform
        double T = t[ni - 1];
        int delta = 0;
        const double u = unif(rng);
        for (int j = 0; j < ni; ++j) {
            const double F = jmboost::event_cdf_raw(eta_tf, slope, alpha, lambda0, t[j]);
            if (u < F) {
                T = t[j];
                delta = 1;
                break;
            }
        }
        int kept = 0;
        while (kept < ni && t[kept] < T) ++kept;
        if (delta == 0) kept = ni;
        if (kept < 2) { kept = 2; T = t[1] + 0.01; }
        for (int j = 0; j < kept; ++j) {
            jmboost::LongObservation o;
            o.individual_id = static_cast<long long>(i + 1);
            o.time = t[j];
            o.covariates.resize(p_l);
            double eta_l = 0.0;
            for (std::size_t c = 0; c < p_l; ++c) {
                o.covariates[c] = norm(rng);
                if (c == 0) eta_l += 1.5 * o.covariates[c];
            }
            o.response = eta_l + eta_tf + slope * o.time + 0.7 * norm(rng);
            obs.push_back(std::move(o));
        }
        jmboost::SurvivalRecord s;
        s.individual_id = static_cast<long long>(i + 1);
        s.event_time = T;
        s.event_indicator = delta;
        s.covariates = zi;
        surv.push_back(std::move(s));
    }
    std::vector<std::string> nl, nls;
    for (std::size_t c = 0; c < p_l; ++c) nl.push_back("x" + std::to_string(c + 1));
    for (std::size_t c = 0; c < p_ls; ++c) nls.push_back("z" + std::to_string(c + 1));
    return jmboost::JointDataset::from_records(obs, surv, nl, nls);
}

// Random predictor state with the decomposition invariant satisfied.
inline jmboost::PredictorState make_random_state(const jmboost::JointDataset& ds,
                                                 std::uint64_t seed,
                                                 double spread = 0.5) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> norm(0.0, spread);
    jmboost::PredictorState s = jmboost::PredictorState::init(ds);
    s.beta_t = norm(rng);
    for (std::size_t i = 0; i < ds.n_individuals(); ++i) {
        s.eta_ls_timefree[i] = norm(rng);
        s.gamma0[i] = norm(rng);
        s.gamma1[i] = norm(rng);
        s.eta_ls_timefree[i] += s.gamma0[i];
    }
    for (std::size_t k = 0; k < ds.n_obs(); ++k) {
        s.eta_l[k] += norm(rng);
        s.eta_ls[k] = s.eta_ls_at(ds.obs_individual[k], ds.time[k]);
    }
    return s;
}

} // namespace testutil
