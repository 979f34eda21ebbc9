#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "jmboost/data.hpp"
#include "jmboost/engine.hpp"
#include "jmboost/jointlik.hpp"
#include "jmboost/tuning.hpp"

namespace jmboost {

// Generator configuration. Presets S1/S2/S3 share the informative part
// (three longitudinal effects, two shared effects, a unit time slope and
// association 0.5) and differ only in the number of noise covariates.
struct SimScenario {
    std::size_t n_individuals = 500;
    int obs_per_individual = 5;
    std::vector<double> beta_l{2.0, 1.0, -2.0};
    std::vector<double> beta_ls{1.0, -2.0};
    double beta_t = 1.0;
    double alpha = 0.5;
    // Calibrated so the default presets average ~83.6% censoring.
    double lambda0 = 0.003;
    double sigma2 = 0.1;  // not reported for the reference study; calibrated
    std::size_t noise_l = 4;
    std::size_t noise_ls = 4;
    std::uint64_t seed = 1;

    static SimScenario preset(const std::string& name, std::uint64_t seed = 1) {
        SimScenario s;
        s.seed = seed;
        if (name == "S1") { s.noise_l = 4; s.noise_ls = 4; }
        else if (name == "S2") { s.noise_l = 300; s.noise_ls = 300; }
        else if (name == "S3") { s.noise_l = 1250; s.noise_ls = 1250; }
        else throw validation_error("unknown preset '" + name + "' (expected S1, S2 or S3)");
        return s;
    }

    void validate() const {
        if (n_individuals < 2) throw validation_error("scenario needs at least 2 individuals");
        if (obs_per_individual < 2) throw validation_error("scenario needs n_i >= 2");
        if (!(sigma2 > 0.0)) throw validation_error("sigma2 must be positive");
        if (lambda0 < 0.0) throw validation_error("lambda0 must be nonnegative");
    }
};

struct SimOutput {
    JointDataset dataset;
    nlohmann::json truth;
    double censoring_rate = 0.0;
};

namespace detail {

// Inverse sampling on the piecewise-linear interpolation of the event CDF
// over the individual's time grid. Returns the event time, or a negative
// value when the uniform falls beyond F(t_last) (censored).
inline double sample_event_time(const std::vector<double>& grid_t,
                                const std::vector<double>& grid_F, double u) {
    double t_prev = 0.0, f_prev = 0.0;
    for (std::size_t j = 0; j < grid_t.size(); ++j) {
        if (u < grid_F[j]) {
            const double df = grid_F[j] - f_prev;
            if (df <= 0.0) return t_prev;
            return t_prev + (grid_t[j] - t_prev) * (u - f_prev) / df;
        }
        t_prev = grid_t[j];
        f_prev = grid_F[j];
    }
    return -1.0;
}

inline void standardize_in_place(std::vector<double>& col) {
    const double n = static_cast<double>(col.size());
    double m = 0.0;
    for (double v : col) m += v;
    m /= n;
    double ss = 0.0;
    for (double v : col) ss += (v - m) * (v - m);
    const double sd = std::sqrt(ss / (n - 1.0));
    for (double& v : col) v = (v - m) / sd;
}

} // namespace detail

inline SimOutput generate(const SimScenario& sc) {
    sc.validate();
    const std::size_t N = sc.n_individuals;
    const int ni = sc.obs_per_individual;
    const std::size_t n = N * static_cast<std::size_t>(ni);
    const std::size_t q_l = sc.beta_l.size(), q_ls = sc.beta_ls.size();

    std::mt19937_64 core(sc.seed);
    // separate stream so the informative part is identical across setups
    // that differ only in noise dimensions
    std::mt19937_64 noise(sc.seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_int_distribution<int> day(1, 365);
    std::normal_distribution<double> stdnorm(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    // time grids: observation j lies in year j at a uniform day
    std::vector<std::vector<double>> times(N);
    std::vector<double> gamma0(N), gamma1(N);
    for (std::size_t i = 0; i < N; ++i) {
        times[i].resize(ni);
        for (int j = 0; j < ni; ++j)
            times[i][j] = static_cast<double>(j) + day(core) / 365.0;
        gamma0[i] = stdnorm(core);
        gamma1[i] = stdnorm(core);
    }

    // informative covariates, standardized before predictors are formed
    std::vector<std::vector<double>> xls(q_ls, std::vector<double>(N));
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < q_ls; ++j) xls[j][i] = stdnorm(core);
    std::vector<std::vector<double>> xl(q_l, std::vector<double>(n));
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = 0; j < q_l; ++j) xl[j][k] = stdnorm(core);
    for (auto& col : xls) detail::standardize_in_place(col);
    for (auto& col : xl) detail::standardize_in_place(col);

    std::vector<double> noise_eps(n);
    for (std::size_t k = 0; k < n; ++k)
        noise_eps[k] = stdnorm(core) * std::sqrt(sc.sigma2);

    // event simulation and row retention
    std::vector<double> event_time(N), raw_event_time(N);
    std::vector<int> status(N), kept(N);
    std::vector<double> eta_tf(N);
    std::size_t n_censored = 0;
    for (std::size_t i = 0; i < N; ++i) {
        eta_tf[i] = gamma0[i];
        for (std::size_t j = 0; j < q_ls; ++j) eta_tf[i] += sc.beta_ls[j] * xls[j][i];
        const double slope = sc.beta_t + gamma1[i];
        // Fine inversion grid: the piecewise-linear CDF interpolation is
        // only as accurate as its grid, and inverting on the observation
        // times alone makes within-interval event times uniform rather
        // than hazard-weighted, which attenuates the association estimate.
        const int sub = 64;
        std::vector<double> grid_t, grid_F;
        grid_t.reserve(static_cast<std::size_t>(ni) * sub);
        double seg_start = 0.0;
        for (int j = 0; j < ni; ++j) {
            for (int q = 1; q <= sub; ++q)
                grid_t.push_back(seg_start +
                                 (times[i][j] - seg_start) * q / static_cast<double>(sub));
            seg_start = times[i][j];
        }
        grid_F.resize(grid_t.size());
        for (std::size_t j = 0; j < grid_t.size(); ++j)
            grid_F[j] = event_cdf_raw(eta_tf[i], slope, sc.alpha, sc.lambda0, grid_t[j]);

        bool done = false;
        for (int attempt = 0; attempt < 1000 && !done; ++attempt) {
            const double u = unif(core);
            const double s = detail::sample_event_time(grid_t, grid_F, u);
            if (s < 0.0) {  // no event within follow-up
                status[i] = 0;
                event_time[i] = times[i][ni - 1];
                raw_event_time[i] = -1.0;
                kept[i] = ni;
                ++n_censored;
                done = true;
            } else {
                int keep = 0;
                while (keep < ni && times[i][keep] < s) ++keep;
                if (keep < 1) continue;  // event before first observation: fresh uniform
                status[i] = 1;
                event_time[i] = s;
                raw_event_time[i] = s;
                kept[i] = keep;
                done = true;
            }
        }
        if (!done)
            throw numeric_error("simulation: individual " + std::to_string(i) +
                                " retained no observations after 1000 redraws");
    }

    // assemble records (noise covariates drawn for retained rows only)
    std::vector<std::string> names_l, names_ls;
    for (std::size_t j = 0; j < q_l; ++j) names_l.push_back("xl_" + std::to_string(j + 1));
    for (std::size_t j = 0; j < sc.noise_l; ++j)
        names_l.push_back("xl_noise_" + std::to_string(j + 1));
    for (std::size_t j = 0; j < q_ls; ++j) names_ls.push_back("xls_" + std::to_string(j + 1));
    for (std::size_t j = 0; j < sc.noise_ls; ++j)
        names_ls.push_back("xls_noise_" + std::to_string(j + 1));

    std::vector<LongObservation> obs;
    std::vector<SurvivalRecord> surv;
    for (std::size_t i = 0; i < N; ++i) {
        SurvivalRecord s;
        s.individual_id = static_cast<long long>(i + 1);
        s.event_time = event_time[i];
        s.event_indicator = status[i];
        for (std::size_t j = 0; j < q_ls; ++j) s.covariates.push_back(xls[j][i]);
        s.covariates.resize(q_ls + sc.noise_ls, 0.0);
        surv.push_back(std::move(s));
        for (int j = 0; j < kept[i]; ++j) {
            const std::size_t k = i * static_cast<std::size_t>(ni) + j;
            LongObservation o;
            o.individual_id = static_cast<long long>(i + 1);
            o.time = times[i][j];
            double eta_l = 0.0;
            for (std::size_t c = 0; c < q_l; ++c) eta_l += sc.beta_l[c] * xl[c][k];
            const double eta_ls =
                eta_tf[i] + (sc.beta_t + gamma1[i]) * o.time;
            o.response = eta_l + eta_ls + noise_eps[k];
            for (std::size_t c = 0; c < q_l; ++c) o.covariates.push_back(xl[c][k]);
            o.covariates.resize(q_l + sc.noise_l, 0.0);
            obs.push_back(std::move(o));
        }
    }

    // fill noise columns (standard normal, then standardized over the
    // retained rows / individuals)
    for (std::size_t j = 0; j < sc.noise_l; ++j) {
        std::vector<double> col(obs.size());
        for (auto& v : col) v = stdnorm(noise);
        detail::standardize_in_place(col);
        for (std::size_t k = 0; k < obs.size(); ++k) obs[k].covariates[q_l + j] = col[k];
    }
    for (std::size_t j = 0; j < sc.noise_ls; ++j) {
        std::vector<double> col(N);
        for (auto& v : col) v = stdnorm(noise);
        detail::standardize_in_place(col);
        for (std::size_t i = 0; i < N; ++i) surv[i].covariates[q_ls + j] = col[i];
    }

    SimOutput out;
    out.dataset = JointDataset::from_records(std::move(obs), std::move(surv),
                                             names_l, names_ls);
    out.censoring_rate = static_cast<double>(n_censored) / static_cast<double>(N);

    std::vector<double> beta_l_full(names_l.size(), 0.0), beta_ls_full(names_ls.size(), 0.0);
    for (std::size_t j = 0; j < q_l; ++j) beta_l_full[j] = sc.beta_l[j];
    for (std::size_t j = 0; j < q_ls; ++j) beta_ls_full[j] = sc.beta_ls[j];
    out.truth = {{"beta_l", beta_l_full},
                 {"beta_ls", beta_ls_full},
                 {"beta_t", sc.beta_t},
                 {"alpha", sc.alpha},
                 {"lambda0", sc.lambda0},
                 {"sigma2", sc.sigma2},
                 {"sigma2_note", "residual variance not reported by the reference "
                                 "simulation study; value is this generator's default"},
                 {"covariate_names_l", names_l},
                 {"covariate_names_ls", names_ls},
                 {"gamma0", gamma0},
                 {"gamma1", gamma1},
                 {"event_time_uncensored", raw_event_time},
                 {"censoring_rate", out.censoring_rate},
                 {"seed", sc.seed}};
    return out;
}

// ---------------------------------------------------------------------------
// Replicated study: simulate, tune, fit, aggregate selection and
// estimation metrics.
// ---------------------------------------------------------------------------

struct ReplicateRecord {
    std::vector<double> beta_l_hat;   // informative longitudinal slopes
    std::vector<double> beta_ls_hat;  // informative shared slopes
    double beta_t_hat = 0.0;
    double alpha_hat = 0.0;
    double sigma2_hat = 0.0;
    double lambda0_hat = 0.0;
    std::vector<int> selected_l;   // 0/1 per informative longitudinal covariate
    std::vector<int> selected_ls;  // 0/1 per informative shared covariate
    double fp_l = 0.0;   // share of longitudinal noise covariates selected
    double fp_ls = 0.0;  // share of shared noise covariates selected
    int mstop_l = 0;
    int mstop_ls = 0;
    double censoring_rate = 0.0;
};

struct StudyReport {
    SimScenario scenario;
    std::vector<ReplicateRecord> replicates;

    nlohmann::json to_json() const;
    std::string table1_text() const;
    std::string table2_text() const;
    void write_csv(const std::string& path) const;
};

// One replicate: a fresh dataset of train + eval individuals, grid-tuned
// stopping iterations on the evaluation individuals, final fit on the
// training individuals at the optimum.
inline ReplicateRecord run_replicate(const SimScenario& base, std::uint64_t replicate_seed,
                                     const GridSpec& grid, std::size_t eval_individuals,
                                     const BoostConfig& cfg_template, int jobs) {
    SimScenario sc = base;
    sc.seed = replicate_seed;
    sc.n_individuals = base.n_individuals + eval_individuals;
    SimOutput sim = generate(sc);

    const double train_fraction = static_cast<double>(base.n_individuals) /
                                  static_cast<double>(sc.n_individuals);
    TuneMethod method = HoldoutMethod{train_fraction, replicate_seed};
    TuneResult tuned = tune_adaptive(sim.dataset, cfg_template, grid, method, jobs);

    auto [train, eval] = split_holdout(sim.dataset, train_fraction, replicate_seed);
    (void)eval;
    auto [train_std, manifest] = standardize(train);
    BoostConfig cfg = cfg_template;
    cfg.mstop_l = tuned.best_l;
    cfg.mstop_ls = tuned.best_ls;
    cfg.record_paths = false;
    FitResult fr = fit(train_std, cfg);

    const std::size_t q_l = base.beta_l.size(), q_ls = base.beta_ls.size();
    ReplicateRecord rec;
    rec.beta_l_hat.assign(fr.coef_l.slopes.begin(), fr.coef_l.slopes.begin() + q_l);
    rec.beta_ls_hat.assign(fr.coef_ls.slopes.begin(), fr.coef_ls.slopes.begin() + q_ls);
    rec.beta_t_hat = fr.state.beta_t;
    rec.alpha_hat = fr.nuisance.alpha;
    rec.sigma2_hat = fr.nuisance.sigma2;
    rec.lambda0_hat = fr.nuisance.lambda0;
    rec.mstop_l = tuned.best_l;
    rec.mstop_ls = tuned.best_ls;
    rec.censoring_rate = sim.censoring_rate;

    std::vector<int> wins_l(fr.coef_l.slopes.size(), 0);
    for (int j : fr.selection_l)
        if (j >= 0) wins_l[j] = 1;
    std::vector<int> wins_ls(fr.coef_ls.slopes.size() + 2, 0);
    for (int j : fr.selection_ls)
        if (j >= 0) wins_ls[j] = 1;
    for (std::size_t j = 0; j < q_l; ++j) rec.selected_l.push_back(wins_l[j]);
    for (std::size_t j = 0; j < q_ls; ++j) rec.selected_ls.push_back(wins_ls[j]);
    double fpl = 0.0, fpls = 0.0;
    for (std::size_t j = q_l; j < wins_l.size(); ++j) fpl += wins_l[j];
    for (std::size_t j = q_ls; j < fr.coef_ls.slopes.size(); ++j) fpls += wins_ls[j];
    rec.fp_l = base.noise_l ? fpl / static_cast<double>(base.noise_l) : 0.0;
    rec.fp_ls = base.noise_ls ? fpls / static_cast<double>(base.noise_ls) : 0.0;
    return rec;
}

inline StudyReport replicate_study(const SimScenario& scenario, int runs,
                                   const GridSpec& grid, std::size_t eval_individuals = 1000,
                                   const BoostConfig& cfg_template = {}, int jobs = 1,
                                   const std::function<void(int)>& on_progress = nullptr) {
    if (runs < 1) throw validation_error("study needs at least one run");
    StudyReport rep;
    rep.scenario = scenario;
    for (int r = 0; r < runs; ++r) {
        rep.replicates.push_back(run_replicate(scenario, scenario.seed + static_cast<std::uint64_t>(r),
                                               grid, eval_individuals, cfg_template, jobs));
        if (on_progress) on_progress(r + 1);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Report formatting
// ---------------------------------------------------------------------------

namespace detail {

inline std::pair<double, double> mean_sd(const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    double m = 0.0;
    for (double x : v) m += x;
    m /= n;
    if (v.size() < 2) return {m, 0.0};
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return {m, std::sqrt(ss / (n - 1.0))};
}

} // namespace detail

inline nlohmann::json StudyReport::to_json() const {
    const std::size_t q_l = scenario.beta_l.size(), q_ls = scenario.beta_ls.size();
    const double R = static_cast<double>(replicates.size());
    nlohmann::json j;
    j["runs"] = replicates.size();
    auto collect = [&](auto getter) {
        std::vector<double> v;
        for (const auto& r : replicates) v.push_back(getter(r));
        return v;
    };
    for (std::size_t c = 0; c < q_l; ++c) {
        auto [m, sd] = detail::mean_sd(
            collect([&](const ReplicateRecord& r) { return r.beta_l_hat[c]; }));
        double tp = 0.0;
        for (const auto& r : replicates) tp += r.selected_l[c];
        j["beta_l"].push_back({{"true", scenario.beta_l[c]}, {"mean", m}, {"sd", sd},
                               {"tp", tp / R}});
    }
    for (std::size_t c = 0; c < q_ls; ++c) {
        auto [m, sd] = detail::mean_sd(
            collect([&](const ReplicateRecord& r) { return r.beta_ls_hat[c]; }));
        double tp = 0.0;
        for (const auto& r : replicates) tp += r.selected_ls[c];
        j["beta_ls"].push_back({{"true", scenario.beta_ls[c]}, {"mean", m}, {"sd", sd},
                                {"tp", tp / R}});
    }
    auto [bt_m, bt_sd] = detail::mean_sd(
        collect([](const ReplicateRecord& r) { return r.beta_t_hat; }));
    j["beta_t"] = {{"true", scenario.beta_t}, {"mean", bt_m}, {"sd", bt_sd}};
    auto [a_m, a_sd] = detail::mean_sd(
        collect([](const ReplicateRecord& r) { return r.alpha_hat; }));
    j["alpha"] = {{"true", scenario.alpha}, {"mean", a_m}, {"sd", a_sd}};
    auto [fl_m, fl_sd] = detail::mean_sd(
        collect([](const ReplicateRecord& r) { return r.fp_l; }));
    (void)fl_sd;
    auto [fls_m, fls_sd] = detail::mean_sd(
        collect([](const ReplicateRecord& r) { return r.fp_ls; }));
    (void)fls_sd;
    j["fp_l"] = fl_m;
    j["fp_ls"] = fls_m;
    auto [ml_m, ml_sd] = detail::mean_sd(
        collect([](const ReplicateRecord& r) { return static_cast<double>(r.mstop_l); }));
    (void)ml_sd;
    auto [mls_m, mls_sd] = detail::mean_sd(
        collect([](const ReplicateRecord& r) { return static_cast<double>(r.mstop_ls); }));
    (void)mls_sd;
    j["mean_mstop_l"] = ml_m;
    j["mean_mstop_ls"] = mls_m;
    auto [c_m, c_sd] = detail::mean_sd(
        collect([](const ReplicateRecord& r) { return r.censoring_rate; }));
    (void)c_sd;
    j["mean_censoring_rate"] = c_m;
    return j;
}

inline std::string StudyReport::table1_text() const {
    const nlohmann::json j = to_json();
    char buf[256];
    std::string out;
    out += "coef        true    mean (sd)          TP\n";
    for (const auto& row : j["beta_l"]) {
        std::snprintf(buf, sizeof(buf), "beta_l    %6.2f  %8.3f (%.3f)   %.2f\n",
                      row["true"].get<double>(), row["mean"].get<double>(),
                      row["sd"].get<double>(), row["tp"].get<double>());
        out += buf;
    }
    for (const auto& row : j["beta_ls"]) {
        std::snprintf(buf, sizeof(buf), "beta_ls   %6.2f  %8.3f (%.3f)   %.2f\n",
                      row["true"].get<double>(), row["mean"].get<double>(),
                      row["sd"].get<double>(), row["tp"].get<double>());
        out += buf;
    }
    std::snprintf(buf, sizeof(buf), "beta_t    %6.2f  %8.3f (%.3f)\n",
                  j["beta_t"]["true"].get<double>(), j["beta_t"]["mean"].get<double>(),
                  j["beta_t"]["sd"].get<double>());
    out += buf;
    std::snprintf(buf, sizeof(buf), "alpha     %6.2f  %8.3f (%.3f)\n",
                  j["alpha"]["true"].get<double>(), j["alpha"]["mean"].get<double>(),
                  j["alpha"]["sd"].get<double>());
    out += buf;
    std::snprintf(buf, sizeof(buf), "FP_l %.3f   FP_ls %.3f\n",
                  j["fp_l"].get<double>(), j["fp_ls"].get<double>());
    out += buf;
    return out;
}

inline std::string StudyReport::table2_text() const {
    const nlohmann::json j = to_json();
    char buf[128];
    std::string out = "mean stopping iterations\n";
    std::snprintf(buf, sizeof(buf), "mstop_l   %.1f\nmstop_ls  %.1f\n",
                  j["mean_mstop_l"].get<double>(), j["mean_mstop_ls"].get<double>());
    out += buf;
    return out;
}

inline void StudyReport::write_csv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw validation_error("cannot write " + path);
    const std::size_t q_l = scenario.beta_l.size(), q_ls = scenario.beta_ls.size();
    f << "replicate";
    for (std::size_t c = 0; c < q_l; ++c) f << ",beta_l_" << (c + 1);
    for (std::size_t c = 0; c < q_ls; ++c) f << ",beta_ls_" << (c + 1);
    f << ",beta_t,alpha,sigma2,lambda0,fp_l,fp_ls,mstop_l,mstop_ls,censoring_rate\n";
    for (std::size_t r = 0; r < replicates.size(); ++r) {
        const auto& rec = replicates[r];
        f << (r + 1);
        for (double v : rec.beta_l_hat) f << ',' << v;
        for (double v : rec.beta_ls_hat) f << ',' << v;
        f << ',' << rec.beta_t_hat << ',' << rec.alpha_hat << ',' << rec.sigma2_hat
          << ',' << rec.lambda0_hat << ',' << rec.fp_l << ',' << rec.fp_ls
          << ',' << rec.mstop_l << ',' << rec.mstop_ls << ',' << rec.censoring_rate << '\n';
    }
}

} // namespace jmboost
