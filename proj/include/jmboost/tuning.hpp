#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "jmboost/engine.hpp"

namespace jmboost {

struct GridSpec {
    std::vector<int> l_values;
    std::vector<int> ls_values;
    int refine_rounds = 0;
    // Relative slack for the stopping choice: the smallest mstop_ls whose
    // column minimum lies within parsimony_tol * |min risk| of the surface
    // minimum wins, paired with that column's risk-minimizing mstop_l.
    // Predictive risk is flat near its minimum while spurious covariates
    // keep entering on the shared axis, so the exact argmin systematically
    // overfits; a zero tolerance recovers the plain argmin.
    double parsimony_tol = 1.25e-3;

    static GridSpec uniform(int lo, int hi, int step, int refine_rounds = 0) {
        if (lo < 1 || hi < lo || step < 1)
            throw validation_error("invalid grid specification");
        GridSpec g;
        for (int v = lo; v <= hi; v += step) g.l_values.push_back(v);
        g.ls_values = g.l_values;
        g.refine_rounds = refine_rounds;
        return g;
    }

    void validate() const {
        for (const auto* axis : {&l_values, &ls_values}) {
            if (axis->empty()) throw validation_error("empty grid axis");
            int prev = 0;
            for (int v : *axis) {
                if (v < 1 || v <= prev)
                    throw validation_error("grid axis must be ascending and >= 1");
                prev = v;
            }
        }
    }
};

struct HoldoutMethod {
    double fraction = 2.0 / 3.0;  // training share
    std::uint64_t seed = 0;
};
struct KFoldMethod {
    int k = 10;
    std::uint64_t seed = 0;
};
using TuneMethod = std::variant<HoldoutMethod, KFoldMethod>;

struct TuneResult {
    GridSpec grid;
    std::vector<std::vector<double>> risk;  // [l index][ls index], fold mean
    std::vector<std::vector<std::vector<double>>> fold_risk;
    int best_l = 0;
    int best_ls = 0;

    nlohmann::json to_json() const {
        return {{"grid_l", grid.l_values},
                {"grid_ls", grid.ls_values},
                {"risk", risk},
                {"best_mstop_l", best_l},
                {"best_mstop_ls", best_ls}};
    }
};

namespace detail {

struct FoldData {
    JointDataset train;
    JointDataset eval;
    ScalingManifest manifest;
};

inline std::vector<FoldData> make_folds(const JointDataset& ds, const TuneMethod& method) {
    std::vector<FoldData> folds;
    if (std::holds_alternative<HoldoutMethod>(method)) {
        const auto& h = std::get<HoldoutMethod>(method);
        auto [train, eval] = split_holdout(ds, h.fraction, h.seed);
        auto [train_std, manifest] = standardize(train);
        folds.push_back({std::move(train_std),
                         apply_manifest(eval, manifest), manifest});
        return folds;
    }
    const auto& kf = std::get<KFoldMethod>(method);
    if (kf.k < 2) throw validation_error("k-fold requires k >= 2");
    const std::size_t N = ds.n_individuals();
    if (static_cast<std::size_t>(kf.k) > N)
        throw validation_error("more folds than individuals");
    std::vector<std::size_t> idx(N);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(kf.seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (int f = 0; f < kf.k; ++f) {
        std::vector<std::size_t> train_idx, eval_idx;
        for (std::size_t p = 0; p < N; ++p)
            (static_cast<int>(p % kf.k) == f ? eval_idx : train_idx).push_back(idx[p]);
        std::sort(train_idx.begin(), train_idx.end());
        std::sort(eval_idx.begin(), eval_idx.end());
        auto [train_std, manifest] = standardize(ds.subset(train_idx));
        folds.push_back({std::move(train_std),
                         apply_manifest(ds.subset(eval_idx), manifest), manifest});
    }
    return folds;
}

inline void run_tasks(std::vector<std::function<void()>>& tasks, int jobs) {
    if (jobs <= 1 || tasks.size() <= 1) {
        for (auto& t : tasks) t();
        return;
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            tasks[i]();
        }
    };
    std::vector<std::thread> pool;
    const int nthreads = std::min<int>(jobs, static_cast<int>(tasks.size()));
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
}

} // namespace detail

// Two-dimensional early-stopping search. Exploits nesting: the state of a
// fit stopped at (l, s) with l >= s equals the state of a single run with
// mstop_l = max(grid) and mstop_ls = s checkpointed at iteration l, because
// beyond s only the longitudinal step and the sigma2 refresh run in both.
// Symmetrically, cells with s > l are read off runs with mstop_l = l
// checkpointed along the shared axis. One run per grid value on each axis
// therefore covers the full surface.
inline TuneResult tune_grid(const JointDataset& ds, const BoostConfig& cfg_template,
                            const GridSpec& grid, const TuneMethod& method,
                            int jobs = 1) {
    grid.validate();
    auto folds = detail::make_folds(ds, method);

    const auto& lv = grid.l_values;
    const auto& sv = grid.ls_values;
    const double nan = std::numeric_limits<double>::quiet_NaN();

    TuneResult res;
    res.grid = grid;
    res.fold_risk.assign(folds.size(),
                         std::vector<std::vector<double>>(lv.size(),
                                                          std::vector<double>(sv.size(), nan)));

    // banks are immutable after construction and shared across tasks
    std::vector<std::pair<LearnerBank, LearnerBank>> banks;
    banks.reserve(folds.size());
    for (const auto& fold : folds)
        banks.emplace_back(LearnerBank::longitudinal(fold.train),
                           LearnerBank::shared(fold.train, cfg_template.re_df));

    std::vector<std::function<void()>> tasks;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        const auto& fold = folds[f];
        const auto& fold_banks = banks[f];
        auto& surface = res.fold_risk[f];
        // one run per mstop_ls value, checkpoints along mstop_l (cells l >= s)
        for (std::size_t si = 0; si < sv.size(); ++si) {
            std::vector<int> cps;
            for (int l : lv)
                if (l >= sv[si]) cps.push_back(l);
            if (cps.empty()) continue;
            tasks.push_back([&, si, cps]() {
                BoostConfig cfg = cfg_template;
                cfg.record_paths = false;
                cfg.mstop_ls = sv[si];
                cfg.mstop_l = cps.back();
                fit(fold.train, fold_banks.first, fold_banks.second, cfg, cps,
                    [&](int m, const FitResult& partial) {
                        const auto li = std::lower_bound(lv.begin(), lv.end(), m) - lv.begin();
                        surface[li][si] = evaluate_risk(partial, fold.eval);
                    });
            });
        }
        // one run per mstop_l value, checkpoints along mstop_ls (cells s > l)
        for (std::size_t li = 0; li < lv.size(); ++li) {
            std::vector<int> cps;
            for (int s : sv)
                if (s > lv[li]) cps.push_back(s);
            if (cps.empty()) continue;
            tasks.push_back([&, li, cps]() {
                BoostConfig cfg = cfg_template;
                cfg.record_paths = false;
                cfg.mstop_l = lv[li];
                cfg.mstop_ls = cps.back();
                fit(fold.train, fold_banks.first, fold_banks.second, cfg, cps,
                    [&](int m, const FitResult& partial) {
                        const auto si = std::lower_bound(sv.begin(), sv.end(), m) - sv.begin();
                        surface[li][si] = evaluate_risk(partial, fold.eval);
                    });
            });
        }
    }
    detail::run_tasks(tasks, jobs);

    res.risk.assign(lv.size(), std::vector<double>(sv.size(), 0.0));
    for (std::size_t li = 0; li < lv.size(); ++li)
        for (std::size_t si = 0; si < sv.size(); ++si) {
            double s = 0.0;
            for (std::size_t f = 0; f < folds.size(); ++f)
                s += res.fold_risk[f][li][si];
            res.risk[li][si] = s / static_cast<double>(folds.size());
        }

    // argmin; ties break to smaller mstop_l, then smaller mstop_ls
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t li = 0; li < lv.size(); ++li)
        for (std::size_t si = 0; si < sv.size(); ++si)
            if (res.risk[li][si] < best) {
                best = res.risk[li][si];
                res.best_l = lv[li];
                res.best_ls = sv[si];
            }
    if (!std::isfinite(best)) throw numeric_error("tuning produced no finite risk");

    // parsimony: the shared axis drives false selections, so take the
    // smallest mstop_ls whose column reaches the tolerance band of the
    // minimum, then the risk-minimizing mstop_l within that column
    const double slack = grid.parsimony_tol * std::abs(best);
    if (slack > 0.0) {
        for (std::size_t si = 0; si < sv.size(); ++si) {
            std::size_t arg_l = lv.size();
            double col_best = std::numeric_limits<double>::infinity();
            for (std::size_t li = 0; li < lv.size(); ++li)
                if (res.risk[li][si] < col_best) {
                    col_best = res.risk[li][si];
                    arg_l = li;
                }
            if (col_best <= best + slack) {
                res.best_l = lv[arg_l];
                res.best_ls = sv[si];
                break;
            }
        }
    }
    return res;
}

// Grid refinement: a new grid per axis centered on the incumbent optimum,
// spanning +/- 2 old spacings with the spacing halved, clipped below at 1.
// An optimum on the old boundary therefore extends past it.
inline GridSpec refine_grid(const TuneResult& result, const GridSpec& spec) {
    if (spec.refine_rounds <= 0)
        throw validation_error("no refinement rounds remaining");
    auto refine_axis = [](const std::vector<int>& axis, int opt) {
        std::vector<int> out;
        if (axis.size() < 2) return axis;
        const int d = axis[1] - axis[0];
        const int step = std::max(1, d / 2);
        for (int v = opt - 2 * d; v <= opt + 2 * d; v += step)
            if (v >= 1 && (out.empty() || v > out.back())) out.push_back(v);
        return out;
    };
    GridSpec g;
    g.l_values = refine_axis(spec.l_values, result.best_l);
    g.ls_values = refine_axis(spec.ls_values, result.best_ls);
    g.refine_rounds = spec.refine_rounds - 1;
    g.parsimony_tol = spec.parsimony_tol;
    return g;
}

// Full search: initial grid plus the configured refinement rounds.
inline TuneResult tune_adaptive(const JointDataset& ds, const BoostConfig& cfg_template,
                                GridSpec grid, const TuneMethod& method, int jobs = 1) {
    TuneResult res = tune_grid(ds, cfg_template, grid, method, jobs);
    while (grid.refine_rounds > 0) {
        grid = refine_grid(res, grid);
        res = tune_grid(ds, cfg_template, grid, method, jobs);
    }
    return res;
}

// Risk surface as CSV: rows mstop_l, columns mstop_ls.
inline void write_surface_csv(const TuneResult& res, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw validation_error("cannot write " + path);
    f << "mstop_l";
    for (int s : res.grid.ls_values) f << ",ls_" << s;
    f << '\n';
    for (std::size_t li = 0; li < res.grid.l_values.size(); ++li) {
        f << res.grid.l_values[li];
        for (std::size_t si = 0; si < res.grid.ls_values.size(); ++si) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.12g", res.risk[li][si]);
            f << ',' << buf;
        }
        f << '\n';
    }
}

} // namespace jmboost
