#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "jmboost/data.hpp"
#include "jmboost/errors.hpp"

namespace jmboost {

enum class LearnerKind { linear, time_effect, random_effects };

struct LearnerSpec {
    LearnerKind kind = LearnerKind::linear;
    int column = -1;  // covariate index for linear learners
    std::string name;
};

// Least-squares fit of one base-learner to a gradient vector.
struct LearnerFit {
    double intercept = 0.0;
    double slope = 0.0;
    std::vector<double> g0, g1;  // random-effect deviations, per individual
    double sse = std::numeric_limits<double>::infinity();
};

namespace detail {

// Trace of the per-individual ridge hat matrix (intercept/slope blocks).
inline double re_hat_trace(const std::vector<double>& time,
                           const std::vector<std::size_t>& obs_offset, double penalty) {
    const std::size_t N = obs_offset.size() - 1;
    double tr = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        double n_i = 0.0, st = 0.0, stt = 0.0;
        for (std::size_t k = obs_offset[i]; k < obs_offset[i + 1]; ++k) {
            n_i += 1.0;
            st += time[k];
            stt += time[k] * time[k];
        }
        const double det = (n_i + penalty) * (stt + penalty) - st * st;
        tr += (2.0 * (n_i * stt - st * st) + penalty * (n_i + stt)) / det;
    }
    return tr;
}

// Ridge weight whose hat-matrix trace equals df per individual (each
// individual contributes an intercept/slope pair, so df must lie in (0,2)).
inline double solve_re_penalty(const std::vector<double>& time,
                               const std::vector<std::size_t>& obs_offset,
                               double df_per_individual) {
    if (!(df_per_individual > 0.0 && df_per_individual < 2.0))
        throw validation_error("random-effects df per individual must lie in (0, 2)");
    const double df = df_per_individual * static_cast<double>(obs_offset.size() - 1);
    // A tiny floor keeps single-observation blocks invertible.
    const double floor_pen = 1e-10;
    if (re_hat_trace(time, obs_offset, floor_pen) <= df) return floor_pen;
    double lo = floor_pen, hi = 1e14;
    for (int it = 0; it < 200; ++it) {
        const double mid = std::sqrt(lo * hi);
        if (re_hat_trace(time, obs_offset, mid) > df) lo = mid; else hi = mid;
    }
    return std::sqrt(lo * hi);
}

} // namespace detail

// Bank of base-learners for one sub-predictor, holding observation-level
// design columns (shared covariates are expanded row-wise). Fitting is
// pure; the bank is safe for concurrent use after construction.
class LearnerBank {
public:
    std::vector<LearnerSpec> specs;

    static LearnerBank longitudinal(const JointDataset& ds) {
        LearnerBank b;
        b.init_rows(ds);
        for (std::size_t j = 0; j < ds.p_l(); ++j)
            b.add_linear(ds.long_cols[j], static_cast<int>(j), ds.names_l[j]);
        return b;
    }

    // Default shared bank: one linear learner per shared covariate, one
    // fixed time-slope learner and one penalized random intercept/slope
    // learner whose ridge weight is chosen so the learner's hat-matrix
    // trace equals re_df per individual (each individual contributes an
    // intercept/slope pair, so re_df must lie in (0, 2)).
    static LearnerBank shared(const JointDataset& ds, double re_df = 1.5) {
        LearnerBank b;
        b.init_rows(ds);
        for (std::size_t j = 0; j < ds.p_ls(); ++j) {
            std::vector<double> col(ds.n_obs());
            for (std::size_t k = 0; k < ds.n_obs(); ++k)
                col[k] = ds.shared_cols[j][ds.obs_individual[k]];
            b.add_linear(col, static_cast<int>(j), ds.names_ls[j]);
        }
        b.specs.push_back({LearnerKind::time_effect, -1, "time"});
        b.columns.emplace_back();  // placeholder, design is the time vector
        b.col_mean.push_back(b.time_mean);
        b.col_sxx.push_back(b.time_sxx);
        b.specs.push_back({LearnerKind::random_effects, -1, "random_effects"});
        b.columns.emplace_back();
        b.col_mean.push_back(0.0);
        b.col_sxx.push_back(0.0);
        b.re_penalty = b.solve_re_penalty(re_df);
        return b;
    }

    std::size_t size() const { return specs.size(); }
    std::size_t rows() const { return time.size(); }
    double random_effects_penalty() const { return re_penalty; }

    LearnerFit fit_one(std::size_t j, const std::vector<double>& u) const {
        if (u.size() != rows())
            throw validation_error("gradient length does not match design rows");
        switch (specs[j].kind) {
            case LearnerKind::linear:
                return fit_simple(columns[j], col_mean[j], col_sxx[j], u);
            case LearnerKind::time_effect:
                return fit_simple(time, time_mean, time_sxx, u);
            case LearnerKind::random_effects:
                return fit_random_effects(u, re_penalty);
        }
        throw validation_error("unknown learner kind");
    }

    // Best-fitting learner by residual sum of squares; ties break to the
    // lowest index. The random-effects learner can be excluded when the
    // caller maintains the accumulated effects by refitting instead.
    std::pair<std::size_t, LearnerFit> select_best(const std::vector<double>& u,
                                                   bool include_random_effects = true) const {
        if (specs.empty()) throw validation_error("empty learner bank");
        std::size_t best = size();
        LearnerFit best_fit;
        for (std::size_t j = 0; j < size(); ++j) {
            if (!include_random_effects && specs[j].kind == LearnerKind::random_effects)
                continue;
            LearnerFit f = fit_one(j, u);
            if (best == size() || f.sse < best_fit.sse) { best = j; best_fit = std::move(f); }
        }
        if (best == size()) throw validation_error("no eligible learner in bank");
        return {best, std::move(best_fit)};
    }

    // Random-effects fit at an explicit penalty (for studying the penalty's
    // effect in isolation; ordinary fitting uses the bank's solved penalty).
    LearnerFit fit_random_effects_with_penalty(const std::vector<double>& u,
                                               double penalty) const {
        if (u.size() != rows())
            throw validation_error("gradient length does not match design rows");
        return fit_random_effects(u, penalty);
    }

    // Fitted values of a learner at the training rows.
    std::vector<double> predict(std::size_t j, const LearnerFit& f) const {
        std::vector<double> out(rows());
        switch (specs[j].kind) {
            case LearnerKind::linear:
                for (std::size_t k = 0; k < rows(); ++k)
                    out[k] = f.intercept + f.slope * columns[j][k];
                break;
            case LearnerKind::time_effect:
                for (std::size_t k = 0; k < rows(); ++k)
                    out[k] = f.intercept + f.slope * time[k];
                break;
            case LearnerKind::random_effects:
                for (std::size_t k = 0; k < rows(); ++k) {
                    const std::size_t i = obs_individual[k];
                    out[k] = f.g0[i] + f.g1[i] * time[k];
                }
                break;
        }
        return out;
    }

    std::vector<double> time;
    std::vector<std::size_t> obs_individual;
    std::vector<std::size_t> obs_offset;
    std::vector<std::vector<double>> columns;

private:
    std::vector<double> col_mean, col_sxx;  // centered sum of squares
    double time_mean = 0.0, time_sxx = 0.0;
    double re_penalty = 0.0;

    void init_rows(const JointDataset& ds) {
        time = ds.time;
        obs_individual = ds.obs_individual;
        obs_offset = ds.obs_offset;
        time_mean = mean_of(time);
        time_sxx = sxx_of(time, time_mean);
    }

    static double mean_of(const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    }
    static double sxx_of(const std::vector<double>& v, double m) {
        double s = 0.0;
        for (double x : v) s += (x - m) * (x - m);
        return s;
    }

    void add_linear(std::vector<double> col, int index, std::string name) {
        const double m = mean_of(col);
        const double sxx = sxx_of(col, m);
        specs.push_back({LearnerKind::linear, index, std::move(name)});
        columns.push_back(std::move(col));
        col_mean.push_back(m);
        col_sxx.push_back(sxx);
    }

    static LearnerFit fit_simple(const std::vector<double>& x, double xm, double sxx,
                                 const std::vector<double>& u) {
        if (sxx <= 0.0)
            throw validation_error("degenerate design: covariate column is constant");
        const std::size_t n = u.size();
        double um = 0.0;
        for (double v : u) um += v;
        um /= static_cast<double>(n);
        double sxu = 0.0, suu = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            sxu += (x[k] - xm) * (u[k] - um);
            suu += (u[k] - um) * (u[k] - um);
        }
        LearnerFit f;
        f.slope = sxu / sxx;
        f.intercept = um - f.slope * xm;
        f.sse = std::max(0.0, suu - f.slope * sxu);
        return f;
    }

    // Per-individual ridge fit of (g0_i, g1_i) minimizing
    //   sum_j (u_ij - g0_i - g1_i t_ij)^2 + penalty * (g0_i^2 + g1_i^2).
    LearnerFit fit_random_effects(const std::vector<double>& u, double penalty) const {
        const std::size_t N = obs_offset.size() - 1;
        LearnerFit f;
        f.g0.assign(N, 0.0);
        f.g1.assign(N, 0.0);
        f.sse = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            double n_i = 0.0, st = 0.0, stt = 0.0, su = 0.0, sut = 0.0;
            for (std::size_t k = obs_offset[i]; k < obs_offset[i + 1]; ++k) {
                n_i += 1.0;
                st += time[k];
                stt += time[k] * time[k];
                su += u[k];
                sut += u[k] * time[k];
            }
            const double a11 = n_i + penalty, a12 = st, a22 = stt + penalty;
            const double det = a11 * a22 - a12 * a12;
            if (det <= 0.0)
                throw numeric_error("singular random-effects system for individual index " +
                                    std::to_string(i));
            f.g0[i] = (a22 * su - a12 * sut) / det;
            f.g1[i] = (a11 * sut - a12 * su) / det;
            for (std::size_t k = obs_offset[i]; k < obs_offset[i + 1]; ++k) {
                const double r = u[k] - f.g0[i] - f.g1[i] * time[k];
                f.sse += r * r;
            }
        }
        return f;
    }

    double solve_re_penalty(double df_per_individual) const {
        return detail::solve_re_penalty(time, obs_offset, df_per_individual);
    }
};

} // namespace jmboost
