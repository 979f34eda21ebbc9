#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "jmboost/errors.hpp"

namespace jmboost {

// One longitudinal measurement row: y_ij at time t_ij with the
// time-varying covariates x_ij.
struct LongObservation {
    long long individual_id = 0;
    double time = 0.0;
    double response = 0.0;
    std::vector<double> covariates;
};

// One per-individual survival row: follow-up time T_i, event indicator
// delta_i (1 = event, 0 = censored) and the time-constant covariates x_i.
struct SurvivalRecord {
    long long individual_id = 0;
    double event_time = 0.0;
    int event_indicator = 0;
    std::vector<double> covariates;
};

// Immutable joint dataset. Observations are stored column-major and
// grouped by individual; individual i owns the observation index range
// [obs_offset[i], obs_offset[i+1]).
class JointDataset {
public:
    std::vector<long long> ids;        // N
    std::vector<double> event_time;    // N
    std::vector<int> status;           // N
    std::vector<std::vector<double>> shared_cols;  // p_ls columns of length N

    std::vector<double> time;          // n, sorted by (individual, time)
    std::vector<double> response;      // n
    std::vector<std::size_t> obs_individual;       // n, index into ids
    std::vector<std::size_t> obs_offset;           // N+1
    std::vector<std::vector<double>> long_cols;    // p_l columns of length n

    std::vector<std::string> names_l;
    std::vector<std::string> names_ls;

    std::size_t n_individuals() const { return ids.size(); }
    std::size_t n_obs() const { return time.size(); }
    std::size_t p_l() const { return long_cols.size(); }
    std::size_t p_ls() const { return shared_cols.size(); }

    std::size_t obs_begin(std::size_t i) const { return obs_offset[i]; }
    std::size_t obs_end(std::size_t i) const { return obs_offset[i + 1]; }
    std::size_t n_obs_of(std::size_t i) const { return obs_end(i) - obs_begin(i); }

    static JointDataset from_records(std::vector<LongObservation> obs,
                                     std::vector<SurvivalRecord> surv,
                                     std::vector<std::string> names_l,
                                     std::vector<std::string> names_ls);

    // Individual-level subset, keeping the given survival indices in order.
    JointDataset subset(const std::vector<std::size_t>& keep) const;

    void validate() const;
};

inline JointDataset JointDataset::from_records(std::vector<LongObservation> obs,
                                               std::vector<SurvivalRecord> surv,
                                               std::vector<std::string> names_l,
                                               std::vector<std::string> names_ls) {
    std::sort(surv.begin(), surv.end(),
              [](const SurvivalRecord& a, const SurvivalRecord& b) {
                  return a.individual_id < b.individual_id;
              });
    std::stable_sort(obs.begin(), obs.end(),
                     [](const LongObservation& a, const LongObservation& b) {
                         if (a.individual_id != b.individual_id)
                             return a.individual_id < b.individual_id;
                         return a.time < b.time;
                     });

    JointDataset ds;
    ds.names_l = std::move(names_l);
    ds.names_ls = std::move(names_ls);

    const std::size_t p_ls = ds.names_ls.size();
    ds.shared_cols.assign(p_ls, {});
    std::map<long long, std::size_t> id_index;
    for (const auto& s : surv) {
        if (id_index.count(s.individual_id))
            throw validation_error("duplicate individual " + std::to_string(s.individual_id) +
                                   " in survival data");
        if (s.covariates.size() != p_ls)
            throw validation_error("survival covariate arity mismatch for individual " +
                                   std::to_string(s.individual_id));
        id_index[s.individual_id] = ds.ids.size();
        ds.ids.push_back(s.individual_id);
        ds.event_time.push_back(s.event_time);
        ds.status.push_back(s.event_indicator);
        for (std::size_t j = 0; j < p_ls; ++j)
            ds.shared_cols[j].push_back(s.covariates[j]);
    }

    const std::size_t p_l = ds.names_l.size();
    ds.long_cols.assign(p_l, {});
    ds.obs_offset.assign(ds.ids.size() + 1, 0);
    for (const auto& o : obs) {
        auto it = id_index.find(o.individual_id);
        if (it == id_index.end())
            throw validation_error("unmatched individual " + std::to_string(o.individual_id) +
                                   " (longitudinal rows without survival record)");
        if (o.covariates.size() != p_l)
            throw validation_error("longitudinal covariate arity mismatch for individual " +
                                   std::to_string(o.individual_id));
        ds.time.push_back(o.time);
        ds.response.push_back(o.response);
        ds.obs_individual.push_back(it->second);
        for (std::size_t j = 0; j < p_l; ++j)
            ds.long_cols[j].push_back(o.covariates[j]);
        ++ds.obs_offset[it->second + 1];
    }
    std::partial_sum(ds.obs_offset.begin(), ds.obs_offset.end(), ds.obs_offset.begin());

    ds.validate();
    return ds;
}

inline void JointDataset::validate() const {
    const std::size_t N = n_individuals();
    if (N == 0) throw validation_error("dataset has no individuals");
    for (std::size_t i = 0; i < N; ++i) {
        if (obs_begin(i) == obs_end(i))
            throw validation_error("unmatched individual " + std::to_string(ids[i]) +
                                   " (survival record without longitudinal rows)");
        if (!(event_time[i] > 0.0) || !std::isfinite(event_time[i]))
            throw validation_error("nonpositive event time for individual " +
                                   std::to_string(ids[i]));
        if (status[i] != 0 && status[i] != 1)
            throw validation_error("status of individual " + std::to_string(ids[i]) +
                                   " is not 0/1");
        double prev = -1.0;
        for (std::size_t k = obs_begin(i); k < obs_end(i); ++k) {
            if (time[k] < 0.0 || !std::isfinite(time[k]))
                throw validation_error("invalid observation time for individual " +
                                       std::to_string(ids[i]));
            if (time[k] <= prev)
                throw validation_error("observation times not strictly increasing for individual " +
                                       std::to_string(ids[i]));
            prev = time[k];
            if (!std::isfinite(response[k]))
                throw validation_error("non-finite response for individual " +
                                       std::to_string(ids[i]));
        }
        if (event_time[i] < prev)
            throw validation_error("event time of individual " + std::to_string(ids[i]) +
                                   " precedes its last observation");
    }
    for (const auto& col : long_cols)
        for (double v : col)
            if (!std::isfinite(v)) throw validation_error("non-finite longitudinal covariate");
    for (const auto& col : shared_cols)
        for (double v : col)
            if (!std::isfinite(v)) throw validation_error("non-finite shared covariate");
}

inline JointDataset JointDataset::subset(const std::vector<std::size_t>& keep) const {
    JointDataset out;
    out.names_l = names_l;
    out.names_ls = names_ls;
    out.shared_cols.assign(p_ls(), {});
    out.long_cols.assign(p_l(), {});
    out.obs_offset.push_back(0);
    for (std::size_t idx = 0; idx < keep.size(); ++idx) {
        const std::size_t i = keep[idx];
        out.ids.push_back(ids[i]);
        out.event_time.push_back(event_time[i]);
        out.status.push_back(status[i]);
        for (std::size_t j = 0; j < p_ls(); ++j)
            out.shared_cols[j].push_back(shared_cols[j][i]);
        for (std::size_t k = obs_begin(i); k < obs_end(i); ++k) {
            out.time.push_back(time[k]);
            out.response.push_back(response[k]);
            out.obs_individual.push_back(idx);
            for (std::size_t j = 0; j < p_l(); ++j)
                out.long_cols[j].push_back(long_cols[j][k]);
        }
        out.obs_offset.push_back(out.time.size());
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') { out.push_back(cur); cur.clear(); }
        else if (c != '\r') cur += c;
    }
    out.push_back(cur);
    return out;
}

inline double parse_double(const std::string& s, const std::string& file,
                           std::size_t row, const std::string& col) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        if (!std::isfinite(v)) throw std::invalid_argument("non-finite");
        return v;
    } catch (const std::exception&) {
        throw validation_error(file + ": row " + std::to_string(row) + ", column '" + col +
                               "': cannot parse value '" + s + "'");
    }
}

inline long long parse_id(const std::string& s, const std::string& file, std::size_t row) {
    try {
        std::size_t pos = 0;
        long long v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw validation_error(file + ": row " + std::to_string(row) +
                               ", column 'id': cannot parse value '" + s + "'");
    }
}

} // namespace detail

inline JointDataset load_csv(const std::string& long_path, const std::string& surv_path) {
    std::ifstream lf(long_path);
    if (!lf) throw validation_error("cannot open longitudinal file: " + long_path);
    std::ifstream sf(surv_path);
    if (!sf) throw validation_error("cannot open survival file: " + surv_path);

    std::string line;
    if (!std::getline(lf, line)) throw validation_error(long_path + ": empty file");
    auto lhdr = detail::split_csv_line(line);
    if (lhdr.size() < 3 || lhdr[0] != "id" || lhdr[1] != "time" || lhdr[2] != "y")
        throw validation_error(long_path + ": header must start with id,time,y");
    std::vector<std::string> names_l(lhdr.begin() + 3, lhdr.end());

    if (!std::getline(sf, line)) throw validation_error(surv_path + ": empty file");
    auto shdr = detail::split_csv_line(line);
    if (shdr.size() < 3 || shdr[0] != "id" || shdr[1] != "event_time" || shdr[2] != "status")
        throw validation_error(surv_path + ": header must start with id,event_time,status");
    std::vector<std::string> names_ls(shdr.begin() + 3, shdr.end());

    std::vector<LongObservation> obs;
    std::size_t row = 1;
    while (std::getline(lf, line)) {
        ++row;
        if (line.empty()) continue;
        auto f = detail::split_csv_line(line);
        if (f.size() != lhdr.size())
            throw validation_error(long_path + ": row " + std::to_string(row) +
                                   ": expected " + std::to_string(lhdr.size()) +
                                   " fields, got " + std::to_string(f.size()));
        LongObservation o;
        o.individual_id = detail::parse_id(f[0], long_path, row);
        o.time = detail::parse_double(f[1], long_path, row, "time");
        o.response = detail::parse_double(f[2], long_path, row, "y");
        for (std::size_t j = 3; j < f.size(); ++j)
            o.covariates.push_back(detail::parse_double(f[j], long_path, row, lhdr[j]));
        obs.push_back(std::move(o));
    }

    std::vector<SurvivalRecord> surv;
    row = 1;
    while (std::getline(sf, line)) {
        ++row;
        if (line.empty()) continue;
        auto f = detail::split_csv_line(line);
        if (f.size() != shdr.size())
            throw validation_error(surv_path + ": row " + std::to_string(row) +
                                   ": expected " + std::to_string(shdr.size()) +
                                   " fields, got " + std::to_string(f.size()));
        SurvivalRecord s;
        s.individual_id = detail::parse_id(f[0], surv_path, row);
        s.event_time = detail::parse_double(f[1], surv_path, row, "event_time");
        double st = detail::parse_double(f[2], surv_path, row, "status");
        if (st != 0.0 && st != 1.0)
            throw validation_error(surv_path + ": row " + std::to_string(row) +
                                   ": status must be 0 or 1");
        s.event_indicator = static_cast<int>(st);
        for (std::size_t j = 3; j < f.size(); ++j)
            s.covariates.push_back(detail::parse_double(f[j], surv_path, row, shdr[j]));
        surv.push_back(std::move(s));
    }

    auto ds = JointDataset::from_records(std::move(obs), std::move(surv),
                                         std::move(names_l), std::move(names_ls));
    if (ds.n_individuals() < 2)
        throw validation_error("dataset must contain at least 2 individuals");
    return ds;
}

inline void save_csv(const JointDataset& ds, const std::string& long_path,
                     const std::string& surv_path) {
    auto fmt = [](double v) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    std::ofstream lf(long_path);
    if (!lf) throw validation_error("cannot write " + long_path);
    lf << "id,time,y";
    for (const auto& n : ds.names_l) lf << ',' << n;
    lf << '\n';
    for (std::size_t i = 0; i < ds.n_individuals(); ++i)
        for (std::size_t k = ds.obs_begin(i); k < ds.obs_end(i); ++k) {
            lf << ds.ids[i] << ',' << fmt(ds.time[k]) << ',' << fmt(ds.response[k]);
            for (const auto& col : ds.long_cols) lf << ',' << fmt(col[k]);
            lf << '\n';
        }

    std::ofstream sf(surv_path);
    if (!sf) throw validation_error("cannot write " + surv_path);
    sf << "id,event_time,status";
    for (const auto& n : ds.names_ls) sf << ',' << n;
    sf << '\n';
    for (std::size_t i = 0; i < ds.n_individuals(); ++i) {
        sf << ds.ids[i] << ',' << fmt(ds.event_time[i]) << ',' << ds.status[i];
        for (const auto& col : ds.shared_cols) sf << ',' << fmt(col[i]);
        sf << '\n';
    }
}

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

struct ColumnScale {
    double mean = 0.0;
    double sd = 1.0;
};

// Per-column (mean, sd) recorded when standardizing, keyed by column name
// within each of the two covariate blocks.
struct ScalingManifest {
    std::map<std::string, ColumnScale> long_scales;
    std::map<std::string, ColumnScale> shared_scales;

    nlohmann::json to_json() const {
        nlohmann::json j;
        for (const auto& [k, v] : long_scales)
            j["long"][k] = {{"mean", v.mean}, {"sd", v.sd}};
        for (const auto& [k, v] : shared_scales)
            j["shared"][k] = {{"mean", v.mean}, {"sd", v.sd}};
        return j;
    }
    static ScalingManifest from_json(const nlohmann::json& j) {
        ScalingManifest m;
        if (j.contains("long"))
            for (auto it = j["long"].begin(); it != j["long"].end(); ++it)
                m.long_scales[it.key()] = {it.value()["mean"], it.value()["sd"]};
        if (j.contains("shared"))
            for (auto it = j["shared"].begin(); it != j["shared"].end(); ++it)
                m.shared_scales[it.key()] = {it.value()["mean"], it.value()["sd"]};
        return m;
    }
};

namespace detail {

inline ColumnScale column_moments(const std::vector<double>& col, const std::string& name) {
    const double n = static_cast<double>(col.size());
    double mean = std::accumulate(col.begin(), col.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : col) ss += (v - mean) * (v - mean);
    if (col.size() < 2 || ss <= 0.0)
        throw validation_error("covariate column '" + name + "' has zero variance");
    return {mean, std::sqrt(ss / (n - 1.0))};
}

inline void scale_column(std::vector<double>& col, const ColumnScale& s) {
    for (double& v : col) v = (v - s.mean) / s.sd;
}

} // namespace detail

// Centers and scales every covariate column to sample mean 0, sample sd 1.
// The response and time columns are left untouched.
inline std::pair<JointDataset, ScalingManifest> standardize(const JointDataset& ds) {
    JointDataset out = ds;
    ScalingManifest m;
    for (std::size_t j = 0; j < out.p_l(); ++j) {
        auto s = detail::column_moments(out.long_cols[j], out.names_l[j]);
        detail::scale_column(out.long_cols[j], s);
        m.long_scales[out.names_l[j]] = s;
    }
    for (std::size_t j = 0; j < out.p_ls(); ++j) {
        auto s = detail::column_moments(out.shared_cols[j], out.names_ls[j]);
        detail::scale_column(out.shared_cols[j], s);
        m.shared_scales[out.names_ls[j]] = s;
    }
    return {std::move(out), std::move(m)};
}

// Applies a previously computed manifest, e.g. to evaluation data that must
// live on the training scale.
inline JointDataset apply_manifest(const JointDataset& ds, const ScalingManifest& m) {
    JointDataset out = ds;
    for (std::size_t j = 0; j < out.p_l(); ++j) {
        auto it = m.long_scales.find(out.names_l[j]);
        if (it == m.long_scales.end())
            throw validation_error("manifest lacks longitudinal column '" + out.names_l[j] + "'");
        detail::scale_column(out.long_cols[j], it->second);
    }
    for (std::size_t j = 0; j < out.p_ls(); ++j) {
        auto it = m.shared_scales.find(out.names_ls[j]);
        if (it == m.shared_scales.end())
            throw validation_error("manifest lacks shared column '" + out.names_ls[j] + "'");
        detail::scale_column(out.shared_cols[j], it->second);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Holdout split (by individual)
// ---------------------------------------------------------------------------

inline std::pair<JointDataset, JointDataset>
split_holdout(const JointDataset& ds, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw validation_error("holdout fraction must lie in (0,1)");
    const std::size_t N = ds.n_individuals();
    const std::size_t k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(N)));
    if (k == 0 || k == N)
        throw validation_error("holdout fraction produces an empty part");
    std::vector<std::size_t> idx(N);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<std::size_t> train(idx.begin(), idx.begin() + k);
    std::vector<std::size_t> eval(idx.begin() + k, idx.end());
    std::sort(train.begin(), train.end());
    std::sort(eval.begin(), eval.end());
    return {ds.subset(train), ds.subset(eval)};
}

} // namespace jmboost
