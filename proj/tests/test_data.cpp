#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "helpers.hpp"

using namespace jmboost;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    auto d = fs::temp_directory_path() / "jmboost_data_tests";
    fs::create_directories(d);
    return d;
}

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream f(p);
    REQUIRE(f.good());
    f << content;
}

} // namespace

TEST_CASE("toy dataset from records") {
    auto ds = testutil::make_toy();
    CHECK(ds.n_individuals() == 2);
    CHECK(ds.n_obs() == 5);
    CHECK(ds.p_l() == 1);
    CHECK(ds.p_ls() == 1);
    CHECK(ds.n_obs_of(0) == 3);
    CHECK(ds.n_obs_of(1) == 2);
    // rows sorted by (id, time)
    CHECK(ds.time[0] == 0.2);
    CHECK(ds.time[2] == 2.3);
    CHECK(ds.time[3] == 0.4);
}

TEST_CASE("load_csv on a 2-individual toy file") {
    auto dir = temp_dir();
    write_file(dir / "long.csv",
               "id,time,y,x1\n"
               "1,0.2,1.0,0.5\n"
               "1,1.1,1.5,-0.2\n"
               "1,2.3,2.0,1.0\n"
               "2,0.4,-0.5,0.1\n"
               "2,1.6,0.3,-1.0\n");
    write_file(dir / "surv.csv",
               "id,event_time,status,z1\n"
               "1,3.0,1,0.7\n"
               "2,2.0,0,-0.3\n");
    auto ds = load_csv((dir / "long.csv").string(), (dir / "surv.csv").string());
    CHECK(ds.n_individuals() == 2);
    CHECK(ds.n_obs() == 5);
    CHECK(ds.status[0] == 1);
    CHECK(ds.status[1] == 0);
    CHECK(ds.names_l == std::vector<std::string>{"x1"});
    CHECK(ds.names_ls == std::vector<std::string>{"z1"});
}

TEST_CASE("longitudinal rows without survival record name the individual") {
    auto dir = temp_dir();
    write_file(dir / "l7.csv",
               "id,time,y,x1\n"
               "7,0.5,1.0,0.2\n"
               "7,1.5,1.2,0.4\n"
               "1,0.5,0.0,0.1\n"
               "1,1.0,0.1,0.3\n");
    write_file(dir / "s7.csv",
               "id,event_time,status,z1\n"
               "1,2.0,0,0.7\n");
    CHECK_THROWS_WITH(load_csv((dir / "l7.csv").string(), (dir / "s7.csv").string()),
                      Catch::Matchers::ContainsSubstring("unmatched individual 7"));
}

TEST_CASE("csv parse errors are structured") {
    auto dir = temp_dir();
    write_file(dir / "bad.csv",
               "id,time,y,x1\n"
               "1,0.5,abc,0.2\n");
    write_file(dir / "s.csv",
               "id,event_time,status,z1\n"
               "1,2.0,0,0.7\n");
    CHECK_THROWS_WITH(load_csv((dir / "bad.csv").string(), (dir / "s.csv").string()),
                      Catch::Matchers::ContainsSubstring("row 2") &&
                          Catch::Matchers::ContainsSubstring("'y'"));
}

TEST_CASE("validation rejects malformed datasets") {
    using Catch::Matchers::ContainsSubstring;
    std::vector<LongObservation> obs = {{1, 0.5, 1.0, {0.1}}, {1, 0.5, 1.1, {0.2}}};
    std::vector<SurvivalRecord> surv = {{1, 2.0, 1, {0.3}}};
    SECTION("time ties within an individual") {
        CHECK_THROWS_WITH(JointDataset::from_records(obs, surv, {"x1"}, {"z1"}),
                          ContainsSubstring("strictly increasing"));
    }
    SECTION("event time precedes last observation") {
        obs[1].time = 2.5;
        CHECK_THROWS_WITH(JointDataset::from_records(obs, surv, {"x1"}, {"z1"}),
                          ContainsSubstring("precedes"));
    }
    SECTION("duplicate survival id") {
        obs[1].time = 1.5;
        surv.push_back({1, 2.0, 0, {0.4}});
        CHECK_THROWS_WITH(JointDataset::from_records(obs, surv, {"x1"}, {"z1"}),
                          ContainsSubstring("duplicate individual 1"));
    }
    SECTION("status outside 0/1") {
        obs[1].time = 1.5;
        surv[0].event_indicator = 2;
        CHECK_THROWS_WITH(JointDataset::from_records(obs, surv, {"x1"}, {"z1"}),
                          ContainsSubstring("not 0/1"));
    }
}

TEST_CASE("standardize maps (1,2,3) to (-1,0,1) with manifest (2,1)") {
    std::vector<LongObservation> obs = {
        {1, 0.5, 0.0, {1.0}}, {1, 1.5, 0.0, {2.0}}, {2, 0.5, 0.0, {3.0}},
    };
    std::vector<SurvivalRecord> surv = {{1, 2.0, 0, {}}, {2, 1.0, 0, {}}};
    auto ds = JointDataset::from_records(obs, surv, {"x1"}, {});
    auto [std_ds, manifest] = standardize(ds);
    CHECK(std_ds.long_cols[0][0] == Catch::Approx(-1.0));
    CHECK(std_ds.long_cols[0][1] == Catch::Approx(0.0).margin(1e-15));
    CHECK(std_ds.long_cols[0][2] == Catch::Approx(1.0));
    CHECK(manifest.long_scales.at("x1").mean == Catch::Approx(2.0));
    CHECK(manifest.long_scales.at("x1").sd == Catch::Approx(1.0));
}

TEST_CASE("standardize is idempotent") {
    auto ds = testutil::make_random_ds(20, 4, 2, 1, 11);
    auto [once, m1] = standardize(ds);
    auto [twice, m2] = standardize(once);
    for (std::size_t j = 0; j < once.p_l(); ++j)
        for (std::size_t k = 0; k < once.n_obs(); ++k)
            CHECK(twice.long_cols[j][k] == Catch::Approx(once.long_cols[j][k]).margin(1e-10));
    for (const auto& [name, s] : m2.long_scales) {
        CHECK(std::abs(s.mean) < 1e-12);
        CHECK(s.sd == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("standardized moments of a random N(5,9) column") {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> norm(5.0, 3.0);
    std::vector<LongObservation> obs;
    std::vector<SurvivalRecord> surv;
    for (int i = 0; i < 500; ++i) {
        surv.push_back({i + 1, 3.0, 0, {}});
        obs.push_back({i + 1, 0.5, 0.0, {norm(rng)}});
        obs.push_back({i + 1, 1.5, 0.0, {norm(rng)}});
    }
    auto ds = JointDataset::from_records(obs, surv, {"x1"}, {});
    auto [std_ds, manifest] = standardize(ds);
    const auto& col = std_ds.long_cols[0];
    double mean = 0.0;
    for (double v : col) mean += v;
    mean /= static_cast<double>(col.size());
    double ss = 0.0;
    for (double v : col) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (static_cast<double>(col.size()) - 1.0));
    CHECK(std::abs(mean) < 1e-12);
    CHECK(sd == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("zero-variance column is rejected by name") {
    std::vector<LongObservation> obs = {
        {1, 0.5, 0.0, {1.0}}, {1, 1.5, 0.0, {1.0}}, {2, 0.5, 0.0, {1.0}},
    };
    std::vector<SurvivalRecord> surv = {{1, 2.0, 0, {}}, {2, 1.0, 0, {}}};
    auto ds = JointDataset::from_records(obs, surv, {"xconst"}, {});
    CHECK_THROWS_WITH(standardize(ds),
                      Catch::Matchers::ContainsSubstring("xconst"));
}

TEST_CASE("split_holdout splits by individual, deterministically") {
    auto ds = testutil::make_random_ds(10, 3, 1, 1, 5);
    auto [train, eval] = split_holdout(ds, 0.5, 123);
    CHECK(train.n_individuals() == 5);
    CHECK(eval.n_individuals() == 5);
    std::set<long long> tids(train.ids.begin(), train.ids.end());
    for (long long id : eval.ids) CHECK(tids.count(id) == 0);

    auto [train2, eval2] = split_holdout(ds, 0.5, 123);
    CHECK(train2.ids == train.ids);
    CHECK(eval2.ids == eval.ids);

    auto [train3, eval3] = split_holdout(ds, 0.5, 124);
    (void)eval3;
    // a different seed produces a different split (with overwhelming probability)
    CHECK(train3.ids != train.ids);
}

TEST_CASE("split_holdout rounding is floor(fraction * N)") {
    auto ds = testutil::make_random_ds(500, 2, 1, 1, 6);
    auto [train, eval] = split_holdout(ds, 2.0 / 3.0, 9);
    CHECK(train.n_individuals() == 333);
    CHECK(eval.n_individuals() == 167);
}

TEST_CASE("split_holdout rejects degenerate fractions") {
    auto ds = testutil::make_random_ds(4, 2, 1, 1, 7);
    CHECK_THROWS_AS(split_holdout(ds, 0.0, 1), validation_error);
    CHECK_THROWS_AS(split_holdout(ds, 1.0, 1), validation_error);
    CHECK_THROWS_AS(split_holdout(ds, 0.1, 1), validation_error);  // empty train
}

TEST_CASE("csv round-trip preserves numeric content") {
    auto dir = temp_dir();
    auto ds = testutil::make_random_ds(12, 3, 2, 2, 31);
    save_csv(ds, (dir / "rt_long.csv").string(), (dir / "rt_surv.csv").string());
    auto back = load_csv((dir / "rt_long.csv").string(), (dir / "rt_surv.csv").string());
    REQUIRE(back.n_obs() == ds.n_obs());
    REQUIRE(back.n_individuals() == ds.n_individuals());
    CHECK(back.ids == ds.ids);
    for (std::size_t k = 0; k < ds.n_obs(); ++k) {
        CHECK(back.time[k] == ds.time[k]);
        CHECK(back.response[k] == ds.response[k]);
        for (std::size_t j = 0; j < ds.p_l(); ++j)
            CHECK(back.long_cols[j][k] == ds.long_cols[j][k]);
    }
    for (std::size_t i = 0; i < ds.n_individuals(); ++i) {
        CHECK(back.event_time[i] == ds.event_time[i]);
        CHECK(back.status[i] == ds.status[i]);
        for (std::size_t j = 0; j < ds.p_ls(); ++j)
            CHECK(back.shared_cols[j][i] == ds.shared_cols[j][i]);
    }
}

TEST_CASE("subset preserves per-individual grouping") {
    auto ds = testutil::make_random_ds(8, 3, 1, 1, 13);
    auto sub = ds.subset({1, 4, 6});
    CHECK(sub.n_individuals() == 3);
    CHECK(sub.ids[0] == ds.ids[1]);
    CHECK(sub.ids[2] == ds.ids[6]);
    CHECK(sub.n_obs_of(1) == ds.n_obs_of(4));
    for (std::size_t k = sub.obs_begin(1), k0 = ds.obs_begin(4); k < sub.obs_end(1); ++k, ++k0) {
        CHECK(sub.time[k] == ds.time[k0]);
        CHECK(sub.response[k] == ds.response[k0]);
    }
    sub.validate();
}

TEST_CASE("apply_manifest reuses training scales and reports missing columns") {
    auto ds = testutil::make_random_ds(12, 3, 2, 1, 17);
    auto [train, eval] = split_holdout(ds, 0.5, 3);
    auto [train_std, manifest] = standardize(train);
    (void)train_std;
    auto eval_std = apply_manifest(eval, manifest);
    // same linear map: (v - mean) / sd
    const auto& s = manifest.long_scales.at(ds.names_l[0]);
    CHECK(eval_std.long_cols[0][0] ==
          Catch::Approx((eval.long_cols[0][0] - s.mean) / s.sd));

    ScalingManifest empty;
    CHECK_THROWS_WITH(apply_manifest(eval, empty),
                      Catch::Matchers::ContainsSubstring("manifest lacks"));
}

TEST_CASE("scaling manifest JSON round-trip") {
    auto ds = testutil::make_random_ds(10, 3, 2, 2, 23);
    auto [std_ds, manifest] = standardize(ds);
    (void)std_ds;
    auto back = ScalingManifest::from_json(manifest.to_json());
    for (const auto& [name, s] : manifest.long_scales) {
        CHECK(back.long_scales.at(name).mean == s.mean);
        CHECK(back.long_scales.at(name).sd == s.sd);
    }
    for (const auto& [name, s] : manifest.shared_scales) {
        CHECK(back.shared_scales.at(name).mean == s.mean);
        CHECK(back.shared_scales.at(name).sd == s.sd);
    }
}
