#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "helpers.hpp"

using namespace jmboost;

namespace {

// Independent simple-regression oracle via the 2x2 normal equations.
std::pair<double, double> normal_equations(const std::vector<double>& x,
                                           const std::vector<double>& u) {
    const double n = static_cast<double>(x.size());
    double sx = 0.0, sxx = 0.0, su = 0.0, sxu = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        sx += x[k];
        sxx += x[k] * x[k];
        su += u[k];
        sxu += x[k] * u[k];
    }
    const double det = n * sxx - sx * sx;
    const double intercept = (sxx * su - sx * sxu) / det;
    const double slope = (n * sxu - sx * su) / det;
    return {intercept, slope};
}

} // namespace

TEST_CASE("linear learner exact fits") {
    auto ds = testutil::make_random_ds(15, 4, 2, 1, 81);
    auto bank = LearnerBank::longitudinal(ds);
    REQUIRE(bank.size() == 2);

    SECTION("gradient 2x recovers slope 2, intercept 0") {
        std::vector<double> u(ds.n_obs());
        for (std::size_t k = 0; k < ds.n_obs(); ++k) u[k] = 2.0 * ds.long_cols[0][k];
        auto f = bank.fit_one(0, u);
        CHECK(f.slope == Catch::Approx(2.0).epsilon(1e-12));
        CHECK(f.intercept == Catch::Approx(0.0).margin(1e-12));
        CHECK(f.sse == Catch::Approx(0.0).margin(1e-18));
    }

    SECTION("constant gradient recovers slope 0, intercept c") {
        std::vector<double> u(ds.n_obs(), 3.7);
        auto f = bank.fit_one(1, u);
        CHECK(f.slope == Catch::Approx(0.0).margin(1e-14));
        CHECK(f.intercept == Catch::Approx(3.7).epsilon(1e-14));
    }

    SECTION("matches the normal-equations oracle on a random gradient") {
        std::mt19937_64 rng(82);
        std::normal_distribution<double> norm(0.0, 1.0);
        std::vector<double> u(ds.n_obs());
        for (auto& v : u) v = norm(rng);
        for (std::size_t j = 0; j < bank.size(); ++j) {
            auto f = bank.fit_one(j, u);
            auto [a, b] = normal_equations(ds.long_cols[j], u);
            CHECK(f.intercept == Catch::Approx(a).epsilon(1e-10));
            CHECK(f.slope == Catch::Approx(b).epsilon(1e-10));
            // sse equals the explicit residual sum of squares
            double sse = 0.0;
            for (std::size_t k = 0; k < u.size(); ++k) {
                const double r = u[k] - a - b * ds.long_cols[j][k];
                sse += r * r;
            }
            CHECK(f.sse == Catch::Approx(sse).epsilon(1e-8));
        }
    }

    SECTION("predict reproduces the fitted line") {
        std::vector<double> u(ds.n_obs());
        for (std::size_t k = 0; k < ds.n_obs(); ++k)
            u[k] = 0.5 + 1.5 * ds.long_cols[1][k];
        auto f = bank.fit_one(1, u);
        auto yhat = bank.predict(1, f);
        for (std::size_t k = 0; k < u.size(); ++k)
            CHECK(yhat[k] == Catch::Approx(u[k]).margin(1e-10));
    }
}

TEST_CASE("time learner exact recovery") {
    auto ds = testutil::make_random_ds(15, 4, 1, 1, 83);
    auto bank = LearnerBank::shared(ds);
    // shared bank layout: linear covariates, then time, then random effects
    const std::size_t jt = ds.p_ls();
    REQUIRE(bank.specs[jt].kind == LearnerKind::time_effect);

    std::vector<double> u(ds.n_obs());
    for (std::size_t k = 0; k < ds.n_obs(); ++k) u[k] = -0.4 + 0.9 * ds.time[k];
    auto f = bank.fit_one(jt, u);
    CHECK(f.intercept == Catch::Approx(-0.4).margin(1e-8));
    CHECK(f.slope == Catch::Approx(0.9).epsilon(1e-8));
    CHECK(f.sse == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("selection") {
    auto ds = testutil::make_random_ds(30, 4, 4, 1, 84);
    auto bank = LearnerBank::longitudinal(ds);
    std::mt19937_64 rng(85);
    std::normal_distribution<double> noise(0.0, 0.05);

    SECTION("the generating covariate wins") {
        for (std::size_t gen = 0; gen < 4; ++gen) {
            std::vector<double> u(ds.n_obs());
            for (std::size_t k = 0; k < ds.n_obs(); ++k)
                u[k] = 1.2 * ds.long_cols[gen][k] + noise(rng);
            auto [j, f] = bank.select_best(u);
            (void)f;
            CHECK(j == gen);
        }
    }

    SECTION("ties break to the lowest index") {
        // duplicate a column so two learners fit identically
        JointDataset dup = ds;
        dup.long_cols[2] = dup.long_cols[0];
        dup.names_l[2] = "x3_dup";
        auto dbank = LearnerBank::longitudinal(dup);
        std::vector<double> u(dup.n_obs());
        for (std::size_t k = 0; k < dup.n_obs(); ++k) u[k] = dup.long_cols[0][k];
        auto [j, f] = dbank.select_best(u);
        (void)f;
        CHECK(j == 0);
    }

    SECTION("selection is invariant to positive gradient scaling") {
        std::vector<double> u(ds.n_obs());
        for (auto& v : u) v = noise(rng) + 0.3;
        for (std::size_t k = 0; k < ds.n_obs(); ++k) u[k] += 0.7 * ds.long_cols[1][k];
        auto [j1, f1] = bank.select_best(u);
        std::vector<double> u5 = u;
        for (auto& v : u5) v *= 5.0;
        auto [j2, f2] = bank.select_best(u5);
        CHECK(j1 == j2);
        CHECK(f2.slope == Catch::Approx(5.0 * f1.slope).epsilon(1e-12));
        CHECK(f2.sse == Catch::Approx(25.0 * f1.sse).epsilon(1e-10));
    }

    SECTION("gradient length mismatch is rejected") {
        std::vector<double> u(ds.n_obs() + 1, 0.0);
        CHECK_THROWS_AS(bank.select_best(u), validation_error);
    }
}

TEST_CASE("random-effects learner") {
    auto ds = testutil::make_random_ds(20, 4, 1, 1, 86);
    auto bank = LearnerBank::shared(ds, 1.9);
    const std::size_t jre = bank.size() - 1;
    REQUIRE(bank.specs[jre].kind == LearnerKind::random_effects);

    std::mt19937_64 rng(87);
    std::normal_distribution<double> norm(0.0, 1.0);
    std::vector<double> g0(ds.n_individuals()), g1(ds.n_individuals());
    for (auto& v : g0) v = norm(rng);
    for (auto& v : g1) v = norm(rng);
    std::vector<double> u(ds.n_obs());
    for (std::size_t k = 0; k < ds.n_obs(); ++k) {
        const std::size_t i = ds.obs_individual[k];
        u[k] = g0[i] + g1[i] * ds.time[k];
    }

    SECTION("near-exact recovery at a vanishing penalty") {
        auto f = bank.fit_random_effects_with_penalty(u, 1e-10);
        for (std::size_t i = 0; i < ds.n_individuals(); ++i) {
            CHECK(f.g0[i] == Catch::Approx(g0[i]).margin(1e-6));
            CHECK(f.g1[i] == Catch::Approx(g1[i]).margin(1e-6));
        }
        CHECK(f.sse < 1e-12);
    }

    SECTION("an individual-specific gradient selects the random-effects learner") {
        auto [j, f] = bank.select_best(u);
        (void)f;
        CHECK(j == jre);
    }

    SECTION("shrinkage grows with the penalty") {
        double prev = std::numeric_limits<double>::infinity();
        for (double pen : {0.1, 1.0, 10.0, 100.0}) {
            auto f = bank.fit_random_effects_with_penalty(u, pen);
            double norm2 = 0.0;
            for (std::size_t i = 0; i < ds.n_individuals(); ++i)
                norm2 += f.g0[i] * f.g0[i] + f.g1[i] * f.g1[i];
            CHECK(norm2 < prev);
            prev = norm2;
        }
    }

    SECTION("ridge estimates match a direct 2x2 solve") {
        const double pen = 3.0;
        auto f = bank.fit_random_effects_with_penalty(u, pen);
        for (std::size_t i = 0; i < ds.n_individuals(); i += 5) {
            double n_i = 0.0, st = 0.0, stt = 0.0, su = 0.0, sut = 0.0;
            for (std::size_t k = ds.obs_begin(i); k < ds.obs_end(i); ++k) {
                n_i += 1.0;
                st += ds.time[k];
                stt += ds.time[k] * ds.time[k];
                su += u[k];
                sut += u[k] * ds.time[k];
            }
            // invert [[n+pen, st], [st, stt+pen]] explicitly
            const double det = (n_i + pen) * (stt + pen) - st * st;
            CHECK(f.g0[i] == Catch::Approx(((stt + pen) * su - st * sut) / det));
            CHECK(f.g1[i] == Catch::Approx(((n_i + pen) * sut - st * su) / det));
        }
    }
}

TEST_CASE("random-effects penalty solver") {
    auto ds = testutil::make_random_ds(25, 4, 1, 1, 88);

    SECTION("df outside (0, 2) is rejected") {
        for (double df : {0.0, -1.0, 2.0, 2.5})
            CHECK_THROWS_WITH(detail::solve_re_penalty(ds.time, ds.obs_offset, df),
                              Catch::Matchers::ContainsSubstring("(0, 2)"));
    }

    SECTION("the solved penalty attains the requested trace") {
        for (double df : {0.5, 1.0, 1.5}) {
            const double pen = detail::solve_re_penalty(ds.time, ds.obs_offset, df);
            const double tr = detail::re_hat_trace(ds.time, ds.obs_offset, pen);
            CHECK(tr == Catch::Approx(df * static_cast<double>(ds.n_individuals()))
                            .epsilon(1e-6));
        }
    }

    SECTION("the trace is monotone decreasing in the penalty") {
        double prev = std::numeric_limits<double>::infinity();
        for (double pen : {1e-6, 1e-3, 1.0, 1e3, 1e6}) {
            const double tr = detail::re_hat_trace(ds.time, ds.obs_offset, pen);
            CHECK(tr < prev);
            prev = tr;
        }
    }
}

TEST_CASE("degenerate designs are rejected") {
    std::vector<LongObservation> obs = {
        {1, 0.5, 0.0, {1.0}}, {1, 1.5, 0.0, {1.0}}, {2, 0.5, 0.0, {1.0}}, {2, 1.5, 0.0, {1.0}},
    };
    std::vector<SurvivalRecord> surv = {{1, 2.0, 0, {}}, {2, 2.0, 0, {}}};
    auto ds = JointDataset::from_records(obs, surv, {"xconst"}, {});
    auto bank = LearnerBank::longitudinal(ds);
    std::vector<double> u = {1.0, 2.0, 3.0, 4.0};
    CHECK_THROWS_WITH(bank.fit_one(0, u),
                      Catch::Matchers::ContainsSubstring("degenerate design"));
}
