// Command-line interface: simulate | fit | tune | study | predict.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "jmboost/jmboost.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string timestamp_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

std::vector<int> parse_grid_axis(const std::string& s) {
    int lo = 0, hi = 0, step = 0;
    if (std::sscanf(s.c_str(), "%d:%d:%d", &lo, &hi, &step) != 3 || lo < 1 || hi < lo ||
        step < 1)
        throw jmboost::validation_error("grid must be min:max:step with min>=1, got '" + s +
                                        "'");
    std::vector<int> out;
    for (int v = lo; v <= hi; v += step) out.push_back(v);
    return out;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream f(path);
    if (!f) throw jmboost::validation_error("cannot write " + path);
    f << content;
}

void print_fit_summary(const jmboost::FitResult& fr) {
    const auto orig_l = jmboost::back_transform(fr.coef_l, fr.manifest.long_scales);
    const auto orig_ls = jmboost::back_transform(fr.coef_ls, fr.manifest.shared_scales);
    std::printf("longitudinal sub-predictor (standardized | original scale)\n");
    std::printf("  intercept  %12.5f | %12.5f\n", fr.coef_l.intercept, orig_l.intercept);
    for (std::size_t j = 0; j < fr.coef_l.slopes.size(); ++j)
        std::printf("  %-12s %10.5f | %12.5f\n", fr.coef_l.names[j].c_str(),
                    fr.coef_l.slopes[j], orig_l.slopes[j]);
    std::printf("shared sub-predictor (standardized | original scale)\n");
    std::printf("  intercept  %12.5f | %12.5f\n", fr.coef_ls.intercept, orig_ls.intercept);
    for (std::size_t j = 0; j < fr.coef_ls.slopes.size(); ++j)
        std::printf("  %-12s %10.5f | %12.5f\n", fr.coef_ls.names[j].c_str(),
                    fr.coef_ls.slopes[j], orig_ls.slopes[j]);
    std::printf("  beta_t     %12.5f\n", fr.state.beta_t);
    std::printf("nuisance: sigma2 = %.6f, alpha = %.6f, lambda0 = %.6f\n",
                fr.nuisance.sigma2, fr.nuisance.alpha, fr.nuisance.lambda0);
    std::printf("selected:");
    std::vector<int> wins_l(fr.coef_l.slopes.size(), 0);
    for (int j : fr.selection_l)
        if (j >= 0) wins_l[j] = 1;
    for (std::size_t j = 0; j < wins_l.size(); ++j)
        if (wins_l[j]) std::printf(" %s", fr.coef_l.names[j].c_str());
    std::vector<int> wins_ls(fr.coef_ls.slopes.size() + 2, 0);
    for (int j : fr.selection_ls)
        if (j >= 0) wins_ls[j] = 1;
    for (std::size_t j = 0; j < fr.coef_ls.slopes.size(); ++j)
        if (wins_ls[j]) std::printf(" %s", fr.coef_ls.names[j].c_str());
    if (wins_ls[fr.coef_ls.slopes.size()]) std::printf(" time");
    if (wins_ls[fr.coef_ls.slopes.size() + 1]) std::printf(" random_effects");
    std::printf("\n");
}

void write_paths_csv(const jmboost::FitResult& fr, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw jmboost::validation_error("cannot write " + path);
    f << "iteration";
    for (const auto& n : fr.coef_l.names) f << ",l_" << n;
    for (const auto& n : fr.coef_ls.names) f << ",ls_" << n;
    f << ",beta_t\n";
    for (std::size_t m = 0; m < fr.path_l.size(); ++m) {
        f << m;
        for (double v : fr.path_l[m]) f << ',' << v;
        for (double v : fr.path_ls[m]) f << ',' << v;
        f << ',' << fr.path_beta_t[m] << '\n';
    }
}

struct FitFlags {
    std::string long_path, surv_path, out, paths;
    int mstop_l = 0, mstop_ls = 0;
    jmboost::BoostConfig cfg;
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Component-wise gradient boosting for joint longitudinal "
                 "and time-to-event models"};
    app.require_subcommand(1);
    app.set_config("--config", "", "flat key=value config file; flags win");
    bool timestamps = false;
    app.add_flag("--timestamps", timestamps, "embed a timestamp in JSON reports");

    // ---- simulate ----
    auto* sim = app.add_subcommand("simulate", "generate a synthetic joint dataset");
    std::string sim_preset, sim_out = ".";
    std::uint64_t sim_seed = 0;
    jmboost::SimScenario scen;
    sim->add_option("--preset", sim_preset, "scenario preset: S1, S2 or S3");
    sim->add_option("--seed", sim_seed, "RNG seed")->required();
    sim->add_option("--out", sim_out, "output directory");
    sim->add_option("--n", scen.n_individuals, "number of individuals");
    sim->add_option("--ni", scen.obs_per_individual, "observations per individual");
    sim->add_option("--alpha", scen.alpha, "association parameter");
    sim->add_option("--lambda0", scen.lambda0, "baseline hazard");
    sim->add_option("--sigma2", scen.sigma2, "error variance");
    sim->add_option("--noise-l", scen.noise_l, "longitudinal noise covariates");
    sim->add_option("--noise-ls", scen.noise_ls, "shared noise covariates");

    // ---- fit ----
    auto* fitc = app.add_subcommand("fit", "fit a joint model by boosting");
    FitFlags ff;
    fitc->add_option("--long", ff.long_path, "longitudinal CSV")->required();
    fitc->add_option("--surv", ff.surv_path, "survival CSV")->required();
    fitc->add_option("--mstop-l", ff.mstop_l, "longitudinal stopping iteration")->required();
    fitc->add_option("--mstop-ls", ff.mstop_ls, "shared stopping iteration")->required();
    fitc->add_option("--nu", ff.cfg.nu, "step length");
    fitc->add_option("--alpha0", ff.cfg.alpha0, "association offset");
    fitc->add_option("--lambda0", ff.cfg.lambda0_0, "baseline hazard offset");
    fitc->add_option("--re-df", ff.cfg.re_df, "random-effects refit df per individual, in (0,2)");
    fitc->add_flag("--normalize-survival", ff.cfg.gradient.normalize_survival,
                   "scale the replicated survival gradient term by 1/n_i");
    fitc->add_flag("--survival-last-row", ff.cfg.gradient.survival_last_row_only,
                   "attach the survival gradient term only to each individual's last row");
    fitc->add_option("--out", ff.out, "model JSON output path");
    fitc->add_option("--paths", ff.paths, "coefficient path CSV output path");

    // ---- tune ----
    auto* tunec = app.add_subcommand("tune", "grid search for stopping iterations");
    std::string t_long, t_surv, t_grid = "30:300:30", t_grid_l, t_grid_ls;
    std::string t_out, t_surface, t_model_out;
    double t_holdout = -1.0, t_parsimony = jmboost::GridSpec{}.parsimony_tol;
    int t_kfold = 0, t_refine = 0, t_jobs = 1;
    std::uint64_t t_seed = 0;
    bool t_refit = false;
    jmboost::BoostConfig t_cfg;
    tunec->add_option("--long", t_long, "longitudinal CSV")->required();
    tunec->add_option("--surv", t_surv, "survival CSV")->required();
    tunec->add_option("--grid", t_grid, "grid min:max:step for both axes");
    tunec->add_option("--grid-l", t_grid_l, "override grid for mstop_l");
    tunec->add_option("--grid-ls", t_grid_ls, "override grid for mstop_ls");
    tunec->add_option("--holdout", t_holdout, "holdout: training fraction in (0,1)");
    tunec->add_option("--kfold", t_kfold, "k-fold cross validation");
    tunec->add_option("--refine", t_refine, "adaptive grid refinement rounds");
    tunec->add_option("--parsimony", t_parsimony,
                      "relative risk tolerance for choosing a smaller mstop_ls (0 = exact argmin)");
    tunec->add_option("--seed", t_seed, "RNG seed")->required();
    tunec->add_option("--jobs", t_jobs, "parallel workers");
    tunec->add_option("--nu", t_cfg.nu, "step length");
    tunec->add_option("--re-df", t_cfg.re_df, "random-effects refit df per individual, in (0,2)");
    tunec->add_option("--out", t_out, "tuning JSON output path");
    tunec->add_option("--surface", t_surface, "risk surface CSV output path");
    tunec->add_flag("--refit", t_refit, "refit at the optimum");
    tunec->add_option("--model-out", t_model_out, "model JSON path for --refit");

    // ---- study ----
    auto* studyc = app.add_subcommand("study", "replicated simulation study");
    std::string st_preset = "S1", st_out = ".", st_grid = "30:300:30";
    int st_runs = 0, st_jobs = 1, st_refine = 0;
    std::size_t st_eval = 1000;
    std::uint64_t st_seed = 0;
    double st_lambda0 = -1.0, st_sigma2 = -1.0;
    double st_parsimony = jmboost::GridSpec{}.parsimony_tol;
    studyc->add_option("--preset", st_preset, "scenario preset: S1, S2 or S3");
    studyc->add_option("--runs", st_runs, "number of replicates")->required();
    studyc->add_option("--seed", st_seed, "RNG seed")->required();
    studyc->add_option("--grid", st_grid, "tuning grid min:max:step");
    studyc->add_option("--refine", st_refine, "adaptive grid refinement rounds");
    studyc->add_option("--parsimony", st_parsimony,
                       "relative risk tolerance for choosing a smaller mstop_ls (0 = exact argmin)");
    studyc->add_option("--eval-n", st_eval, "evaluation individuals per replicate");
    studyc->add_option("--jobs", st_jobs, "parallel workers");
    studyc->add_option("--lambda0", st_lambda0, "override scenario baseline hazard");
    studyc->add_option("--sigma2", st_sigma2, "override scenario error variance");
    studyc->add_option("--out", st_out, "output directory");

    // ---- predict ----
    auto* predc = app.add_subcommand("predict", "longitudinal predictions from a model");
    std::string p_model, p_long, p_surv, p_out;
    predc->add_option("--model", p_model, "model JSON from fit")->required();
    predc->add_option("--long", p_long, "longitudinal CSV with rows to predict")->required();
    predc->add_option("--surv", p_surv, "optional survival CSV for the same individuals");
    predc->add_option("--out", p_out, "prediction CSV output path");

    try {
        app.parse(argc, argv);

        if (sim->parsed()) {
            if (!sim_preset.empty()) {
                auto p = jmboost::SimScenario::preset(sim_preset, sim_seed);
                // explicit flags override the preset
                p.n_individuals = sim->count("--n") ? scen.n_individuals : p.n_individuals;
                p.obs_per_individual =
                    sim->count("--ni") ? scen.obs_per_individual : p.obs_per_individual;
                p.alpha = sim->count("--alpha") ? scen.alpha : p.alpha;
                p.lambda0 = sim->count("--lambda0") ? scen.lambda0 : p.lambda0;
                p.sigma2 = sim->count("--sigma2") ? scen.sigma2 : p.sigma2;
                p.noise_l = sim->count("--noise-l") ? scen.noise_l : p.noise_l;
                p.noise_ls = sim->count("--noise-ls") ? scen.noise_ls : p.noise_ls;
                scen = p;
            }
            scen.seed = sim_seed;
            fs::create_directories(sim_out);
            auto out = jmboost::generate(scen);
            jmboost::save_csv(out.dataset, (fs::path(sim_out) / "long.csv").string(),
                              (fs::path(sim_out) / "surv.csv").string());
            if (timestamps) out.truth["generated_at"] = timestamp_now();
            write_text((fs::path(sim_out) / "truth.json").string(), out.truth.dump(2) + "\n");
            std::printf("censoring rate: %.4f\n", out.censoring_rate);
            return 0;
        }

        if (fitc->parsed()) {
            auto ds = jmboost::load_csv(ff.long_path, ff.surv_path);
            auto [std_ds, manifest] = jmboost::standardize(ds);
            ff.cfg.mstop_l = ff.mstop_l;
            ff.cfg.mstop_ls = ff.mstop_ls;
            auto fr = jmboost::fit(std_ds, ff.cfg);
            fr.manifest = manifest;
            print_fit_summary(fr);
            if (!ff.out.empty()) {
                json j = fr.to_json();
                if (timestamps) j["generated_at"] = timestamp_now();
                write_text(ff.out, j.dump(2) + "\n");
            }
            if (!ff.paths.empty()) write_paths_csv(fr, ff.paths);
            return 0;
        }

        if (tunec->parsed()) {
            if ((t_holdout > 0.0) == (t_kfold > 0))
                throw jmboost::validation_error("choose exactly one of --holdout or --kfold");
            if (t_holdout >= 1.0)
                throw jmboost::validation_error("holdout fraction must lie in (0,1)");
            auto ds = jmboost::load_csv(t_long, t_surv);
            jmboost::GridSpec grid;
            grid.l_values = parse_grid_axis(t_grid_l.empty() ? t_grid : t_grid_l);
            grid.ls_values = parse_grid_axis(t_grid_ls.empty() ? t_grid : t_grid_ls);
            grid.refine_rounds = t_refine;
            grid.parsimony_tol = t_parsimony;
            jmboost::TuneMethod method;
            if (t_kfold > 0)
                method = jmboost::KFoldMethod{t_kfold, t_seed};
            else
                method = jmboost::HoldoutMethod{t_holdout, t_seed};
            auto res = jmboost::tune_adaptive(ds, t_cfg, grid, method, t_jobs);
            std::printf("chosen mstop_l = %d, mstop_ls = %d\n", res.best_l, res.best_ls);
            if (!t_out.empty()) {
                json j = res.to_json();
                if (timestamps) j["generated_at"] = timestamp_now();
                write_text(t_out, j.dump(2) + "\n");
            }
            if (!t_surface.empty()) jmboost::write_surface_csv(res, t_surface);
            if (t_refit) {
                auto [std_ds, manifest] = jmboost::standardize(ds);
                jmboost::BoostConfig cfg = t_cfg;
                cfg.mstop_l = res.best_l;
                cfg.mstop_ls = res.best_ls;
                auto fr = jmboost::fit(std_ds, cfg);
                fr.manifest = manifest;
                print_fit_summary(fr);
                if (!t_model_out.empty())
                    write_text(t_model_out, fr.to_json().dump(2) + "\n");
            }
            return 0;
        }

        if (studyc->parsed()) {
            if (st_runs < 1) throw jmboost::validation_error("--runs must be >= 1");
            auto sc = jmboost::SimScenario::preset(st_preset, st_seed);
            if (st_lambda0 > 0.0) sc.lambda0 = st_lambda0;
            if (st_sigma2 > 0.0) sc.sigma2 = st_sigma2;
            auto axis = parse_grid_axis(st_grid);
            jmboost::GridSpec grid;
            grid.l_values = axis;
            grid.ls_values = axis;
            grid.refine_rounds = st_refine;
            grid.parsimony_tol = st_parsimony;
            fs::create_directories(st_out);
            auto rep = jmboost::replicate_study(sc, st_runs, grid, st_eval, {}, st_jobs,
                                                [&](int r) {
                                                    std::fprintf(stderr, "replicate %d/%d done\n",
                                                                 r, st_runs);
                                                });
            json j = rep.to_json();
            if (timestamps) j["generated_at"] = timestamp_now();
            write_text((fs::path(st_out) / "study.json").string(), j.dump(2) + "\n");
            write_text((fs::path(st_out) / "table1.txt").string(), rep.table1_text());
            write_text((fs::path(st_out) / "table2.txt").string(), rep.table2_text());
            rep.write_csv((fs::path(st_out) / "study.csv").string());
            std::fputs(rep.table1_text().c_str(), stdout);
            std::fputs(rep.table2_text().c_str(), stdout);
            return 0;
        }

        if (predc->parsed()) {
            std::ifstream mf(p_model);
            if (!mf) throw jmboost::validation_error("cannot open model file: " + p_model);
            json mj = json::parse(mf);
            auto fr = jmboost::FitResult::from_json(mj);
            jmboost::JointDataset ds;
            if (!p_surv.empty()) {
                ds = jmboost::load_csv(p_long, p_surv);
            } else {
                // synthesize survival rows so prediction works from the
                // longitudinal file alone
                auto tmp = fs::temp_directory_path() / "jmboost_pred_surv.csv";
                std::ifstream lf(p_long);
                if (!lf) throw jmboost::validation_error("cannot open " + p_long);
                std::map<long long, double> last_time;
                std::string line;
                std::getline(lf, line);
                while (std::getline(lf, line)) {
                    if (line.empty()) continue;
                    auto f = jmboost::detail::split_csv_line(line);
                    const long long id = std::stoll(f[0]);
                    last_time[id] = std::max(last_time.count(id) ? last_time[id] : 0.0,
                                             std::stod(f[1]));
                }
                std::ofstream sf(tmp);
                sf << "id,event_time,status";
                for (const auto& n : fr.coef_ls.names) sf << ',' << n;
                sf << '\n';
                for (const auto& [id, t] : last_time) {
                    char tb[40];
                    std::snprintf(tb, sizeof(tb), "%.17g", t + 1e-9);
                    sf << id << ',' << tb << ",0";
                    for (std::size_t j = 0; j < fr.coef_ls.names.size(); ++j) sf << ",0";
                    sf << '\n';
                }
                sf.close();
                ds = jmboost::load_csv(p_long, tmp.string());
            }
            auto scaled = jmboost::apply_manifest(ds, fr.manifest);
            auto pred = jmboost::predict_longitudinal(fr, scaled);
            std::ostringstream out;
            out << "id,time,prediction\n";
            for (std::size_t i = 0; i < scaled.n_individuals(); ++i)
                for (std::size_t k = scaled.obs_begin(i); k < scaled.obs_end(i); ++k) {
                    char buf[64];
                    std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g\n", scaled.ids[i],
                                  scaled.time[k], pred[k]);
                    out << buf;
                }
            if (p_out.empty())
                std::fputs(out.str().c_str(), stdout);
            else
                write_text(p_out, out.str());
            return 0;
        }
        return 0;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const jmboost::validation_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
