// alignlab command-line surface: task generation, trainers, oracle checks,
// hyperparameter sweeps, cache building, and sweep reports.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "alignlab/alignlab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string resolve_out(const std::string& flag_value) {
    if (const char* env = std::getenv("ALIGNLAB_OUT"); env && *env) return env;
    return flag_value;
}

json load_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw alignlab::ConfigError("cannot open config file: " + path.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded())
        throw alignlab::ConfigError("config file is not valid JSON: " + path.string());
    return j;
}

struct ResolvedExperiment {
    alignlab::TrainConfig cfg;
    alignlab::SynthTask task;
    std::string task_hash;
};

/// Loads the experiment config plus its task (inline spec or task file path,
/// resolved relative to the config's directory).
ResolvedExperiment resolve_experiment(const fs::path& config_path, int seed_override,
                                      const std::string& method_override) {
    json j = load_json_file(config_path);
    ResolvedExperiment out;
    out.cfg = alignlab::train_config_from_json(j);
    if (seed_override >= 0) out.cfg.seed = static_cast<std::uint64_t>(seed_override);
    if (!method_override.empty()) out.cfg.method = method_override;

    if (j.contains("task_file")) {
        fs::path task_path = j.at("task_file").get<std::string>();
        if (task_path.is_relative()) task_path = config_path.parent_path() / task_path;
        alignlab::LoadedTask loaded = alignlab::load_task(task_path);
        out.task = std::move(loaded.task);
        out.task_hash = loaded.hash;
    } else if (j.contains("task")) {
        alignlab::TaskSpec spec = alignlab::task_spec_from_json(j.at("task"), "task");
        out.task = alignlab::synth_task(spec.seed, spec);
        out.task_hash = alignlab::content_hash(alignlab::serialize_task(out.task, spec));
    } else {
        throw alignlab::ConfigError("missing required field: task (or task_file)");
    }
    return out;
}

int cmd_gen_task(const fs::path& config_path, const std::string& out_dir, int seed_override) {
    json j = load_json_file(config_path);
    alignlab::TaskSpec spec = alignlab::task_spec_from_json(j, "");
    if (seed_override >= 0) spec.seed = static_cast<std::uint64_t>(seed_override);
    alignlab::SynthTask task = alignlab::synth_task(spec.seed, spec);
    fs::path out = fs::path(out_dir) / "task.json";
    alignlab::save_task(out, task, spec);
    std::cout << alignlab::content_hash(alignlab::read_file(out)) << "\n";
    return 0;
}

int cmd_train(const fs::path& config_path, const std::string& out_dir, int seed_override,
              const std::string& method_override) {
    ResolvedExperiment exp = resolve_experiment(config_path, seed_override, method_override);
    alignlab::PipelineRun run = alignlab::run_method(exp.cfg.method, exp.task, exp.cfg);
    fs::path dir(out_dir);
    if (exp.cfg.dry_run) {
        for (const auto& phase : run.executed_plan) std::cout << phase << "\n";
        return 0;
    }
    alignlab::save_policy(dir / "checkpoint.json", run.policy, exp.task_hash);
    alignlab::atomic_write(dir / "metrics.jsonl", alignlab::metrics_jsonl(run.metrics));
    alignlab::atomic_write(dir / "summary.csv", alignlab::summary_csv({run.summary}));
    if (run.teacher_dpo.vocab_size() > 0)
        alignlab::save_policy(dir / "teacher_dpo.json", run.teacher_dpo, exp.task_hash);
    if (run.teacher_ref.vocab_size() > 0)
        alignlab::save_policy(dir / "teacher_ref.json", run.teacher_ref, exp.task_hash);
    std::cout << alignlab::summary_csv_header() << "\n"
              << alignlab::to_csv(run.summary) << "\n";
    return 0;
}

int cmd_evaluate(const fs::path& config_path, const std::string& out_dir, int seed_override,
                 const std::string& checkpoint, const std::string& opponent_path) {
    ResolvedExperiment exp = resolve_experiment(config_path, seed_override, "");
    alignlab::LoadedPolicy policy = alignlab::load_policy(checkpoint, exp.task_hash);

    alignlab::TabularPolicy uniform(exp.task.mdp.vocab_size, alignlab::PolicyRole::student);
    const alignlab::TabularPolicy& sampler = uniform;
    alignlab::Rng rng = alignlab::substream(exp.cfg.seed, "eval-pairs");
    alignlab::PreferenceDataset pairs = alignlab::synth_preference_data(
        exp.task.mdp, exp.task.reward, sampler, exp.cfg.data.n_eval_pairs, rng);

    alignlab::LoadedPolicy opponent;
    const alignlab::TabularPolicy* opp = nullptr;
    if (!opponent_path.empty()) {
        opponent = alignlab::load_policy(opponent_path, exp.task_hash);
        opp = &opponent.policy;
    }
    alignlab::EvalReport rep =
        alignlab::evaluate(policy.policy, exp.task.mdp, exp.task.reward, pairs, opp,
                           exp.cfg.eval.n_samples, exp.cfg.seed);
    json j;
    j["mean_true_reward_sampled"] = rep.mean_true_reward;
    j["mean_true_reward_exact"] =
        alignlab::expected_true_reward(policy.policy, exp.task.mdp, exp.task.reward);
    j["reward_accuracy"] = rep.reward_accuracy;
    j["win_rate"] = rep.win_rate;
    std::string text = j.dump(2) + "\n";
    alignlab::atomic_write(fs::path(out_dir) / "evaluation.json", text);
    std::cout << text;
    return 0;
}

struct OracleCheckRow {
    std::string name;
    double max_deviation = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

int cmd_oracle_check(const fs::path& config_path, const std::string& out_dir,
                     int seed_override, double tolerance_override,
                     const std::vector<std::string>& checkpoints) {
    ResolvedExperiment exp = resolve_experiment(config_path, seed_override, "");
    const alignlab::TokenMdp& mdp = exp.task.mdp;
    const alignlab::GroundTruthReward& truth = exp.task.reward;

    std::vector<OracleCheckRow> rows;
    for (const std::string& path : checkpoints) {
        OracleCheckRow row{"checkpoint-integrity:" + path, 0.0, 0.0, true};
        try {
            (void)alignlab::load_policy(path, exp.task_hash);
        } catch (const alignlab::IntegrityError&) {
            row.pass = false;
            row.max_deviation = 1.0;
        }
        rows.push_back(row);
    }

    // deterministic random reference policy for the identity suite
    alignlab::Rng rng = alignlab::substream(exp.cfg.seed, "oracle-ref");
    alignlab::TabularPolicy ref(mdp.vocab_size, alignlab::PolicyRole::reference_teacher);
    for (const auto& prompt : mdp.prompts) {
        for (const auto& group : alignlab::reachable_states_by_depth(mdp, prompt)) {
            for (const alignlab::State& s : group) {
                if (s.terminal) continue;
                auto& logits = ref.mutable_logits(alignlab::state_key(s));
                for (double& v : logits) v = rng.uniform(-1.5, 1.5);
            }
        }
    }
    double beta = exp.cfg.hp.beta;
    alignlab::OptimalSolution sol = alignlab::backward_induction(mdp, truth, ref, beta);

    auto tol = [&](double fallback) {
        return tolerance_override > 0.0 ? tolerance_override : fallback;
    };

    {
        OracleCheckRow row{"soft-value-lse", 0.0, tol(1e-10), false};
        for (const auto& [key, q] : sol.q_star) {
            std::vector<double> terms(q.size());
            auto log_ref = alignlab::log_softmax(ref.logits_for(key));
            for (std::size_t a = 0; a < q.size(); ++a) terms[a] = log_ref[a] + q[a] / beta;
            row.max_deviation =
                std::max(row.max_deviation,
                         std::fabs(sol.v_star.at(key) - beta * alignlab::log_sum_exp(terms)));
        }
        row.pass = row.max_deviation < row.tolerance;
        rows.push_back(row);
    }
    {
        OracleCheckRow row{"advantage-identity", alignlab::advantage_identity_check(sol, ref),
                           tol(1e-10), false};
        row.pass = row.max_deviation < row.tolerance;
        rows.push_back(row);
    }
    {
        OracleCheckRow row{"telescoping-sum", 0.0, tol(1e-8), false};
        for (const auto& prompt : mdp.prompts)
            for (const auto& traj : alignlab::enumerate_trajectories(mdp, prompt))
                row.max_deviation =
                    std::max(row.max_deviation,
                             alignlab::telescoping_check(sol, mdp, truth, ref, beta, traj).abs_diff);
        row.pass = row.max_deviation < row.tolerance;
        rows.push_back(row);
    }
    {
        OracleCheckRow row{"mle-equivalence", 0.0, tol(1e-8), false};
        for (const auto& prompt : mdp.prompts) {
            auto trajs = alignlab::enumerate_trajectories(mdp, prompt);
            for (std::size_t i = 0; i < trajs.size(); ++i) {
                for (std::size_t k = i + 1; k < trajs.size(); ++k) {
                    auto d = alignlab::implicit_reward_identity(sol, mdp, truth, ref, beta,
                                                                trajs[i], trajs[k]);
                    row.max_deviation =
                        std::max(row.max_deviation, std::fabs(d.implicit - d.true_delta));
                }
            }
        }
        row.pass = row.max_deviation < row.tolerance;
        rows.push_back(row);
    }
    {
        OracleCheckRow row{"adpa-gradient-forms", 0.0, tol(1e-12), false};
        alignlab::Rng grng = alignlab::substream(exp.cfg.seed, "oracle-grad");
        for (int trial = 0; trial < 20; ++trial) {
            alignlab::TabularPolicy student(mdp.vocab_size, alignlab::PolicyRole::student);
            alignlab::TabularPolicy dpo(mdp.vocab_size, alignlab::PolicyRole::dpo_teacher);
            for (const auto& prompt : mdp.prompts) {
                for (const auto& group : alignlab::reachable_states_by_depth(mdp, prompt)) {
                    for (const alignlab::State& s : group) {
                        if (s.terminal) continue;
                        for (double& v : student.mutable_logits(alignlab::state_key(s)))
                            v = grng.uniform(-1.0, 1.0);
                        for (double& v : dpo.mutable_logits(alignlab::state_key(s)))
                            v = grng.uniform(-1.0, 1.0);
                    }
                }
            }
            alignlab::AdvantageView view = alignlab::AdvantageView::exact(&dpo, &ref, beta);
            const auto& prompt = mdp.prompts[trial % mdp.prompts.size()];
            alignlab::TabularPolicy uniform(mdp.vocab_size, alignlab::PolicyRole::student);
            alignlab::TokenSeq y_hat = uniform.sample_response(mdp, prompt, grng).actions;
            alignlab::TokenSeq y = uniform.sample_response(mdp, prompt, grng).actions;
            double gamma = grng.uniform(0.5, 3.0);

            auto total = alignlab::adpa_loss(student, view, mdp, prompt, y, y_hat, gamma);
            auto sft = alignlab::sft_loss_and_grad(student, mdp, prompt, y);
            alignlab::GradientAccumulator direct = total.grad;
            direct.add_scaled(sft.grad, -1.0);
            auto pg = alignlab::adpa_distill_grad_policy_form(student, view, mdp, prompt, y_hat,
                                                              gamma);
            for (const auto& [key, row_g] : pg.rows) {
                const auto& other = direct.rows.at(key);
                for (std::size_t i = 0; i < row_g.size(); ++i)
                    row.max_deviation =
                        std::max(row.max_deviation, std::fabs(row_g[i] - other[i]));
            }
        }
        row.pass = row.max_deviation < row.tolerance;
        rows.push_back(row);
    }

    json report = json::array();
    bool all_pass = true;
    for (const auto& row : rows) {
        report.push_back({{"check_name", row.name},
                          {"max_deviation", row.max_deviation},
                          {"tolerance", row.tolerance},
                          {"pass", row.pass}});
        all_pass = all_pass && row.pass;
        std::printf("%-32s %-5s max_dev=%.3e tol=%.1e\n", row.name.c_str(),
                    row.pass ? "PASS" : "FAIL", row.max_deviation, row.tolerance);
    }
    alignlab::atomic_write(fs::path(out_dir) / "oracle_report.json", report.dump(2) + "\n");
    return all_pass ? 0 : 1;
}

std::vector<double> parse_grid_values(const std::string& spec, std::string& param) {
    auto eq = spec.find('=');
    if (eq == std::string::npos)
        throw alignlab::ConfigError("grid: expected param=v1,v2,... got '" + spec + "'");
    param = spec.substr(0, eq);
    if (param != "alpha" && param != "gamma")
        throw alignlab::ConfigError("grid: unknown parameter '" + param + "'");
    std::vector<double> values;
    std::stringstream ss(spec.substr(eq + 1));
    std::string item;
    while (std::getline(ss, item, ',')) values.push_back(std::stod(item));
    if (values.empty()) throw alignlab::ConfigError("grid: no values given");
    return values;
}

std::vector<std::uint64_t> parse_seeds(const std::string& spec) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) seeds.push_back(std::stoull(item));
    if (seeds.empty()) throw alignlab::ConfigError("seeds: no values given");
    return seeds;
}

int cmd_sweep(const fs::path& config_path, const std::string& out_dir, int seed_override,
              const std::string& grid_spec, const std::string& seeds_spec,
              const std::string& method_override, int jobs) {
    ResolvedExperiment base = resolve_experiment(config_path, seed_override, method_override);
    std::string param;
    std::vector<double> values = parse_grid_values(grid_spec, param);
    std::vector<std::uint64_t> seeds = parse_seeds(seeds_spec);

    struct Cell {
        double value;
        std::uint64_t seed;
        alignlab::SummaryRow row;
    };
    std::vector<Cell> cells;
    for (double v : values)
        for (std::uint64_t s : seeds) cells.push_back(Cell{v, s, {}});

    auto run_cell = [&](Cell& cell) {
        alignlab::TrainConfig cfg = base.cfg;
        cfg.seed = cell.seed;
        if (param == "alpha")
            cfg.hp.alpha = cell.value;
        else
            cfg.hp.gamma = cell.value;
        alignlab::PipelineRun run = alignlab::run_method(cfg.method, base.task, cfg);
        cell.row = run.summary;
    };

    if (jobs <= 1) {
        for (auto& cell : cells) run_cell(cell);
    } else {
        std::mutex mu;
        std::size_t next = 0;
        auto worker = [&]() {
            for (;;) {
                std::size_t idx;
                {
                    std::lock_guard<std::mutex> lock(mu);
                    if (next >= cells.size()) return;
                    idx = next++;
                }
                run_cell(cells[idx]);
            }
        };
        std::vector<std::thread> pool;
        for (int i = 0; i < jobs; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    std::string csv = param + ",value,seed,mean_true_reward,reward_accuracy\n";
    for (const auto& cell : cells) {
        csv += param + "," + alignlab::detail::format_double(cell.value) + "," +
               std::to_string(cell.seed) + "," +
               alignlab::detail::format_double(cell.row.mean_true_reward) + "," +
               alignlab::detail::format_double(cell.row.reward_accuracy) + "\n";
    }
    alignlab::atomic_write(fs::path(out_dir) / "sweep.csv", csv);
    std::cout << csv;
    return 0;
}

int cmd_cache_build(const fs::path& config_path, const std::string& out_dir,
                    int seed_override) {
    ResolvedExperiment exp = resolve_experiment(config_path, seed_override, "");
    const alignlab::TokenMdp& mdp = exp.task.mdp;

    // teachers exactly as the pipelines build them
    alignlab::TrainConfig cfg = exp.cfg;
    cfg.dry_run = false;
    alignlab::PipelineRun run = alignlab::run_method("dckd", exp.task, cfg);

    std::vector<alignlab::State> states;
    for (const auto& prompt : mdp.prompts)
        for (const auto& group : alignlab::reachable_states_by_depth(mdp, prompt))
            for (const alignlab::State& s : group)
                if (!s.terminal) states.push_back(s);

    alignlab::TopKAdvantageCache cache =
        alignlab::build_advantage_cache(run.teacher_dpo, run.teacher_ref, states, cfg.cache.k,
                                        cfg.cache.prob_space_subtraction);
    cache.dpo_hash = alignlab::policy_hash(run.teacher_dpo);
    cache.ref_hash = alignlab::policy_hash(run.teacher_ref);
    fs::path path = fs::path(out_dir) / "advantage_cache.bin";
    alignlab::save_cache(path, cache);
    alignlab::save_policy(fs::path(out_dir) / "teacher_dpo.json", run.teacher_dpo,
                          exp.task_hash);
    alignlab::save_policy(fs::path(out_dir) / "teacher_ref.json", run.teacher_ref,
                          exp.task_hash);
    std::cout << alignlab::content_hash(alignlab::read_file(path)) << "\n";
    return 0;
}

struct SweepAggregate {
    std::vector<double> values;
    std::vector<double> mean_reward;
    std::vector<double> mean_accuracy;
};

SweepAggregate aggregate_sweep_csv(const fs::path& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw alignlab::ConfigError("cannot open sweep csv: " + csv_path.string());
    std::string line;
    std::getline(in, line); // header
    std::map<double, std::pair<std::vector<double>, std::vector<double>>> by_value;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string param, value, seed, reward, acc;
        std::getline(ss, param, ',');
        std::getline(ss, value, ',');
        std::getline(ss, seed, ',');
        std::getline(ss, reward, ',');
        std::getline(ss, acc, ',');
        by_value[std::stod(value)].first.push_back(std::stod(reward));
        by_value[std::stod(value)].second.push_back(std::stod(acc));
    }
    SweepAggregate agg;
    for (const auto& [v, data] : by_value) {
        double r = 0.0, a = 0.0;
        for (double x : data.first) r += x;
        for (double x : data.second) a += x;
        agg.values.push_back(v);
        agg.mean_reward.push_back(r / data.first.size());
        agg.mean_accuracy.push_back(a / data.second.size());
    }
    return agg;
}

int cmd_report(const fs::path& input_csv, const std::string& out_dir) {
    SweepAggregate agg = aggregate_sweep_csv(input_csv);
    if (agg.values.empty()) throw alignlab::ConfigError("sweep csv has no rows");

    std::size_t star = 0;
    for (std::size_t i = 1; i < agg.values.size(); ++i)
        if (agg.mean_accuracy[i] > agg.mean_accuracy[star]) star = i;
    bool non_decreasing = true;
    for (std::size_t i = 1; i <= star; ++i)
        if (agg.mean_accuracy[i] + 1e-12 < agg.mean_accuracy[i - 1]) non_decreasing = false;

    std::size_t best_reward = 0;
    for (std::size_t i = 1; i < agg.values.size(); ++i)
        if (agg.mean_reward[i] > agg.mean_reward[best_reward]) best_reward = i;

    // does the curve fall beyond value 3 (qualitative flag only)?
    bool decline_beyond_3 = false;
    for (std::size_t i = 0; i + 1 < agg.values.size(); ++i) {
        if (agg.values[i] >= 3.0 - 1e-9 && agg.mean_reward[i + 1] < agg.mean_reward[i])
            decline_beyond_3 = true;
    }

    json j;
    j["values"] = agg.values;
    j["mean_true_reward"] = agg.mean_reward;
    j["mean_reward_accuracy"] = agg.mean_accuracy;
    j["accuracy_peak_value"] = agg.values[star];
    j["accuracy_non_decreasing_up_to_peak"] = non_decreasing;
    j["reward_argmax_value"] = agg.values[best_reward];
    j["reward_argmax_is_interior_or_right"] = best_reward > 0;
    j["decline_beyond_3"] = decline_beyond_3;
    std::string text = j.dump(2) + "\n";
    alignlab::atomic_write(fs::path(out_dir) / "sweep_report.json", text);
    std::cout << text;
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"alignlab: exact preference-alignment distillation lab"};
    app.require_subcommand(1);

    std::string config_path, out_dir = ".", method, grid, seeds = "1", checkpoint, opponent;
    std::string report_input;
    std::vector<std::string> check_checkpoints;
    int seed = -1, jobs = 1;
    double tolerance = -1.0;

    auto add_common = [&](CLI::App* sub, bool needs_config) {
        auto* opt = sub->add_option("--config", config_path, "JSON config path");
        if (needs_config) opt->required();
        sub->add_option("--out", out_dir, "output directory (ALIGNLAB_OUT overrides)");
        sub->add_option("--seed", seed, "master seed override");
    };

    CLI::App* gen = app.add_subcommand("gen-task", "synthesize a task file");
    add_common(gen, true);

    CLI::App* train = app.add_subcommand("train", "run a training method");
    add_common(train, true);
    train->add_option("--method", method, "sft|dpo|vanilla-kd|dckd|adpa|adpa+|q-argmax-kd|"
                                          "q-softmax-kd|dppo-token|dppo-seq");

    CLI::App* eval = app.add_subcommand("evaluate", "evaluate a checkpoint");
    add_common(eval, true);
    eval->add_option("--checkpoint", checkpoint, "policy checkpoint path")->required();
    eval->add_option("--opponent", opponent, "opponent checkpoint for win-rate");

    CLI::App* oracle = app.add_subcommand("oracle-check", "run the exact identity suite");
    add_common(oracle, true);
    oracle->add_option("--tolerance", tolerance, "override every check tolerance");
    oracle->add_option("--checkpoint", check_checkpoints,
                       "checkpoints whose task provenance must verify");

    CLI::App* sweep = app.add_subcommand("sweep", "grid over alpha or gamma across seeds");
    add_common(sweep, true);
    sweep->add_option("--grid", grid, "param=v1,v2,... (alpha or gamma)")->required();
    sweep->add_option("--seeds", seeds, "comma-separated seeds");
    sweep->add_option("--method", method, "method to sweep");
    sweep->add_option("--jobs", jobs, "worker threads");

    CLI::App* cache = app.add_subcommand("cache-build", "build a top-k advantage cache");
    add_common(cache, true);

    CLI::App* report = app.add_subcommand("report", "aggregate a sweep csv");
    report->add_option("--input", report_input, "sweep.csv path")->required();
    report->add_option("--out", out_dir, "output directory (ALIGNLAB_OUT overrides)");

    CLI11_PARSE(app, argc, argv);

    try {
        std::string out = resolve_out(out_dir);
        if (gen->parsed()) return cmd_gen_task(config_path, out, seed);
        if (train->parsed()) return cmd_train(config_path, out, seed, method);
        if (eval->parsed()) return cmd_evaluate(config_path, out, seed, checkpoint, opponent);
        if (oracle->parsed())
            return cmd_oracle_check(config_path, out, seed, tolerance, check_checkpoints);
        if (sweep->parsed())
            return cmd_sweep(config_path, out, seed, grid, seeds, method, jobs);
        if (cache->parsed()) return cmd_cache_build(config_path, out, seed);
        if (report->parsed()) return cmd_report(report_input, out);
    } catch (const alignlab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
