#include "loramerge/cli.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "loramerge/continual.hpp"
#include "loramerge/errors.hpp"
#include "loramerge/harness.hpp"
#include "loramerge/merge.hpp"
#include "loramerge/metrics.hpp"
#include "loramerge/synth.hpp"

namespace loramerge {

namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

constexpr const char* kWorkersEnvVar = "LORAMERGE_WORKERS";

std::string error_line(errc code, const std::string& message) {
    json doc;
    doc["error"] = errc_name(code);
    doc["message"] = message;
    return doc.dump() + "\n";
}

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        raise(errc::io_failure, "cannot open config '" + path + "'");
    }
    const json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
        raise(errc::invalid_config, "config '" + path + "' is not a JSON object");
    }
    return doc;
}

void check_schema_version(const json& doc, const std::string& path) {
    if (doc.contains("schema_version") && doc["schema_version"].get<std::int64_t>() != 1) {
        raise(errc::invalid_config, "config '" + path + "' has unsupported schema_version");
    }
}

std::size_t worker_count() {
    if (const char* env = std::getenv(kWorkersEnvVar)) {
        const long parsed = std::strtol(env, nullptr, 10);
        if (parsed >= 1) return static_cast<std::size_t>(parsed);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

struct MergeRecipe {
    std::string method = "weight-average";
    std::string regime = "equal";
    std::vector<std::string> inputs;
    std::optional<std::vector<double>> weights;
    double density = 0.5;
    double drop_rate = 0.5;
    std::uint64_t seed = 0;
    std::string output;
};

MergeRecipe parse_recipe(const json& doc, const std::string& path) {
    check_schema_version(doc, path);
    MergeRecipe recipe;
    if (doc.contains("method")) recipe.method = doc["method"].get<std::string>();
    if (doc.contains("regime")) recipe.regime = doc["regime"].get<std::string>();
    if (doc.contains("inputs")) recipe.inputs = doc["inputs"].get<std::vector<std::string>>();
    if (doc.contains("weights")) recipe.weights = doc["weights"].get<std::vector<double>>();
    if (doc.contains("density")) recipe.density = doc["density"].get<double>();
    if (doc.contains("drop_rate")) recipe.drop_rate = doc["drop_rate"].get<double>();
    if (doc.contains("seed")) recipe.seed = doc["seed"].get<std::uint64_t>();
    if (doc.contains("output")) recipe.output = doc["output"].get<std::string>();
    return recipe;
}

void check_recipe(const MergeRecipe& recipe) {
    if (recipe.regime != "equal" && recipe.regime != "continual") {
        raise(errc::invalid_config, "regime must be 'equal' or 'continual', got '" +
                                        recipe.regime + "'");
    }
    if (recipe.inputs.empty()) {
        raise(errc::invalid_config, "recipe lists no input checkpoints");
    }
    if (recipe.output.empty()) {
        raise(errc::invalid_config, "recipe has no output path");
    }
    if (recipe.regime == "continual" && recipe.weights) {
        raise(errc::invalid_config,
              "the continual regime derives its weights from the order; "
              "explicit weights are not allowed");
    }
    parse_merge_method(recipe.method);  // validates the name
}

std::vector<AdapterCheckpoint> load_inputs(const std::vector<std::string>& paths) {
    std::vector<AdapterCheckpoint> adapters;
    adapters.reserve(paths.size());
    for (const auto& path : paths) adapters.push_back(load_checkpoint(path));
    return adapters;
}

AdapterCheckpoint execute_recipe(const MergeRecipe& recipe,
                                 std::span<const AdapterCheckpoint> adapters) {
    const MergeMethod method = parse_merge_method(recipe.method);
    MergeParams params;
    params.density = recipe.density;
    params.drop_rate = recipe.drop_rate;
    params.seed = recipe.seed;
    if (recipe.regime == "continual") {
        return continual_merge(adapters, method, params);
    }
    params.weights = recipe.weights
                         ? *recipe.weights
                         : std::vector<double>(adapters.size(),
                                               1.0 / static_cast<double>(adapters.size()));
    return merge(method, adapters, params);
}

int cmd_merge(const std::string& config_path, const MergeRecipe& overrides,
              const std::vector<bool>& has_override, std::ostream& out) {
    MergeRecipe recipe = parse_recipe(load_json_file(config_path), config_path);
    // Flags take precedence over config fields.
    if (has_override[0]) recipe.method = overrides.method;
    if (has_override[1]) recipe.density = overrides.density;
    if (has_override[2]) recipe.drop_rate = overrides.drop_rate;
    if (has_override[3]) recipe.seed = overrides.seed;
    if (has_override[4]) recipe.output = overrides.output;
    if (has_override[5]) recipe.regime = overrides.regime;
    check_recipe(recipe);

    const auto adapters = load_inputs(recipe.inputs);
    const AdapterCheckpoint merged = execute_recipe(recipe, adapters);
    save_checkpoint(merged, recipe.output);
    out << "wrote " << recipe.output << "\n";
    return 0;
}

struct SweepJob {
    MergeRecipe recipe;
    std::vector<std::size_t> member_indices;
};

int cmd_sweep(const std::string& config_path, std::ostream& out) {
    const json doc = load_json_file(config_path);
    check_schema_version(doc, config_path);

    if (!doc.contains("inputs") || !doc["inputs"].is_array() || doc["inputs"].empty()) {
        raise(errc::invalid_config, "sweep config needs a non-empty 'inputs' array");
    }
    const auto input_paths = doc["inputs"].get<std::vector<std::string>>();
    std::vector<std::string> methods = {"weight-average", "ties", "dare-ties"};
    if (doc.contains("methods")) methods = doc["methods"].get<std::vector<std::string>>();
    std::vector<std::string> regimes = {"equal", "continual"};
    if (doc.contains("regimes")) regimes = doc["regimes"].get<std::vector<std::string>>();
    const double density = doc.value("density", 0.5);
    const double drop_rate = doc.value("drop_rate", 0.5);
    const std::uint64_t seed = doc.value("seed", std::uint64_t{0});
    const std::size_t min_subset = doc.value("min_subset_size", std::size_t{1});
    const std::string output_dir = doc.value("output_dir", std::string{"."});
    for (const auto& method : methods) parse_merge_method(method);

    const auto adapters = load_inputs(input_paths);
    const std::size_t n = adapters.size();
    if (n > kMaxEnumeratedTasks) {
        raise(errc::too_many_tasks, "sweep enumeration is capped at " +
                                        std::to_string(kMaxEnumeratedTasks) + " inputs, got " +
                                        std::to_string(n));
    }
    std::filesystem::create_directories(output_dir);

    std::vector<SweepJob> jobs;
    for (const auto& regime : regimes) {
        if (regime != "equal" && regime != "continual") {
            raise(errc::invalid_config, "unknown regime '" + regime + "' in sweep config");
        }
        for (std::size_t mask = 1; mask < (std::size_t{1} << n); ++mask) {
            std::vector<std::size_t> members;
            for (std::size_t i = 0; i < n; ++i) {
                if (mask & (std::size_t{1} << i)) members.push_back(i);
            }
            if (members.size() < std::max<std::size_t>(min_subset, 1)) continue;

            if (regime == "equal") {
                std::string label;
                for (std::size_t i : members) {
                    if (!label.empty()) label += "+";
                    label += adapters[i].id;
                }
                for (const auto& method : methods) {
                    SweepJob job;
                    job.recipe.method = method;
                    job.recipe.regime = "equal";
                    job.recipe.density = density;
                    job.recipe.drop_rate = drop_rate;
                    job.recipe.seed = seed;
                    job.recipe.output = (std::filesystem::path(output_dir) /
                                         ("equal__" + label + "__" + method + ".safetensors"))
                                            .string();
                    job.member_indices = members;
                    jobs.push_back(std::move(job));
                }
            } else {
                std::vector<std::size_t> positions = members;
                do {
                    std::string label;
                    for (std::size_t i : positions) {
                        if (!label.empty()) label += "-";
                        label += adapters[i].id;
                    }
                    for (const auto& method : methods) {
                        SweepJob job;
                        job.recipe.method = method;
                        job.recipe.regime = "continual";
                        job.recipe.density = density;
                        job.recipe.drop_rate = drop_rate;
                        job.recipe.seed = seed;
                        job.recipe.output = (std::filesystem::path(output_dir) /
                                             ("continual__" + label + "__" + method +
                                              ".safetensors"))
                                                .string();
                        job.member_indices = positions;
                        jobs.push_back(std::move(job));
                    }
                } while (std::next_permutation(positions.begin(), positions.end()));
            }
        }
    }

    // Jobs are independent; the keyed RNG makes outputs schedule-invariant.
    const std::size_t workers = std::min(worker_count(), std::max<std::size_t>(jobs.size(), 1));
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::mutex error_mutex;
    std::optional<Error> first_error;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            while (true) {
                const std::size_t idx = next.fetch_add(1);
                if (idx >= jobs.size()) return;
                const SweepJob& job = jobs[idx];
                try {
                    std::vector<AdapterCheckpoint> constituents;
                    constituents.reserve(job.member_indices.size());
                    for (std::size_t i : job.member_indices) constituents.push_back(adapters[i]);
                    const AdapterCheckpoint merged = execute_recipe(job.recipe, constituents);
                    save_checkpoint(merged, job.recipe.output);
                } catch (const Error& e) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = e;
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) throw *first_error;

    ordered_json manifest = ordered_json::array();
    for (const auto& job : jobs) {
        ordered_json entry;
        entry["output"] = job.recipe.output;
        entry["method"] = job.recipe.method;
        entry["regime"] = job.recipe.regime;
        ordered_json inputs = ordered_json::array();
        for (std::size_t i : job.member_indices) inputs.push_back(adapters[i].id);
        entry["inputs"] = std::move(inputs);
        entry["density"] = job.recipe.density;
        entry["drop_rate"] = job.recipe.drop_rate;
        entry["seed"] = job.recipe.seed;
        manifest.push_back(std::move(entry));
    }
    const auto manifest_path = std::filesystem::path(output_dir) / "sweep_manifest.json";
    std::ofstream manifest_out(manifest_path, std::ios::trunc);
    if (!manifest_out) {
        raise(errc::io_failure, "cannot write '" + manifest_path.string() + "'");
    }
    manifest_out << manifest.dump(2) << "\n";

    for (const auto& job : jobs) out << "wrote " << job.recipe.output << "\n";
    out << "wrote " << manifest_path.string() << "\n";
    return 0;
}

synth::LabConfig parse_lab_config(const json& doc, const std::string& path) {
    check_schema_version(doc, path);
    synth::LabConfig cfg;
    if (doc.contains("seed")) cfg.seed = doc["seed"].get<std::uint64_t>();
    if (doc.contains("d_in")) cfg.d_in = doc["d_in"].get<std::size_t>();
    if (doc.contains("d_out")) cfg.d_out = doc["d_out"].get<std::size_t>();
    if (doc.contains("m")) cfg.m = doc["m"].get<std::size_t>();
    if (doc.contains("rank")) cfg.rank = doc["rank"].get<std::size_t>();
    if (doc.contains("n_tasks")) cfg.n_tasks = doc["n_tasks"].get<std::size_t>();
    if (doc.contains("similarity")) cfg.similarity = doc["similarity"].get<double>();
    if (doc.contains("fit_iters")) cfg.fit_iters = doc["fit_iters"].get<std::size_t>();
    if (doc.contains("fit_tol")) cfg.fit_tol = doc["fit_tol"].get<double>();
    return cfg;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"LoRA adapter merging and evaluation toolkit"};
    app.require_subcommand(1);

    // merge
    auto* merge_cmd = app.add_subcommand("merge", "Merge checkpoints per a JSON recipe");
    std::string merge_config;
    merge_cmd->add_option("--config", merge_config, "Recipe JSON path")->required();
    MergeRecipe overrides;
    auto* opt_method = merge_cmd->add_option("--method", overrides.method,
                                             "Override: weight-average|ties|dare-ties");
    auto* opt_density = merge_cmd->add_option("--density", overrides.density, "Override density");
    auto* opt_drop = merge_cmd->add_option("--drop-rate", overrides.drop_rate,
                                           "Override drop rate");
    auto* opt_seed = merge_cmd->add_option("--seed", overrides.seed, "Override seed");
    auto* opt_output = merge_cmd->add_option("--output", overrides.output, "Override output path");
    auto* opt_regime = merge_cmd->add_option("--regime", overrides.regime,
                                             "Override: equal|continual");

    // sweep
    auto* sweep_cmd = app.add_subcommand("sweep",
                                         "Materialize all subset and order merges of the inputs");
    std::string sweep_config;
    sweep_cmd->add_option("--config", sweep_config, "Sweep JSON path")->required();

    // fsd
    auto* fsd_cmd = app.add_subcommand("fsd", "Fraction of sign difference of two checkpoints");
    std::vector<std::string> fsd_paths;
    fsd_cmd->add_option("paths", fsd_paths, "Two checkpoint paths")->expected(2);

    // passk
    auto* passk_cmd = app.add_subcommand("passk", "Unbiased pass@k estimate");
    std::int64_t passk_n = 0;
    std::int64_t passk_c = 0;
    std::int64_t passk_k = 0;
    passk_cmd->add_option("--n", passk_n, "Generated candidates")->required();
    passk_cmd->add_option("--c", passk_c, "Correct candidates")->required();
    passk_cmd->add_option("--k", passk_k, "Draws")->required();

    // report
    auto* report_cmd = app.add_subcommand("report", "Score table from JSONL eval records");
    std::string report_records;
    std::string report_baseline;
    std::int64_t report_k = 1;
    std::string report_format = "md";
    std::string report_systems;
    ResampleOptions report_opts;
    report_cmd->add_option("--records", report_records, "JSONL eval records")->required();
    report_cmd->add_option("--baseline", report_baseline, "Baseline system id")->required();
    report_cmd->add_option("--k", report_k, "k for pass@k (default 1)");
    report_cmd->add_option("--format", report_format, "md|csv|json (default md)");
    report_cmd->add_option("--systems", report_systems,
                           "Comma-separated system order (default: record order)");
    report_cmd->add_option("--resamples", report_opts.resamples,
                           "Resamples for the paired t-test (default 400)");
    report_cmd->add_option("--sample-size", report_opts.sample_size,
                           "Resample size (default: population)");
    report_cmd->add_option("--seed", report_opts.seed, "Resampling seed");

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "Run the synthetic merge study");
    std::string synth_config;
    synth_cmd->add_option("--config", synth_config, "LabConfig JSON path");
    synth::LabConfig lab_overrides;
    auto* opt_lab_seed = synth_cmd->add_option("--seed", lab_overrides.seed, "Override seed");
    auto* opt_lab_tasks = synth_cmd->add_option("--n-tasks", lab_overrides.n_tasks,
                                                "Override task count");
    auto* opt_lab_alpha = synth_cmd->add_option("--similarity", lab_overrides.similarity,
                                                "Override task similarity in [0,1]");

    // validate
    auto* validate_cmd = app.add_subcommand("validate", "Check checkpoint compatibility");
    std::vector<std::string> validate_paths;
    validate_cmd->add_option("paths", validate_paths, "Checkpoint paths")
        ->expected(-1)
        ->required();

    std::vector<const char*> argv;
    argv.push_back("loramerge");
    for (const auto& arg : args) argv.push_back(arg.c_str());

    try {
        try {
            app.parse(static_cast<int>(argv.size()), argv.data());
        } catch (const CLI::CallForHelp&) {
            out << app.help();
            return 0;
        } catch (const CLI::CallForAllHelp&) {
            out << app.help("", CLI::AppFormatMode::All);
            return 0;
        } catch (const CLI::ParseError& e) {
            err << error_line(errc::usage_error, e.what());
            return 2;
        }

        if (merge_cmd->parsed()) {
            const std::vector<bool> has_override = {
                opt_method->count() > 0, opt_density->count() > 0, opt_drop->count() > 0,
                opt_seed->count() > 0,   opt_output->count() > 0,  opt_regime->count() > 0,
            };
            return cmd_merge(merge_config, overrides, has_override, out);
        }
        if (sweep_cmd->parsed()) {
            return cmd_sweep(sweep_config, out);
        }
        if (fsd_cmd->parsed()) {
            const AdapterCheckpoint a = load_checkpoint(fsd_paths[0]);
            const AdapterCheckpoint b = load_checkpoint(fsd_paths[1]);
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.6f", fsd(a, b));
            out << buf << "\n";
            return 0;
        }
        if (passk_cmd->parsed()) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.4f", pass_at_k(passk_n, passk_c, passk_k));
            out << buf << "\n";
            return 0;
        }
        if (report_cmd->parsed()) {
            const EvalDataset dataset = load_eval_records(report_records);
            std::vector<std::string> systems;
            if (!report_systems.empty()) {
                std::size_t start = 0;
                while (start <= report_systems.size()) {
                    const auto comma = report_systems.find(',', start);
                    systems.push_back(report_systems.substr(
                        start, comma == std::string::npos ? std::string::npos : comma - start));
                    if (comma == std::string::npos) break;
                    start = comma + 1;
                }
            } else {
                systems = dataset.systems();
            }
            const std::int64_t ks[] = {report_k};
            std::vector<SystemScores> scores;
            scores.reserve(systems.size());
            for (const auto& system : systems) {
                scores.push_back(aggregate_scores(dataset, system, ks));
            }
            out << render_report(scores, report_baseline, report_k,
                                 parse_report_format(report_format), report_opts);
            return 0;
        }
        if (synth_cmd->parsed()) {
            synth::LabConfig cfg;
            if (!synth_config.empty()) {
                cfg = parse_lab_config(load_json_file(synth_config), synth_config);
            }
            if (opt_lab_seed->count() > 0) cfg.seed = lab_overrides.seed;
            if (opt_lab_tasks->count() > 0) cfg.n_tasks = lab_overrides.n_tasks;
            if (opt_lab_alpha->count() > 0) cfg.similarity = lab_overrides.similarity;
            out << synth::run_study(cfg);
            return 0;
        }
        if (validate_cmd->parsed()) {
            const auto adapters = load_inputs(validate_paths);
            const CompatReport report = validate_compatible(adapters);
            for (const auto& warning : report.warnings) {
                out << "warning: " << warning << "\n";
            }
            if (report.compatible) {
                out << "compatible: " << adapters.size() << " checkpoint(s)\n";
                return 0;
            }
            for (const auto& mismatch : report.mismatches) {
                out << "mismatch " << mismatch_kind_name(mismatch.kind) << " '" << mismatch.name
                    << "': " << mismatch.detail << "\n";
            }
            return 1;
        }
        err << error_line(errc::usage_error, "no subcommand given");
        return 2;
    } catch (const Error& e) {
        err << error_line(e.code(), e.what());
        return e.code() == errc::usage_error ? 2 : 1;
    } catch (const std::exception& e) {
        err << error_line(errc::io_failure, e.what());
        return 1;
    }
}

} // namespace loramerge
