#include "loramerge/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "loramerge/errors.hpp"

namespace loramerge {

namespace {

using nlohmann::json;

std::string record_key(const EvalRecord& r) {
    return r.system_id + "\x1f" + r.problem_id + "\x1f" + r.variant + "\x1f" +
           std::to_string(r.candidate_index);
}

std::string variant_category(const std::string& variant) {
    const auto slash = variant.find('/');
    return slash == std::string::npos ? variant : variant.substr(0, slash);
}

std::string format_percent(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", fraction * 100.0);
    return buf;
}

std::string format_delta(double delta_pp) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%+.2f", delta_pp);
    return buf;
}

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

} // namespace

std::string format_score_cell(double score, double delta) {
    return format_percent(score) + "% (" + format_delta(delta) + ")";
}

EvalDataset EvalDataset::from_records(const std::vector<EvalRecord>& records) {
    EvalDataset ds;
    std::set<std::string> seen;
    for (const auto& r : records) {
        if (r.candidate_index < 0) {
            raise(errc::parse_error, "negative candidate_index for problem '" + r.problem_id + "'");
        }
        const std::string key = record_key(r);
        if (!seen.insert(key).second) {
            raise(errc::duplicate_record, "duplicate record for (" + r.system_id + ", " +
                                              r.problem_id + ", " + r.variant + ", candidate " +
                                              std::to_string(r.candidate_index) + ")");
        }
        if (!ds.table_.contains(r.system_id)) {
            ds.system_order_.push_back(r.system_id);
        }
        auto& outcomes = ds.table_[r.system_id][r.problem_id][r.variant];
        const auto idx = static_cast<std::size_t>(r.candidate_index);
        if (outcomes.size() <= idx) outcomes.resize(idx + 1, 2);  // 2 = unset
        outcomes[idx] = r.passed ? 1 : 0;
    }
    // Candidate indices per (system, problem, variant) must form 0..n-1.
    for (const auto& [system, problems] : ds.table_) {
        for (const auto& [problem, variants] : problems) {
            for (const auto& [variant, outcomes] : variants) {
                for (std::size_t i = 0; i < outcomes.size(); ++i) {
                    if (outcomes[i] == 2) {
                        raise(errc::ragged_candidates,
                              "(" + system + ", " + problem + ", " + variant + ") is missing " +
                                  "candidate " + std::to_string(i) + " of 0.." +
                                  std::to_string(outcomes.size() - 1));
                    }
                }
            }
        }
    }
    return ds;
}

bool EvalDataset::has_system(const std::string& system_id) const noexcept {
    return table_.contains(system_id);
}

std::set<std::string> EvalDataset::problem_universe(const std::string& system_id) const {
    std::set<std::string> out;
    for (const auto& [problem, variants] : problems(system_id)) {
        if (variants.contains(kBaseVariant)) out.insert(problem);
    }
    return out;
}

const std::map<std::string, std::map<std::string, std::vector<std::uint8_t>>>&
EvalDataset::problems(const std::string& system_id) const {
    auto it = table_.find(system_id);
    if (it == table_.end()) {
        raise(errc::unknown_system, "no records for system '" + system_id + "'");
    }
    return it->second;
}

EvalDataset load_eval_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        raise(errc::io_failure, "cannot open '" + path.string() + "' for reading");
    }
    std::vector<EvalRecord> records;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const json parsed = json::parse(line, nullptr, false);
        if (parsed.is_discarded() || !parsed.is_object()) {
            raise(errc::parse_error, "line " + std::to_string(line_number) + " is not a JSON object");
        }
        EvalRecord r;
        try {
            r.system_id = parsed.at("system_id").get<std::string>();
            r.problem_id = parsed.at("problem_id").get<std::string>();
            r.variant = parsed.at("variant").get<std::string>();
            r.candidate_index = parsed.at("candidate_index").get<std::int64_t>();
            r.passed = parsed.at("passed").get<bool>();
        } catch (const json::exception& e) {
            raise(errc::parse_error, "line " + std::to_string(line_number) + ": " + e.what());
        }
        if (r.candidate_index < 0) {
            raise(errc::parse_error,
                  "line " + std::to_string(line_number) + ": candidate_index is negative");
        }
        records.push_back(std::move(r));
    }
    if (in.bad()) {
        raise(errc::io_failure, "read error on '" + path.string() + "'");
    }
    return EvalDataset::from_records(records);
}

SystemScores aggregate_scores(const EvalDataset& dataset, const std::string& system_id,
                              std::span<const std::int64_t> ks) {
    const auto& problems = dataset.problems(system_id);

    SystemScores result;
    result.system_id = system_id;

    // Base-variant pass@k, averaged over problems.
    for (const auto& [problem, variants] : problems) {
        const auto base = variants.find(kBaseVariant);
        if (base == variants.end()) continue;
        const auto n = static_cast<std::int64_t>(base->second.size());
        const auto c = static_cast<std::int64_t>(
            std::count(base->second.begin(), base->second.end(), std::uint8_t{1}));
        result.base_counts.emplace(problem, std::make_pair(n, c));
    }
    for (std::int64_t k : ks) {
        double sum = 0.0;
        for (const auto& [problem, nc] : result.base_counts) {
            if (k > nc.first) {
                raise(errc::k_exceeds_n, "k=" + std::to_string(k) + " exceeds n=" +
                                             std::to_string(nc.first) + " for problem '" +
                                             problem + "'");
            }
            sum += pass_at_k(nc.first, nc.second, k);
        }
        if (!result.base_counts.empty()) {
            result.scores[k] = sum / static_cast<double>(result.base_counts.size());
        }
    }

    // RobustPass per perturbation category: a candidate counts only if it is
    // correct under every variant of the category.
    std::map<std::string, std::vector<OutcomeMatrix>> category_matrices;
    for (const auto& [problem, variants] : problems) {
        std::map<std::string, std::vector<const std::vector<std::uint8_t>*>> by_category;
        for (const auto& [variant, outcomes] : variants) {
            if (variant == kBaseVariant) continue;
            by_category[variant_category(variant)].push_back(&outcomes);
        }
        for (const auto& [category, columns] : by_category) {
            const std::size_t n_candidates = columns.front()->size();
            for (const auto* col : columns) {
                if (col->size() != n_candidates) {
                    raise(errc::ragged_candidates,
                          "problem '" + problem + "' category '" + category +
                              "' has variants with differing candidate counts");
                }
            }
            OutcomeMatrix matrix(problem, n_candidates, columns.size());
            for (std::size_t j = 0; j < columns.size(); ++j) {
                for (std::size_t i = 0; i < n_candidates; ++i) {
                    matrix.set(i, j, (*columns[j])[i] != 0);
                }
            }
            category_matrices[category].push_back(std::move(matrix));
        }
    }
    for (const auto& [category, matrices] : category_matrices) {
        for (std::int64_t k : ks) {
            double sum = 0.0;
            for (const auto& matrix : matrices) {
                if (k > static_cast<std::int64_t>(matrix.n_candidates)) {
                    raise(errc::k_exceeds_n,
                          "k=" + std::to_string(k) + " exceeds n=" +
                              std::to_string(matrix.n_candidates) + " for problem '" +
                              matrix.problem_id + "' in category '" + category + "'");
                }
                sum += robust_pass_at_k(matrix, k);
            }
            result.robust_scores[category][k] = sum / static_cast<double>(matrices.size());
        }
    }
    return result;
}

std::set<std::string> solved_set(const EvalDataset& dataset, const std::string& system_id) {
    std::set<std::string> solved;
    for (const auto& [problem, variants] : dataset.problems(system_id)) {
        const auto base = variants.find(kBaseVariant);
        if (base == variants.end()) continue;
        if (std::find(base->second.begin(), base->second.end(), std::uint8_t{1}) !=
            base->second.end()) {
            solved.insert(problem);
        }
    }
    return solved;
}

std::map<std::string, std::size_t> venn_counts(
    const std::vector<std::pair<std::string, std::set<std::string>>>& sets) {
    if (sets.size() < 2 || sets.size() > 3) {
        raise(errc::bad_arity, "venn analysis needs 2 or 3 sets, got " +
                                   std::to_string(sets.size()));
    }

    std::set<std::string> all;
    for (const auto& [name, members] : sets) all.insert(members.begin(), members.end());

    // Exclusive region per membership mask; keys name the member sets.
    std::map<std::string, std::size_t> counts;
    for (std::size_t mask = 1; mask < (std::size_t{1} << sets.size()); ++mask) {
        std::string key;
        for (std::size_t i = 0; i < sets.size(); ++i) {
            if (mask & (std::size_t{1} << i)) {
                if (!key.empty()) key += "&";
                key += sets[i].first;
            }
        }
        counts[key] = 0;
    }
    for (const auto& element : all) {
        std::size_t mask = 0;
        std::string key;
        for (std::size_t i = 0; i < sets.size(); ++i) {
            if (sets[i].second.contains(element)) {
                mask |= std::size_t{1} << i;
                if (!key.empty()) key += "&";
                key += sets[i].first;
            }
        }
        if (mask != 0) ++counts[key];
    }
    return counts;
}

TransitionCounts transition_counts(const EvalDataset& dataset, const std::string& from_system,
                                   const std::string& to_system) {
    const auto from_universe = dataset.problem_universe(from_system);
    const auto to_universe = dataset.problem_universe(to_system);
    if (from_universe != to_universe) {
        raise(errc::universe_mismatch, "systems '" + from_system + "' and '" + to_system +
                                           "' cover different problem sets (" +
                                           std::to_string(from_universe.size()) + " vs " +
                                           std::to_string(to_universe.size()) + " problems)");
    }
    const auto from_solved = solved_set(dataset, from_system);
    const auto to_solved = solved_set(dataset, to_system);

    TransitionCounts counts;
    for (const auto& problem : from_solved) {
        if (!to_solved.contains(problem)) ++counts.fixed_to_broken;
    }
    for (const auto& problem : to_solved) {
        if (!from_solved.contains(problem)) ++counts.broken_to_fixed;
    }
    return counts;
}

ReportFormat parse_report_format(const std::string& name) {
    if (name == "md" || name == "markdown") return ReportFormat::markdown;
    if (name == "csv") return ReportFormat::csv;
    if (name == "json") return ReportFormat::json;
    raise(errc::usage_error, "unknown report format '" + name + "'");
}

ScoreReport build_score_report(std::span<const SystemScores> scores,
                               const std::string& baseline_id, std::int64_t k,
                               const ResampleOptions& options) {
    const SystemScores* baseline = nullptr;
    for (const auto& s : scores) {
        if (s.system_id == baseline_id) {
            baseline = &s;
            break;
        }
    }
    if (!baseline) {
        raise(errc::unknown_baseline, "baseline '" + baseline_id + "' is not among the systems");
    }
    const auto baseline_score_it = baseline->scores.find(k);
    if (baseline_score_it == baseline->scores.end()) {
        raise(errc::invalid_args, "baseline has no score for k=" + std::to_string(k));
    }
    const double baseline_score = baseline_score_it->second;

    ScoreReport report;
    report.baseline_id = baseline_id;
    report.k = k;
    for (const auto& s : scores) {
        const auto score_it = s.scores.find(k);
        if (score_it == s.scores.end()) {
            raise(errc::invalid_args,
                  "system '" + s.system_id + "' has no score for k=" + std::to_string(k));
        }
        ScoreRow row;
        row.system_id = s.system_id;
        row.score = score_it->second;
        row.delta = score_it->second * 100.0 - baseline_score * 100.0;
        row.is_baseline = s.system_id == baseline_id;

        // Per-problem pass@k over the problems both systems report.
        std::vector<double> sys_rates;
        std::vector<double> base_rates;
        for (const auto& [problem, nc] : s.base_counts) {
            const auto base_nc = baseline->base_counts.find(problem);
            if (base_nc == baseline->base_counts.end()) continue;
            sys_rates.push_back(pass_at_k(nc.first, nc.second, k));
            base_rates.push_back(pass_at_k(base_nc->second.first, base_nc->second.second, k));
        }
        if (!row.is_baseline && sys_rates.size() >= 2) {
            const double p = resampled_paired_ttest(sys_rates, base_rates, options);
            row.marker = significance_marker(p);
            row.effect = effect_label(cliff_delta(sys_rates, base_rates));
            row.has_stats = true;
        }
        report.rows.push_back(std::move(row));
    }

    report.footnote = "significance: paired t over " + std::to_string(options.resamples) +
                      " resampled means of per-problem pass@" + std::to_string(k) + " vs '" +
                      baseline_id + "' (seed " + std::to_string(options.seed) +
                      "); effect: Cliff's delta, S/M/L at 0.11/0.28/0.43";
    return report;
}

std::string render_report(const ScoreReport& report, ReportFormat format) {
    const std::string k_label = "pass@" + std::to_string(report.k);
    std::string out;
    switch (format) {
        case ReportFormat::markdown: {
            out += "| system | " + k_label + " | effect |\n";
            out += "|:--|--:|:--|\n";
            for (const auto& row : report.rows) {
                std::string annotation;
                if (row.has_stats) {
                    annotation = std::string(effect_label_name(row.effect)) + row.marker;
                }
                out += "| " + row.system_id + " | " + format_score_cell(row.score, row.delta) +
                       " | " + annotation + " |\n";
            }
            out += "\n" + report.footnote + "\n";
            break;
        }
        case ReportFormat::csv: {
            out += "system,score_percent,delta_pp,marker,effect\r\n";
            for (const auto& row : report.rows) {
                out += csv_escape(row.system_id) + "," + format_percent(row.score) + "," +
                       format_delta(row.delta) + "," + row.marker + "," +
                       (row.has_stats ? effect_label_name(row.effect) : "") + "\r\n";
            }
            break;
        }
        case ReportFormat::json: {
            json rows = json::array();
            for (const auto& row : report.rows) {
                json r;
                r["system_id"] = row.system_id;
                r["score"] = row.score;
                r["delta_pp"] = row.delta;
                r["cell"] = format_score_cell(row.score, row.delta);
                r["marker"] = row.marker;
                r["effect"] = row.has_stats ? effect_label_name(row.effect) : "";
                r["is_baseline"] = row.is_baseline;
                rows.push_back(std::move(r));
            }
            json doc;
            doc["baseline_id"] = report.baseline_id;
            doc["k"] = report.k;
            doc["rows"] = std::move(rows);
            doc["footnote"] = report.footnote;
            out = doc.dump(2);
            out += "\n";
            break;
        }
    }
    return out;
}

std::string render_report(std::span<const SystemScores> scores, const std::string& baseline_id,
                          std::int64_t k, ReportFormat format, const ResampleOptions& options) {
    return render_report(build_score_report(scores, baseline_id, k, options), format);
}

} // namespace loramerge
