#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "loramerge/metrics.hpp"

namespace loramerge {

inline constexpr const char* kBaseVariant = "base";

struct EvalRecord {
    std::string system_id;
    std::string problem_id;
    std::string variant;  // "base" or "<category>/<perturbation id>"
    std::int64_t candidate_index = 0;
    bool passed = false;
};

// Immutable correctness table: system -> problem -> variant -> per-candidate
// outcomes, with candidate indices validated to be contiguous from zero.
class EvalDataset {
public:
    static EvalDataset from_records(const std::vector<EvalRecord>& records);

    bool empty() const noexcept { return table_.empty(); }
    bool has_system(const std::string& system_id) const noexcept;
    const std::vector<std::string>& systems() const noexcept { return system_order_; }

    // Problems with a "base" variant for the system; the evaluation universe.
    std::set<std::string> problem_universe(const std::string& system_id) const;

    const std::map<std::string, std::map<std::string, std::vector<std::uint8_t>>>&
    problems(const std::string& system_id) const;

private:
    std::map<std::string, std::map<std::string, std::map<std::string, std::vector<std::uint8_t>>>>
        table_;
    std::vector<std::string> system_order_;  // first-appearance order
};

// JSON-lines reader; unknown fields are ignored, parse failures carry the
// 1-based line number.
EvalDataset load_eval_records(const std::filesystem::path& path);

struct SystemScores {
    std::string system_id;
    // k -> mean over problems of pass@k on the base variant.
    std::map<std::int64_t, double> scores;
    // problem -> (n, c) on the base variant, for significance testing.
    std::map<std::string, std::pair<std::int64_t, std::int64_t>> base_counts;
    // perturbation category -> k -> mean RobustPass_s@k.
    std::map<std::string, std::map<std::int64_t, double>> robust_scores;
};

SystemScores aggregate_scores(const EvalDataset& dataset, const std::string& system_id,
                              std::span<const std::int64_t> ks);

// Problems with at least one passing base-variant candidate.
std::set<std::string> solved_set(const EvalDataset& dataset, const std::string& system_id);

// Exclusive-region counts for 2 or 3 named sets. Region keys are the member
// names joined with "&" in input order, e.g. "A", "A&B", "A&B&C".
std::map<std::string, std::size_t> venn_counts(
    const std::vector<std::pair<std::string, std::set<std::string>>>& sets);

struct TransitionCounts {
    std::size_t fixed_to_broken = 0;
    std::size_t broken_to_fixed = 0;
};

TransitionCounts transition_counts(const EvalDataset& dataset, const std::string& from_system,
                                   const std::string& to_system);

enum class ReportFormat { markdown, csv, json };

ReportFormat parse_report_format(const std::string& name);

struct ScoreRow {
    std::string system_id;
    double score = 0.0;  // in [0, 1]
    double delta = 0.0;  // percentage points vs. baseline
    std::string marker;
    EffectLabel effect = EffectLabel::N;
    bool is_baseline = false;
    bool has_stats = false;
};

struct ScoreReport {
    std::string baseline_id;
    std::int64_t k = 1;
    std::vector<ScoreRow> rows;  // input order
    std::string footnote;
};

ScoreReport build_score_report(std::span<const SystemScores> scores,
                               const std::string& baseline_id, std::int64_t k,
                               const ResampleOptions& options = {});

std::string render_report(const ScoreReport& report, ReportFormat format);

std::string render_report(std::span<const SystemScores> scores, const std::string& baseline_id,
                          std::int64_t k, ReportFormat format,
                          const ResampleOptions& options = {});

// "31.01% (+2.35)" — percentage with two decimals plus a signed delta in
// percentage points.
std::string format_score_cell(double score, double delta);

} // namespace loramerge
