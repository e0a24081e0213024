#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "loramerge/checkpoint.hpp"

namespace loramerge {

// Per-problem correctness grid: one row per generated candidate, one column
// per prompt variant (a single column for unperturbed evaluation).
struct OutcomeMatrix {
    std::string problem_id;
    std::size_t n_candidates = 0;
    std::size_t n_variants = 0;
    std::vector<std::uint8_t> correctness;  // row-major

    OutcomeMatrix() = default;
    OutcomeMatrix(std::string problem, std::size_t candidates, std::size_t variants);

    bool at(std::size_t candidate, std::size_t variant) const {
        return correctness[candidate * n_variants + variant] != 0;
    }
    void set(std::size_t candidate, std::size_t variant, bool passed) {
        correctness[candidate * n_variants + variant] = passed ? 1 : 0;
    }
};

// Unbiased estimator 1 - C(n-c,k)/C(n,k). Uses the exact binomial ratio when
// the binomials are exactly representable, falling back to the stable product
// form 1 - prod_{i=n-c+1..n} (1 - k/i) for large n.
double pass_at_k(std::int64_t n, std::int64_t c, std::int64_t k);

// Number of candidate rows that are correct under every variant.
std::int64_t robust_count(const OutcomeMatrix& matrix);

// pass@k with the worst-case correct count.
double robust_pass_at_k(const OutcomeMatrix& matrix, std::int64_t k);

// Fraction of Sign Difference: portion of corresponding elements with
// strictly opposite signs, over all elements of all shared tensors.
double fsd(const AdapterCheckpoint& a, const AdapterCheckpoint& b);

// (#{x_i > y_j} - #{x_i < y_j}) / (|x| * |y|), in [-1, 1].
double cliff_delta(std::span<const double> x, std::span<const double> y);

enum class EffectLabel { N, S, M, L };

constexpr const char* effect_label_name(EffectLabel label) {
    switch (label) {
        case EffectLabel::N: return "N";
        case EffectLabel::S: return "S";
        case EffectLabel::M: return "M";
        case EffectLabel::L: return "L";
    }
    return "?";
}

// Bands on |d|: L >= 0.43, M >= 0.28, S >= 0.11, N below.
EffectLabel effect_label(double d);

struct ResampleOptions {
    std::size_t resamples = 400;
    std::size_t sample_size = 0;  // 0 = population size
    std::uint64_t seed = 0;
};

// Draws `resamples` with-replacement index multisets (identical indices for
// both systems), takes the two sample means per draw, and runs a paired
// two-sided t-test across the mean pairs. Degenerate draws short-circuit:
// all differences identically zero gives p = 1, identically nonzero gives
// p = 0.
double resampled_paired_ttest(std::span<const double> x, std::span<const double> y,
                              const ResampleOptions& options = {});

// "***" p < 0.01, "**" p < 0.05, "*" p < 0.1, "" otherwise.
std::string significance_marker(double p);

namespace stats {

// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double a, double b, double x);

// Two-sided p-value for a t statistic with df degrees of freedom.
double student_t_two_sided_p(double t, double df);

} // namespace stats

} // namespace loramerge
