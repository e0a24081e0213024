#include "loramerge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "loramerge/errors.hpp"
#include "loramerge/rng.hpp"

namespace loramerge {

namespace {

// Doubles hold integers exactly up to 2^53.
constexpr std::uint64_t kExactDoubleLimit = 1ull << 53;

// C(n, k) when it is exactly representable as a double, nullopt otherwise.
// Intermediate values C(n-k+i, i) never exceed the final result, so checking
// the running value against 2^53 after each exact step is sufficient.
std::optional<std::uint64_t> binomial_checked(std::uint64_t n, std::uint64_t k) {
    if (k > n) return 0;
    k = std::min(k, n - k);
    unsigned __int128 result = 1;
    for (std::uint64_t i = 1; i <= k; ++i) {
        result = result * (n - k + i) / i;  // division is exact at every step
        if (result > kExactDoubleLimit) return std::nullopt;
    }
    return static_cast<std::uint64_t>(result);
}

int sign_of(float v) {
    if (v > 0.0f) return 1;
    if (v < 0.0f) return -1;
    return 0;
}

} // namespace

OutcomeMatrix::OutcomeMatrix(std::string problem, std::size_t candidates, std::size_t variants)
    : problem_id(std::move(problem)), n_candidates(candidates), n_variants(variants),
      correctness(candidates * variants, 0) {
    if (candidates < 1 || variants < 1) {
        raise(errc::invalid_args, "outcome matrix needs at least one candidate and one variant");
    }
}

double pass_at_k(std::int64_t n, std::int64_t c, std::int64_t k) {
    if (n < 1 || c < 0 || c > n) {
        raise(errc::invalid_args, "pass@k needs 0 <= c <= n with n >= 1, got n=" +
                                      std::to_string(n) + " c=" + std::to_string(c));
    }
    if (k < 1 || k > n) {
        raise(errc::invalid_args,
              "pass@k needs 1 <= k <= n, got k=" + std::to_string(k) + " n=" + std::to_string(n));
    }
    if (n - c < k) {
        return 1.0;  // fewer incorrect samples than draws
    }
    const auto total = binomial_checked(static_cast<std::uint64_t>(n),
                                        static_cast<std::uint64_t>(k));
    if (total) {
        const auto miss = binomial_checked(static_cast<std::uint64_t>(n - c),
                                           static_cast<std::uint64_t>(k));
        if (miss) {
            return static_cast<double>(*total - *miss) / static_cast<double>(*total);
        }
    }
    double keep = 1.0;
    for (std::int64_t i = n - c + 1; i <= n; ++i) {
        keep *= 1.0 - static_cast<double>(k) / static_cast<double>(i);
    }
    return 1.0 - keep;
}

std::int64_t robust_count(const OutcomeMatrix& matrix) {
    std::int64_t count = 0;
    for (std::size_t i = 0; i < matrix.n_candidates; ++i) {
        bool all = true;
        for (std::size_t j = 0; j < matrix.n_variants; ++j) {
            if (!matrix.at(i, j)) {
                all = false;
                break;
            }
        }
        if (all) ++count;
    }
    return count;
}

double robust_pass_at_k(const OutcomeMatrix& matrix, std::int64_t k) {
    return pass_at_k(static_cast<std::int64_t>(matrix.n_candidates), robust_count(matrix), k);
}

double fsd(const AdapterCheckpoint& a, const AdapterCheckpoint& b) {
    const AdapterCheckpoint pair[2] = {a, b};
    const CompatReport compat = validate_compatible(pair);
    if (!compat.compatible) {
        const Mismatch& first = compat.mismatches.front();
        raise(errc::incompatible, "cannot compare checkpoints: tensor '" + first.name + "' (" +
                                      std::string(mismatch_kind_name(first.kind)) + ": " +
                                      first.detail + ")");
    }

    std::size_t opposite = 0;
    std::size_t total = 0;
    for (const auto& name : a.tensor_names()) {
        const auto& da = a.tensor(name).data();
        const auto& db = b.tensor(name).data();
        for (std::size_t e = 0; e < da.size(); ++e) {
            // Only strictly opposite signs count; zeros stay in the denominator.
            if (sign_of(da[e]) * sign_of(db[e]) < 0) ++opposite;
        }
        total += da.size();
    }
    if (total == 0) return 0.0;
    return static_cast<double>(opposite) / static_cast<double>(total);
}

double cliff_delta(std::span<const double> x, std::span<const double> y) {
    if (x.empty() || y.empty()) {
        raise(errc::empty_input, "cliff_delta requires two non-empty samples");
    }
    std::int64_t greater = 0;
    std::int64_t less = 0;
    for (double xv : x) {
        for (double yv : y) {
            if (xv > yv) ++greater;
            else if (xv < yv) ++less;
        }
    }
    return static_cast<double>(greater - less) /
           (static_cast<double>(x.size()) * static_cast<double>(y.size()));
}

EffectLabel effect_label(double d) {
    if (!(d >= -1.0 && d <= 1.0)) {
        raise(errc::out_of_range, "effect size must lie in [-1, 1], got " + std::to_string(d));
    }
    const double magnitude = std::fabs(d);
    if (magnitude >= 0.43) return EffectLabel::L;
    if (magnitude >= 0.28) return EffectLabel::M;
    if (magnitude >= 0.11) return EffectLabel::S;
    return EffectLabel::N;
}

double resampled_paired_ttest(std::span<const double> x, std::span<const double> y,
                              const ResampleOptions& options) {
    if (x.size() != y.size()) {
        raise(errc::length_mismatch, "paired samples differ in length: " +
                                         std::to_string(x.size()) + " vs " +
                                         std::to_string(y.size()));
    }
    if (x.size() < 2) {
        raise(errc::length_mismatch, "paired test needs at least 2 observations");
    }
    if (options.resamples < 2) {
        raise(errc::invalid_args, "need at least 2 resamples");
    }
    const std::size_t population = x.size();
    const std::size_t sample_size =
        options.sample_size == 0 ? population : options.sample_size;

    Xoshiro256ss stream(options.seed);
    std::vector<double> mean_diffs(options.resamples);
    for (std::size_t r = 0; r < options.resamples; ++r) {
        double sum_x = 0.0;
        double sum_y = 0.0;
        for (std::size_t s = 0; s < sample_size; ++s) {
            const std::size_t idx = static_cast<std::size_t>(stream.next_index(population));
            sum_x += x[idx];
            sum_y += y[idx];
        }
        mean_diffs[r] = (sum_x - sum_y) / static_cast<double>(sample_size);
    }

    const auto [lo, hi] = std::minmax_element(mean_diffs.begin(), mean_diffs.end());
    if (*lo == *hi) {
        // Zero variance across resamples: identical means are maximally
        // insignificant, a constant nonzero shift maximally significant.
        return *lo == 0.0 ? 1.0 : 0.0;
    }

    const double n = static_cast<double>(mean_diffs.size());
    double mean = 0.0;
    for (double d : mean_diffs) mean += d;
    mean /= n;
    double ss = 0.0;
    for (double d : mean_diffs) ss += (d - mean) * (d - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    if (sd == 0.0) {
        return mean == 0.0 ? 1.0 : 0.0;
    }
    const double t = mean / (sd / std::sqrt(n));
    return stats::student_t_two_sided_p(t, n - 1.0);
}

std::string significance_marker(double p) {
    if (!(p >= 0.0 && p <= 1.0)) {
        raise(errc::out_of_range, "p-value must lie in [0, 1], got " + std::to_string(p));
    }
    if (p < 0.01) return "***";
    if (p < 0.05) return "**";
    if (p < 0.1) return "*";
    return "";
}

namespace stats {

namespace {

// Continued fraction for the incomplete beta function (Lentz's algorithm).
double beta_continued_fraction(double a, double b, double x) {
    constexpr int kMaxIterations = 300;
    constexpr double kEpsilon = 3.0e-16;
    constexpr double kTiny = 1.0e-300;

    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIterations; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::fabs(delta - 1.0) < kEpsilon) return h;
    }
    raise(errc::not_converged, "incomplete beta continued fraction did not converge");
}

} // namespace

double incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) {
        raise(errc::invalid_args, "incomplete beta requires positive shape parameters");
    }
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                             a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * beta_continued_fraction(a, b, x) / a;
    }
    return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double df) {
    if (!(df > 0.0)) {
        raise(errc::invalid_args, "degrees of freedom must be positive");
    }
    if (std::isinf(t)) return 0.0;
    return incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

} // namespace stats

} // namespace loramerge
