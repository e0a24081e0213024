#include "loramerge/merge.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "loramerge/errors.hpp"
#include "loramerge/rng.hpp"

namespace loramerge {

namespace {

int sign_of(double v) {
    if (v > 0.0) return 1;
    if (v < 0.0) return -1;
    return 0;
}

// Constituents sorted by adapter id (stable on duplicates). Processing in
// this order makes every accumulation independent of the input permutation.
std::vector<std::size_t> canonical_order(std::span<const AdapterCheckpoint> adapters) {
    std::vector<std::size_t> order(adapters.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return adapters[a].id < adapters[b].id;
    });
    return order;
}

void check_inputs(std::span<const AdapterCheckpoint> adapters, std::span<const double> weights) {
    if (adapters.empty()) {
        raise(errc::invalid_args, "merge requires at least one adapter");
    }
    const CompatReport compat = validate_compatible(adapters);
    if (!compat.compatible) {
        const Mismatch& first = compat.mismatches.front();
        raise(errc::incompatible, "adapters are not compatible: tensor '" + first.name + "' (" +
                                      std::string(mismatch_kind_name(first.kind)) + ": " +
                                      first.detail + ")");
    }
    check_weights(weights, adapters.size());
}

std::string provenance_weights(std::span<const double> weights,
                               std::span<const std::size_t> order) {
    std::string out;
    for (std::size_t j = 0; j < order.size(); ++j) {
        if (j) out += ",";
        out += format_double(weights[order[j]]);
    }
    return out;
}

std::string provenance_inputs(std::span<const AdapterCheckpoint> adapters,
                              std::span<const std::size_t> order) {
    std::string out;
    for (std::size_t j = 0; j < order.size(); ++j) {
        if (j) out += ",";
        out += adapters[order[j]].id;
    }
    return out;
}

std::string joined_id(std::span<const AdapterCheckpoint> adapters,
                      std::span<const std::size_t> order) {
    std::string out;
    for (std::size_t j = 0; j < order.size(); ++j) {
        if (j) out += "+";
        out += adapters[order[j]].id;
    }
    return out;
}

// Shared skeleton: metadata and tensor ordering come from the canonical-first
// constituent so the result is permutation-invariant.
AdapterCheckpoint make_result_shell(std::span<const AdapterCheckpoint> adapters,
                                    std::span<const std::size_t> order,
                                    const std::string& provenance) {
    AdapterCheckpoint out;
    out.id = joined_id(adapters, order);
    out.meta = adapters[order.front()].meta;
    out.meta.extra["merge_provenance"] = provenance;
    return out;
}

// Sign election plus disjoint weighted mean over already-prepared constituent
// tensors; the TIES fusion step shared by ties_merge and dare_ties_merge.
Tensor elect_and_fuse(std::span<const Tensor> prepared, std::span<const double> weights) {
    const std::size_t n = prepared.front().numel();
    std::vector<float> out(n);
    for (std::size_t e = 0; e < n; ++e) {
        double mass = 0.0;
        for (std::size_t i = 0; i < prepared.size(); ++i) {
            mass += weights[i] * static_cast<double>(prepared[i][e]);
        }
        const int elected = sign_of(mass);
        if (elected == 0) {
            out[e] = 0.0f;
            continue;
        }
        double numerator = 0.0;
        double denominator = 0.0;
        for (std::size_t i = 0; i < prepared.size(); ++i) {
            const double v = static_cast<double>(prepared[i][e]);
            if (sign_of(v) == elected) {
                numerator += weights[i] * v;
                denominator += weights[i];
            }
        }
        out[e] = denominator > 0.0 ? static_cast<float>(numerator / denominator) : 0.0f;
    }
    return Tensor(prepared.front().shape(), std::move(out));
}

} // namespace

const char* merge_method_name(MergeMethod method) {
    switch (method) {
        case MergeMethod::weight_average: return "weight-average";
        case MergeMethod::ties:           return "ties";
        case MergeMethod::dare_ties:      return "dare-ties";
    }
    return "unknown";
}

MergeMethod parse_merge_method(const std::string& name) {
    if (name == "weight-average" || name == "weight-averaging") return MergeMethod::weight_average;
    if (name == "ties") return MergeMethod::ties;
    if (name == "dare-ties") return MergeMethod::dare_ties;
    raise(errc::invalid_config, "unknown merge method '" + name + "'");
}

void check_weights(std::span<const double> weights, std::size_t n_adapters) {
    if (weights.size() != n_adapters) {
        raise(errc::invalid_weights, "got " + std::to_string(weights.size()) + " weights for " +
                                         std::to_string(n_adapters) + " adapters");
    }
    double sum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) {
            raise(errc::invalid_weights, "weight " + format_double(w) + " is negative");
        }
        sum += w;
    }
    if (std::fabs(sum - 1.0) > kWeightSumTolerance) {
        raise(errc::invalid_weights, "weights sum to " + format_double(sum) + ", expected 1");
    }
}

AdapterCheckpoint weight_average_merge(std::span<const AdapterCheckpoint> adapters,
                                       std::span<const double> weights) {
    check_inputs(adapters, weights);
    const auto order = canonical_order(adapters);

    AdapterCheckpoint out = make_result_shell(
        adapters, order,
        "method=weight-average;inputs=" + provenance_inputs(adapters, order) +
            ";weights=" + provenance_weights(weights, order));

    std::vector<Tensor> row(adapters.size());
    std::vector<double> w(adapters.size());
    for (const auto& name : adapters[order.front()].tensor_names()) {
        for (std::size_t j = 0; j < order.size(); ++j) {
            row[j] = adapters[order[j]].tensor(name);
            w[j] = weights[order[j]];
        }
        out.set_tensor(name, lincomb(row, w));
    }
    return out;
}

AdapterCheckpoint ties_merge(std::span<const AdapterCheckpoint> adapters,
                             std::span<const double> weights, double density) {
    check_inputs(adapters, weights);
    if (!(density > 0.0) || density > 1.0) {
        raise(errc::invalid_density, "density must lie in (0, 1], got " + format_double(density));
    }
    const auto order = canonical_order(adapters);

    AdapterCheckpoint out = make_result_shell(
        adapters, order,
        "method=ties;inputs=" + provenance_inputs(adapters, order) +
            ";weights=" + provenance_weights(weights, order) +
            ";density=" + format_double(density));

    std::vector<Tensor> trimmed(adapters.size());
    std::vector<double> w(adapters.size());
    for (const auto& name : adapters[order.front()].tensor_names()) {
        for (std::size_t j = 0; j < order.size(); ++j) {
            trimmed[j] = trim_topk(adapters[order[j]].tensor(name), density);
            w[j] = weights[order[j]];
        }
        out.set_tensor(name, elect_and_fuse(trimmed, w));
    }
    return out;
}

AdapterCheckpoint dare_transform(const AdapterCheckpoint& adapter, double drop_rate,
                                 std::uint64_t seed) {
    if (!(drop_rate >= 0.0) || drop_rate >= 1.0) {
        raise(errc::invalid_drop_rate,
              "drop_rate must lie in [0, 1), got " + format_double(drop_rate));
    }
    if (drop_rate == 0.0) {
        return adapter;  // identity transform, bit-exact
    }
    AdapterCheckpoint out;
    out.id = adapter.id;
    out.meta = adapter.meta;

    const double rescale = 1.0 / (1.0 - drop_rate);
    for (const auto& name : adapter.tensor_names()) {
        const Tensor& t = adapter.tensor(name);
        Xoshiro256ss stream = keyed_stream(seed, name, adapter.id);
        std::vector<float> data(t.numel());
        for (std::size_t e = 0; e < data.size(); ++e) {
            const double u = stream.next_double();
            data[e] = u < drop_rate
                          ? 0.0f
                          : static_cast<float>(static_cast<double>(t[e]) * rescale);
        }
        out.set_tensor(name, Tensor(t.shape(), std::move(data)));
    }
    return out;
}

AdapterCheckpoint dare_ties_merge(std::span<const AdapterCheckpoint> adapters,
                                  std::span<const double> weights, double drop_rate,
                                  std::uint64_t seed) {
    check_inputs(adapters, weights);
    if (!(drop_rate >= 0.0) || drop_rate >= 1.0) {
        raise(errc::invalid_drop_rate,
              "drop_rate must lie in [0, 1), got " + format_double(drop_rate));
    }
    const auto order = canonical_order(adapters);

    AdapterCheckpoint out = make_result_shell(
        adapters, order,
        "method=dare-ties;inputs=" + provenance_inputs(adapters, order) +
            ";weights=" + provenance_weights(weights, order) +
            ";drop_rate=" + format_double(drop_rate) + ";seed=" + std::to_string(seed));

    std::vector<AdapterCheckpoint> transformed;
    transformed.reserve(adapters.size());
    std::vector<double> w(adapters.size());
    for (std::size_t j = 0; j < order.size(); ++j) {
        transformed.push_back(dare_transform(adapters[order[j]], drop_rate, seed));
        w[j] = weights[order[j]];
    }

    std::vector<Tensor> row(adapters.size());
    for (const auto& name : adapters[order.front()].tensor_names()) {
        for (std::size_t j = 0; j < transformed.size(); ++j) {
            row[j] = transformed[j].tensor(name);
        }
        out.set_tensor(name, elect_and_fuse(row, w));
    }
    return out;
}

AdapterCheckpoint merge(MergeMethod method, std::span<const AdapterCheckpoint> adapters,
                        const MergeParams& params) {
    switch (method) {
        case MergeMethod::weight_average:
            return weight_average_merge(adapters, params.weights);
        case MergeMethod::ties:
            return ties_merge(adapters, params.weights, params.density);
        case MergeMethod::dare_ties:
            return dare_ties_merge(adapters, params.weights, params.drop_rate, params.seed);
    }
    raise(errc::invalid_args, "unknown merge method");
}

} // namespace loramerge
