#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "loramerge/tensor.hpp"

namespace loramerge {

struct AdapterMetadata {
    std::string base_model_id;
    std::uint32_t rank = 0;  // 0 = unspecified
    double alpha = 0.0;      // 0 = unspecified
    std::vector<std::string> target_modules;
    std::map<std::string, std::string> extra;  // e.g. merge_provenance

    bool operator==(const AdapterMetadata&) const = default;
};

// Named map of tensors in insertion order plus training metadata. `id` is the
// adapter's identity used for RNG keying and provenance; it is set from the
// file stem on load and is not serialized.
class AdapterCheckpoint {
public:
    std::string id;
    AdapterMetadata meta;

    void set_tensor(const std::string& name, Tensor tensor);
    bool has_tensor(const std::string& name) const noexcept;
    const Tensor& tensor(const std::string& name) const;
    const std::vector<std::string>& tensor_names() const noexcept { return names_; }
    std::size_t tensor_count() const noexcept { return names_.size(); }
    std::size_t total_elements() const noexcept;

    bool bitwise_equal(const AdapterCheckpoint& other) const;

    // Raises invariant_violation if a lora_A tensor lacks its lora_B partner,
    // if a pair's factors are not 2-D with a shared inner dimension, or if
    // that inner dimension contradicts a declared metadata rank.
    void check_lora_pairs() const;

private:
    std::vector<std::string> names_;
    std::map<std::string, std::size_t> index_;
    std::vector<Tensor> tensors_;
};

enum class MismatchKind { missing, shape, metadata };

constexpr const char* mismatch_kind_name(MismatchKind kind) {
    switch (kind) {
        case MismatchKind::missing:  return "missing";
        case MismatchKind::shape:    return "shape";
        case MismatchKind::metadata: return "metadata";
    }
    return "unknown";
}

struct Mismatch {
    std::string name;
    MismatchKind kind;
    std::string detail;
};

struct CompatReport {
    bool compatible = true;
    std::vector<Mismatch> mismatches;
    std::vector<std::string> warnings;  // advisory only, e.g. base-model drift
};

// Flat binary tensor container (safetensors layout): 8-byte LE header length,
// UTF-8 JSON header, raw little-endian payloads. Accepts F32/F16 payloads and
// converts everything to f32; writes are always F32 and byte-deterministic.
AdapterCheckpoint load_checkpoint(const std::filesystem::path& path);
void save_checkpoint(const AdapterCheckpoint& adapter, const std::filesystem::path& path);

// Compatible iff all checkpoints share name sets, per-name shapes and rank
// metadata. Differing base_model_id only warns.
CompatReport validate_compatible(std::span<const AdapterCheckpoint> adapters);

// Effective full-rank delta B*A scaled by alpha/rank for one target module.
// The module's factors are the tensors named <module>.lora_A / <module>.lora_B
// (an optional trailing ".weight" is accepted).
Tensor lora_delta(const AdapterCheckpoint& adapter, const std::string& module_name);

float half_to_float(std::uint16_t bits) noexcept;

// Lossless shortest decimal form, used for metadata round-trips.
std::string format_double(double value);

} // namespace loramerge
