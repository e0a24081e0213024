#pragma once

#include <stdexcept>
#include <string>

namespace loramerge {

// One code per failure mode the public API can report. Codes are stable
// identifiers: the CLI prints them verbatim in machine-readable error lines.
enum class errc {
    shape_mismatch,
    arity_mismatch,
    invalid_density,
    corrupt_header,
    unsupported_dtype,
    truncated_data,
    io_failure,
    invariant_violation,
    missing_pair,
    incompatible,
    invalid_weights,
    invalid_drop_rate,
    invalid_n,
    too_many_tasks,
    missing_score,
    invalid_args,
    empty_input,
    out_of_range,
    length_mismatch,
    parse_error,
    duplicate_record,
    ragged_candidates,
    unknown_system,
    k_exceeds_n,
    bad_arity,
    universe_mismatch,
    unknown_baseline,
    invalid_config,
    not_converged,
    ill_posed,
    usage_error,
};

constexpr const char* errc_name(errc code) {
    switch (code) {
        case errc::shape_mismatch:      return "shape_mismatch";
        case errc::arity_mismatch:      return "arity_mismatch";
        case errc::invalid_density:     return "invalid_density";
        case errc::corrupt_header:      return "corrupt_header";
        case errc::unsupported_dtype:   return "unsupported_dtype";
        case errc::truncated_data:      return "truncated_data";
        case errc::io_failure:          return "io_failure";
        case errc::invariant_violation: return "invariant_violation";
        case errc::missing_pair:        return "missing_pair";
        case errc::incompatible:        return "incompatible";
        case errc::invalid_weights:     return "invalid_weights";
        case errc::invalid_drop_rate:   return "invalid_drop_rate";
        case errc::invalid_n:           return "invalid_n";
        case errc::too_many_tasks:      return "too_many_tasks";
        case errc::missing_score:       return "missing_score";
        case errc::invalid_args:        return "invalid_args";
        case errc::empty_input:         return "empty_input";
        case errc::out_of_range:        return "out_of_range";
        case errc::length_mismatch:     return "length_mismatch";
        case errc::parse_error:         return "parse_error";
        case errc::duplicate_record:    return "duplicate_record";
        case errc::ragged_candidates:   return "ragged_candidates";
        case errc::unknown_system:      return "unknown_system";
        case errc::k_exceeds_n:         return "k_exceeds_n";
        case errc::bad_arity:           return "bad_arity";
        case errc::universe_mismatch:   return "universe_mismatch";
        case errc::unknown_baseline:    return "unknown_baseline";
        case errc::invalid_config:      return "invalid_config";
        case errc::not_converged:       return "not_converged";
        case errc::ill_posed:           return "ill_posed";
        case errc::usage_error:         return "usage_error";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(errc code, const std::string& message)
        : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

    errc code() const noexcept { return code_; }

private:
    errc code_;
};

[[noreturn]] inline void raise(errc code, const std::string& message) {
    throw Error(code, message);
}

} // namespace loramerge
