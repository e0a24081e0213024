#include "loramerge/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "loramerge/errors.hpp"

namespace loramerge {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::string_view kLoraA = "lora_A";
constexpr std::string_view kLoraB = "lora_B";

// Returns the lora_B partner name for a name containing "lora_A".
std::optional<std::string> partner_name(const std::string& name) {
    const auto pos = name.find(kLoraA);
    if (pos == std::string::npos) return std::nullopt;
    std::string partner = name;
    partner.replace(pos, kLoraA.size(), kLoraB);
    return partner;
}

void write_le64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void write_le32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t read_le64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

std::uint32_t read_le32(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

std::uint16_t read_le16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::vector<std::string> split_csv_field(const std::string& s) {
    std::vector<std::string> out;
    if (s.empty()) return out;
    std::size_t start = 0;
    while (true) {
        const auto comma = s.find(',', start);
        if (comma == std::string::npos) {
            out.push_back(s.substr(start));
            break;
        }
        out.push_back(s.substr(start, comma - start));
        start = comma + 1;
    }
    return out;
}

std::string join_csv_field(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += ",";
        out += items[i];
    }
    return out;
}

} // namespace

std::string format_double(double value) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

float half_to_float(std::uint16_t bits) noexcept {
    const std::uint32_t sign = static_cast<std::uint32_t>(bits & 0x8000u) << 16;
    const std::uint32_t exponent = (bits >> 10) & 0x1fu;
    std::uint32_t mantissa = bits & 0x3ffu;
    std::uint32_t out;
    if (exponent == 0) {
        if (mantissa == 0) {
            out = sign;  // signed zero
        } else {
            // Subnormal half: renormalize into the f32 exponent range.
            int shift = 0;
            while (!(mantissa & 0x400u)) {
                mantissa <<= 1;
                ++shift;
            }
            mantissa &= 0x3ffu;
            out = sign | (static_cast<std::uint32_t>(113 - shift) << 23) | (mantissa << 13);
        }
    } else if (exponent == 0x1f) {
        out = sign | 0x7f800000u | (mantissa << 13);  // inf / nan
    } else {
        out = sign | ((exponent + 112u) << 23) | (mantissa << 13);
    }
    return std::bit_cast<float>(out);
}

void AdapterCheckpoint::set_tensor(const std::string& name, Tensor tensor) {
    auto it = index_.find(name);
    if (it != index_.end()) {
        tensors_[it->second] = std::move(tensor);
        return;
    }
    index_.emplace(name, names_.size());
    names_.push_back(name);
    tensors_.push_back(std::move(tensor));
}

bool AdapterCheckpoint::has_tensor(const std::string& name) const noexcept {
    return index_.contains(name);
}

const Tensor& AdapterCheckpoint::tensor(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
        raise(errc::invalid_args, "no tensor named '" + name + "'");
    }
    return tensors_[it->second];
}

std::size_t AdapterCheckpoint::total_elements() const noexcept {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.numel();
    return n;
}

bool AdapterCheckpoint::bitwise_equal(const AdapterCheckpoint& other) const {
    if (names_ != other.names_ || !(meta == other.meta)) return false;
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
        if (!tensors_[i].bitwise_equal(other.tensors_[i])) return false;
    }
    return true;
}

void AdapterCheckpoint::check_lora_pairs() const {
    for (const auto& name : names_) {
        const auto partner = partner_name(name);
        if (!partner) continue;
        if (!has_tensor(*partner)) {
            raise(errc::invariant_violation,
                  "tensor '" + name + "' has no matching '" + *partner + "'");
        }
        const Tensor& a = tensor(name);
        const Tensor& b = tensor(*partner);
        if (a.ndim() != 2 || b.ndim() != 2) {
            raise(errc::invariant_violation,
                  "LoRA factors for '" + name + "' must be 2-D");
        }
        const std::size_t inner_a = a.shape()[0];  // lora_A: r x d_in
        const std::size_t inner_b = b.shape()[1];  // lora_B: d_out x r
        if (inner_a != inner_b) {
            raise(errc::invariant_violation,
                  "LoRA pair '" + name + "' has inner dims " + std::to_string(inner_a) +
                      " vs " + std::to_string(inner_b));
        }
        if (meta.rank != 0 && inner_a != meta.rank) {
            raise(errc::invariant_violation,
                  "LoRA pair '" + name + "' has inner dim " + std::to_string(inner_a) +
                      " but metadata declares rank " + std::to_string(meta.rank));
        }
    }
}

void save_checkpoint(const AdapterCheckpoint& adapter, const std::filesystem::path& path) {
    adapter.check_lora_pairs();

    ordered_json header;
    ordered_json meta_json = ordered_json::object();
    if (adapter.meta.alpha != 0.0) meta_json["alpha"] = format_double(adapter.meta.alpha);
    if (!adapter.meta.base_model_id.empty()) meta_json["base_model_id"] = adapter.meta.base_model_id;
    if (adapter.meta.rank != 0) meta_json["rank"] = std::to_string(adapter.meta.rank);
    if (!adapter.meta.target_modules.empty()) {
        meta_json["target_modules"] = join_csv_field(adapter.meta.target_modules);
    }
    for (const auto& [key, value] : adapter.meta.extra) meta_json[key] = value;
    header["__metadata__"] = std::move(meta_json);

    std::uint64_t offset = 0;
    for (const auto& name : adapter.tensor_names()) {
        const Tensor& t = adapter.tensor(name);
        const std::uint64_t bytes = t.numel() * sizeof(float);
        ordered_json entry;
        entry["dtype"] = "F32";
        entry["shape"] = t.shape();
        entry["data_offsets"] = {offset, offset + bytes};
        header[name] = std::move(entry);
        offset += bytes;
    }

    std::string header_text = header.dump();
    // Space-pad the JSON so payloads start 8-byte aligned, matching the
    // common container convention.
    while ((8 + header_text.size()) % 8 != 0) header_text.push_back(' ');

    std::string blob;
    blob.reserve(8 + header_text.size() + offset);
    write_le64(blob, header_text.size());
    blob += header_text;
    for (const auto& name : adapter.tensor_names()) {
        for (float v : adapter.tensor(name).data()) {
            write_le32(blob, std::bit_cast<std::uint32_t>(v));
        }
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        raise(errc::io_failure, "cannot open '" + path.string() + "' for writing");
    }
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    out.flush();
    if (!out) {
        raise(errc::io_failure, "short write to '" + path.string() + "'");
    }
}

AdapterCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        raise(errc::io_failure, "cannot open '" + path.string() + "' for reading");
    }
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) {
        raise(errc::io_failure, "read error on '" + path.string() + "'");
    }
    const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());

    if (blob.size() < 8) {
        raise(errc::corrupt_header, "file shorter than the 8-byte length prefix");
    }
    const std::uint64_t header_len = read_le64(bytes);
    if (header_len > blob.size() - 8) {
        raise(errc::corrupt_header, "header length " + std::to_string(header_len) +
                                        " exceeds file size " + std::to_string(blob.size()));
    }
    const ordered_json header =
        ordered_json::parse(blob.begin() + 8, blob.begin() + 8 + static_cast<std::ptrdiff_t>(header_len),
                            nullptr, false);
    if (header.is_discarded() || !header.is_object()) {
        raise(errc::corrupt_header, "header is not a JSON object");
    }

    const unsigned char* payload = bytes + 8 + header_len;
    const std::uint64_t payload_size = blob.size() - 8 - header_len;

    AdapterCheckpoint ckpt;
    ckpt.id = path.stem().string();

    for (const auto& [name, entry] : header.items()) {
        if (name == "__metadata__") {
            if (!entry.is_object()) {
                raise(errc::corrupt_header, "__metadata__ is not an object");
            }
            for (const auto& [key, value] : entry.items()) {
                if (!value.is_string()) {
                    raise(errc::corrupt_header, "metadata value for '" + key + "' is not a string");
                }
                const std::string text = value.get<std::string>();
                if (key == "base_model_id") {
                    ckpt.meta.base_model_id = text;
                } else if (key == "rank") {
                    std::uint32_t rank = 0;
                    const auto res = std::from_chars(text.data(), text.data() + text.size(), rank);
                    if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
                        raise(errc::corrupt_header, "metadata rank '" + text + "' is not an integer");
                    }
                    ckpt.meta.rank = rank;
                } else if (key == "alpha") {
                    try {
                        std::size_t used = 0;
                        ckpt.meta.alpha = std::stod(text, &used);
                        if (used != text.size()) throw std::invalid_argument(text);
                    } catch (const std::exception&) {
                        raise(errc::corrupt_header, "metadata alpha '" + text + "' is not a number");
                    }
                } else if (key == "target_modules") {
                    ckpt.meta.target_modules = split_csv_field(text);
                } else {
                    ckpt.meta.extra[key] = text;
                }
            }
            continue;
        }

        if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
            !entry.contains("data_offsets")) {
            raise(errc::corrupt_header, "tensor entry '" + name + "' is malformed");
        }
        const std::string dtype = entry["dtype"].get<std::string>();
        if (dtype != "F32" && dtype != "F16") {
            raise(errc::unsupported_dtype, "tensor '" + name + "' has dtype " + dtype);
        }
        std::vector<std::size_t> shape;
        for (const auto& dim : entry["shape"]) {
            if (!dim.is_number_unsigned() || dim.get<std::uint64_t>() == 0) {
                raise(errc::corrupt_header, "tensor '" + name + "' has a non-positive dimension");
            }
            shape.push_back(dim.get<std::size_t>());
        }
        const auto& offsets = entry["data_offsets"];
        if (!offsets.is_array() || offsets.size() != 2) {
            raise(errc::corrupt_header, "tensor '" + name + "' has malformed data_offsets");
        }
        const std::uint64_t begin = offsets[0].get<std::uint64_t>();
        const std::uint64_t end = offsets[1].get<std::uint64_t>();
        if (end < begin) {
            raise(errc::corrupt_header, "tensor '" + name + "' has reversed data_offsets");
        }
        if (begin > payload_size || end > payload_size) {
            raise(errc::truncated_data, "tensor '" + name + "' data offsets [" +
                                            std::to_string(begin) + "," + std::to_string(end) +
                                            ") exceed payload size " + std::to_string(payload_size));
        }
        const std::size_t numel = shape_numel(shape);
        const std::size_t elem_size = dtype == "F32" ? 4 : 2;
        if (end - begin != numel * elem_size) {
            raise(errc::corrupt_header, "tensor '" + name + "' payload length " +
                                            std::to_string(end - begin) + " does not match shape");
        }

        std::vector<float> data(numel);
        const unsigned char* src = payload + begin;
        if (dtype == "F32") {
            for (std::size_t i = 0; i < numel; ++i) {
                data[i] = std::bit_cast<float>(read_le32(src + 4 * i));
            }
        } else {
            for (std::size_t i = 0; i < numel; ++i) {
                data[i] = half_to_float(read_le16(src + 2 * i));
            }
        }
        ckpt.set_tensor(name, Tensor(std::move(shape), std::move(data)));
    }
    return ckpt;
}

CompatReport validate_compatible(std::span<const AdapterCheckpoint> adapters) {
    if (adapters.empty()) {
        raise(errc::invalid_args, "validate_compatible requires at least one checkpoint");
    }
    CompatReport report;
    const AdapterCheckpoint& ref = adapters.front();
    const std::string ref_label = ref.id.empty() ? "checkpoint 0" : ref.id;

    for (std::size_t i = 1; i < adapters.size(); ++i) {
        const AdapterCheckpoint& other = adapters[i];
        const std::string label = other.id.empty() ? "checkpoint " + std::to_string(i) : other.id;

        for (const auto& name : ref.tensor_names()) {
            if (!other.has_tensor(name)) {
                report.mismatches.push_back(
                    {name, MismatchKind::missing, "present in " + ref_label + ", absent in " + label});
                continue;
            }
            const Tensor& a = ref.tensor(name);
            const Tensor& b = other.tensor(name);
            if (!a.same_shape(b)) {
                report.mismatches.push_back(
                    {name, MismatchKind::shape,
                     shape_to_string(a.shape()) + " in " + ref_label + " vs " +
                         shape_to_string(b.shape()) + " in " + label});
            }
        }
        for (const auto& name : other.tensor_names()) {
            if (!ref.has_tensor(name)) {
                report.mismatches.push_back(
                    {name, MismatchKind::missing, "present in " + label + ", absent in " + ref_label});
            }
        }
        if (ref.meta.rank != other.meta.rank) {
            report.mismatches.push_back(
                {"rank", MismatchKind::metadata,
                 std::to_string(ref.meta.rank) + " in " + ref_label + " vs " +
                     std::to_string(other.meta.rank) + " in " + label});
        }
        if (ref.meta.base_model_id != other.meta.base_model_id) {
            report.warnings.push_back("base_model_id differs: '" + ref.meta.base_model_id +
                                      "' in " + ref_label + " vs '" + other.meta.base_model_id +
                                      "' in " + label);
        }
    }
    report.compatible = report.mismatches.empty();
    return report;
}

Tensor lora_delta(const AdapterCheckpoint& adapter, const std::string& module_name) {
    std::string a_name;
    std::string b_name;
    for (const char* suffix : {"", ".weight"}) {
        const std::string candidate_a = module_name + ".lora_A" + suffix;
        const std::string candidate_b = module_name + ".lora_B" + suffix;
        if (adapter.has_tensor(candidate_a) || adapter.has_tensor(candidate_b)) {
            a_name = candidate_a;
            b_name = candidate_b;
            break;
        }
    }
    if (a_name.empty() || !adapter.has_tensor(a_name) || !adapter.has_tensor(b_name)) {
        raise(errc::missing_pair,
              "module '" + module_name + "' does not have both lora_A and lora_B factors");
    }
    const Tensor& a = adapter.tensor(a_name);  // r x d_in
    const Tensor& b = adapter.tensor(b_name);  // d_out x r
    if (a.ndim() != 2 || b.ndim() != 2 || a.shape()[0] != b.shape()[1]) {
        raise(errc::shape_mismatch, "factors for module '" + module_name + "' are not composable: " +
                                        shape_to_string(b.shape()) + " x " +
                                        shape_to_string(a.shape()));
    }
    const std::size_t r = a.shape()[0];
    const std::size_t d_in = a.shape()[1];
    const std::size_t d_out = b.shape()[0];

    const std::uint32_t rank = adapter.meta.rank != 0 ? adapter.meta.rank
                                                      : static_cast<std::uint32_t>(r);
    const double alpha = adapter.meta.alpha != 0.0 ? adapter.meta.alpha
                                                   : static_cast<double>(rank);
    const double scale = alpha / static_cast<double>(rank);

    std::vector<float> out(d_out * d_in);
    for (std::size_t row = 0; row < d_out; ++row) {
        for (std::size_t col = 0; col < d_in; ++col) {
            double acc = 0.0;
            for (std::size_t k = 0; k < r; ++k) {
                acc += static_cast<double>(b[row * r + k]) * static_cast<double>(a[k * d_in + col]);
            }
            out[row * d_in + col] = static_cast<float>(scale * acc);
        }
    }
    return Tensor({d_out, d_in}, std::move(out));
}

} // namespace loramerge
