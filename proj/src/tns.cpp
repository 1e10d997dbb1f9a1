#include "evlie/tns.hpp"

#include <bit>
#include <cstdint>
#include <fstream>

#include <json.hpp>

#include "evlie/errors.hpp"

namespace evlie {

namespace {

void put_f32(std::vector<std::byte>& out, float f) {
    const auto u = std::bit_cast<uint32_t>(f);
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::byte>((u >> (8 * i)) & 0xff));
    }
}

float get_f32(const std::byte* p) {
    uint32_t u = 0;
    for (int i = 3; i >= 0; --i) {
        u = (u << 8) | std::to_integer<uint32_t>(p[i]);
    }
    return std::bit_cast<float>(u);
}

} // namespace

std::vector<std::byte> serialize_tns(const std::vector<int64_t>& shape,
                                     const std::vector<double>& values) {
    nlohmann::json header;
    header["shape"] = shape;
    header["dtype"] = "f32";
    const std::string head = header.dump() + "\n";

    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) throw ArgumentError("TNS1: dimensions must be positive");
        n *= d;
    }
    if (static_cast<int64_t>(values.size()) != n) {
        throw ArgumentError("TNS1: value count does not match shape");
    }
    std::vector<std::byte> out;
    out.reserve(head.size() + values.size() * 4);
    for (char c : head) out.push_back(static_cast<std::byte>(c));
    for (double v : values) put_f32(out, static_cast<float>(v));
    return out;
}

void parse_tns(const std::vector<std::byte>& bytes,
               std::vector<int64_t>& shape, std::vector<double>& values) {
    size_t nl = 0;
    while (nl < bytes.size() && std::to_integer<char>(bytes[nl]) != '\n') ++nl;
    if (nl == bytes.size()) {
        throw FormatError("TNS1: missing header line");
    }
    const std::string head(reinterpret_cast<const char*>(bytes.data()), nl);
    nlohmann::json header = nlohmann::json::parse(head, nullptr, false);
    if (header.is_discarded() || !header.is_object() ||
        !header.contains("shape") || !header.contains("dtype")) {
        throw FormatError("TNS1: malformed header: " + head);
    }
    if (header["dtype"] != "f32") {
        throw FormatError("TNS1: unsupported dtype");
    }
    shape.clear();
    int64_t n = 1;
    for (const auto& d : header["shape"]) {
        if (!d.is_number_integer() || d.get<int64_t>() <= 0) {
            throw FormatError("TNS1: bad shape entry");
        }
        shape.push_back(d.get<int64_t>());
        n *= shape.back();
    }
    const size_t payload = bytes.size() - nl - 1;
    if (payload != static_cast<size_t>(n) * 4) {
        throw FormatError("TNS1: payload holds " + std::to_string(payload / 4) +
                          " floats, header declares " + std::to_string(n));
    }
    values.resize(static_cast<size_t>(n));
    const std::byte* p = bytes.data() + nl + 1;
    for (int64_t i = 0; i < n; ++i, p += 4) {
        values[static_cast<size_t>(i)] = static_cast<double>(get_f32(p));
    }
}

void save_tns(const std::string& path, const Tensor& t) {
    if (!t) throw ArgumentError("save_tns: null tensor");
    const std::vector<std::byte> bytes = serialize_tns(t->shape, t->value);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ArgumentError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed: " + path);
}

Tensor load_tns(const std::string& path, bool requires_grad) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArgumentError("cannot open " + path);
    std::vector<std::byte> bytes;
    in.seekg(0, std::ios::end);
    bytes.resize(static_cast<size_t>(in.tellg()));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    std::vector<int64_t> shape;
    std::vector<double> values;
    parse_tns(bytes, shape, values);
    return make_tensor(std::move(shape), std::move(values), requires_grad);
}

} // namespace evlie
