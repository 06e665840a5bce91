#pragma once

// Weight container ("NNWC", little-endian):
//
//   magic     4 bytes  "NNWC"
//   version   u32      1
//   records   u32      number of parameter records
//   per record:
//     kind    u8       1 conv weights, 2 conv bias, 3 dense weights, 4 dense bias
//     rank    u8
//     extents u32 x rank
//     data    binary32 x product(extents)
//
// Records appear in layer order, weights before bias. The topology lives in a
// text manifest of key=value lines, e.g.
//
//   input=3,32,32
//   layer=conv out=16 kernel=3x3 stride=1 pad=1
//   layer=relu
//   layer=maxpool window=2 stride=2
//   layer=flatten
//   layer=dense out=128
//   layer=output classes=2 squash=softmax

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "xcnn/network.hpp"

namespace xcnn {

inline constexpr std::uint32_t kWeightFormatVersion = 1;

enum class RecordKind : std::uint8_t { conv_weights = 1, conv_bias = 2, dense_weights = 3, dense_bias = 4 };

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

struct ParamRecord {
    RecordKind kind;
    std::size_t layer;
    std::string label;
    const Tensor* tensor;
};

inline std::vector<ParamRecord> param_records(const Network& net) {
    std::vector<ParamRecord> out;
    std::size_t conv_no = 0, dense_no = 0;
    for (std::size_t i = 0; i < net.size(); ++i) {
        const auto& layer = net.layers()[i];
        if (auto* c = std::get_if<ConvLayer>(&layer)) {
            const std::string name = "conv layer " + std::to_string(++conv_no);
            out.push_back({RecordKind::conv_weights, i, name + " weights", &c->weights});
            out.push_back({RecordKind::conv_bias, i, name + " bias", &c->bias});
        } else if (auto* d = std::get_if<DenseLayer>(&layer)) {
            const std::string name = "dense layer " + std::to_string(++dense_no);
            out.push_back({RecordKind::dense_weights, i, name + " weights", &d->weights});
            out.push_back({RecordKind::dense_bias, i, name + " bias", &d->bias});
        }
    }
    return out;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError("cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw UsageError("failed writing " + path);
}

} // namespace detail

inline std::string encode_weights(const Network& net) {
    const auto records = detail::param_records(net);
    std::string out = "NNWC";
    detail::put_u32(out, kWeightFormatVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(records.size()));
    for (const auto& r : records) {
        out.push_back(static_cast<char>(r.kind));
        out.push_back(static_cast<char>(r.tensor->rank()));
        for (auto e : r.tensor->shape()) detail::put_u32(out, static_cast<std::uint32_t>(e));
        for (float v : r.tensor->values()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
    return out;
}

/// Decode a container into `skeleton`'s parameter tensors (the skeleton
/// usually comes from the manifest). Throws FormatError on any mismatch.
inline Network decode_weights(std::string_view bytes, Network skeleton) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::size_t n = bytes.size();
    if (n < 4 || std::memcmp(p, "NNWC", 4) != 0) throw FormatError("bad magic: not a weight container");
    if (n < 12) throw FormatError("truncated weight container header");
    const std::uint32_t version = detail::get_u32(p + 4);
    if (version != kWeightFormatVersion)
        throw FormatError("unsupported weight container version " + std::to_string(version));
    const std::uint32_t count = detail::get_u32(p + 8);
    const auto expected = detail::param_records(skeleton);
    if (count != expected.size())
        throw FormatError("container holds " + std::to_string(count) + " records, manifest needs " +
                          std::to_string(expected.size()));
    std::size_t pos = 12;
    for (std::size_t r = 0; r < count; ++r) {
        const auto& want = expected[r];
        const std::string where = "record " + std::to_string(r) + " (" + want.label + ")";
        if (pos + 2 > n) throw FormatError("truncated in " + where);
        const auto kind = static_cast<RecordKind>(p[pos]);
        const std::size_t rank = p[pos + 1];
        pos += 2;
        if (kind != want.kind) throw FormatError(where + ": unexpected record kind " + std::to_string(p[pos - 2]));
        if (pos + 4 * rank > n) throw FormatError("truncated in " + where);
        Shape shape(rank);
        for (std::size_t i = 0; i < rank; ++i, pos += 4) shape[i] = detail::get_u32(p + pos);
        if (shape != want.tensor->shape())
            throw FormatError(where + ": shape " + shape_str(shape) + " but manifest implies " +
                              shape_str(want.tensor->shape()));
        const std::size_t cells = shape_size(shape);
        if (pos + 4 * cells > n) throw FormatError("truncated in " + where);
        auto& target = const_cast<Tensor&>(*want.tensor);
        for (std::size_t i = 0; i < cells; ++i, pos += 4) target[i] = std::bit_cast<float>(detail::get_u32(p + pos));
        if (!target.all_finite()) throw FormatError(where + ": non-finite parameter");
    }
    if (pos != n) throw FormatError("trailing bytes after last record");
    return skeleton;
}

inline std::string encode_manifest(const Network& net) {
    std::ostringstream os;
    const auto& in = net.input_shape();
    os << "input=" << in[0] << ',' << in[1] << ',' << in[2] << '\n';
    for (const auto& layer : net.layers()) {
        os << "layer=" << kind_name(kind_of(layer));
        if (auto* c = std::get_if<ConvLayer>(&layer))
            os << " out=" << c->out_channels << " kernel=" << c->kernel_h << 'x' << c->kernel_w
               << " stride=" << c->stride << " pad=" << c->pad;
        else if (auto* p = std::get_if<MaxPoolLayer>(&layer))
            os << " window=" << p->window << " stride=" << p->stride;
        else if (auto* d = std::get_if<DenseLayer>(&layer))
            os << " out=" << d->out_features;
        else if (auto* o = std::get_if<OutputLayer>(&layer))
            os << " classes=" << o->classes << " squash=softmax";
        os << '\n';
    }
    return os.str();
}

/// Parse a manifest into a zero-weight network.
inline Network decode_manifest(std::string_view text) {
    std::istringstream is{std::string(text)};
    std::string line;
    Shape input;
    std::vector<LayerSpec> layers;
    std::size_t line_no = 0;
    auto number = [&](const std::map<std::string, std::string>& kv, const std::string& key) -> std::size_t {
        const auto it = kv.find(key);
        if (it == kv.end()) throw FormatError("manifest line " + std::to_string(line_no) + ": missing " + key);
        try {
            std::size_t used = 0;
            const unsigned long v = std::stoul(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument(key);
            return v;
        } catch (const std::logic_error&) {
            throw FormatError("manifest line " + std::to_string(line_no) + ": bad value for " + key);
        }
    };
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("manifest line " + std::to_string(line_no) + ": expected key=value");
        const std::string key = line.substr(0, eq);
        std::string rest = line.substr(eq + 1);
        if (key == "input") {
            std::istringstream parts(rest);
            std::string tok;
            input.clear();
            while (std::getline(parts, tok, ',')) {
                try {
                    input.push_back(std::stoul(tok));
                } catch (const std::logic_error&) {
                    throw FormatError("manifest line " + std::to_string(line_no) + ": bad input extent");
                }
            }
        } else if (key == "layer") {
            std::istringstream parts(rest);
            std::string kind, tok;
            parts >> kind;
            std::map<std::string, std::string> kv;
            while (parts >> tok) {
                const auto e = tok.find('=');
                if (e == std::string::npos) throw FormatError("manifest line " + std::to_string(line_no) + ": bad attribute " + tok);
                kv[tok.substr(0, e)] = tok.substr(e + 1);
            }
            if (kind == "conv") {
                ConvLayer c;
                c.out_channels = number(kv, "out");
                const auto k = kv.count("kernel") ? kv["kernel"] : std::string{};
                const auto x = k.find('x');
                if (x == std::string::npos) throw FormatError("manifest line " + std::to_string(line_no) + ": kernel must be HxW");
                std::map<std::string, std::string> kk{{"kh", k.substr(0, x)}, {"kw", k.substr(x + 1)}};
                c.kernel_h = number(kk, "kh");
                c.kernel_w = number(kk, "kw");
                c.stride = number(kv, "stride");
                c.pad = number(kv, "pad");
                layers.emplace_back(std::move(c));
            } else if (kind == "relu") {
                layers.emplace_back(ReluLayer{});
            } else if (kind == "maxpool") {
                layers.emplace_back(MaxPoolLayer{number(kv, "window"), number(kv, "stride")});
            } else if (kind == "flatten") {
                layers.emplace_back(FlattenLayer{});
            } else if (kind == "dense") {
                layers.emplace_back(DenseLayer{number(kv, "out"), {}, {}});
            } else if (kind == "output") {
                if (kv.count("squash") && kv["squash"] != "softmax")
                    throw FormatError("manifest line " + std::to_string(line_no) + ": only softmax output is supported");
                layers.emplace_back(OutputLayer{number(kv, "classes")});
            } else {
                throw FormatError("manifest line " + std::to_string(line_no) + ": unknown layer kind '" + kind + "'");
            }
        } else {
            throw FormatError("manifest line " + std::to_string(line_no) + ": unknown key '" + key + "'");
        }
    }
    try {
        return Network(input, std::move(layers));
    } catch (const ShapeError& e) {
        throw FormatError(std::string("manifest does not describe a valid network: ") + e.what());
    }
}

inline void save_weights(const Network& net, const std::string& path) { detail::write_file(path, encode_weights(net)); }

inline Network load_weights(const std::string& path, const Network& skeleton) {
    return decode_weights(detail::read_file(path), skeleton);
}

inline void save_manifest(const Network& net, const std::string& path) {
    detail::write_file(path, encode_manifest(net));
}

inline Network load_manifest(const std::string& path) { return decode_manifest(detail::read_file(path)); }

/// Load a manifest + container pair, cross-validated.
inline Network load_network(const std::string& manifest_path, const std::string& weights_path) {
    return load_weights(weights_path, load_manifest(manifest_path));
}

} // namespace xcnn
