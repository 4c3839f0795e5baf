#include "dcls/model_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace dcls {
namespace {

constexpr char kMagic[8] = {'D', 'C', 'L', 'S', 'M', 'O', 'D', 'L'};

void append_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t read_u64_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

nlohmann::json spec_to_json(const KernelSpec& spec) {
    return {{"ndims", spec.ndims},
            {"kernel_count", spec.kernel_count},
            {"dilated_size", spec.dilated_size},
            {"channels_out", spec.channels_out},
            {"channels_in_per_group", spec.channels_in_per_group},
            {"groups", spec.groups}};
}

KernelSpec spec_from_json(const nlohmann::json& j) {
    KernelSpec spec;
    spec.ndims = j.at("ndims").get<int>();
    spec.kernel_count = j.at("kernel_count").get<int>();
    spec.dilated_size = j.at("dilated_size").get<std::vector<int>>();
    spec.channels_out = j.at("channels_out").get<int>();
    spec.channels_in_per_group = j.at("channels_in_per_group").get<int>();
    spec.groups = j.at("groups").get<int>();
    spec.validate();
    return spec;
}

nlohmann::json conv_to_json(const ConvConfig& cfg) {
    return {{"stride", cfg.stride},
            {"padding", cfg.padding},
            {"dilation", cfg.dilation},
            {"groups", cfg.groups}};
}

ConvConfig conv_from_json(const nlohmann::json& j) {
    ConvConfig cfg;
    cfg.stride = j.at("stride").get<std::vector<int>>();
    cfg.padding = j.at("padding").get<std::vector<int>>();
    cfg.dilation = j.at("dilation").get<std::vector<int>>();
    cfg.groups = j.at("groups").get<int>();
    return cfg;
}

}  // namespace

void save_model(const Model& model, const std::string& path, const nlohmann::json& metadata) {
    nlohmann::json header;
    header["format_version"] = kModelFormatVersion;
    header["endianness"] = "little";
    header["metadata"] = metadata;
    header["layers"] = nlohmann::json::array();

    std::string blob;
    std::size_t offset = 0;
    for (const DclsLayer& layer : model.layers) {
        nlohmann::json entry;
        entry["spec"] = spec_to_json(layer.spec);
        entry["conv"] = conv_to_json(layer.cfg);
        entry["weights"] = {{"offset", offset}, {"count", layer.weights.size()}};
        offset += layer.weights.size();
        entry["positions"] = {{"offset", offset}, {"count", layer.positions.size()}};
        offset += layer.positions.size();
        header["layers"].push_back(std::move(entry));
        for (std::size_t i = 0; i < layer.weights.size(); ++i) {
            append_u64_le(blob, std::bit_cast<std::uint64_t>(layer.weights[i]));
        }
        for (std::size_t i = 0; i < layer.positions.size(); ++i) {
            append_u64_le(blob, std::bit_cast<std::uint64_t>(layer.positions[i]));
        }
    }

    const std::string header_text = header.dump();
    if (header_text.size() > 0xffffffffu) throw std::runtime_error("model header too large");

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out.write(kMagic, sizeof(kMagic));
    const std::uint32_t len = static_cast<std::uint32_t>(header_text.size());
    char len_bytes[4];
    for (int i = 0; i < 4; ++i) len_bytes[i] = static_cast<char>((len >> (8 * i)) & 0xff);
    out.write(len_bytes, 4);
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

LoadedModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());

    if (bytes.size() < sizeof(kMagic) + 4 ||
        std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("'" + path + "' is not a DCLS model file (bad magic)");
    }
    std::uint32_t header_len = 0;
    for (int i = 0; i < 4; ++i) {
        header_len |= static_cast<std::uint32_t>(bytes[sizeof(kMagic) + i]) << (8 * i);
    }
    const std::size_t header_start = sizeof(kMagic) + 4;
    if (header_start + header_len > bytes.size()) {
        throw std::runtime_error("'" + path + "' is truncated: header length " +
                                 std::to_string(header_len) + " exceeds the file");
    }

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(header_start),
                                       bytes.begin() +
                                           static_cast<std::ptrdiff_t>(header_start + header_len));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("'" + path + "' has a corrupt header: " + e.what());
    }

    const int version = header.at("format_version").get<int>();
    if (version != kModelFormatVersion) {
        throw std::runtime_error("model format version " + std::to_string(version) +
                                 " is not supported by this reader (expects version " +
                                 std::to_string(kModelFormatVersion) + ")");
    }
    const std::string endianness = header.at("endianness").get<std::string>();
    if (endianness != "little") {
        throw std::runtime_error("'" + path + "' declares " + endianness +
                                 "-endian payload; only little-endian files are supported");
    }

    const std::size_t blob_start = header_start + header_len;
    const std::size_t blob_doubles = (bytes.size() - blob_start) / 8;

    LoadedModel loaded;
    loaded.metadata = header.value("metadata", nlohmann::json::object());
    std::size_t expected = 0;
    for (const nlohmann::json& entry : header.at("layers")) {
        DclsLayer layer;
        layer.spec = spec_from_json(entry.at("spec"));
        layer.cfg = conv_from_json(entry.at("conv"));
        layer.weights = Tensor(layer.spec.weight_shape(), 0.0);
        layer.positions = Tensor(layer.spec.position_shape(), 0.0);

        const auto read_block = [&](const nlohmann::json& block, Tensor& dst, const char* what) {
            const std::size_t off = block.at("offset").get<std::size_t>();
            const std::size_t count = block.at("count").get<std::size_t>();
            if (count != dst.size()) {
                throw std::runtime_error("'" + path + "': declared " + what + " count " +
                                         std::to_string(count) + " does not match the spec shape " +
                                         shape_string(dst.shape()));
            }
            if (off + count > blob_doubles) {
                throw std::runtime_error("'" + path + "': truncated blob, " + what + " block at " +
                                         std::to_string(off) + " runs past " +
                                         std::to_string(blob_doubles) + " stored values");
            }
            const unsigned char* p = bytes.data() + blob_start + off * 8;
            for (std::size_t i = 0; i < count; ++i) {
                dst[i] = std::bit_cast<double>(read_u64_le(p + i * 8));
            }
            expected = std::max(expected, off + count);
        };
        read_block(entry.at("weights"), layer.weights, "weights");
        read_block(entry.at("positions"), layer.positions, "positions");
        loaded.model.layers.push_back(std::move(layer));
    }
    if (expected != blob_doubles) {
        throw std::runtime_error("'" + path + "': blob holds " + std::to_string(blob_doubles) +
                                 " values but the header accounts for " + std::to_string(expected));
    }
    return loaded;
}

}  // namespace dcls
