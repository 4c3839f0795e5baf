#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcls/model_io.hpp"
#include "dcls/training.hpp"
#include "oracles.hpp"

using dcls::KernelSpec;
using dcls::Model;
using dcls::Tensor;

namespace {

/// Temporary file path that cleans up after itself.
struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/dcls_test_" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

Model sample_model() {
    KernelSpec spec;
    spec.ndims = 2;
    spec.kernel_count = 3;
    spec.dilated_size = {9, 7};
    spec.channels_out = 4;
    spec.channels_in_per_group = 2;
    spec.groups = 2;

    dcls::ConvConfig cfg;
    cfg.stride = {1, 1};
    cfg.padding = {4, 3};
    cfg.groups = 2;

    Model model;
    for (int i = 0; i < 2; ++i) {
        dcls::DclsLayer layer = dcls::make_layer(spec, cfg);
        oracle::fill_normal(layer.weights, 40 + static_cast<std::uint64_t>(i));
        layer.positions = dcls::init_positions(spec, dcls::InitDist::normal,
                                               50 + static_cast<std::uint64_t>(i));
        model.layers.push_back(std::move(layer));
    }
    // a few values with awkward bit patterns
    model.layers[0].weights[0] = 0.0;
    model.layers[0].weights[1] = -0.0;
    model.layers[0].weights[2] = 1e-308;
    return model;
}

std::vector<char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("model files round-trip bit for bit") {
    TempFile file("roundtrip.dcls");
    Model model = sample_model();
    nlohmann::json meta = {{"seed", 7}, {"note", "fixture"}};
    dcls::save_model(model, file.path, meta);

    dcls::LoadedModel loaded = dcls::load_model(file.path);
    REQUIRE(loaded.model.layers.size() == model.layers.size());
    CHECK(loaded.metadata.at("seed") == 7);
    CHECK(loaded.metadata.at("note") == "fixture");

    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const auto& a = model.layers[l];
        const auto& b = loaded.model.layers[l];
        CHECK(a.spec.kernel_count == b.spec.kernel_count);
        CHECK(a.spec.dilated_size == b.spec.dilated_size);
        CHECK(a.cfg.padding == b.cfg.padding);
        REQUIRE(a.weights.size() == b.weights.size());
        // bitwise comparison, so -0.0 and denormals must survive
        CHECK(std::memcmp(a.weights.data(), b.weights.data(),
                          a.weights.size() * sizeof(double)) == 0);
        CHECK(std::memcmp(a.positions.data(), b.positions.data(),
                          a.positions.size() * sizeof(double)) == 0);
    }
}

TEST_CASE("saving twice produces identical bytes") {
    TempFile f1("dup1.dcls"), f2("dup2.dcls");
    Model model = sample_model();
    dcls::save_model(model, f1.path);
    dcls::save_model(model, f2.path);
    CHECK(slurp(f1.path) == slurp(f2.path));
}

TEST_CASE("corrupt files are rejected with specific messages") {
    TempFile file("corrupt.dcls");
    Model model = sample_model();
    dcls::save_model(model, file.path);
    const std::vector<char> good = slurp(file.path);

    SUBCASE("bad magic") {
        std::vector<char> bytes = good;
        bytes[0] = 'X';
        spit(file.path, bytes);
        CHECK_THROWS_WITH_AS(dcls::load_model(file.path), doctest::Contains("magic"),
                             std::runtime_error);
    }
    SUBCASE("truncated blob") {
        std::vector<char> bytes = good;
        bytes.resize(bytes.size() - 16);
        spit(file.path, bytes);
        CHECK_THROWS_AS(dcls::load_model(file.path), std::runtime_error);
    }
    SUBCASE("header length past the end of the file") {
        std::vector<char> bytes = good;
        bytes[8] = static_cast<char>(0xff);
        bytes[9] = static_cast<char>(0xff);
        spit(file.path, bytes);
        CHECK_THROWS_WITH_AS(dcls::load_model(file.path), doctest::Contains("truncated"),
                             std::runtime_error);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(dcls::load_model("/tmp/does_not_exist.dcls"), std::runtime_error);
    }
}

TEST_CASE("format version and endianness are enforced") {
    TempFile file("versioned.dcls");
    Model model = sample_model();
    dcls::save_model(model, file.path);
    const std::vector<char> good = slurp(file.path);

    // parse the stored header, tweak one field, and write the file back with
    // a corrected length prefix
    const auto rewrite_header = [&](const std::string& key, const nlohmann::json& value) {
        std::uint32_t len = 0;
        for (int i = 0; i < 4; ++i) {
            len |= static_cast<std::uint32_t>(static_cast<unsigned char>(good[8 + i])) << (8 * i);
        }
        nlohmann::json header = nlohmann::json::parse(good.begin() + 12, good.begin() + 12 + len);
        header[key] = value;
        const std::string text = header.dump();
        std::vector<char> bytes(good.begin(), good.begin() + 8);
        for (int i = 0; i < 4; ++i) {
            bytes.push_back(static_cast<char>((text.size() >> (8 * i)) & 0xff));
        }
        bytes.insert(bytes.end(), text.begin(), text.end());
        bytes.insert(bytes.end(), good.begin() + 12 + len, good.end());
        spit(file.path, bytes);
    };

    SUBCASE("newer format version names both versions") {
        rewrite_header("format_version", 9);
        CHECK_THROWS_WITH_AS(dcls::load_model(file.path), doctest::Contains("version 9"),
                             std::runtime_error);
        CHECK_THROWS_WITH_AS(dcls::load_model(file.path), doctest::Contains("version 1"),
                             std::runtime_error);
    }
    SUBCASE("big-endian payloads are refused") {
        rewrite_header("endianness", "big");
        CHECK_THROWS_WITH_AS(dcls::load_model(file.path), doctest::Contains("endian"),
                             std::runtime_error);
    }
}
