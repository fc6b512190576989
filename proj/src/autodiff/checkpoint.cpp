#include "detlab/autodiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "detlab/io.hpp"

namespace detlab::ad {

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
    return std::filesystem::path(stem.string() + suffix);
}

void append_le(std::string& out, double value) {
    auto bits = std::bit_cast<std::uint64_t>(value);
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>(bits & 0xffu));
        bits >>= 8;
    }
}

double read_le(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) bits = (bits << 8) | p[i];
    return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& stem, const ParameterSet& params,
                     const nlohmann::json& meta) {
    nlohmann::json manifest;
    manifest["format"] = "detlab-checkpoint-v1";
    manifest["meta"] = meta;
    manifest["tensors"] = nlohmann::json::array();
    std::string blob;
    blob.reserve(params.scalar_count() * 8);
    for (const auto& p : params.items()) {
        manifest["tensors"].push_back(
            {{"name", p.name}, {"shape", p.tensor.shape()}, {"byte_offset", blob.size()}});
        for (double v : p.tensor.data()) append_le(blob, v);
    }
    io::write_atomic(with_suffix(stem, ".bin"), blob);
    io::write_atomic(with_suffix(stem, ".json"), manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& stem) {
    const auto manifest_path = with_suffix(stem, ".json");
    const auto blob_path = with_suffix(stem, ".bin");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(io::read_file(manifest_path));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("malformed checkpoint manifest " + manifest_path.string() + ": " + e.what());
    }
    const std::string blob = io::read_file(blob_path);
    const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());

    Checkpoint ck;
    ck.meta = manifest.value("meta", nlohmann::json::object());
    for (const auto& entry : manifest.at("tensors")) {
        StoredTensor t;
        t.name = entry.at("name").get<std::string>();
        t.shape = entry.at("shape").get<Shape>();
        const auto offset = entry.at("byte_offset").get<std::size_t>();
        const std::size_t n = shape_size(t.shape);
        if (offset + n * 8 > blob.size()) {
            throw CheckpointError("tensor '" + t.name + "' extends past the end of " + blob_path.string());
        }
        t.data.resize(n);
        for (std::size_t i = 0; i < n; ++i) t.data[i] = read_le(bytes + offset + i * 8);
        ck.tensors.push_back(std::move(t));
    }
    return ck;
}

void restore_parameters(const Checkpoint& checkpoint, ParameterSet& params) {
    for (auto& p : params.items()) {
        const StoredTensor* found = nullptr;
        for (const auto& t : checkpoint.tensors) {
            if (t.name == p.name) {
                found = &t;
                break;
            }
        }
        if (!found) throw CheckpointError("checkpoint is missing tensor '" + p.name + "'");
        if (found->shape != p.tensor.shape()) {
            throw CheckpointError("tensor '" + p.name + "' has shape " + shape_str(found->shape) +
                                  " in checkpoint but model expects " + shape_str(p.tensor.shape()));
        }
        std::copy(found->data.begin(), found->data.end(), p.tensor.mutable_data().begin());
    }
}

}  // namespace detlab::ad
