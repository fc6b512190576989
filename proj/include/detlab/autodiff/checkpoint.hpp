#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "detlab/autodiff/parameter.hpp"

namespace detlab::ad {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct StoredTensor {
    std::string name;
    Shape shape;
    std::vector<double> data;
};

struct Checkpoint {
    nlohmann::json meta;
    std::vector<StoredTensor> tensors;
};

// Writes <stem>.json (manifest: ordered {name, shape, byte_offset} plus
// caller metadata under "meta") and <stem>.bin (little-endian float64,
// row-major, manifest order).
void save_checkpoint(const std::filesystem::path& stem, const ParameterSet& params,
                     const nlohmann::json& meta = nlohmann::json::object());

Checkpoint load_checkpoint(const std::filesystem::path& stem);

// Copies stored values into matching parameters; throws naming the first
// missing or mis-shaped tensor.
void restore_parameters(const Checkpoint& checkpoint, ParameterSet& params);

}  // namespace detlab::ad
