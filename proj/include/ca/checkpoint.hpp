#pragma once

#include <memory>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "ca/mechanism.hpp"

namespace ca {

// Checkpoints are a raw little-endian double blob (<prefix>.bin) plus a JSON
// manifest (<prefix>.json) mapping parameter names to shapes and byte
// offsets. The manifest also carries an architecture descriptor so a
// mechanism can be rebuilt without the original training config.
void save_checkpoint(const std::string& prefix, const ParamStore& store,
                     const nlohmann::json& architecture);

nlohmann::json load_manifest(const std::string& prefix);

// Loads blob values into an existing store; names and shapes must match.
void load_params(const std::string& prefix, ParamStore& store);

// Rebuilds the mechanism described by the manifest and loads its parameters.
std::unique_ptr<Mechanism> load_mechanism(const std::string& prefix);

// Architecture descriptors understood by load_mechanism.
class CANet;
class CAFormer;
nlohmann::json describe_architecture(const CANet& net);
nlohmann::json describe_architecture(const CAFormer& net);

}  // namespace ca
