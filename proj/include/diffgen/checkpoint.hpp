#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "diffgen/autodiff.hpp"
#include "diffgen/tensor.hpp"

namespace diffgen {

// Checkpoint layout: a directory with one raw little-endian float32 file per
// parameter tensor plus manifest.txt listing name, shape, dtype and the
// pipeline version, along with free-form metadata lines.

struct Checkpoint {
    std::vector<std::pair<std::string, Tensor>> params;  // manifest order
    std::map<std::string, std::string> metadata;

    const Tensor* find(const std::string& name) const {
        for (const auto& [n, t] : params)
            if (n == name) return &t;
        return nullptr;
    }
};

void save_checkpoint(const std::filesystem::path& dir, const std::vector<std::pair<std::string, const Tensor*>>& params,
                     const std::map<std::string, std::string>& metadata);

void save_checkpoint(const std::filesystem::path& dir, const ParamStoreT<float>& store,
                     const std::map<std::string, std::string>& metadata);

Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Copy checkpoint tensors into an existing parameter store; every store
/// parameter must be present with a matching shape.
void restore_params(ParamStoreT<float>& store, const Checkpoint& ckpt);

}  // namespace diffgen
