#pragma once

#include <filesystem>
#include <vector>

#include "json.hpp"
#include "premixer/adam.hpp"
#include "premixer/ops.hpp"

namespace premixer::checkpoint {

inline constexpr int kVersion = 1;

// A checkpoint is a directory holding manifest.json plus one PMXT file per
// named parameter (and, optionally, per Adam moment). Payloads are float32.

void save(const std::filesystem::path& dir, nlohmann::json manifest, const std::vector<Parameter*>& params,
          const std::vector<AdamState>* adam = nullptr);

nlohmann::json read_manifest(const std::filesystem::path& dir);

/// Fills `params` from the checkpoint; names and shapes must match exactly.
/// When `adam` is non-null and moments were saved, they are restored too.
nlohmann::json load(const std::filesystem::path& dir, const std::vector<Parameter*>& params,
                    std::vector<AdamState>* adam = nullptr);

/// Rounds every parameter value to float32 in place, matching what a
/// save/load round trip produces.
void round_to_float(const std::vector<Parameter*>& params);

}  // namespace premixer::checkpoint
