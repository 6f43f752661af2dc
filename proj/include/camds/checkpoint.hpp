#pragma once

#include <cstdint>
#include <string>

#include "camds/model.hpp"
#include "camds/optimizer.hpp"

namespace camds {

// Checkpoint file layout:
//   bytes 0..7   magic "CAMDSCK1"
//   bytes 8..15  little-endian u64 byte length of the metadata document
//   metadata     UTF-8 JSON: format version, model config + hash, iteration,
//                rng, batchnorm update counters, array manifest
//                (name/kind/shape/offset per array)
//   arrays       little-endian 32-bit floats, in manifest order
//
// Save -> load -> save round-trips byte-identically.
inline constexpr char kCheckpointMagic[9] = "CAMDSCK1";
inline constexpr int kCheckpointVersion = 1;

struct TrainerRngState {
    uint64_t seed = 0;  // all training streams derive from (seed, tag, counter)
};

struct Checkpoint {
    ModelConfig config;
    int64_t iteration = 0;
    TrainerRngState rng;
    Model model;
    SgdState optimizer;
};

void save_checkpoint(const Model& model, const SgdState& optimizer, int64_t iteration,
                     const TrainerRngState& rng, const std::string& path);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace camds
