#pragma once

#include <string>

#include "json.hpp"
#include "lrm/params.hpp"

namespace lrm {

// Checkpoint layout: <dir>/manifest.json + <dir>/params.bin.
// The manifest maps tensor names to {shape, dtype:"f32", offset, length} (bytes
// into the blob, little-endian). Optimizer moments are stored as ordinary
// tensors named "optim.m.<param>" / "optim.v.<param>". Free-form metadata
// (step counter, rng state) lives under the manifest's "extra" key.
// Round-trips are byte-exact: raw f32 bits are copied, never reformatted.

void save_checkpoint(const std::string& dir, const ParamStore& store,
                     const nlohmann::json& extra);

// Loads values (and moments when present) into an already-defined store;
// every store parameter must appear in the manifest with a matching shape.
// Returns the manifest's "extra" object.
nlohmann::json load_checkpoint(const std::string& dir, ParamStore& store);

// Reads only the manifest's "extra" object (model/train config, step, rng),
// used to rebuild the parameter definitions before loading tensors.
nlohmann::json read_checkpoint_extra(const std::string& dir);

}  // namespace lrm
