#pragma once

#include <string>

#include "l2f/meta.hpp"

namespace l2f {

/// Textual key-value checkpoint. Tensor payloads are written as hexfloats
/// (row-major), so a save/load round trip is bit-exact. Keys follow
/// "layer.J.weight" / "layer.J.bias" / "attenuator.J.weight" / ... /
/// "learned_gamma".
void save_checkpoint(const std::string& path, const MetaState& state);

MetaState load_checkpoint(const std::string& path);

}  // namespace l2f
