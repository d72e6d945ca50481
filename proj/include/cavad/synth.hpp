#pragma once

// Synthetic multi-scene sprite dataset: distinct static backgrounds per scene,
// sprites moving with scene-consistent velocity, and labeled anomaly intervals
// (speed jump, unseen sprite shape, reversed trajectory) in test videos.

#include <string>

#include "cavad/config.hpp"

namespace cavad {

// Writes the frame-folder layout under out_root. Bit-deterministic in
// (cfg, seed): same inputs give byte-identical trees.
void synth_generate(const SynthConfig& cfg, long seed, const std::string& out_root);

}  // namespace cavad
