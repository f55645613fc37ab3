#pragma once

// Finite-difference checks of the three training losses on a small random
// model: re-ranker cross-entropy, dual-encoder softmax, and the dual-encoder
// softmax over early-fused N-best documents.

#include <string>

#include "scr/encoder.hpp"

namespace scr {

// path is "rerank", "dr" or "fusion". With dropout on, every loss evaluation
// reuses one dropout seed, so the masks match across perturbations.
GradCheckReport check_training_gradients(const std::string& path, double tolerance, std::uint64_t seed = 1,
                                         bool dropout = false, std::size_t min_coordinates = 200);

}  // namespace scr
