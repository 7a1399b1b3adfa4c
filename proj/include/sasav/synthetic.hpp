#pragma once

#include <cstdint>

#include "sasav/volume.hpp"

namespace sasav::synthetic {

/// Distance from the grid center in voxels, as float32.
Volume sphere_distance(std::int64_t n);
/// Three concentric shells of distinct density with soft edges, plus a little
/// deterministic noise; reads as a scanned layered object.
Volume nested_shells(std::int64_t n);
/// Smooth anisotropic Gaussian with a weaker offset lobe; reads as simulation output.
Volume gaussian_blob(std::int64_t n);
/// Integer labels 0..3 in concentric regions.
Volume label_shells(std::int64_t n);

}  // namespace sasav::synthetic
