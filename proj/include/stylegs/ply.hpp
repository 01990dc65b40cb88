#pragma once

#include <filesystem>

#include "stylegs/scene.hpp"

namespace stylegs {

/// Reads a binary little-endian 3DGS point cloud. The vertex element must carry
/// float properties x,y,z,nx,ny,nz,f_dc_0..2,f_rest_*,opacity,scale_0..2,
/// rot_0..3; the SH degree follows from the number of f_rest properties.
/// Other float properties are skipped. Throws ParseError on any violation.
template <typename Scalar>
GaussianScene<Scalar> load_ply(const std::filesystem::path& path);

/// Writes the same layout as float32. Round trip is bit-exact for float scenes.
template <typename Scalar>
void save_ply(const GaussianScene<Scalar>& scene, const std::filesystem::path& path);

}  // namespace stylegs
