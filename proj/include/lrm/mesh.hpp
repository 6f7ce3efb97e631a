#pragma once

#include <array>
#include <cmath>

#include "lrm/field.hpp"

namespace lrm {

// Density samples on a regular lattice over [-1,1]^3; corner coordinates are
// exactly +-1. Index order: x fastest, then y, then z.
struct DensityGrid {
  int resolution = 0;
  std::vector<float> values;

  float at(int x, int y, int z) const {
    return values[(static_cast<size_t>(z) * resolution + y) * resolution + x];
  }
  float& at(int x, int y, int z) {
    return values[(static_cast<size_t>(z) * resolution + y) * resolution + x];
  }
};

struct TriangleMesh {
  std::vector<std::array<float, 3>> vertices;
  std::vector<std::array<int, 3>> triangles;       // CCW seen from outside
  std::vector<std::array<float, 3>> vertex_colors; // empty or one per vertex
};

// Per-voxel opacity 0.5: iso * voxel_size = ln 2.
inline double default_iso(int resolution) {
  return std::log(2.0) * (resolution - 1) / 2.0;
}

DensityGrid sample_density_grid(const Triplane<float>& tri, const NerfMlp<float>& nerf,
                                int resolution);

// 256-case lookup marching cubes, linear edge interpolation, inside = v > iso.
// Tables are generated at startup from the cube topology with a fixed rule for
// 4-cut faces (pair the chords around outside corners), which keeps adjacent
// cells consistent. Vertices on shared lattice edges are welded.
TriangleMesh marching_cubes(const DensityGrid& grid, float iso);

// Colors vertices from the field's rgb head at the vertex positions.
void color_vertices(TriangleMesh& mesh, const Triplane<float>& tri, const NerfMlp<float>& nerf);

// `v x y z [r g b]` then 1-based `f` lines.
void write_obj(const TriangleMesh& mesh, const std::string& path);

}  // namespace lrm
