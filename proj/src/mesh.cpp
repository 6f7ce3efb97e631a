#include "lrm/mesh.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <unordered_map>

namespace lrm {

namespace {

constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdge[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                              {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
constexpr int kFace[6][4] = {{0, 1, 2, 3}, {4, 5, 6, 7}, {0, 1, 5, 4},
                             {1, 2, 6, 5}, {2, 3, 7, 6}, {3, 0, 4, 7}};

int edge_between(int a, int b) {
  for (int e = 0; e < 12; ++e)
    if ((kEdge[e][0] == a && kEdge[e][1] == b) || (kEdge[e][0] == b && kEdge[e][1] == a)) return e;
  return -1;
}

struct V3 {
  double x, y, z;
  V3 operator-(const V3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  V3 operator+(const V3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  V3 cross(const V3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double dot(const V3& o) const { return x * o.x + y * o.y + z * o.z; }
};

// Triangle lists per inside-mask, entries are cube edge indices.
using CaseTable = std::array<std::vector<std::array<int, 3>>, 256>;

CaseTable build_case_table() {
  CaseTable table;
  for (int mask = 0; mask < 256; ++mask) {
    bool inside[8];
    for (int c = 0; c < 8; ++c) inside[c] = (mask >> c) & 1;

    // Chord partner of each cut edge on each of its faces.
    std::map<std::pair<int, int>, int> partner;  // (face, edge) -> edge
    for (int f = 0; f < 6; ++f) {
      const int* fc = kFace[f];
      const int fe[4] = {edge_between(fc[0], fc[1]), edge_between(fc[1], fc[2]),
                         edge_between(fc[2], fc[3]), edge_between(fc[3], fc[0])};
      std::vector<int> cut;
      for (int i = 0; i < 4; ++i)
        if (inside[kEdge[fe[i]][0]] != inside[kEdge[fe[i]][1]]) cut.push_back(i);
      if (cut.empty()) continue;
      if (cut.size() == 2) {
        partner[{f, fe[cut[0]]}] = fe[cut[1]];
        partner[{f, fe[cut[1]]}] = fe[cut[0]];
      } else {
        // 4-cut face: corners alternate; join the chords at the two outside
        // corners so the inside corners stay separated. The rule depends only
        // on this face's corner signs, so the neighboring cell agrees.
        const int o = inside[fc[0]] ? 1 : 0;  // fc[o] is an outside corner
        partner[{f, fe[(o + 3) % 4]}] = fe[o];
        partner[{f, fe[o]}] = fe[(o + 3) % 4];
        partner[{f, fe[(o + 1) % 4]}] = fe[(o + 2) % 4];
        partner[{f, fe[(o + 2) % 4]}] = fe[(o + 1) % 4];
      }
    }

    // Faces of each cut edge, for alternating the walk.
    std::array<std::array<int, 2>, 12> edge_faces{};
    std::array<int, 12> n_faces{};
    for (int f = 0; f < 6; ++f) {
      const int* fc = kFace[f];
      for (int i = 0; i < 4; ++i) {
        const int e = edge_between(fc[i], fc[(i + 1) % 4]);
        edge_faces[static_cast<size_t>(e)][static_cast<size_t>(n_faces[static_cast<size_t>(e)]++)] = f;
      }
    }

    bool used[12] = {};
    for (int e0 = 0; e0 < 12; ++e0) {
      if (used[e0] || inside[kEdge[e0][0]] == inside[kEdge[e0][1]]) continue;
      // Walk the loop: chord across the current face, then switch faces.
      std::vector<int> loop;
      int e = e0, f = edge_faces[static_cast<size_t>(e0)][0];
      do {
        loop.push_back(e);
        used[e] = true;
        const int nxt = partner.at({f, e});
        f = (edge_faces[static_cast<size_t>(nxt)][0] == f) ? edge_faces[static_cast<size_t>(nxt)][1]
                                                           : edge_faces[static_cast<size_t>(nxt)][0];
        e = nxt;
      } while (e != e0);

      // Orient the loop so fan triangles wind CCW seen from outside: Newell
      // normal of the midpoint polygon must align with the inside->outside
      // direction summed over the loop's edges.
      std::vector<V3> mid;
      V3 hint{0, 0, 0};
      for (int le : loop) {
        const int* a = kCorner[kEdge[le][0]];
        const int* b = kCorner[kEdge[le][1]];
        mid.push_back({(a[0] + b[0]) * 0.5, (a[1] + b[1]) * 0.5, (a[2] + b[2]) * 0.5});
        const int* in_c = inside[kEdge[le][0]] ? a : b;
        const int* out_c = inside[kEdge[le][0]] ? b : a;
        hint = hint + V3{static_cast<double>(out_c[0] - in_c[0]),
                         static_cast<double>(out_c[1] - in_c[1]),
                         static_cast<double>(out_c[2] - in_c[2])};
      }
      V3 normal{0, 0, 0};
      for (size_t i = 0; i < mid.size(); ++i)
        normal = normal + mid[i].cross(mid[(i + 1) % mid.size()]);
      if (normal.dot(hint) < 0) std::reverse(loop.begin(), loop.end());

      for (size_t i = 1; i + 1 < loop.size(); ++i)
        table[static_cast<size_t>(mask)].push_back({loop[0], loop[i], loop[i + 1]});
    }
  }
  return table;
}

const CaseTable& case_table() {
  static const CaseTable table = build_case_table();
  return table;
}

double tri_area(const std::array<float, 3>& a, const std::array<float, 3>& b,
                const std::array<float, 3>& c) {
  const V3 u{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
  const V3 v{c[0] - a[0], c[1] - a[1], c[2] - a[2]};
  const V3 n = u.cross(v);
  return 0.5 * std::sqrt(n.dot(n));
}

// Batched sigma (and optional rgb) queries at arbitrary points.
void query_field(const Triplane<float>& tri, const NerfMlp<float>& nerf,
                 const std::vector<float>& pts, std::vector<float>* sigma,
                 std::vector<float>* rgb) {
  const int64_t n = static_cast<int64_t>(pts.size()) / 3;
  constexpr int64_t kBatch = 8192;
  if (sigma) sigma->reserve(static_cast<size_t>(n));
  if (rgb) rgb->reserve(static_cast<size_t>(n) * 3);
  for (int64_t b = 0; b < n; b += kBatch) {
    const int64_t m = std::min(kBatch, n - b);
    std::vector<float> chunk(pts.begin() + b * 3, pts.begin() + (b + m) * 3);
    const Tensor<float> p = Tensor<float>::from_data({m, 3}, std::move(chunk));
    const FieldSamples<float> fs = nerf(query_points(tri, p));
    if (sigma) sigma->insert(sigma->end(), fs.sigma.value().begin(), fs.sigma.value().end());
    if (rgb) rgb->insert(rgb->end(), fs.rgb.value().begin(), fs.rgb.value().end());
  }
}

}  // namespace

DensityGrid sample_density_grid(const Triplane<float>& tri, const NerfMlp<float>& nerf,
                                int resolution) {
  LRM_REQUIRE(resolution >= 2, "density grid resolution must be >= 2, got ", resolution);
  DensityGrid grid;
  grid.resolution = resolution;
  grid.values.resize(static_cast<size_t>(resolution) * resolution * resolution);
  const auto coord = [&](int i) { return -1.f + 2.f * static_cast<float>(i) / (resolution - 1); };
  // One z-slab per query batch.
  for (int z = 0; z < resolution; ++z) {
    std::vector<float> pts;
    pts.reserve(static_cast<size_t>(resolution) * resolution * 3);
    for (int y = 0; y < resolution; ++y)
      for (int x = 0; x < resolution; ++x) {
        pts.push_back(coord(x));
        pts.push_back(coord(y));
        pts.push_back(coord(z));
      }
    std::vector<float> sigma;
    query_field(tri, nerf, pts, &sigma, nullptr);
    std::copy(sigma.begin(), sigma.end(),
              grid.values.begin() + static_cast<size_t>(z) * resolution * resolution);
  }
  return grid;
}

TriangleMesh marching_cubes(const DensityGrid& grid, float iso) {
  LRM_REQUIRE(iso > 0, "iso threshold must be > 0, got ", iso);
  const int res = grid.resolution;
  LRM_REQUIRE(res >= 2, "marching cubes needs a grid of resolution >= 2");
  const CaseTable& table = case_table();
  TriangleMesh mesh;
  // Global lattice-edge key: lower corner plus axis; shared vertices weld.
  std::unordered_map<int64_t, int> edge_vertex;
  const auto coord = [&](int i) { return -1.f + 2.f * static_cast<float>(i) / (res - 1); };

  const auto vertex_on_edge = [&](int cx, int cy, int cz, int e) {
    const int* a = kCorner[kEdge[e][0]];
    const int* b = kCorner[kEdge[e][1]];
    int lo[3] = {cx + std::min(a[0], b[0]), cy + std::min(a[1], b[1]), cz + std::min(a[2], b[2])};
    const int axis = (a[0] != b[0]) ? 0 : (a[1] != b[1]) ? 1 : 2;
    const int64_t key =
        ((static_cast<int64_t>(lo[2]) * res + lo[1]) * res + lo[0]) * 3 + axis;
    const auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    int hi[3] = {lo[0], lo[1], lo[2]};
    hi[axis] += 1;
    const float v0 = grid.at(lo[0], lo[1], lo[2]);
    const float v1 = grid.at(hi[0], hi[1], hi[2]);
    float t = (iso - v0) / (v1 - v0);
    t = std::clamp(t, 0.f, 1.f);
    std::array<float, 3> pos = {coord(lo[0]), coord(lo[1]), coord(lo[2])};
    pos[static_cast<size_t>(axis)] += t * 2.f / (res - 1);
    const int idx = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back(pos);
    edge_vertex.emplace(key, idx);
    return idx;
  };

  for (int cz = 0; cz + 1 < res; ++cz)
    for (int cy = 0; cy + 1 < res; ++cy)
      for (int cx = 0; cx + 1 < res; ++cx) {
        int mask = 0;
        for (int c = 0; c < 8; ++c)
          if (grid.at(cx + kCorner[c][0], cy + kCorner[c][1], cz + kCorner[c][2]) > iso)
            mask |= 1 << c;
        for (const std::array<int, 3>& t : table[static_cast<size_t>(mask)]) {
          const int i0 = vertex_on_edge(cx, cy, cz, t[0]);
          const int i1 = vertex_on_edge(cx, cy, cz, t[1]);
          const int i2 = vertex_on_edge(cx, cy, cz, t[2]);
          if (tri_area(mesh.vertices[static_cast<size_t>(i0)],
                       mesh.vertices[static_cast<size_t>(i1)],
                       mesh.vertices[static_cast<size_t>(i2)]) < 1e-12)
            continue;
          mesh.triangles.push_back({i0, i1, i2});
        }
      }
  return mesh;
}

void color_vertices(TriangleMesh& mesh, const Triplane<float>& tri, const NerfMlp<float>& nerf) {
  std::vector<float> pts;
  pts.reserve(mesh.vertices.size() * 3);
  for (const auto& v : mesh.vertices) {
    pts.push_back(v[0]);
    pts.push_back(v[1]);
    pts.push_back(v[2]);
  }
  mesh.vertex_colors.clear();
  if (pts.empty()) return;
  std::vector<float> rgb;
  query_field(tri, nerf, pts, nullptr, &rgb);
  for (size_t i = 0; i < mesh.vertices.size(); ++i)
    mesh.vertex_colors.push_back({rgb[i * 3], rgb[i * 3 + 1], rgb[i * 3 + 2]});
}

void write_obj(const TriangleMesh& mesh, const std::string& path) {
  LRM_REQUIRE(mesh.vertex_colors.empty() || mesh.vertex_colors.size() == mesh.vertices.size(),
              "vertex color count mismatch");
  FILE* fp = std::fopen(path.c_str(), "wb");
  LRM_REQUIRE(fp, "cannot open OBJ '", path, "' for writing");
  std::fprintf(fp, "# lrm mesh: %zu vertices, %zu triangles\n", mesh.vertices.size(),
               mesh.triangles.size());
  for (size_t i = 0; i < mesh.vertices.size(); ++i) {
    const auto& v = mesh.vertices[i];
    if (mesh.vertex_colors.empty()) {
      std::fprintf(fp, "v %.6f %.6f %.6f\n", v[0], v[1], v[2]);
    } else {
      const auto& c = mesh.vertex_colors[i];
      std::fprintf(fp, "v %.6f %.6f %.6f %.4f %.4f %.4f\n", v[0], v[1], v[2], c[0], c[1], c[2]);
    }
  }
  for (const auto& t : mesh.triangles)
    std::fprintf(fp, "f %d %d %d\n", t[0] + 1, t[1] + 1, t[2] + 1);
  const int rc = std::fclose(fp);
  LRM_REQUIRE(rc == 0, "failed to finish writing OBJ '", path, "'");
}

}  // namespace lrm
