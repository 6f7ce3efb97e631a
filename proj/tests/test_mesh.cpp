#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "lrm/mesh.hpp"
#include "lrm/params.hpp"
#include "lrm/rng.hpp"

using namespace lrm;

namespace {

struct FieldFixture {
  ParamStore store;
  FieldConfig cfg;
  Triplane<float> tri;

  FieldFixture() {
    cfg.d_t = 4;
    cfg.layers = 2;
    cfg.hidden = 8;
    Rng rng(3);
    NerfMlp<float>::define_params(store, cfg, rng);
    Rng rp(5);
    auto plane = [&] {
      std::vector<float> v(6 * 6 * 4);
      for (auto& x : v) x = static_cast<float>(rp.uniform(-1, 1));
      return Tensor<float>::from_data({6, 6, 4}, std::move(v));
    };
    tri.xy = plane();
    tri.yz = plane();
    tri.xz = plane();
  }

  NerfMlp<float> nerf() { return NerfMlp<float>::bind(bind_params<float>(store), cfg); }
};

DensityGrid sphere_grid(int res, double radius, float inside) {
  DensityGrid grid;
  grid.resolution = res;
  grid.values.assign(static_cast<size_t>(res) * res * res, 0.f);
  for (int z = 0; z < res; ++z)
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x) {
        double px = -1.0 + 2.0 * x / (res - 1);
        double py = -1.0 + 2.0 * y / (res - 1);
        double pz = -1.0 + 2.0 * z / (res - 1);
        if (px * px + py * py + pz * pz < radius * radius) grid.at(x, y, z) = inside;
      }
  return grid;
}

std::string temp_file(const char* name) {
  auto d = std::filesystem::temp_directory_path() / "lrm_mesh_tests";
  std::filesystem::create_directories(d);
  return (d / name).string();
}

}  // namespace

TEST_CASE("default iso follows the half-opacity rule") {
  CHECK(default_iso(64) == doctest::Approx(std::log(2.0) * 63 / 2).epsilon(1e-12));
}

TEST_CASE("density grid matches direct field queries") {
  FieldFixture fx;
  auto nerf = fx.nerf();
  const int res = 9;
  auto grid = sample_density_grid(fx.tri, nerf, res);
  CHECK(grid.resolution == res);

  auto direct = [&](double x, double y, double z) {
    auto pts = Tensor<float>::from_data(
        {1, 3}, {static_cast<float>(x), static_cast<float>(y), static_cast<float>(z)});
    return nerf(query_points(fx.tri, pts)).sigma.value()[0];
  };

  // Corners are exactly +-1.
  CHECK(std::abs(grid.at(0, 0, 0) - direct(-1, -1, -1)) < 1e-6f);
  CHECK(std::abs(grid.at(res - 1, res - 1, res - 1) - direct(1, 1, 1)) < 1e-6f);
  CHECK(std::abs(grid.at(res - 1, 0, 0) - direct(1, -1, -1)) < 1e-6f);

  Rng rng(7);
  for (int i = 0; i < 10; ++i) {
    int x = static_cast<int>(rng.uniform_int(0, res - 1));
    int y = static_cast<int>(rng.uniform_int(0, res - 1));
    int z = static_cast<int>(rng.uniform_int(0, res - 1));
    double px = -1.0 + 2.0 * x / (res - 1);
    double py = -1.0 + 2.0 * y / (res - 1);
    double pz = -1.0 + 2.0 * z / (res - 1);
    CHECK(std::abs(grid.at(x, y, z) - direct(px, py, pz)) < 1e-6f);
  }
}

TEST_CASE("constant field produces a constant grid") {
  FieldFixture fx;
  const std::string last = "nerf_mlp.layers.1";
  for (float& v : fx.store.at(last + ".weight").value) v = 0.f;
  for (float& v : fx.store.at(last + ".bias").value) v = 0.f;
  auto grid = sample_density_grid(fx.tri, fx.nerf(), 5);
  for (float v : grid.values) CHECK(v == doctest::Approx(std::log(2.f)).epsilon(1e-6));
}

TEST_CASE("uniform grids yield no triangles") {
  DensityGrid low;
  low.resolution = 8;
  low.values.assign(8 * 8 * 8, 0.1f);
  CHECK(marching_cubes(low, 0.5f).triangles.empty());

  DensityGrid high = low;
  for (auto& v : high.values) v = 2.f;
  CHECK(marching_cubes(high, 0.5f).triangles.empty());
}

TEST_CASE("iso must be positive") {
  DensityGrid grid;
  grid.resolution = 4;
  grid.values.assign(64, 1.f);
  CHECK_THROWS_AS((void)marching_cubes(grid, 0.f), Error);
}

TEST_CASE("sphere mesh places vertices on the surface and is watertight") {
  const int res = 64;
  const double r = 0.5;
  auto grid = sphere_grid(res, r, 50.f);
  auto mesh = marching_cubes(grid, static_cast<float>(default_iso(res)));
  REQUIRE(mesh.vertices.size() > 100);
  REQUIRE(mesh.triangles.size() > 100);

  const double voxel = 2.0 / (res - 1);
  for (const auto& v : mesh.vertices) {
    double rad = std::sqrt(static_cast<double>(v[0]) * v[0] + static_cast<double>(v[1]) * v[1] +
                           static_cast<double>(v[2]) * v[2]);
    CHECK(std::abs(rad - r) <= 2 * voxel);
  }

  // Closed 2-manifold: every undirected edge is shared by exactly two triangles.
  std::map<std::pair<int, int>, int> edge_count;
  for (const auto& t : mesh.triangles) {
    for (int e = 0; e < 3; ++e) {
      int a = t[static_cast<size_t>(e)], b = t[static_cast<size_t>((e + 1) % 3)];
      CHECK(a != b);
      edge_count[{std::min(a, b), std::max(a, b)}]++;
    }
  }
  for (const auto& [edge, count] : edge_count) CHECK(count == 2);

  // Triangle indices reference valid vertices.
  for (const auto& t : mesh.triangles)
    for (int i : t) {
      CHECK(i >= 0);
      CHECK(i < static_cast<int>(mesh.vertices.size()));
    }
}

TEST_CASE("marching cubes is deterministic") {
  auto grid = sphere_grid(16, 0.6, 10.f);
  auto a = marching_cubes(grid, static_cast<float>(default_iso(16)));
  auto b = marching_cubes(grid, static_cast<float>(default_iso(16)));
  REQUIRE(a.vertices.size() == b.vertices.size());
  REQUIRE(a.triangles.size() == b.triangles.size());
  for (size_t i = 0; i < a.vertices.size(); ++i) CHECK(a.vertices[i] == b.vertices[i]);
  for (size_t i = 0; i < a.triangles.size(); ++i) CHECK(a.triangles[i] == b.triangles[i]);
}

TEST_CASE("color_vertices samples the rgb head") {
  FieldFixture fx;
  auto grid = sphere_grid(12, 0.55, 30.f);
  auto mesh = marching_cubes(grid, static_cast<float>(default_iso(12)));
  REQUIRE(!mesh.vertices.empty());
  color_vertices(mesh, fx.tri, fx.nerf());
  REQUIRE(mesh.vertex_colors.size() == mesh.vertices.size());
  for (const auto& c : mesh.vertex_colors)
    for (float v : c) {
      CHECK(v >= 0.f);
      CHECK(v <= 1.f);
    }
}

TEST_CASE("obj writer round trips") {
  TriangleMesh empty;
  auto p0 = temp_file("empty.obj");
  write_obj(empty, p0);
  {
    std::ifstream f(p0);
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      CHECK(line[0] == '#');  // header only
    }
  }

  TriangleMesh tri;
  tri.vertices = {{0.f, 0.f, 0.f}, {1.f, 0.f, 0.f}, {0.f, 1.f, 0.f}};
  tri.triangles = {{0, 1, 2}};
  tri.vertex_colors = {{1.f, 0.f, 0.f}, {0.f, 1.f, 0.f}, {0.f, 0.f, 1.f}};
  auto p1 = temp_file("tri.obj");
  write_obj(tri, p1);

  std::ifstream f(p1);
  std::string line;
  int n_v = 0, n_f = 0;
  std::vector<std::array<double, 3>> verts;
  std::vector<std::array<int, 3>> faces;
  while (std::getline(f, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      std::array<double, 3> v{};
      ss >> v[0] >> v[1] >> v[2];
      verts.push_back(v);
      ++n_v;
    } else if (tag == "f") {
      std::array<int, 3> idx{};
      ss >> idx[0] >> idx[1] >> idx[2];
      faces.push_back(idx);
      ++n_f;
    }
  }
  CHECK(n_v == 3);
  CHECK(n_f == 1);
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 3; ++c)
      CHECK(verts[static_cast<size_t>(i)][static_cast<size_t>(c)] ==
            doctest::Approx(tri.vertices[static_cast<size_t>(i)][static_cast<size_t>(c)]).epsilon(1e-6));
  // OBJ face indices are 1-based.
  CHECK(faces[0][0] == 1);
  CHECK(faces[0][1] == 2);
  CHECK(faces[0][2] == 3);
}

TEST_CASE("obj writer mirrors a marched sphere faithfully") {
  auto grid = sphere_grid(10, 0.6, 20.f);
  auto mesh = marching_cubes(grid, static_cast<float>(default_iso(10)));
  auto p = temp_file("sphere.obj");
  write_obj(mesh, p);
  std::ifstream f(p);
  std::string line;
  size_t n_v = 0, n_f = 0;
  while (std::getline(f, line)) {
    if (line.rfind("v ", 0) == 0) ++n_v;
    if (line.rfind("f ", 0) == 0) ++n_f;
  }
  CHECK(n_v == mesh.vertices.size());
  CHECK(n_f == mesh.triangles.size());
}
