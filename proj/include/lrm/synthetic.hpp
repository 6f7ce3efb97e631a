#pragma once

#include <array>
#include <string>
#include <vector>

#include "json.hpp"
#include "lrm/camera.hpp"
#include "lrm/image.hpp"
#include "lrm/rng.hpp"

namespace lrm {

// Procedural SDF scenes standing in for Objaverse at desk scale. Scenes are
// built so the union stays inside [-0.9,0.9]^3 with enough margin that every
// rendered view keeps a pure white border (circumradius <= 0.8 at the closest
// training camera with the default focal 0.7).

struct Primitive {
  enum class Kind { sphere, box, rounded_box, torus };
  Kind kind = Kind::sphere;
  Vec3 center;
  // sphere: p0=radius; box/rounded_box: (p0,p1,p2)=half extents, p3=corner
  // radius (rounded only); torus: p0=major radius, p1=minor radius.
  double p0 = 0, p1 = 0, p2 = 0, p3 = 0;
  std::array<float, 3> albedo{0.5f, 0.5f, 0.5f};
};

struct SceneSpec {
  std::vector<Primitive> primitives;
  uint64_t seed = 0;
};

// Signed distance of the min-union plus the albedo of the nearest primitive.
std::pair<double, std::array<float, 3>> sdf_eval(const SceneSpec& scene, const Vec3& p);

// 1-3 random primitives within the containment budget; deterministic in rng.
SceneSpec random_scene(Rng& rng);

// Sphere-traced Lambertian rendering under a camera-attached headlight
// (0.25 ambient + 0.75 diffuse), white background, deterministic.
ImageF render_view(const SceneSpec& scene, const CameraExtrinsic& e, const CameraIntrinsic& k,
                   int width, int height);

struct ViewRef {
  std::string image;  // path relative to the dataset dir
  CameraExtrinsic E;
  CameraIntrinsic K;
};

struct ShapeRef {
  std::string id;
  SceneSpec scene;
  std::vector<ViewRef> views;
};

struct DatasetManifest {
  std::string dir;
  int resolution = 0;
  std::vector<ShapeRef> shapes;
};

// Default intrinsics for all synthetic views.
inline CameraIntrinsic synthetic_intrinsics() { return CameraIntrinsic{0.7, 0.7, 0.5, 0.5}; }

DatasetManifest generate_dataset(int n_shapes, int views_per_shape, const std::string& out_dir,
                                 uint64_t seed, int resolution = 64);

DatasetManifest load_manifest(const std::string& dir);

// Reads a view's PNG and checks it against the declared resolution.
ImageF load_view_image(const DatasetManifest& manifest, const ViewRef& view);

nlohmann::json scene_to_json(const SceneSpec& scene);
SceneSpec scene_from_json(const nlohmann::json& j);

}  // namespace lrm
