#include "lrm/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace lrm {

namespace {

double primitive_sdf(const Primitive& prim, const Vec3& p) {
  const Vec3 q = p - prim.center;
  switch (prim.kind) {
    case Primitive::Kind::sphere:
      return q.norm() - prim.p0;
    case Primitive::Kind::box: {
      const Vec3 d{std::abs(q.x) - prim.p0, std::abs(q.y) - prim.p1, std::abs(q.z) - prim.p2};
      const Vec3 dpos{std::max(d.x, 0.0), std::max(d.y, 0.0), std::max(d.z, 0.0)};
      return dpos.norm() + std::min(std::max(d.x, std::max(d.y, d.z)), 0.0);
    }
    case Primitive::Kind::rounded_box: {
      const Vec3 d{std::abs(q.x) - (prim.p0 - prim.p3), std::abs(q.y) - (prim.p1 - prim.p3),
                   std::abs(q.z) - (prim.p2 - prim.p3)};
      const Vec3 dpos{std::max(d.x, 0.0), std::max(d.y, 0.0), std::max(d.z, 0.0)};
      return dpos.norm() + std::min(std::max(d.x, std::max(d.y, d.z)), 0.0) - prim.p3;
    }
    case Primitive::Kind::torus: {
      const double ring = std::sqrt(q.x * q.x + q.y * q.y) - prim.p0;
      return std::sqrt(ring * ring + q.z * q.z) - prim.p1;
    }
  }
  throw Error("unknown primitive kind");
}

std::array<float, 3> hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const double m = v - c;
  return {static_cast<float>(r + m), static_cast<float>(g + m), static_cast<float>(b + m)};
}

Vec3 sdf_normal(const SceneSpec& scene, const Vec3& p) {
  const double h = 1e-4;
  const double dx = sdf_eval(scene, {p.x + h, p.y, p.z}).first -
                    sdf_eval(scene, {p.x - h, p.y, p.z}).first;
  const double dy = sdf_eval(scene, {p.x, p.y + h, p.z}).first -
                    sdf_eval(scene, {p.x, p.y - h, p.z}).first;
  const double dz = sdf_eval(scene, {p.x, p.y, p.z + h}).first -
                    sdf_eval(scene, {p.x, p.y, p.z - h}).first;
  const Vec3 n{dx, dy, dz};
  const double len = n.norm();
  return len > 1e-12 ? Vec3{n.x / len, n.y / len, n.z / len} : Vec3{0, 0, 1};
}

}  // namespace

std::pair<double, std::array<float, 3>> sdf_eval(const SceneSpec& scene, const Vec3& p) {
  double best = std::numeric_limits<double>::infinity();
  std::array<float, 3> albedo{1.f, 1.f, 1.f};
  for (const auto& prim : scene.primitives) {
    const double d = primitive_sdf(prim, p);
    if (d < best) {
      best = d;
      albedo = prim.albedo;
    }
  }
  return {best, albedo};
}

SceneSpec random_scene(Rng& rng) {
  // Containment budget: |center| <= 0.45 and primitive circumradius <= 0.35,
  // so the union stays within radius 0.8 of the origin.
  SceneSpec scene;
  const int n = static_cast<int>(rng.uniform_int(1, 3));
  for (int i = 0; i < n; ++i) {
    Primitive prim;
    const double cr = rng.uniform(0.0, 0.45);
    const double az = rng.uniform(0.0, 2.0 * M_PI);
    const double cz = rng.uniform(-1.0, 1.0);
    const double cxy = std::sqrt(std::max(0.0, 1.0 - cz * cz));
    prim.center = {cr * cxy * std::cos(az), cr * cxy * std::sin(az), cr * cz};
    const int kind = static_cast<int>(rng.uniform_int(0, 3));
    switch (kind) {
      case 0:
        prim.kind = Primitive::Kind::sphere;
        prim.p0 = rng.uniform(0.15, 0.35);
        break;
      case 1:
        prim.kind = Primitive::Kind::box;
        prim.p0 = rng.uniform(0.08, 0.2);
        prim.p1 = rng.uniform(0.08, 0.2);
        prim.p2 = rng.uniform(0.08, 0.2);
        break;
      case 2:
        prim.kind = Primitive::Kind::rounded_box;
        prim.p0 = rng.uniform(0.1, 0.2);
        prim.p1 = rng.uniform(0.1, 0.2);
        prim.p2 = rng.uniform(0.1, 0.2);
        prim.p3 = rng.uniform(0.02, 0.08);
        break;
      default:
        prim.kind = Primitive::Kind::torus;
        prim.p0 = rng.uniform(0.15, 0.27);
        prim.p1 = rng.uniform(0.05, std::min(0.34 - prim.p0, 0.12));
        break;
    }
    // saturated mid-value albedos keep objects clearly distinct from the
    // white background (the white-baseline PSNR margin depends on this)
    prim.albedo = hsv_to_rgb(rng.uniform(0.0, 1.0), rng.uniform(0.5, 1.0),
                             rng.uniform(0.35, 0.85));
    scene.primitives.push_back(prim);
  }
  return scene;
}

ImageF render_view(const SceneSpec& scene, const CameraExtrinsic& e, const CameraIntrinsic& k,
                   int width, int height) {
  const RayBatch rays = generate_rays(e, k, width, height);
  ImageF img(3, height, width, 1.f);
  if (scene.primitives.empty()) return img;
  for (int py = 0; py < height; ++py)
    for (int px = 0; px < width; ++px) {
      const Ray& ray = rays.rays[static_cast<size_t>(py) * width + px];
      if (!ray.hit) continue;
      double t = ray.t_near;
      bool surface = false;
      for (int step = 0; step < 256 && t <= ray.t_far; ++step) {
        const Vec3 p = ray.origin + ray.dir * t;
        const double d = sdf_eval(scene, p).first;
        if (d < 1e-4) {
          surface = true;
          break;
        }
        t += d;
      }
      if (!surface) continue;
      const Vec3 p = ray.origin + ray.dir * t;
      const auto [dist, albedo] = sdf_eval(scene, p);
      (void)dist;
      const Vec3 n = sdf_normal(scene, p);
      const Vec3 to_light = ray.dir * -1.0;  // headlight at the camera
      const double shade = 0.25 + 0.75 * std::max(0.0, n.dot(to_light));
      for (int c = 0; c < 3; ++c)
        img.at(c, py, px) = static_cast<float>(albedo[static_cast<size_t>(c)] * shade);
    }
  return img;
}

nlohmann::json scene_to_json(const SceneSpec& scene) {
  nlohmann::json prims = nlohmann::json::array();
  static const char* kind_names[] = {"sphere", "box", "rounded_box", "torus"};
  for (const auto& p : scene.primitives) {
    prims.push_back({{"kind", kind_names[static_cast<int>(p.kind)]},
                     {"center", {p.center.x, p.center.y, p.center.z}},
                     {"params", {p.p0, p.p1, p.p2, p.p3}},
                     {"albedo", {p.albedo[0], p.albedo[1], p.albedo[2]}}});
  }
  return {{"primitives", std::move(prims)}, {"seed", scene.seed}};
}

SceneSpec scene_from_json(const nlohmann::json& j) {
  SceneSpec scene;
  scene.seed = j.value("seed", 0ULL);
  for (const auto& pj : j.at("primitives")) {
    Primitive p;
    const std::string kind = pj.at("kind").get<std::string>();
    if (kind == "sphere") p.kind = Primitive::Kind::sphere;
    else if (kind == "box") p.kind = Primitive::Kind::box;
    else if (kind == "rounded_box") p.kind = Primitive::Kind::rounded_box;
    else if (kind == "torus") p.kind = Primitive::Kind::torus;
    else throw Error(format_msg("unknown primitive kind '", kind, "' in scene"));
    const auto& c = pj.at("center");
    p.center = {c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>()};
    const auto& prm = pj.at("params");
    p.p0 = prm.at(0).get<double>();
    p.p1 = prm.at(1).get<double>();
    p.p2 = prm.at(2).get<double>();
    p.p3 = prm.at(3).get<double>();
    const auto& a = pj.at("albedo");
    p.albedo = {a.at(0).get<float>(), a.at(1).get<float>(), a.at(2).get<float>()};
    scene.primitives.push_back(p);
  }
  return scene;
}

DatasetManifest generate_dataset(int n_shapes, int views_per_shape, const std::string& out_dir,
                                 uint64_t seed, int resolution) {
  LRM_REQUIRE(n_shapes >= 1, "generate_dataset: need at least 1 shape");
  LRM_REQUIRE(views_per_shape >= 4, "generate_dataset: need at least 4 views per shape (V=4)");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  LRM_REQUIRE(!ec, "cannot create dataset directory '", out_dir, "': ", ec.message());

  DatasetManifest manifest;
  manifest.dir = out_dir;
  manifest.resolution = resolution;
  const CameraIntrinsic k = synthetic_intrinsics();
  for (int s = 0; s < n_shapes; ++s) {
    ShapeRef shape;
    char id[32];
    std::snprintf(id, sizeof(id), "shape_%03d", s);
    shape.id = id;
    Rng rng = Rng::derive(seed, static_cast<uint64_t>(s));
    shape.scene = random_scene(rng);
    shape.scene.seed = seed;
    const std::string shape_dir = out_dir + "/" + shape.id;
    fs::create_directories(shape_dir, ec);
    LRM_REQUIRE(!ec, "cannot create '", shape_dir, "': ", ec.message());
    for (int v = 0; v < views_per_shape; ++v) {
      ViewRef view;
      view.E = sample_training_pose(rng);
      view.K = k;
      char name[32];
      std::snprintf(name, sizeof(name), "view_%02d.png", v);
      view.image = shape.id + std::string("/") + name;
      const ImageF img = render_view(shape.scene, view.E, view.K, resolution, resolution);
      save_png(img, out_dir + "/" + view.image);
      shape.views.push_back(std::move(view));
    }
    manifest.shapes.push_back(std::move(shape));
  }

  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& shape : manifest.shapes) {
    nlohmann::json views = nlohmann::json::array();
    for (const auto& view : shape.views) {
      nlohmann::json e = nlohmann::json::array();
      for (double m : view.E.m) e.push_back(m);
      views.push_back({{"image", view.image},
                       {"E", std::move(e)},
                       {"intrinsics", {view.K.foc_x, view.K.foc_y, view.K.pp_x, view.K.pp_y}}});
    }
    shapes.push_back({{"id", shape.id},
                      {"scene", scene_to_json(shape.scene)},
                      {"views", std::move(views)}});
  }
  nlohmann::json meta = {{"resolution", resolution}, {"shapes", std::move(shapes)}};
  const std::string meta_path = out_dir + "/meta.json";
  std::ofstream out(meta_path, std::ios::trunc);
  LRM_REQUIRE(out.good(), "cannot open '", meta_path, "' for writing");
  out << meta.dump(2) << "\n";
  out.close();
  LRM_REQUIRE(out.good(), "write failure on '", meta_path, "'");
  return manifest;
}

DatasetManifest load_manifest(const std::string& dir) {
  const std::string meta_path = dir + "/meta.json";
  std::ifstream in(meta_path);
  LRM_REQUIRE(in.good(), "cannot open dataset manifest '", meta_path, "'");
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const std::exception& e) {
    throw Error(format_msg("malformed dataset manifest '", meta_path, "': ", e.what()));
  }
  DatasetManifest manifest;
  manifest.dir = dir;
  manifest.resolution = meta.at("resolution").get<int>();
  for (const auto& sj : meta.at("shapes")) {
    ShapeRef shape;
    shape.id = sj.at("id").get<std::string>();
    if (sj.contains("scene")) shape.scene = scene_from_json(sj["scene"]);
    for (const auto& vj : sj.at("views")) {
      ViewRef view;
      view.image = vj.at("image").get<std::string>();
      const auto& e = vj.at("E");
      LRM_REQUIRE(e.size() == 16, "view '", view.image, "': E must have 16 floats");
      for (int i = 0; i < 16; ++i) view.E.m[static_cast<size_t>(i)] = e.at(i).get<double>();
      view.E.validate();
      const auto& k = vj.at("intrinsics");
      LRM_REQUIRE(k.size() == 4, "view '", view.image, "': intrinsics must have 4 floats");
      view.K = CameraIntrinsic{k.at(0).get<double>(), k.at(1).get<double>(),
                               k.at(2).get<double>(), k.at(3).get<double>()};
      view.K.validate();
      shape.views.push_back(std::move(view));
    }
    LRM_REQUIRE(shape.views.size() >= 4, "shape '", shape.id,
                "': manifest requires at least 4 views, found ", shape.views.size());
    manifest.shapes.push_back(std::move(shape));
  }
  return manifest;
}

ImageF load_view_image(const DatasetManifest& manifest, const ViewRef& view) {
  ImageF img = load_png(manifest.dir + "/" + view.image);
  LRM_REQUIRE(img.height == manifest.resolution && img.width == manifest.resolution, "view '",
              view.image, "': image is ", img.height, "x", img.width,
              " but manifest declares resolution ", manifest.resolution);
  return img;
}

}  // namespace lrm
