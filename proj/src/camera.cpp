#include "lrm/camera.hpp"

#include <algorithm>

namespace lrm {

CameraExtrinsic CameraExtrinsic::look_at(const Vec3& pos, const Vec3& target) {
  const Vec3 f = (target - pos).normalized();
  const Vec3 world_up{0, 0, 1};
  const Vec3 r_raw = f.cross(world_up);
  LRM_REQUIRE(r_raw.norm() > 1e-8, "degenerate look direction parallel to up-axis");
  const Vec3 r = r_raw.normalized();
  const Vec3 u = r.cross(f);
  CameraExtrinsic e;
  e.m = {r.x, f.x, u.x, pos.x,
         r.y, f.y, u.y, pos.y,
         r.z, f.z, u.z, pos.z,
         0,   0,   0,   1};
  return e;
}

Vec3 CameraExtrinsic::to_world(const Vec3& p) const {
  return {m[0] * p.x + m[1] * p.y + m[2] * p.z + m[3],
          m[4] * p.x + m[5] * p.y + m[6] * p.z + m[7],
          m[8] * p.x + m[9] * p.y + m[10] * p.z + m[11]};
}

Vec3 CameraExtrinsic::to_camera(const Vec3& p) const {
  const Vec3 d{p.x - m[3], p.y - m[7], p.z - m[11]};
  // R^T d
  return {m[0] * d.x + m[4] * d.y + m[8] * d.z,
          m[1] * d.x + m[5] * d.y + m[9] * d.z,
          m[2] * d.x + m[6] * d.y + m[10] * d.z};
}

void CameraExtrinsic::validate() const {
  LRM_REQUIRE(m[12] == 0 && m[13] == 0 && m[14] == 0 && m[15] == 1,
              "extrinsic bottom row must be exactly [0,0,0,1]");
  const Vec3 c0 = right(), c1 = forward(), c2 = up();
  const double tol = 1e-5;
  LRM_REQUIRE(std::abs(c0.norm() - 1) < tol && std::abs(c1.norm() - 1) < tol &&
                  std::abs(c2.norm() - 1) < tol,
              "extrinsic rotation columns must be unit length");
  LRM_REQUIRE(std::abs(c0.dot(c1)) < tol && std::abs(c0.dot(c2)) < tol &&
                  std::abs(c1.dot(c2)) < tol,
              "extrinsic rotation columns must be orthogonal");
  const double det = c0.dot(c1.cross(c2));
  LRM_REQUIRE(std::abs(det - 1) < tol, "extrinsic rotation must have determinant +1, got ", det);
}

void CameraIntrinsic::validate() const {
  for (double v : {foc_x, foc_y, pp_x, pp_y})
    LRM_REQUIRE(v > 0 && v < 10,
                "intrinsics must be normalized into (0,10); got value ", v,
                " (divide pixel units by image width/height first)");
}

Vec3 SimilarityTransform::apply_point(const Vec3& p) const {
  return {m[0] * p.x + m[1] * p.y + m[2] * p.z + m[3],
          m[4] * p.x + m[5] * p.y + m[6] * p.z + m[7],
          m[8] * p.x + m[9] * p.y + m[10] * p.z + m[11]};
}

Vec3 SimilarityTransform::apply_direction(const Vec3& d) const {
  const double inv = 1.0 / scale;
  return {(m[0] * d.x + m[1] * d.y + m[2] * d.z) * inv,
          (m[4] * d.x + m[5] * d.y + m[6] * d.z) * inv,
          (m[8] * d.x + m[9] * d.y + m[10] * d.z) * inv};
}

CameraExtrinsic SimilarityTransform::apply_camera(const CameraExtrinsic& e) const {
  // Rotation composes unscaled; the position rides the full similarity.
  CameraExtrinsic out;
  const double inv = 1.0 / scale;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      double acc = 0;
      for (int k = 0; k < 3; ++k) acc += m[r * 4 + k] * inv * e.m[k * 4 + c];
      out.m[r * 4 + c] = acc;
    }
  const Vec3 p = apply_point(e.position());
  out.m[3] = p.x;
  out.m[7] = p.y;
  out.m[11] = p.z;
  out.m[12] = out.m[13] = out.m[14] = 0;
  out.m[15] = 1;
  return out;
}

SimilarityTransform SimilarityTransform::inverse() const {
  // (sR | t)^-1 = (R^T/s | -R^T t / s)
  SimilarityTransform out;
  out.scale = 1.0 / scale;
  const double s2 = scale * scale;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out.m[r * 4 + c] = m[c * 4 + r] / s2;
  const Vec3 t{m[3], m[7], m[11]};
  out.m[3] = -(out.m[0] * t.x + out.m[1] * t.y + out.m[2] * t.z);
  out.m[7] = -(out.m[4] * t.x + out.m[5] * t.y + out.m[6] * t.z);
  out.m[11] = -(out.m[8] * t.x + out.m[9] * t.y + out.m[10] * t.z);
  out.m[12] = out.m[13] = out.m[14] = 0;
  out.m[15] = 1;
  return out;
}

bool SimilarityTransform::is_identity(double tol) const {
  for (int i = 0; i < 16; ++i) {
    const double want = (i % 5 == 0) ? 1.0 : 0.0;
    if (std::abs(m[i] - want) > tol) return false;
  }
  return std::abs(scale - 1.0) <= tol;
}

std::pair<CameraExtrinsic, SimilarityTransform> normalize_camera(const CameraExtrinsic& e,
                                                                 NormalizeMode mode) {
  e.validate();
  const Vec3 p = e.position();
  const double dis = p.norm();
  LRM_REQUIRE(dis > 1e-6, "normalize_camera: camera is at the world origin");
  const double s = (mode == NormalizeMode::synthetic) ? 2.0 / dis : 1.0;
  const double target_dist = (mode == NormalizeMode::synthetic) ? 2.0 : dis;
  const CameraExtrinsic hat = CameraExtrinsic::look_at({0, -target_dist, 0}, {0, 0, 0});

  // M = hat * diag(s,s,s,1) * E^-1 maps world so that camera-space coordinates
  // under (hat, M world) equal s times those under (E, world).
  SimilarityTransform out;
  out.scale = s;
  // rotation part: R_hat * R_e^T (hat is identity rotation by construction,
  // but compose anyway for clarity)
  double rot[9];
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      double acc = 0;
      for (int k = 0; k < 3; ++k) acc += hat.m[r * 4 + k] * e.m[c * 4 + k];  // R_hat * R_e^T
      rot[r * 3 + c] = acc;
    }
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out.m[r * 4 + c] = s * rot[r * 3 + c];
  // t = p_hat - s * R_M * p_e
  const Vec3 ph = hat.position();
  out.m[3] = ph.x - (out.m[0] * p.x + out.m[1] * p.y + out.m[2] * p.z);
  out.m[7] = ph.y - (out.m[4] * p.x + out.m[5] * p.y + out.m[6] * p.z);
  out.m[11] = ph.z - (out.m[8] * p.x + out.m[9] * p.y + out.m[10] * p.z);
  return {hat, out};
}

std::array<float, 20> build_camera_feature(const CameraExtrinsic& e, const CameraIntrinsic& k) {
  std::array<float, 20> c{};
  for (int i = 0; i < 16; ++i) c[static_cast<size_t>(i)] = static_cast<float>(e.m[i]);
  c[16] = static_cast<float>(k.foc_x);
  c[17] = static_cast<float>(k.foc_y);
  c[18] = static_cast<float>(k.pp_x);
  c[19] = static_cast<float>(k.pp_y);
  return c;
}

bool intersect_unit_box(const Vec3& origin, const Vec3& dir, double& t0, double& t1) {
  double tn = 0.0;  // rays start outside or inside; never march behind the origin
  double tf = std::numeric_limits<double>::infinity();
  const double o[3] = {origin.x, origin.y, origin.z};
  const double d[3] = {dir.x, dir.y, dir.z};
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) < 1e-12) {
      if (o[i] < -1.0 || o[i] > 1.0) return false;
      continue;
    }
    double a = (-1.0 - o[i]) / d[i];
    double b = (1.0 - o[i]) / d[i];
    if (a > b) std::swap(a, b);
    tn = std::max(tn, a);
    tf = std::min(tf, b);
  }
  if (tf <= tn) return false;
  t0 = tn;
  t1 = tf;
  return true;
}

RayBatch generate_rays(const CameraExtrinsic& e, const CameraIntrinsic& k, int width, int height) {
  LRM_REQUIRE(width >= 1 && height >= 1, "generate_rays: image must be at least 1x1");
  e.validate();
  k.validate();
  RayBatch batch;
  batch.width = width;
  batch.height = height;
  batch.rays.resize(static_cast<size_t>(width) * height);
  const Vec3 o = e.position();
  for (int py = 0; py < height; ++py)
    for (int px = 0; px < width; ++px) {
      const double u = (px + 0.5) / width;
      const double v = (py + 0.5) / height;
      // pixel rows run top-to-bottom while camera +z is up
      const Vec3 d_cam{(u - k.pp_x) / k.foc_x, 1.0, -(v - k.pp_y) / k.foc_y};
      const Vec3 d = (e.right() * d_cam.x + e.forward() * d_cam.y + e.up() * d_cam.z).normalized();
      Ray& ray = batch.rays[static_cast<size_t>(py) * width + px];
      ray.origin = o;
      ray.dir = d;
      ray.hit = intersect_unit_box(o, d, ray.t_near, ray.t_far);
      if (!ray.hit) {
        ray.t_near = 0;
        ray.t_far = 0;
      }
    }
  return batch;
}

CameraExtrinsic sample_training_pose(Rng& rng) {
  const double r = rng.uniform(1.5, 3.0);
  const double z = rng.uniform(-0.75, std::min(1.60, 0.99 * r));
  const double phi = rng.uniform(0.0, 2.0 * M_PI);
  const double rho = std::sqrt(r * r - z * z);
  return CameraExtrinsic::look_at({rho * std::cos(phi), rho * std::sin(phi), z}, {0, 0, 0});
}

}  // namespace lrm
