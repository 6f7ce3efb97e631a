#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "lrm/common.hpp"
#include "lrm/rng.hpp"

namespace lrm {

// Convention (fixed here, see README): world +z is up; in camera space +x is
// right, +y is the viewing direction, +z is up. The canonical normalized
// camera sits at [0,-2,0] with identity rotation, looking at the origin.

struct Vec3 {
  double x = 0, y = 0, z = 0;
  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double k) const { return {x * k, y * k, z * k}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const {
    const double n = norm();
    LRM_REQUIRE(n > 1e-12, "cannot normalize near-zero vector");
    return {x / n, y / n, z / n};
  }
};

// Row-major 4x4 camera-to-world transform with bottom row [0,0,0,1].
struct CameraExtrinsic {
  std::array<double, 16> m{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};

  // Rotation columns are the camera axes expressed in world coordinates:
  // col 0 = right, col 1 = forward (view direction), col 2 = up.
  static CameraExtrinsic look_at(const Vec3& pos, const Vec3& target);

  Vec3 position() const { return {m[3], m[7], m[11]}; }
  Vec3 right() const { return {m[0], m[4], m[8]}; }
  Vec3 forward() const { return {m[1], m[5], m[9]}; }
  Vec3 up() const { return {m[2], m[6], m[10]}; }

  Vec3 to_world(const Vec3& pc) const;   // camera -> world point
  Vec3 to_camera(const Vec3& pw) const;  // world -> camera point (rigid inverse)

  // Throws unless the rotation is orthonormal with det +1 (tol 1e-5) and the
  // bottom row is exactly [0,0,0,1].
  void validate() const;
};

struct CameraIntrinsic {
  // Focal lengths / principal point normalized by image width and height.
  double foc_x = 1, foc_y = 1, pp_x = 0.5, pp_y = 0.5;
  void validate() const;
};

// p' = scale * R * p + t, stored as a row-major 4x4 plus the scalar scale.
struct SimilarityTransform {
  std::array<double, 16> m{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
  double scale = 1.0;

  Vec3 apply_point(const Vec3& p) const;
  Vec3 apply_direction(const Vec3& d) const;  // rotation only, no scale
  CameraExtrinsic apply_camera(const CameraExtrinsic& e) const;
  SimilarityTransform inverse() const;
  bool is_identity(double tol) const;
};

enum class NormalizeMode { synthetic, video };

// Moves the camera to the canonical pose ([0,-2,0] synthetic, [0,-dis,0]
// video) and returns the world similarity transform that side-view cameras
// and scene geometry must be carried through.
std::pair<CameraExtrinsic, SimilarityTransform> normalize_camera(const CameraExtrinsic& e,
                                                                 NormalizeMode mode);

// c = [E row-major (16), foc_x, foc_y, pp_x, pp_y].
std::array<float, 20> build_camera_feature(const CameraExtrinsic& e, const CameraIntrinsic& k);

struct Ray {
  Vec3 origin;
  Vec3 dir;  // unit
  double t_near = 0, t_far = 0;
  bool hit = false;  // false: ray misses the [-1,1]^3 box (empty interval)
};

struct RayBatch {
  int width = 0, height = 0;
  std::vector<Ray> rays;  // row-major, index = py*width + px
};

// Ray/AABB slab test against [-1,1]^3; t_near clamped to >= 0.
bool intersect_unit_box(const Vec3& origin, const Vec3& dir, double& t0, double& t1);

// One ray per pixel center (offset 0.5), row-major.
RayBatch generate_rays(const CameraExtrinsic& e, const CameraIntrinsic& k, int width, int height);

// Radius uniform in [1.5, 3.0], height z uniform in [-0.75, min(1.60, 0.99 r)],
// azimuth uniform, look-at origin.
CameraExtrinsic sample_training_pose(Rng& rng);

}  // namespace lrm
