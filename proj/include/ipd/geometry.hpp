#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ipd/error.hpp"
#include "ipd/rng.hpp"

namespace ipd {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3() = default;
  Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }

  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double squared_norm() const { return x * x + y * y + z * z; }
  double norm() const { return std::sqrt(squared_norm()); }
  Vec3 normalized() const {
    const double n = norm();
    return {x / n, y / n, z / n};
  }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

/// Unit quaternion rotation.
struct Quat {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  Vec3 rotate(const Vec3& v) const {
    // v' = v + 2 q_vec x (q_vec x v + w v)
    const Vec3 q{x, y, z};
    const Vec3 t = q.cross(v) * 2.0;
    return v + t * w + q.cross(t);
  }
  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
};

/// Ordered set of 3D points, optionally carrying unit normals.
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;  // empty, or same length as points

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_normals() const { return !normals.empty(); }
};

enum class ShapeFamily { sphere, box, cylinder, torus, superellipsoid };

const char* family_name(ShapeFamily f);
ShapeFamily family_from_name(const std::string& name);  // throws ConfigError

/// Analytic shape description. `params` is family-specific:
///   sphere:         {radius}
///   box:            {hx, hy, hz}          (half extents)
///   cylinder:       {radius, half_height} (closed, axis = z)
///   torus:          {major_radius, minor_radius}, minor < major
///   superellipsoid: {a, b, c, e1, e2}, exponents in [0.3, 4.0]
struct ShapeSpec {
  ShapeFamily family = ShapeFamily::sphere;
  std::vector<double> params;
  Quat rotation;
  Vec3 scale{1.0, 1.0, 1.0};

  static ShapeSpec sphere(double radius);
  static ShapeSpec box(double hx, double hy, double hz);
  static ShapeSpec cylinder(double radius, double half_height);
  static ShapeSpec torus(double major_radius, double minor_radius);
  static ShapeSpec superellipsoid(double a, double b, double c, double e1,
                                  double e2);

  /// Throws ParamError on out-of-range parameters.
  void validate() const;
};

/// Zero-mean / unit-variance mapping derived from one cloud.
/// normalized = (p - centroid) * scale; scale is the reciprocal of the
/// pooled per-coordinate standard deviation.
struct NormTransform {
  Vec3 centroid{0, 0, 0};
  double scale = 1.0;

  Vec3 to_normalized(const Vec3& p) const { return (p - centroid) * scale; }
  Vec3 to_world(const Vec3& p) const { return p / scale + centroid; }
  PointCloud to_normalized(const PointCloud& c) const;
  PointCloud to_world(const PointCloud& c) const;
};

/// Immutable exact nearest-neighbour index (k-d tree, median splits,
/// leaf size 16). Query distances match brute force bit for bit: every
/// candidate distance is computed with the same expression brute force
/// uses, and the true nearest is never pruned.
class NnIndex {
 public:
  struct Hit {
    std::size_t index;
    double distance;
  };

  explicit NnIndex(const PointCloud& cloud);

  Hit nearest(const Vec3& query) const;
  double nearest_distance(const Vec3& query) const {
    return nearest(query).distance;
  }
  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    double split = 0.0;
    int axis = -1;          // -1 marks a leaf
    std::uint32_t left = 0;  // child node index, or [begin,end) into order_
    std::uint32_t right = 0;
  };

  std::uint32_t build(std::uint32_t begin, std::uint32_t end);
  void search(std::uint32_t node, const Vec3& q, double& best_sq,
              std::size_t& best_idx) const;

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
  std::uint32_t root_ = 0;
};

/// Samples `n` points approximately uniformly by surface area from the
/// analytic surface, with outward unit normals. Deterministic in `seed`.
PointCloud sample_shape(const ShapeSpec& spec, std::size_t n,
                        std::uint64_t seed);

/// Keeps the points facing a camera that looks along `view_dir`
/// (normal . -view_dir > 0). Throws DegenerateViewError when empty.
PointCloud partial_view(const PointCloud& cloud, const Vec3& view_dir);

/// Centers the cloud and rescales it to pooled unit variance.
/// Throws DegenerateCloudError when the points have no spread.
std::pair<PointCloud, NormTransform> normalize(const PointCloud& cloud);

NnIndex build_index(const PointCloud& cloud);

/// Per-query min(nearest-neighbour distance, clamp), in query order.
std::vector<double> udf_targets(const PointCloud& queries, const NnIndex& index,
                                double clamp);

/// Uniformly random unit vector.
Vec3 random_unit_vector(Rng& rng);

/// Uniformly random unit quaternion.
Quat random_rotation(Rng& rng);

}  // namespace ipd
