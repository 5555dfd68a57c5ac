#include "ipd/geometry.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <numeric>

namespace ipd {

namespace {

constexpr double kPi = 3.14159265358979323846;

double sq(double v) { return v * v; }

/// Squared distance, written once so the index and every oracle share the
/// exact floating-point expression.
double dist_sq(const Vec3& a, const Vec3& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  const double dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace

const char* family_name(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::sphere: return "sphere";
    case ShapeFamily::box: return "box";
    case ShapeFamily::cylinder: return "cylinder";
    case ShapeFamily::torus: return "torus";
    case ShapeFamily::superellipsoid: return "superellipsoid";
  }
  return "unknown";
}

ShapeFamily family_from_name(const std::string& name) {
  if (name == "sphere") return ShapeFamily::sphere;
  if (name == "box") return ShapeFamily::box;
  if (name == "cylinder") return ShapeFamily::cylinder;
  if (name == "torus") return ShapeFamily::torus;
  if (name == "superellipsoid") return ShapeFamily::superellipsoid;
  throw ConfigError("unknown shape family: " + name);
}

ShapeSpec ShapeSpec::sphere(double radius) {
  return ShapeSpec{ShapeFamily::sphere, {radius}, {}, {1, 1, 1}};
}
ShapeSpec ShapeSpec::box(double hx, double hy, double hz) {
  return ShapeSpec{ShapeFamily::box, {hx, hy, hz}, {}, {1, 1, 1}};
}
ShapeSpec ShapeSpec::cylinder(double radius, double half_height) {
  return ShapeSpec{ShapeFamily::cylinder, {radius, half_height}, {}, {1, 1, 1}};
}
ShapeSpec ShapeSpec::torus(double major_radius, double minor_radius) {
  return ShapeSpec{ShapeFamily::torus, {major_radius, minor_radius}, {}, {1, 1, 1}};
}
ShapeSpec ShapeSpec::superellipsoid(double a, double b, double c, double e1,
                                    double e2) {
  return ShapeSpec{ShapeFamily::superellipsoid, {a, b, c, e1, e2}, {}, {1, 1, 1}};
}

void ShapeSpec::validate() const {
  static const std::size_t expected[] = {1, 3, 2, 2, 5};
  const auto idx = static_cast<std::size_t>(family);
  if (idx > 4) throw ParamError("invalid shape family");
  if (params.size() != expected[idx])
    throw ParamError(std::string("wrong parameter count for ") +
                     family_name(family));
  for (double p : params)
    if (!(p > 0.0) || !std::isfinite(p))
      throw ParamError(std::string("non-positive parameter in ") +
                       family_name(family));
  if (family == ShapeFamily::torus && !(params[1] < params[0]))
    throw ParamError("torus minor radius must be smaller than major radius");
  if (family == ShapeFamily::superellipsoid) {
    for (int i = 3; i < 5; ++i)
      if (params[i] < 0.3 || params[i] > 4.0)
        throw ParamError("superellipsoid exponents must lie in [0.3, 4.0]");
  }
  if (!(scale.x > 0) || !(scale.y > 0) || !(scale.z > 0))
    throw ParamError("scale components must be positive");
  if (std::abs(rotation.norm() - 1.0) > 1e-6)
    throw ParamError("rotation quaternion must be unit length");
}

PointCloud NormTransform::to_normalized(const PointCloud& c) const {
  PointCloud out;
  out.points.reserve(c.size());
  for (const Vec3& p : c.points) out.points.push_back(to_normalized(p));
  out.normals = c.normals;  // isotropic scaling leaves directions unchanged
  return out;
}

PointCloud NormTransform::to_world(const PointCloud& c) const {
  PointCloud out;
  out.points.reserve(c.size());
  for (const Vec3& p : c.points) out.points.push_back(to_world(p));
  out.normals = c.normals;
  return out;
}

// ---------------------------------------------------------------------------
// NnIndex
// ---------------------------------------------------------------------------

namespace {
constexpr std::uint32_t kLeafSize = 16;
}

NnIndex::NnIndex(const PointCloud& cloud) : points_(cloud.points) {
  if (points_.empty()) throw ContractError("NnIndex requires a non-empty cloud");
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  nodes_.reserve(2 * points_.size() / kLeafSize + 2);
  root_ = build(0, static_cast<std::uint32_t>(points_.size()));
}

std::uint32_t NnIndex::build(std::uint32_t begin, std::uint32_t end) {
  const std::uint32_t id = static_cast<std::uint32_t>(nodes_.size());
  nodes_.push_back({});
  if (end - begin <= kLeafSize) {
    nodes_[id].axis = -1;
    nodes_[id].left = begin;
    nodes_[id].right = end;
    return id;
  }
  // Split on the widest axis; a full lexicographic order keeps the median
  // choice deterministic even with duplicate coordinates.
  Vec3 lo{std::numeric_limits<double>::max(), std::numeric_limits<double>::max(),
          std::numeric_limits<double>::max()};
  Vec3 hi{-std::numeric_limits<double>::max(),
          -std::numeric_limits<double>::max(),
          -std::numeric_limits<double>::max()};
  for (std::uint32_t i = begin; i < end; ++i) {
    const Vec3& p = points_[order_[i]];
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
  }
  int axis = 0;
  double spread = hi.x - lo.x;
  if (hi.y - lo.y > spread) { axis = 1; spread = hi.y - lo.y; }
  if (hi.z - lo.z > spread) { axis = 2; }

  const std::uint32_t mid = begin + (end - begin) / 2;
  std::sort(order_.begin() + begin, order_.begin() + end,
            [&](std::uint32_t a, std::uint32_t b) {
              const Vec3& pa = points_[a];
              const Vec3& pb = points_[b];
              if (pa[axis] != pb[axis]) return pa[axis] < pb[axis];
              if (pa.x != pb.x) return pa.x < pb.x;
              if (pa.y != pb.y) return pa.y < pb.y;
              return pa.z < pb.z;
            });
  nodes_[id].axis = axis;
  nodes_[id].split = points_[order_[mid]][axis];
  const std::uint32_t left = build(begin, mid);
  const std::uint32_t right = build(mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void NnIndex::search(std::uint32_t node, const Vec3& q, double& best_sq,
                     std::size_t& best_idx) const {
  const Node& n = nodes_[node];
  if (n.axis < 0) {
    for (std::uint32_t i = n.left; i < n.right; ++i) {
      const std::uint32_t pi = order_[i];
      const double d = dist_sq(q, points_[pi]);
      if (d < best_sq) {
        best_sq = d;
        best_idx = pi;
      }
    }
    return;
  }
  const double delta = q[n.axis] - n.split;
  const std::uint32_t near = delta < 0.0 ? n.left : n.right;
  const std::uint32_t far = delta < 0.0 ? n.right : n.left;
  search(near, q, best_sq, best_idx);
  if (delta * delta <= best_sq) search(far, q, best_sq, best_idx);
}

NnIndex::Hit NnIndex::nearest(const Vec3& query) const {
  double best_sq = std::numeric_limits<double>::max();
  std::size_t best_idx = 0;
  search(root_, query, best_sq, best_idx);
  return {best_idx, std::sqrt(best_sq)};
}

// ---------------------------------------------------------------------------
// Shape sampling
// ---------------------------------------------------------------------------

namespace {

struct SurfaceSample {
  Vec3 position;  // on the scaled, unrotated surface
  Vec3 normal;    // outward unit normal of that surface
};

/// Area weight of a diagonally scaled surface patch per unit unscaled area:
/// |diag(sy*sz, sx*sz, sx*sy) . n_unit|.
double area_weight(const Vec3& unit_normal, const Vec3& s) {
  const Vec3 m{s.y * s.z * unit_normal.x, s.x * s.z * unit_normal.y,
               s.x * s.y * unit_normal.z};
  return m.norm();
}

double max_pair_product(const Vec3& s) {
  return std::max({s.x * s.y, s.y * s.z, s.x * s.z});
}

Vec3 scaled_normal(const Vec3& unit_normal, const Vec3& s) {
  // Normals transform by det(S) S^-1 for diagonal S, then renormalize.
  return Vec3{s.y * s.z * unit_normal.x, s.x * s.z * unit_normal.y,
              s.x * s.y * unit_normal.z}
      .normalized();
}

constexpr int kMaxRejects = 1 << 20;

/// Draws points uniformly by area on the scaled surface given a sampler of
/// uniform points on the *unit-scale* surface, via ratio rejection.
template <class UnitSampler>
SurfaceSample sample_scaled(UnitSampler&& unit, const Vec3& s, Rng& rng) {
  const double wmax = max_pair_product(s);
  for (int k = 0; k < kMaxRejects; ++k) {
    SurfaceSample u = unit(rng);
    if (rng.uniform() * wmax <= area_weight(u.normal, s)) {
      return {{u.position.x * s.x, u.position.y * s.y, u.position.z * s.z},
              scaled_normal(u.normal, s)};
    }
  }
  throw ParamError("surface rejection sampling failed; scale too anisotropic");
}

SurfaceSample sphere_unit(double radius, Rng& rng) {
  Vec3 d{rng.normal(), rng.normal(), rng.normal()};
  while (d.squared_norm() < 1e-24) d = {rng.normal(), rng.normal(), rng.normal()};
  const Vec3 n = d.normalized();
  return {n * radius, n};
}

SurfaceSample cylinder_unit(double radius, double hh, Rng& rng) {
  const double lateral = 2.0 * kPi * radius * 2.0 * hh;
  const double cap = kPi * radius * radius;
  const double u = rng.uniform() * (lateral + 2.0 * cap);
  if (u < lateral) {
    const double theta = rng.uniform() * 2.0 * kPi;
    const double z = rng.uniform(-hh, hh);
    return {{radius * std::cos(theta), radius * std::sin(theta), z},
            {std::cos(theta), std::sin(theta), 0.0}};
  }
  const double sign = u < lateral + cap ? 1.0 : -1.0;
  const double r = radius * std::sqrt(rng.uniform());
  const double theta = rng.uniform() * 2.0 * kPi;
  return {{r * std::cos(theta), r * std::sin(theta), sign * hh},
          {0.0, 0.0, sign}};
}

SurfaceSample torus_unit(double R, double r, Rng& rng) {
  const double theta = rng.uniform() * 2.0 * kPi;
  // Tube angle by rejection against the (R + r cos phi) Jacobian.
  double phi = 0.0;
  for (int k = 0; k < kMaxRejects; ++k) {
    phi = rng.uniform() * 2.0 * kPi;
    if (rng.uniform() * (R + r) <= R + r * std::cos(phi)) break;
  }
  const double ring = R + r * std::cos(phi);
  const Vec3 n{std::cos(phi) * std::cos(theta), std::cos(phi) * std::sin(theta),
               std::sin(phi)};
  return {{ring * std::cos(theta), ring * std::sin(theta), r * std::sin(phi)},
          n};
}

void box_samples(const ShapeSpec& spec, std::size_t n, Rng& rng,
                 PointCloud& out) {
  // Scale folds into the half extents; faces stay planar and axis-aligned,
  // so face-area weighting is exact with no rejection.
  const double hx = spec.params[0] * spec.scale.x;
  const double hy = spec.params[1] * spec.scale.y;
  const double hz = spec.params[2] * spec.scale.z;
  const double ax = hy * hz, ay = hx * hz, az = hx * hy;  // quarter areas
  const double total = 2.0 * (ax + ay + az);
  for (std::size_t i = 0; i < n; ++i) {
    double u = rng.uniform() * total;
    Vec3 p, nrm;
    const double su = rng.uniform() * 2.0 - 1.0;
    const double sv = rng.uniform() * 2.0 - 1.0;
    if (u < 2.0 * ax) {
      const double sign = u < ax ? 1.0 : -1.0;
      p = {sign * hx, su * hy, sv * hz};
      nrm = {sign, 0, 0};
    } else if (u < 2.0 * ax + 2.0 * ay) {
      const double sign = u - 2.0 * ax < ay ? 1.0 : -1.0;
      p = {su * hx, sign * hy, sv * hz};
      nrm = {0, sign, 0};
    } else {
      const double sign = u - 2.0 * ax - 2.0 * ay < az ? 1.0 : -1.0;
      p = {su * hx, sv * hy, sign * hz};
      nrm = {0, 0, sign};
    }
    out.points.push_back(p);
    out.normals.push_back(nrm);
  }
}

struct SuperellipsoidEval {
  Vec3 position;
  Vec3 du, dv;
};

double signed_pow(double c, double e) {
  const double a = std::abs(c);
  const double v = std::pow(a, e);
  return c < 0.0 ? -v : v;
}

SuperellipsoidEval superellipsoid_eval(const ShapeSpec& spec, double eta,
                                       double omega) {
  const double a = spec.params[0] * spec.scale.x;
  const double b = spec.params[1] * spec.scale.y;
  const double c = spec.params[2] * spec.scale.z;
  const double e1 = spec.params[3];
  const double e2 = spec.params[4];
  const double ce = std::cos(eta), se = std::sin(eta);
  const double co = std::cos(omega), so = std::sin(omega);
  const double fe = signed_pow(ce, e1), ge = signed_pow(se, e1);
  const double fo = signed_pow(co, e2), go = signed_pow(so, e2);
  SuperellipsoidEval ev;
  ev.position = {a * fe * fo, b * fe * go, c * ge};
  // d/dt sign(cos t)|cos t|^e = -e |cos t|^(e-1) sin t   (a.e.)
  const double eps = 1e-12;
  const double dfe = -e1 * std::pow(std::max(std::abs(ce), eps), e1 - 1.0) * se;
  const double dge = e1 * std::pow(std::max(std::abs(se), eps), e1 - 1.0) * ce;
  const double dfo = -e2 * std::pow(std::max(std::abs(co), eps), e2 - 1.0) * so;
  const double dgo = e2 * std::pow(std::max(std::abs(so), eps), e2 - 1.0) * co;
  ev.du = {a * dfe * fo, b * dfe * go, c * dge};        // d/d eta
  ev.dv = {a * fe * dfo, b * fe * dgo, 0.0};            // d/d omega
  return ev;
}

void superellipsoid_samples(const ShapeSpec& spec, std::size_t n, Rng& rng,
                            PointCloud& out) {
  // Patch-area table over the parameter grid, then area-weighted patch
  // choice with analytic re-evaluation so points land exactly on the
  // surface. Uniformity is approximate at patch granularity.
  constexpr int kEta = 96;
  constexpr int kOmega = 192;
  const double eta0 = -kPi / 2.0, deta = kPi / kEta;
  const double omega0 = -kPi, domega = 2.0 * kPi / kOmega;

  std::vector<Vec3> grid((kEta + 1) * (kOmega + 1));
  for (int i = 0; i <= kEta; ++i)
    for (int j = 0; j <= kOmega; ++j)
      grid[i * (kOmega + 1) + j] =
          superellipsoid_eval(spec, eta0 + i * deta, omega0 + j * domega)
              .position;

  std::vector<double> cdf(kEta * kOmega);
  double acc = 0.0;
  for (int i = 0; i < kEta; ++i) {
    for (int j = 0; j < kOmega; ++j) {
      const Vec3& p00 = grid[i * (kOmega + 1) + j];
      const Vec3& p10 = grid[(i + 1) * (kOmega + 1) + j];
      const Vec3& p01 = grid[i * (kOmega + 1) + j + 1];
      const Vec3& p11 = grid[(i + 1) * (kOmega + 1) + j + 1];
      const double area = 0.5 * ((p10 - p00).cross(p01 - p00).norm() +
                                 (p11 - p10).cross(p01 - p10).norm());
      acc += area;
      cdf[i * kOmega + j] = acc;
    }
  }

  for (std::size_t k = 0; k < n; ++k) {
    const double u = rng.uniform() * acc;
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
    const int cell = static_cast<int>(it - cdf.begin());
    const int i = cell / kOmega;
    const int j = cell % kOmega;
    // Interior offsets keep the parameter away from derivative singularities.
    const double fu = rng.uniform(0.02, 0.98);
    const double fv = rng.uniform(0.02, 0.98);
    const double eta = eta0 + (i + fu) * deta;
    const double omega = omega0 + (j + fv) * domega;
    const SuperellipsoidEval ev = superellipsoid_eval(spec, eta, omega);
    Vec3 nrm = ev.du.cross(ev.dv);
    if (!(nrm.squared_norm() > 1e-18) || !std::isfinite(nrm.squared_norm())) {
      // Fall back to the radial direction; exact on the axis crossings.
      nrm = ev.position;
    }
    nrm = nrm.normalized();
    if (nrm.dot(ev.position) < 0.0) nrm = nrm * -1.0;
    out.points.push_back(ev.position);
    out.normals.push_back(nrm);
  }
}

}  // namespace

PointCloud sample_shape(const ShapeSpec& spec, std::size_t n,
                        std::uint64_t seed) {
  spec.validate();
  if (n < 1) throw ParamError("sample_shape requires n >= 1");
  Rng rng(Rng::mix(seed, 0x5a3d));
  PointCloud cloud;
  cloud.points.reserve(n);
  cloud.normals.reserve(n);

  switch (spec.family) {
    case ShapeFamily::sphere: {
      const double r = spec.params[0];
      for (std::size_t i = 0; i < n; ++i) {
        auto s = sample_scaled(
            [&](Rng& g) { return sphere_unit(r, g); }, spec.scale, rng);
        cloud.points.push_back(s.position);
        cloud.normals.push_back(s.normal);
      }
      break;
    }
    case ShapeFamily::box:
      box_samples(spec, n, rng, cloud);
      break;
    case ShapeFamily::cylinder: {
      const double r = spec.params[0], hh = spec.params[1];
      for (std::size_t i = 0; i < n; ++i) {
        auto s = sample_scaled(
            [&](Rng& g) { return cylinder_unit(r, hh, g); }, spec.scale, rng);
        cloud.points.push_back(s.position);
        cloud.normals.push_back(s.normal);
      }
      break;
    }
    case ShapeFamily::torus: {
      const double R = spec.params[0], r = spec.params[1];
      for (std::size_t i = 0; i < n; ++i) {
        auto s = sample_scaled(
            [&](Rng& g) { return torus_unit(R, r, g); }, spec.scale, rng);
        cloud.points.push_back(s.position);
        cloud.normals.push_back(s.normal);
      }
      break;
    }
    case ShapeFamily::superellipsoid:
      superellipsoid_samples(spec, n, rng, cloud);
      break;
  }

  const Quat& q = spec.rotation;
  for (std::size_t i = 0; i < n; ++i) {
    cloud.points[i] = q.rotate(cloud.points[i]);
    cloud.normals[i] = q.rotate(cloud.normals[i]).normalized();
  }
  return cloud;
}

PointCloud partial_view(const PointCloud& cloud, const Vec3& view_dir) {
  if (cloud.empty()) throw ContractError("partial_view requires a non-empty cloud");
  if (!cloud.has_normals())
    throw ContractError("partial_view requires normals");
  if (std::abs(view_dir.norm() - 1.0) > 1e-6)
    throw ParamError("view_dir must be unit length");
  PointCloud out;
  const Vec3 to_camera = view_dir * -1.0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (cloud.normals[i].dot(to_camera) > 0.0) {
      out.points.push_back(cloud.points[i]);
      out.normals.push_back(cloud.normals[i]);
    }
  }
  if (out.empty())
    throw DegenerateViewError("view direction culls every point");
  return out;
}

std::pair<PointCloud, NormTransform> normalize(const PointCloud& cloud) {
  if (cloud.size() < 2)
    throw ContractError("normalize requires at least 2 points");
  Vec3 c{0, 0, 0};
  for (const Vec3& p : cloud.points) c += p;
  c = c / static_cast<double>(cloud.size());
  double var = 0.0;
  for (const Vec3& p : cloud.points) var += dist_sq(p, c);
  var /= 3.0 * static_cast<double>(cloud.size());
  if (var < 1e-24)
    throw DegenerateCloudError("cloud has zero variance; cannot normalize");
  NormTransform tf{c, 1.0 / std::sqrt(var)};
  return {tf.to_normalized(cloud), tf};
}

NnIndex build_index(const PointCloud& cloud) { return NnIndex(cloud); }

std::vector<double> udf_targets(const PointCloud& queries, const NnIndex& index,
                                double clamp) {
  if (!(clamp > 0.0)) throw ParamError("udf clamp must be positive");
  std::vector<double> out;
  out.reserve(queries.size());
  for (const Vec3& q : queries.points)
    out.push_back(std::min(index.nearest_distance(q), clamp));
  return out;
}

Vec3 random_unit_vector(Rng& rng) {
  Vec3 d{rng.normal(), rng.normal(), rng.normal()};
  while (d.squared_norm() < 1e-24) d = {rng.normal(), rng.normal(), rng.normal()};
  return d.normalized();
}

Quat random_rotation(Rng& rng) {
  // Uniform over SO(3) via normalized 4D gaussian.
  double w = rng.normal(), x = rng.normal(), y = rng.normal(), z = rng.normal();
  double n = std::sqrt(w * w + x * x + y * y + z * z);
  while (n < 1e-12) {
    w = rng.normal(); x = rng.normal(); y = rng.normal(); z = rng.normal();
    n = std::sqrt(w * w + x * x + y * y + z * z);
  }
  return {w / n, x / n, y / n, z / n};
}

}  // namespace ipd
