#include "optlens/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "binio.hpp"
#include "optlens/errors.hpp"

namespace optlens::data {

namespace {

constexpr double kPi = std::numbers::pi;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

std::array<double, 3> unit_vector(Rng& rng) {
  std::normal_distribution<double> n01;
  for (;;) {
    std::array<double, 3> v{n01(rng), n01(rng), n01(rng)};
    const double r = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (r > 1e-12) {
      return {v[0] / r, v[1] / r, v[2] / r};
    }
  }
}

// Uniform point in the triangle (a, b, c).
std::array<double, 3> in_triangle(Rng& rng, const std::array<double, 3>& a, const std::array<double, 3>& b,
                                  const std::array<double, 3>& c) {
  double u = uniform(rng, 0.0, 1.0);
  double v = uniform(rng, 0.0, 1.0);
  if (u + v > 1.0) {
    u = 1.0 - u;
    v = 1.0 - v;
  }
  std::array<double, 3> p{};
  for (int k = 0; k < 3; ++k) {
    p[k] = a[k] + u * (b[k] - a[k]) + v * (c[k] - a[k]);
  }
  return p;
}

std::array<double, 3> sample_point(Shape shape, Rng& rng) {
  switch (shape) {
    case Shape::kSphere:
      return unit_vector(rng);
    case Shape::kCube: {
      constexpr double a = 0.6;
      const int face = std::uniform_int_distribution<int>(0, 5)(rng);
      std::array<double, 3> p{uniform(rng, -a, a), uniform(rng, -a, a), uniform(rng, -a, a)};
      p[static_cast<std::size_t>(face / 2)] = face % 2 == 0 ? -a : a;
      return p;
    }
    case Shape::kCylinder: {
      constexpr double r = 0.6;
      constexpr double half_h = 0.6;
      const double side = 2.0 * kPi * r * (2.0 * half_h);
      const double caps = 2.0 * kPi * r * r;
      const double phi = uniform(rng, 0.0, 2.0 * kPi);
      if (uniform(rng, 0.0, side + caps) < side) {
        return {r * std::cos(phi), r * std::sin(phi), uniform(rng, -half_h, half_h)};
      }
      const double rho = r * std::sqrt(uniform(rng, 0.0, 1.0));
      return {rho * std::cos(phi), rho * std::sin(phi), uniform(rng, 0.0, 1.0) < 0.5 ? -half_h : half_h};
    }
    case Shape::kCone: {
      constexpr double r = 0.7;
      constexpr double apex = 0.7;
      constexpr double base = -0.5;
      const double slant = std::hypot(r, apex - base);
      const double lateral = kPi * r * slant;
      const double disk = kPi * r * r;
      const double phi = uniform(rng, 0.0, 2.0 * kPi);
      if (uniform(rng, 0.0, lateral + disk) < lateral) {
        const double t = std::sqrt(uniform(rng, 0.0, 1.0));
        return {r * t * std::cos(phi), r * t * std::sin(phi), apex - t * (apex - base)};
      }
      const double rho = r * std::sqrt(uniform(rng, 0.0, 1.0));
      return {rho * std::cos(phi), rho * std::sin(phi), base};
    }
    case Shape::kTorus: {
      constexpr double big = 0.7;
      constexpr double small = 0.25;
      // Rejection on the tube angle gives the area-uniform density (R + r cos t).
      double t = 0.0;
      do {
        t = uniform(rng, 0.0, 2.0 * kPi);
      } while (uniform(rng, 0.0, big + small) > big + small * std::cos(t));
      const double phi = uniform(rng, 0.0, 2.0 * kPi);
      const double rho = big + small * std::cos(t);
      return {rho * std::cos(phi), rho * std::sin(phi), small * std::sin(t)};
    }
    case Shape::kPyramid: {
      constexpr double a = 0.6;
      constexpr double base = -0.5;
      const std::array<double, 3> top{0.0, 0.0, 0.7};
      const std::array<std::array<double, 3>, 4> corners{
          {{-a, -a, base}, {a, -a, base}, {a, a, base}, {-a, a, base}}};
      const double side_area = 0.5 * (2.0 * a) * std::hypot(a, top[2] - base);
      const double base_area = (2.0 * a) * (2.0 * a);
      const double pick = uniform(rng, 0.0, 4.0 * side_area + base_area);
      if (pick < 4.0 * side_area) {
        const auto k = std::min<std::size_t>(3, static_cast<std::size_t>(pick / side_area));
        return in_triangle(rng, corners[k], corners[(k + 1) % 4], top);
      }
      return {uniform(rng, -a, a), uniform(rng, -a, a), base};
    }
    case Shape::kTwoPlanes: {
      constexpr double a = 0.6;
      return {uniform(rng, -a, a), uniform(rng, -a, a), uniform(rng, 0.0, 1.0) < 0.5 ? -0.35 : 0.35};
    }
    case Shape::kHelix: {
      constexpr double r = 0.5;
      constexpr double turns = 2.5;
      std::normal_distribution<double> tube(0.0, 0.04);
      const double t = uniform(rng, 0.0, 1.0);
      const double phi = 2.0 * kPi * turns * t;
      return {r * std::cos(phi) + tube(rng), r * std::sin(phi) + tube(rng), -0.7 + 1.4 * t + tube(rng)};
    }
  }
  throw ConfigError("unknown shape");
}

Matrix centroid(const Matrix& pts) {
  Matrix c(1, 3);
  for (std::size_t i = 0; i < pts.rows(); ++i) {
    for (std::size_t k = 0; k < 3; ++k) {
      c(0, k) += pts(i, k);
    }
  }
  for (std::size_t k = 0; k < 3; ++k) {
    c(0, k) /= static_cast<double>(pts.rows());
  }
  return c;
}

// p <- (p - center) R^T + center for every row.
void rotate_about(Matrix& pts, const Matrix& rot, const Matrix& center) {
  for (std::size_t i = 0; i < pts.rows(); ++i) {
    std::array<double, 3> d{};
    for (std::size_t k = 0; k < 3; ++k) {
      d[k] = pts(i, k) - center(0, k);
    }
    for (std::size_t r = 0; r < 3; ++r) {
      pts(i, r) = center(0, r) + rot(r, 0) * d[0] + rot(r, 1) * d[1] + rot(r, 2) * d[2];
    }
  }
}

Matrix select_rows(const Matrix& pts, const std::vector<std::size_t>& keep) {
  Matrix out(keep.size(), 3);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    for (std::size_t k = 0; k < 3; ++k) {
      out(i, k) = pts(keep[i], k);
    }
  }
  return out;
}

std::vector<PointCloud> generate_split(const DatasetSpec& spec, std::string_view split, std::size_t count) {
  std::vector<PointCloud> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = make_rng(spec.seed, std::string("gshp:") + std::string(split), i);
    const int label = static_cast<int>(i % spec.num_classes);
    Matrix pts = sample_shape(static_cast<Shape>(static_cast<std::size_t>(label) % kNumShapes), spec.points_per_cloud, rng);
    const double scale = uniform(rng, 0.8, 1.25);
    const Matrix rot = random_rotation(rng);
    const auto dir = unit_vector(rng);
    const double radius = std::cbrt(uniform(rng, 0.0, 1.0));
    for (double& x : pts.data()) {
      x *= scale;
    }
    rotate_about(pts, rot, Matrix(1, 3));
    for (std::size_t r = 0; r < pts.rows(); ++r) {
      for (std::size_t k = 0; k < 3; ++k) {
        pts(r, k) += radius * dir[k];
      }
    }
    out.push_back(PointCloud{std::move(pts), label});
  }
  return out;
}

}  // namespace

void DatasetSpec::validate() const {
  if (num_classes < 2 || num_classes > 65535) {
    throw ConfigError("dataset: num_classes must be in [2, 65535]");
  }
  if (points_per_cloud < kMinPoints || points_per_cloud > 65535) {
    throw ConfigError("dataset: points_per_cloud must be in [8, 65535]");
  }
  if (train_size < num_classes || val_size < num_classes || test_size < num_classes) {
    throw ConfigError("dataset: every split needs at least num_classes samples");
  }
}

std::string_view shape_name(Shape s) {
  static constexpr std::array<std::string_view, kNumShapes> kNames{"sphere", "cube",    "cylinder",   "cone",
                                                                    "torus",  "pyramid", "two_planes", "helix"};
  return kNames[static_cast<std::size_t>(s)];
}

Matrix sample_shape(Shape shape, std::size_t n, Rng& rng) {
  Matrix pts(n, 3);
  if (shape == Shape::kSphere) {
    // Antipodal pairs keep the sample centroid at the sphere's centre.
    for (std::size_t i = 0; i < n; i += 2) {
      const auto p = unit_vector(rng);
      for (std::size_t k = 0; k < 3; ++k) {
        pts(i, k) = p[k];
        if (i + 1 < n) {
          pts(i + 1, k) = -p[k];
        }
      }
    }
    return pts;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = sample_point(shape, rng);
    for (std::size_t k = 0; k < 3; ++k) {
      pts(i, k) = p[k];
    }
  }
  return pts;
}

Matrix random_rotation(Rng& rng) {
  // Uniform unit quaternion -> rotation matrix.
  std::normal_distribution<double> n01;
  double q[4];
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& x : q) {
      x = n01(rng);
      norm += x * x;
    }
  } while (norm < 1e-12);
  norm = std::sqrt(norm);
  const double w = q[0] / norm;
  const double x = q[1] / norm;
  const double y = q[2] / norm;
  const double z = q[3] / norm;
  return Matrix{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
                {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
                {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}};
}

Dataset generate(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.num_classes = spec.num_classes;
  ds.train = generate_split(spec, "train", spec.train_size);
  ds.val = generate_split(spec, "val", spec.val_size);
  ds.test = generate_split(spec, "test", spec.test_size);
  return ds;
}

std::string_view corruption_name(Corruption c) {
  switch (c) {
    case Corruption::kGaussianNoise:
      return "gaussian_noise";
    case Corruption::kUniformNoise:
      return "uniform_noise";
    case Corruption::kPointDropout:
      return "point_dropout";
    case Corruption::kOcclusionHalfspace:
      return "occlusion_halfspace";
    case Corruption::kJitterRotate:
      return "jitter_rotate";
  }
  return "unknown";
}

Corruption parse_corruption(std::string_view name) {
  for (Corruption c : kAllCorruptions) {
    if (corruption_name(c) == name) {
      return c;
    }
  }
  throw ConfigError("unknown corruption '" + std::string(name) + "'");
}

void CorruptionSpec::validate() const {
  if (severity < 1 || severity > 5) {
    throw ConfigError("corruption severity must be in 1..5");
  }
  if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale)) {
    throw ConfigError("corruption noise_scale must be finite and non-negative");
  }
}

double noise_sigma(int severity) {
  static constexpr std::array<double, 5> kSigma{0.01, 0.02, 0.04, 0.08, 0.16};
  return kSigma.at(static_cast<std::size_t>(severity - 1));
}

double dropout_fraction(int severity) { return 0.1 * severity; }

PointCloud corrupt(const PointCloud& cloud, const CorruptionSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::size_t n = cloud.num_points();
  if (n < kMinPoints) {
    throw DegenerateInputError("corrupt: cloud has fewer than 8 points");
  }
  Rng rng = make_rng(seed, std::string("corrupt:") + std::string(corruption_name(spec.kind)),
                     static_cast<std::uint64_t>(spec.severity));
  PointCloud out = cloud;
  const double sigma = noise_sigma(spec.severity) * spec.noise_scale;
  switch (spec.kind) {
    case Corruption::kGaussianNoise: {
      std::normal_distribution<double> noise(0.0, 1.0);
      for (double& x : out.points.data()) {
        x += sigma * noise(rng);
      }
      break;
    }
    case Corruption::kUniformNoise: {
      // Same standard deviation as the gaussian level: half-width sqrt(3) sigma.
      const double half = std::sqrt(3.0) * sigma;
      for (double& x : out.points.data()) {
        x += half * uniform(rng, -1.0, 1.0);
      }
      break;
    }
    case Corruption::kPointDropout: {
      const auto drop = static_cast<std::size_t>(std::floor(dropout_fraction(spec.severity) * static_cast<double>(n) + 1e-9));
      const std::size_t keep_count = std::max(kMinPoints, n - drop);
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(keep_count);
      std::sort(idx.begin(), idx.end());
      out.points = select_rows(cloud.points, idx);
      break;
    }
    case Corruption::kOcclusionHalfspace: {
      // Cut by a random plane through the centroid: the share s/5 of the
      // points on the positive side furthest from the plane is removed.
      const Matrix c = centroid(cloud.points);
      const std::size_t floor_keep =
          std::max(kMinPoints, static_cast<std::size_t>(std::ceil(0.25 * static_cast<double>(n))));
      constexpr int kRetries = 16;
      bool done = false;
      for (int attempt = 0; attempt < kRetries && !done; ++attempt) {
        const auto normal = unit_vector(rng);
        std::vector<std::pair<double, std::size_t>> side;
        for (std::size_t i = 0; i < n; ++i) {
          double d = 0.0;
          for (std::size_t k = 0; k < 3; ++k) {
            d += (cloud.points(i, k) - c(0, k)) * normal[k];
          }
          if (d > 0.0) {
            side.emplace_back(-d, i);
          }
        }
        std::sort(side.begin(), side.end());
        auto remove = static_cast<std::size_t>(std::round(static_cast<double>(side.size()) * spec.severity / 5.0));
        remove = std::min(remove, n - std::min(n, floor_keep));
        if (n - remove < kMinPoints) {
          continue;
        }
        std::vector<bool> gone(n, false);
        for (std::size_t r = 0; r < remove; ++r) {
          gone[side[r].second] = true;
        }
        std::vector<std::size_t> keep;
        for (std::size_t i = 0; i < n; ++i) {
          if (!gone[i]) {
            keep.push_back(i);
          }
        }
        out.points = select_rows(cloud.points, keep);
        done = true;
      }
      if (!done) {
        throw DegenerateInputError("occlusion left fewer than 8 points after retries");
      }
      break;
    }
    case Corruption::kJitterRotate: {
      std::normal_distribution<double> noise(0.0, 1.0);
      for (double& x : out.points.data()) {
        x += sigma * noise(rng);
      }
      const Matrix rot = random_rotation(rng);
      rotate_about(out.points, rot, centroid(out.points));
      break;
    }
  }
  return out;
}

std::vector<CorruptionSpec> default_corruption_suite() {
  std::vector<CorruptionSpec> suite;
  for (Corruption c : kAllCorruptions) {
    for (int s : {1, 3, 5}) {
      suite.push_back(CorruptionSpec{c, s, 1.0});
    }
  }
  return suite;
}

std::vector<PointCloud> corrupt_all(const std::vector<PointCloud>& clouds, const CorruptionSpec& spec,
                                    std::uint64_t seed) {
  std::vector<PointCloud> out;
  out.reserve(clouds.size());
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    out.push_back(corrupt(clouds[i], spec, mix64(seed) ^ mix64(i + 1)));
  }
  return out;
}

void save_split(const std::vector<PointCloud>& clouds, std::size_t num_classes, const std::filesystem::path& path) {
  binio::Writer w;
  w.bytes("GSHP", 4);
  w.u32(kGshpVersion);
  w.u32(static_cast<std::uint32_t>(num_classes));
  w.u32(static_cast<std::uint32_t>(clouds.size()));
  for (const auto& c : clouds) {
    if (c.label < 0 || static_cast<std::size_t>(c.label) >= num_classes || c.num_points() > 65535) {
      throw FormatError("cloud does not fit the GSHP container");
    }
    w.u16(static_cast<std::uint16_t>(c.label));
    w.u16(static_cast<std::uint16_t>(c.num_points()));
    for (double x : c.points.data()) {
      w.f64(x);
    }
  }
  binio::write_file(path.string(), w.buffer());
}

std::vector<PointCloud> load_split(const std::filesystem::path& path, std::size_t* num_classes) {
  const auto bytes = binio::read_file(path.string());
  binio::Reader r(bytes.data(), bytes.size(), path.string());
  char magic[4];
  r.bytes(magic, 4);
  if (std::string_view(magic, 4) != "GSHP") {
    throw FormatError(path.string() + ": not a GSHP file");
  }
  if (const auto v = r.u32(); v != kGshpVersion) {
    throw FormatError(path.string() + ": unsupported GSHP version " + std::to_string(v));
  }
  const std::uint32_t classes = r.u32();
  const std::uint32_t count = r.u32();
  std::vector<PointCloud> clouds;
  clouds.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const int label = r.u16();
    const std::size_t n = r.u16();
    if (static_cast<std::uint32_t>(label) >= classes) {
      throw FormatError(path.string() + ": label out of range");
    }
    Matrix pts(n, 3);
    for (double& x : pts.data()) {
      x = r.f64();
      if (!std::isfinite(x)) {
        throw FormatError(path.string() + ": non-finite coordinate");
      }
    }
    clouds.push_back(PointCloud{std::move(pts), label});
  }
  if (r.remaining() != 0) {
    throw FormatError(path.string() + ": trailing bytes");
  }
  if (num_classes != nullptr) {
    *num_classes = classes;
  }
  return clouds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  save_split(ds.train, ds.num_classes, dir / "train.gshp");
  save_split(ds.val, ds.num_classes, dir / "val.gshp");
  save_split(ds.test, ds.num_classes, dir / "test.gshp");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  std::size_t c_train = 0;
  std::size_t c_val = 0;
  std::size_t c_test = 0;
  ds.train = load_split(dir / "train.gshp", &c_train);
  ds.val = load_split(dir / "val.gshp", &c_val);
  ds.test = load_split(dir / "test.gshp", &c_test);
  if (c_train != c_val || c_train != c_test) {
    throw FormatError(dir.string() + ": splits disagree on the class count");
  }
  ds.num_classes = c_train;
  return ds;
}

}  // namespace optlens::data
