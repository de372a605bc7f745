#include "hemb/data_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <iterator>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "hemb/errors.hpp"
#include "hemb/rng.hpp"

namespace hemb {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

// Largest up-front allocation a header count may trigger; beyond it storage
// grows with the lines actually present.
constexpr std::size_t kMaxReserve = 1 << 16;

std::vector<std::string_view> split_tokens(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) tokens.push_back(line.substr(start, i - start));
  }
  return tokens;
}

bool parse_size(std::string_view token, std::size_t& out) {
  if (token.empty() || token[0] == '-' || token[0] == '+') return false;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), out);
  return ec == std::errc() && ptr == token.data() + token.size();
}

bool parse_double(std::string_view token, double& out) {
  if (!token.empty() && token[0] == '+') token.remove_prefix(1);
  if (token.empty()) return false;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), out);
  return ec == std::errc() && ptr == token.data() + token.size() && std::isfinite(out);
}

/// Line reader that skips blank and comment lines and tracks line numbers.
class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  /// Next meaningful line, with any trailing comment removed.
  bool next(std::vector<std::string_view>& tokens) {
    while (std::getline(in_, buffer_)) {
      ++line_;
      std::string_view view(buffer_);
      if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
      tokens = split_tokens(view);
      if (!tokens.empty()) return true;
    }
    return false;
  }

  std::size_t line() const { return line_; }

 private:
  std::istream& in_;
  std::string buffer_;
  std::size_t line_ = 0;
};

double triangle_area(const Point3& a, const Point3& b, const Point3& c) {
  const double ux = b[0] - a[0], uy = b[1] - a[1], uz = b[2] - a[2];
  const double vx = c[0] - a[0], vy = c[1] - a[1], vz = c[2] - a[2];
  const double cx = uy * vz - uz * vy;
  const double cy = uz * vx - ux * vz;
  const double cz = ux * vy - uy * vx;
  return 0.5 * std::sqrt(cx * cx + cy * cy + cz * cz);
}

using Triangle = std::array<Point3, 3>;

Point3 sample_triangle(const Triangle& t, Rng& rng) {
  double u = rng.uniform();
  double v = rng.uniform();
  if (u + v > 1.0) {
    u = 1.0 - u;
    v = 1.0 - v;
  }
  Point3 p;
  for (std::size_t d = 0; d < 3; ++d) p[d] = t[0][d] + u * (t[1][d] - t[0][d]) + v * (t[2][d] - t[0][d]);
  return p;
}

/// Area-proportional choice among triangles; zero-area entries never win.
std::vector<Point3> sample_triangles(const std::vector<Triangle>& triangles, std::size_t n, Rng& rng) {
  std::vector<double> cumulative;
  cumulative.reserve(triangles.size());
  double total = 0.0;
  std::size_t last_positive = triangles.size();
  for (std::size_t i = 0; i < triangles.size(); ++i) {
    const double area = triangle_area(triangles[i][0], triangles[i][1], triangles[i][2]);
    if (area > 0.0) last_positive = i;
    total += area;
    cumulative.push_back(total);
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw ContractError("surface sampling needs at least one triangle with positive finite area");
  }
  std::vector<Point3> points;
  points.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    const double r = rng.uniform() * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), r);
    std::size_t index = static_cast<std::size_t>(it - cumulative.begin());
    if (index >= triangles.size()) index = last_positive;  // r rounded up to total
    points.push_back(sample_triangle(triangles[index], rng));
  }
  return points;
}

Point3 on_sphere(Rng& rng) {
  for (;;) {
    const double x = rng.normal(), y = rng.normal(), z = rng.normal();
    const double r = std::sqrt(x * x + y * y + z * z);
    if (r > 1e-12) return {x / r, y / r, z / r};
  }
}

Point3 on_disk(double radius, double z, Rng& rng) {
  const double r = radius * std::sqrt(rng.uniform());
  const double theta = 2.0 * std::numbers::pi * rng.uniform();
  return {r * std::cos(theta), r * std::sin(theta), z};
}

Point3 sphere_point(Rng& rng) { return on_sphere(rng); }

Point3 cube_point(Rng& rng) {
  const auto face = rng.below(6);
  Point3 p{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
  p[face / 2] = face % 2 ? 1.0 : -1.0;
  return p;
}

Point3 cylinder_point(Rng& rng) {
  // Lateral area 4 pi against two caps of pi each.
  const double pick = rng.uniform() * 6.0;
  if (pick < 4.0) {
    const double theta = 2.0 * std::numbers::pi * rng.uniform();
    return {std::cos(theta), std::sin(theta), rng.uniform(-1.0, 1.0)};
  }
  return on_disk(1.0, pick < 5.0 ? -1.0 : 1.0, rng);
}

Point3 cone_point(Rng& rng) {
  // Apex at z = 1, unit base at z = -1: lateral area pi sqrt(5), base pi.
  const double lateral = std::sqrt(5.0);
  if (rng.uniform() * (lateral + 1.0) < lateral) {
    const double t = std::sqrt(rng.uniform());
    const double theta = 2.0 * std::numbers::pi * rng.uniform();
    return {t * std::cos(theta), t * std::sin(theta), 1.0 - 2.0 * t};
  }
  return on_disk(1.0, -1.0, rng);
}

Point3 torus_point(Rng& rng) {
  constexpr double major = 0.7;
  constexpr double minor = 0.3;
  for (;;) {
    const double u = 2.0 * std::numbers::pi * rng.uniform();
    const double v = 2.0 * std::numbers::pi * rng.uniform();
    // Area element is proportional to the distance from the axis.
    if (rng.uniform() * (major + minor) <= major + minor * std::cos(v)) {
      const double ring = major + minor * std::cos(v);
      return {ring * std::cos(u), ring * std::sin(u), minor * std::sin(v)};
    }
  }
}

const std::vector<Triangle>& pyramid_triangles() {
  static const std::vector<Triangle> triangles = [] {
    const Point3 apex{0.0, 0.0, 1.0};
    const Point3 c0{-1.0, -1.0, -1.0}, c1{1.0, -1.0, -1.0}, c2{1.0, 1.0, -1.0}, c3{-1.0, 1.0, -1.0};
    return std::vector<Triangle>{{c0, c1, apex}, {c1, c2, apex}, {c2, c3, apex},
                                 {c3, c0, apex}, {c0, c1, c2},   {c0, c2, c3}};
  }();
  return triangles;
}

Point3 plane_point(Rng& rng) { return {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), 0.0}; }

Point3 helix_point(Rng& rng) {
  constexpr double radius = 0.85;
  constexpr double tube = 0.15;
  constexpr double turns = 2.0;
  const double t = rng.uniform();
  const double angle = 2.0 * std::numbers::pi * turns * t;
  const Point3 center{radius * std::cos(angle), radius * std::sin(angle), 2.0 * t - 1.0};
  // Tube cross-section spanned by the inward radial direction and the binormal.
  const Point3 normal{-std::cos(angle), -std::sin(angle), 0.0};
  Point3 tangent{-radius * std::sin(angle) * 2.0 * std::numbers::pi * turns,
                 radius * std::cos(angle) * 2.0 * std::numbers::pi * turns, 2.0};
  const double tn = std::sqrt(tangent[0] * tangent[0] + tangent[1] * tangent[1] + tangent[2] * tangent[2]);
  for (double& x : tangent) x /= tn;
  const Point3 binormal{tangent[1] * normal[2] - tangent[2] * normal[1],
                        tangent[2] * normal[0] - tangent[0] * normal[2],
                        tangent[0] * normal[1] - tangent[1] * normal[0]};
  const double phi = 2.0 * std::numbers::pi * rng.uniform();
  Point3 p;
  for (std::size_t d = 0; d < 3; ++d) {
    p[d] = center[d] + tube * (std::cos(phi) * normal[d] + std::sin(phi) * binormal[d]);
  }
  return p;
}

void put_bytes(std::ostream& out, const void* data, std::size_t size) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
}

template <typename T>
void put_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::uint64_t bits = 0;
  if constexpr (std::is_same_v<T, double>) {
    bits = std::bit_cast<std::uint64_t>(value);
  } else {
    bits = static_cast<std::uint64_t>(value);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  put_bytes(out, bytes, sizeof(T));
}

/// Bounds-checked little-endian reader over an in-memory image.
class ByteReader {
 public:
  explicit ByteReader(std::string bytes) : bytes_(std::move(bytes)) {}

  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::string_view take(std::size_t n, const char* what) {
    if (n > remaining()) throw FormatError(std::string("checkpoint truncated while reading ") + what);
    std::string_view view(bytes_.data() + pos_, n);
    pos_ += n;
    return view;
  }

  template <typename T>
  T get(const char* what) {
    const std::string_view raw = take(sizeof(T), what);
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(raw[i])) << (8 * i);
    }
    if constexpr (std::is_same_v<T, double>) {
      return std::bit_cast<double>(bits);
    } else {
      return static_cast<T>(bits);
    }
  }

 private:
  std::string bytes_;
  std::size_t pos_ = 0;
};

std::ifstream open_input(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw std::runtime_error("cannot open " + path.string() + " for reading");
  return in;
}

std::ofstream open_output(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return out;
}

void finish_output(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

Mesh parse_off(std::istream& in) {
  LineReader reader(in);
  std::vector<std::string_view> tokens;
  if (!reader.next(tokens)) throw ParseError(reader.line() + 1, "empty OFF input");

  if (tokens[0].starts_with("OFF")) {
    const std::string_view fused = tokens[0].substr(3);
    if (fused.empty()) {
      tokens.erase(tokens.begin());
    } else {
      tokens[0] = fused;  // "OFF490 518 0"
    }
    if (tokens.empty() && !reader.next(tokens)) throw ParseError(reader.line() + 1, "missing OFF counts line");
  }

  std::size_t vertex_count = 0, face_count = 0, edge_count = 0;
  const std::size_t counts_line = reader.line();
  if (tokens.size() < 2 || tokens.size() > 3 || !parse_size(tokens[0], vertex_count) ||
      !parse_size(tokens[1], face_count) || (tokens.size() == 3 && !parse_size(tokens[2], edge_count))) {
    throw ParseError(counts_line, "expected counts line 'V F [E]' of non-negative integers");
  }
  if (vertex_count == 0) throw ParseError(counts_line, "mesh declares no vertices");

  Mesh mesh;
  mesh.vertices.reserve(std::min(vertex_count, kMaxReserve));
  for (std::size_t v = 0; v < vertex_count; ++v) {
    if (!reader.next(tokens)) {
      throw ParseError(reader.line() + 1, "file ends after " + std::to_string(v) + " of " +
                                              std::to_string(vertex_count) + " vertices");
    }
    Point3 p;
    if (tokens.size() < 3 || !parse_double(tokens[0], p[0]) || !parse_double(tokens[1], p[1]) ||
        !parse_double(tokens[2], p[2])) {
      throw ParseError(reader.line(), "expected three finite vertex coordinates");
    }
    mesh.vertices.push_back(p);
  }

  mesh.faces.reserve(std::min(face_count, kMaxReserve));
  for (std::size_t f = 0; f < face_count; ++f) {
    if (!reader.next(tokens)) {
      throw ParseError(reader.line() + 1,
                       "file ends after " + std::to_string(f) + " of " + std::to_string(face_count) + " faces");
    }
    std::size_t n = 0;
    if (!parse_size(tokens[0], n) || n < 3) {
      throw ParseError(reader.line(), "face must start with a vertex count of at least 3");
    }
    if (tokens.size() - 1 < n) throw ParseError(reader.line(), "face lists fewer indices than its count");
    std::vector<std::size_t> idx(n);
    for (std::size_t j = 0; j < n; ++j) {
      if (!parse_size(tokens[j + 1], idx[j])) throw ParseError(reader.line(), "face index is not an integer");
      if (idx[j] >= vertex_count) {
        throw ParseError(reader.line(), "face index " + std::to_string(idx[j]) + " out of range for " +
                                            std::to_string(vertex_count) + " vertices");
      }
    }
    for (std::size_t j = 1; j + 1 < n; ++j) mesh.faces.push_back({idx[0], idx[j], idx[j + 1]});
  }
  return mesh;
}

Mesh parse_off(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_off(in);
}

Mesh load_off(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_off(in);
}

PointCloud sample_mesh_surface(const Mesh& mesh, std::size_t n, std::uint64_t seed) {
  std::vector<Triangle> triangles;
  triangles.reserve(mesh.faces.size());
  for (const auto& f : mesh.faces) {
    for (std::size_t i : f) {
      if (i >= mesh.vertices.size()) throw ContractError("mesh face index out of range");
    }
    triangles.push_back({mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]});
  }
  Rng rng(seed);
  return PointCloud{sample_triangles(triangles, n, rng), std::nullopt};
}

const std::vector<std::string>& synthetic_class_names() {
  static const std::vector<std::string> names{"sphere", "cube", "cylinder", "cone",
                                              "torus",  "pyramid", "plane", "helix"};
  return names;
}

PointCloud generate_synthetic(std::size_t class_id, std::size_t n_points, std::uint64_t seed, bool augment) {
  if (class_id >= kSyntheticClasses) {
    throw ConfigError("unknown synthetic class " + std::to_string(class_id) + " (expected 0.." +
                      std::to_string(kSyntheticClasses - 1) + ")");
  }
  Rng rng(seed);
  PointCloud cloud;
  cloud.label = class_id;
  if (class_id == 5) {
    cloud.points = sample_triangles(pyramid_triangles(), n_points, rng);
  } else {
    cloud.points.reserve(n_points);
    for (std::size_t i = 0; i < n_points; ++i) {
      switch (class_id) {
        case 0: cloud.points.push_back(sphere_point(rng)); break;
        case 1: cloud.points.push_back(cube_point(rng)); break;
        case 2: cloud.points.push_back(cylinder_point(rng)); break;
        case 3: cloud.points.push_back(cone_point(rng)); break;
        case 4: cloud.points.push_back(torus_point(rng)); break;
        case 6: cloud.points.push_back(plane_point(rng)); break;
        default: cloud.points.push_back(helix_point(rng)); break;
      }
    }
  }
  if (augment) {
    const double scale = rng.uniform(0.8, 1.2);
    const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const Point3 shift{rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)};
    const double cs = std::cos(theta), sn = std::sin(theta);
    for (auto& p : cloud.points) {
      const double x = cs * p[0] - sn * p[1];
      const double y = sn * p[0] + cs * p[1];
      p = {scale * x + shift[0], scale * y + shift[1], scale * p[2] + shift[2]};
    }
  }
  return cloud;
}

PointCloud parse_xyz(std::istream& in) {
  LineReader reader(in);
  std::vector<std::string_view> tokens;
  PointCloud cloud;
  bool first = true;
  while (reader.next(tokens)) {
    if (tokens.size() != 3 && tokens.size() != 4) {
      throw ParseError(reader.line(), "expected 'x y z' or 'x y z label'");
    }
    Point3 p;
    for (std::size_t d = 0; d < 3; ++d) {
      if (!parse_double(tokens[d], p[d])) {
        throw ParseError(reader.line(), "non-numeric coordinate '" + std::string(tokens[d]) + "'");
      }
    }
    std::optional<std::size_t> label;
    if (tokens.size() == 4) {
      std::size_t value = 0;
      if (!parse_size(tokens[3], value)) {
        throw ParseError(reader.line(), "label '" + std::string(tokens[3]) + "' is not a non-negative integer");
      }
      label = value;
    }
    if (first) {
      cloud.label = label;
      first = false;
    } else if (label != cloud.label) {
      throw ParseError(reader.line(), "label column differs from the first point's");
    }
    cloud.points.push_back(p);
  }
  if (cloud.points.empty()) throw ParseError(std::max<std::size_t>(reader.line(), 1), "cloud has no points");
  return cloud;
}

PointCloud load_xyz(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_xyz(in);
}

void write_xyz(std::ostream& out, const PointCloud& cloud) {
  char buffer[128];
  for (const auto& p : cloud.points) {
    int n = std::snprintf(buffer, sizeof(buffer), "%.17g %.17g %.17g", p[0], p[1], p[2]);
    out.write(buffer, n);
    if (cloud.label) {
      n = std::snprintf(buffer, sizeof(buffer), " %zu", *cloud.label);
      out.write(buffer, n);
    }
    out.put('\n');
  }
}

void save_xyz(const std::filesystem::path& path, const PointCloud& cloud) {
  auto out = open_output(path);
  write_xyz(out, cloud);
  finish_output(out, path);
}

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint) {
  constexpr auto u32_max = std::numeric_limits<std::uint32_t>::max();
  if (checkpoint.config.size() > u32_max || checkpoint.tensors.size() > u32_max) {
    throw FormatError("checkpoint section too large");
  }
  put_bytes(out, "HEMB", 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.config.size()));
  put_bytes(out, checkpoint.config.data(), checkpoint.config.size());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.tensors.size()));
  for (const auto& [name, tensor] : checkpoint.tensors) {
    if (name.size() > u32_max) throw FormatError("tensor name too long");
    if (tensor.rank() > 255) throw FormatError("tensor rank above 255");
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    put_bytes(out, name.data(), name.size());
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(tensor.rank()));
    for (std::size_t extent : tensor.shape()) put_le<std::uint64_t>(out, extent);
    for (double v : tensor.data()) put_le<double>(out, v);
  }
}

Checkpoint read_checkpoint(std::istream& in) {
  ByteReader reader{std::string{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()}};
  if (reader.take(4, "magic") != "HEMB") throw FormatError("bad checkpoint magic");
  const auto version = reader.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint checkpoint;
  const auto config_size = reader.get<std::uint32_t>("config length");
  checkpoint.config = std::string(reader.take(config_size, "config text"));
  const auto count = reader.get<std::uint32_t>("tensor count");
  std::unordered_set<std::string> seen;
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_size = reader.get<std::uint32_t>("name length");
    std::string name(reader.take(name_size, "tensor name"));
    if (!seen.insert(name).second) throw FormatError("duplicate tensor '" + name + "'");
    const auto rank = reader.get<std::uint8_t>("rank");
    if (rank == 0) throw FormatError("tensor '" + name + "' has rank 0");
    Shape shape(rank);
    std::uint64_t numel = 1;
    for (auto& extent : shape) {
      const auto e = reader.get<std::uint64_t>("extent");
      if (e == 0) throw FormatError("tensor '" + name + "' has a zero extent");
      if (e > std::numeric_limits<std::size_t>::max() || numel > std::numeric_limits<std::uint64_t>::max() / e) {
        throw FormatError("tensor '" + name + "' extent product overflows");
      }
      numel *= e;
      extent = static_cast<std::size_t>(e);
    }
    if (numel > reader.remaining() / sizeof(double)) {
      throw FormatError("checkpoint truncated inside tensor '" + name + "' payload");
    }
    std::vector<double> values(static_cast<std::size_t>(numel));
    for (double& v : values) v = reader.get<double>("payload");
    try {
      checkpoint.tensors.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
    } catch (const NumericError& e) {
      throw FormatError("tensor payload holds non-finite values");
    }
  }
  if (reader.remaining() != 0) throw FormatError("trailing bytes after the last tensor");
  return checkpoint;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  auto out = open_output(path, std::ios::out | std::ios::binary);
  write_checkpoint(out, checkpoint);
  finish_output(out, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto in = open_input(path, std::ios::in | std::ios::binary);
  return read_checkpoint(in);
}

void restore_parameters(const Checkpoint& checkpoint, const ParamList& params) {
  std::unordered_map<std::string, const Tensor*> stored;
  for (const auto& [name, tensor] : checkpoint.tensors) stored.emplace(name, &tensor);
  if (stored.size() != params.size()) {
    throw FormatError("checkpoint holds " + std::to_string(stored.size()) + " tensors, model expects " +
                      std::to_string(params.size()));
  }
  for (const auto& [name, tensor] : params) {
    const auto it = stored.find(name);
    if (it == stored.end()) throw FormatError("checkpoint lacks tensor '" + name + "'");
    if (it->second->shape() != tensor.shape()) {
      throw FormatError("tensor '" + name + "' stored as " + shape_str(it->second->shape()) + ", model expects " +
                        shape_str(tensor.shape()));
    }
    Tensor target = tensor;
    const auto source = it->second->data();
    std::copy(source.begin(), source.end(), target.leaf_data().begin());
  }
}

}  // namespace hemb
