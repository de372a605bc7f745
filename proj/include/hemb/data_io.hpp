#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "hemb/geometry.hpp"
#include "hemb/nn.hpp"

namespace hemb {

struct Mesh {
  std::vector<Point3> vertices;
  std::vector<std::array<std::size_t, 3>> faces;
};

/**
 * Reads an ASCII OFF mesh.
 *
 * The "OFF" line is optional and may be fused with the counts ("OFF490 518 0",
 * as found in ModelNet40). Lines starting with '#' are skipped. Polygons are
 * fan-triangulated from their first vertex. Any violation raises ParseError
 * with the offending line number; arbitrary input never crashes the parser.
 */
Mesh parse_off(std::istream& in);
Mesh parse_off(std::string_view text);
Mesh load_off(const std::filesystem::path& path);

/// Area-weighted uniform surface sampling. Throws ContractError when every
/// triangle has zero area.
PointCloud sample_mesh_surface(const Mesh& mesh, std::size_t n, std::uint64_t seed);

inline constexpr std::size_t kSyntheticClasses = 8;
const std::vector<std::string>& synthetic_class_names();

/// Unit-size analytic surface samples of one procedural class, optionally
/// with random scale, translation and rotation about z.
PointCloud generate_synthetic(std::size_t class_id, std::size_t n_points, std::uint64_t seed, bool augment);

/// Lines of "x y z [label]"; '#' starts a comment line.
PointCloud parse_xyz(std::istream& in);
PointCloud load_xyz(const std::filesystem::path& path);
void write_xyz(std::ostream& out, const PointCloud& cloud);
void save_xyz(const std::filesystem::path& path, const PointCloud& cloud);

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string config;  // resolved "key = value" text
  ParamList tensors;
};

/**
 * Little-endian layout: "HEMB", u32 version, u32 config length, config bytes,
 * u32 tensor count, then per tensor u32 name length, name bytes, u8 rank,
 * u64 extents, f64 values.
 */
void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies stored values into matching model leaves by name. Missing,
/// unexpected or differently shaped tensors raise FormatError.
void restore_parameters(const Checkpoint& checkpoint, const ParamList& params);

}  // namespace hemb
