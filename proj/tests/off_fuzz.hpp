#pragma once

#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hemb/data_io.hpp"
#include "hemb/errors.hpp"
#include "hemb/rng.hpp"

namespace testutil {

struct FuzzStats {
  std::size_t runs = 0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;    // ParseError
  std::size_t unexpected = 0;  // any other exception
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Random byte-level damage: flips, insertions of OFF-relevant tokens,
/// deletions, duplications and truncation.
inline std::string mutate(const std::string& seed_text, hemb::Rng& rng) {
  static const std::vector<std::string> tokens{
      "-", "1e308", "nan", "inf", "#", "\n", " ", "OFF", "999999999999999999999", "3", "0", "-1", ".", "e", "\t"};
  std::string s = seed_text;
  const std::size_t edits = 1 + rng.below(6);
  for (std::size_t e = 0; e < edits; ++e) {
    const std::size_t pos = s.empty() ? 0 : rng.below(s.size() + 1);
    switch (rng.below(6)) {
      case 0:
        if (!s.empty() && pos < s.size()) s[pos] = static_cast<char>(rng.below(256));
        break;
      case 1:
        s.insert(pos, tokens[rng.below(tokens.size())]);
        break;
      case 2:
        if (pos < s.size()) s.erase(pos, 1 + rng.below(8));
        break;
      case 3:
        if (pos < s.size()) s.insert(pos, s.substr(pos, 1 + rng.below(16)));
        break;
      case 4:
        s.resize(pos);
        break;
      default:
        if (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos])))
          s[pos] = static_cast<char>('0' + rng.below(10));
        break;
    }
  }
  return s;
}

inline FuzzStats fuzz_off(const std::vector<std::string>& corpus, std::size_t count, std::uint64_t seed) {
  hemb::Rng rng(seed);
  FuzzStats stats;
  for (std::size_t i = 0; i < count; ++i) {
    const std::string text = mutate(corpus[i % corpus.size()], rng);
    ++stats.runs;
    try {
      const hemb::Mesh mesh = hemb::parse_off(text);
      // Accepted meshes must be internally consistent.
      bool ok = !mesh.vertices.empty();
      for (const auto& f : mesh.faces)
        for (std::size_t v : f) ok = ok && v < mesh.vertices.size();
      ok ? ++stats.accepted : ++stats.unexpected;
    } catch (const hemb::ParseError&) {
      ++stats.rejected;
    } catch (...) {
      ++stats.unexpected;
    }
  }
  return stats;
}

}  // namespace testutil
