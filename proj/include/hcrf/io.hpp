#pragma once

// File formats.
//
// PMAP (little-endian):
//   offset 0   magic "PMAP"
//   offset 4   u16 version (= 1)
//   offset 6   u16 num_classes
//   offset 8   u32 height
//   offset 12  u32 width
//   offset 16  height*width*num_classes IEEE-754 binary32, row-major,
//              class index fastest
//
// Masks are binary PGM (P5, maxval 255); pixels > 127 read as abnormal.
// Manifests, weights, configs and reports are JSON.

#include <array>
#include <bit>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <system_error>
#include <unistd.h>
#include <vector>

#include <nlohmann/json.hpp>

#include "hcrf/core.hpp"

namespace hcrf {

namespace fs = std::filesystem;

class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Raw file access
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

// Writes to a sibling temporary and renames it over `path`.
inline void write_file_atomic(const fs::path& path,
                              const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw IoError("cannot rename onto '" + path.string() + "': " +
                  ec.message());
  }
}

inline void write_text_atomic(const fs::path& path, const std::string& text) {
  write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

// ---------------------------------------------------------------------------
// PMAP
// ---------------------------------------------------------------------------

inline constexpr std::uint16_t kPmapVersion = 1;
inline constexpr std::size_t kPmapHeaderBytes = 16;

namespace detail {

inline void put_u16(std::uint8_t* p, std::uint16_t v) {
  p[0] = static_cast<std::uint8_t>(v);
  p[1] = static_cast<std::uint8_t>(v >> 8);
}
inline void put_u32(std::uint8_t* p, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}
inline std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_pmap(const ProbMap& map) {
  if (map.num_classes() > std::numeric_limits<std::uint16_t>::max() ||
      map.height() > std::numeric_limits<std::uint32_t>::max() ||
      map.width() > std::numeric_limits<std::uint32_t>::max())
    throw FormatError("map dimensions do not fit the PMAP header");
  std::vector<std::uint8_t> b(kPmapHeaderBytes + map.data().size() * 4);
  std::uint8_t* p = b.data();
  p[0] = 'P';
  p[1] = 'M';
  p[2] = 'A';
  p[3] = 'P';
  detail::put_u16(p + 4, kPmapVersion);
  detail::put_u16(p + 6, static_cast<std::uint16_t>(map.num_classes()));
  detail::put_u32(p + 8, static_cast<std::uint32_t>(map.height()));
  detail::put_u32(p + 12, static_cast<std::uint32_t>(map.width()));
  p += kPmapHeaderBytes;
  for (float v : map.data()) {
    detail::put_u32(p, std::bit_cast<std::uint32_t>(v));
    p += 4;
  }
  return b;
}

inline ProbMap decode_pmap(const std::vector<std::uint8_t>& b,
                           const std::string& name = "<buffer>") {
  if (b.size() < kPmapHeaderBytes)
    throw FormatError(name + ": header truncated at byte " +
                      std::to_string(b.size()) + " of " +
                      std::to_string(kPmapHeaderBytes));
  if (!(b[0] == 'P' && b[1] == 'M' && b[2] == 'A' && b[3] == 'P'))
    throw FormatError(name + ": bad magic, not a PMAP file");
  const auto version = detail::get_u16(&b[4]);
  if (version != kPmapVersion)
    throw FormatError(name + ": unsupported PMAP version " +
                      std::to_string(version));
  const std::uint64_t k = detail::get_u16(&b[6]);
  const std::uint64_t h = detail::get_u32(&b[8]);
  const std::uint64_t w = detail::get_u32(&b[12]);
  if (k < 2 || h == 0 || w == 0)
    throw FormatError(name + ": degenerate dimensions " + std::to_string(h) +
                      "x" + std::to_string(w) + "x" + std::to_string(k));
  // h, w < 2^32 and k < 2^16, so h*w fits; guard the rest.
  const std::uint64_t sites = h * w;
  constexpr std::uint64_t kMaxValues =
      std::numeric_limits<std::uint64_t>::max() / 4 / 65536;
  if (sites > kMaxValues / k)
    throw FormatError(name + ": dimension overflow");
  const std::uint64_t values = sites * k;
  const std::uint64_t expected = kPmapHeaderBytes + values * 4;
  if (b.size() < expected)
    throw FormatError(name + ": payload truncated at byte " +
                      std::to_string(b.size()) + ", header promises " +
                      std::to_string(expected) + " bytes");
  if (b.size() > expected)
    throw FormatError(name + ": " + std::to_string(b.size() - expected) +
                      " trailing bytes after payload at byte " +
                      std::to_string(expected));
  std::vector<float> data(values);
  const std::uint8_t* p = b.data() + kPmapHeaderBytes;
  for (std::uint64_t i = 0; i < values; ++i, p += 4)
    data[i] = std::bit_cast<float>(detail::get_u32(p));
  return {h, w, k, std::move(data)};
}

inline ProbMap read_pmap(const fs::path& path) {
  return decode_pmap(read_file_bytes(path), path.string());
}

inline void write_pmap(const ProbMap& map, const fs::path& path) {
  write_file_atomic(path, encode_pmap(map));
}

// ---------------------------------------------------------------------------
// PGM masks
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> encode_mask(const LabelMask& mask) {
  if (mask.num_classes() != 2)
    throw FormatError("PGM masks hold 2-class labels only");
  const std::string header = "P5\n" + std::to_string(mask.width()) + " " +
                             std::to_string(mask.height()) + "\n255\n";
  std::vector<std::uint8_t> b(header.begin(), header.end());
  b.reserve(header.size() + mask.size());
  for (auto l : mask.labels()) b.push_back(l == kAbnormal ? 255 : 0);
  return b;
}

inline LabelMask decode_mask(const std::vector<std::uint8_t>& b,
                             const std::string& name = "<buffer>") {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < b.size()) {
      if (b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else if (std::isspace(b[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&](const char* what) -> std::uint64_t {
    skip_space();
    if (pos >= b.size() || !std::isdigit(b[pos]))
      throw FormatError(name + ": malformed PGM header (" + what + ")");
    std::uint64_t v = 0;
    while (pos < b.size() && std::isdigit(b[pos])) {
      v = v * 10 + (b[pos] - '0');
      if (v > std::numeric_limits<std::uint32_t>::max())
        throw FormatError(name + ": PGM " + what + " too large");
      ++pos;
    }
    return v;
  };

  if (b.size() < 2 || b[0] != 'P' || b[1] != '5')
    throw FormatError(name + ": not a binary PGM (P5) file");
  pos = 2;
  const auto w = read_uint("width");
  const auto h = read_uint("height");
  const auto maxval = read_uint("maxval");
  if (maxval != 255)
    throw FormatError(name + ": unexpected PGM maxval " +
                      std::to_string(maxval) + ", expected 255");
  if (pos >= b.size() || !std::isspace(b[pos]))
    throw FormatError(name + ": malformed PGM header");
  ++pos;
  if (w == 0 || h == 0) throw FormatError(name + ": PGM has zero area");
  const std::uint64_t n = w * h;
  if (b.size() - pos < n)
    throw FormatError(name + ": PGM pixel data truncated at byte " +
                      std::to_string(b.size()) + ", expected " +
                      std::to_string(pos + n));
  std::vector<std::uint16_t> labels(n);
  for (std::uint64_t i = 0; i < n; ++i)
    labels[i] = b[pos + i] > 127 ? kAbnormal : kNormal;
  return {h, w, 2, std::move(labels)};
}

inline LabelMask read_mask(const fs::path& path) {
  return decode_mask(read_file_bytes(path), path.string());
}

inline void write_mask(const LabelMask& mask, const fs::path& path) {
  write_file_atomic(path, encode_mask(mask));
}

// ---------------------------------------------------------------------------
// JSON files
// ---------------------------------------------------------------------------

inline nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline std::string dump_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

inline void write_json_file(const nlohmann::json& j, const fs::path& path) {
  write_text_atomic(path, dump_json(j));
}

// ---------------------------------------------------------------------------
// Manifest
//
// {
//   "images": [
//     { "image_id": "img000", "label": "abnormal",
//       "pixel_map": "img000/pixel.pmap",
//       "patch_maps": ["img000/alpha.pmap", "img000/beta.pmap",
//                      "img000/gamma.pmap"],
//       "gt_mask": "img000/gt.pgm" }            // optional
//   ]
// }
//
// Relative paths resolve against the manifest's directory.
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string image_id;
  std::uint16_t label = kNormal;
  fs::path pixel_map;
  std::array<fs::path, kBackbones> patch_maps;
  std::optional<fs::path> gt_mask;
};

inline std::optional<std::uint16_t> parse_label(const std::string& s) {
  if (s == "normal") return kNormal;
  if (s == "abnormal") return kAbnormal;
  return std::nullopt;
}

inline const char* label_name(std::uint16_t label) {
  return label == kNormal ? "normal" : "abnormal";
}

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& obj,
                                     const char* key,
                                     const std::string& where) {
  if (!obj.is_object() || !obj.contains(key))
    throw FormatError(where + ": missing required field '" + key + "'");
  return obj.at(key);
}

inline std::string require_string(const nlohmann::json& obj, const char* key,
                                  const std::string& where) {
  const auto& v = require(obj, key, where);
  if (!v.is_string())
    throw FormatError(where + ": field '" + key + "' must be a string");
  return v.get<std::string>();
}

inline fs::path resolve_existing(const fs::path& base, const std::string& p,
                                 const std::string& where) {
  fs::path full = fs::path(p).is_absolute() ? fs::path(p) : base / p;
  if (!fs::exists(full))
    throw IoError(where + ": dangling path '" + full.string() + "'");
  return full;
}

}  // namespace detail

inline std::vector<ManifestEntry> parse_manifest(const nlohmann::json& j,
                                                 const fs::path& base,
                                                 const std::string& name) {
  const auto& images = detail::require(j, "images", name);
  if (!images.is_array())
    throw FormatError(name + ": 'images' must be an array");
  std::vector<ManifestEntry> out;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& e = images[i];
    const std::string where = name + ": images[" + std::to_string(i) + "]";
    ManifestEntry m;
    m.image_id = detail::require_string(e, "image_id", where);
    if (!ids.insert(m.image_id).second)
      throw FormatError(where + ": duplicate image_id '" + m.image_id + "'");
    const auto label = parse_label(detail::require_string(e, "label", where));
    if (!label)
      throw FormatError(where + ": label must be 'normal' or 'abnormal'");
    m.label = *label;
    m.pixel_map = detail::resolve_existing(
        base, detail::require_string(e, "pixel_map", where), where);
    const auto& pm = detail::require(e, "patch_maps", where);
    if (!pm.is_array() || pm.size() != kBackbones)
      throw FormatError(where + ": 'patch_maps' must list exactly 3 paths");
    for (std::size_t b = 0; b < kBackbones; ++b) {
      if (!pm[b].is_string())
        throw FormatError(where + ": patch_maps entries must be strings");
      m.patch_maps[b] =
          detail::resolve_existing(base, pm[b].get<std::string>(), where);
    }
    if (e.contains("gt_mask") && !e.at("gt_mask").is_null())
      m.gt_mask = detail::resolve_existing(
          base, detail::require_string(e, "gt_mask", where), where);
    out.push_back(std::move(m));
  }
  return out;
}

inline std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  return parse_manifest(read_json_file(path), path.parent_path(),
                        path.string());
}

}  // namespace hcrf
