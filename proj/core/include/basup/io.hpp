#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "basup/image.hpp"

namespace basup::io {

namespace fs = std::filesystem;

/// Reads a color image (PNG, JPEG, ...) as RGB.
Image read_image(const fs::path& path);
/// Writes a lossless RGB PNG.
void write_image(const fs::path& path, const Image& image);

/// Masks are stored as 8-bit single-channel 0/255 and held in memory as 0/1.
Mask read_mask(const fs::path& path);
void write_mask(const fs::path& path, const Mask& mask);

/// 16-bit single-channel label maps.
LabelMap read_labels(const fs::path& path);
void write_labels(const fs::path& path, const LabelMap& labels);

/// In-memory PNG encoding of an RGB image and decoding of a label map.
std::string encode_png(const Image& image);
LabelMap decode_labels(const std::string& bytes, const std::string& origin);

/// 8-bit grayscale rendering of a [0,1] map.
void write_gray(const fs::path& path, const FloatMap& map);
FloatMap read_gray(const fs::path& path);

/// Flow file: "BAFLOW01", u32 width, u32 height, then width*height (dx, dy)
/// float32 pairs, row-major, all little-endian.
inline constexpr char kFlowMagic[8] = {'B', 'A', 'F', 'L', 'O', 'W', '0', '1'};
FlowField read_flow(const fs::path& path);
void write_flow(const fs::path& path, const FlowField& flow);

/// Creates parent directories of `path`; throws IoError when that fails.
void ensure_parent(const fs::path& path);

/// Whole-file helpers.
std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

/// Flat `key = value` text with optional `[section]` headers; section keys
/// are addressed as "section.key". Insertion order is preserved on write.
class KeyValueFile {
 public:
  KeyValueFile() = default;

  static KeyValueFile parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValueFile load(const fs::path& path);
  void save(const fs::path& path) const;
  std::string str() const;

  bool contains(const std::string& key) const;
  std::optional<std::string> find(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback) const;
  std::string require(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, const char* value) { set(key, std::string(value)); }
  void set(const std::string& key, double value);
  void set(const std::string& key, std::int64_t value);
  void set(const std::string& key, int value) { set(key, static_cast<std::int64_t>(value)); }
  void set(const std::string& key, bool value);

  /// Every entry whose key starts with "prefix." with the prefix stripped.
  KeyValueFile section(const std::string& prefix) const;
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
  std::string origin_;
};

/// Shortest round-trip decimal form of a double.
std::string format_double(double value);

/// 64-bit FNV-1a of `text` as 16 lowercase hex digits.
std::string hash_text(const std::string& text);

}  // namespace basup::io
