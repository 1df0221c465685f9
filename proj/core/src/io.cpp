#include "basup/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "basup/error.hpp"

namespace basup::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

namespace {

cv::Mat load_mat(const fs::path& path, int flags) {
  if (!fs::exists(path)) throw IoError("file not found: " + path.string());
  cv::Mat m = cv::imread(path.string(), flags);
  if (m.empty()) throw IoError("unreadable image: " + path.string());
  return m;
}

void store_mat(const fs::path& path, const cv::Mat& m) {
  ensure_parent(path);
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), m, {cv::IMWRITE_PNG_COMPRESSION, 3});
  } catch (const cv::Exception& e) {
    throw IoError("cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write " + path.string());
}

}  // namespace

void ensure_parent(const fs::path& path) {
  const fs::path parent = path.parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  fs::create_directories(parent, ec);
  if (ec) throw IoError("cannot create directory " + parent.string() + ": " + ec.message());
}

Image read_image(const fs::path& path) {
  cv::Mat m = load_mat(path, cv::IMREAD_COLOR);
  Image img(m.cols, m.rows, 3);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < m.cols; ++x) {
      img.at(x, y, 0) = row[x][2];
      img.at(x, y, 1) = row[x][1];
      img.at(x, y, 2) = row[x][0];
    }
  }
  return img;
}

void write_image(const fs::path& path, const Image& image) {
  if (image.channels() != 3) throw ShapeError("write_image: expected 3 channels");
  cv::Mat m(image.height(), image.width(), CV_8UC3);
  for (int y = 0; y < m.rows; ++y) {
    auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < m.cols; ++x) {
      row[x] = cv::Vec3b(image.at(x, y, 2), image.at(x, y, 1), image.at(x, y, 0));
    }
  }
  store_mat(path, m);
}

Mask read_mask(const fs::path& path) {
  cv::Mat m = load_mat(path, cv::IMREAD_GRAYSCALE);
  Mask mask(m.cols, m.rows, 1);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) mask.at(x, y) = row[x] >= 128 ? 1 : 0;
  }
  return mask;
}

void write_mask(const fs::path& path, const Mask& mask) {
  cv::Mat m(mask.height(), mask.width(), CV_8UC1);
  for (int y = 0; y < m.rows; ++y) {
    auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) row[x] = mask.at(x, y) ? 255 : 0;
  }
  store_mat(path, m);
}

LabelMap read_labels(const fs::path& path) {
  cv::Mat m = load_mat(path, cv::IMREAD_UNCHANGED);
  if (m.channels() != 1) throw IoError("label map must be single-channel: " + path.string());
  if (m.depth() == CV_8U) m.convertTo(m, CV_16U);
  if (m.depth() != CV_16U) throw IoError("label map must be 16-bit: " + path.string());
  LabelMap labels(m.cols, m.rows, 1);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<std::uint16_t>(y);
    for (int x = 0; x < m.cols; ++x) labels.at(x, y) = row[x];
  }
  return labels;
}

void write_labels(const fs::path& path, const LabelMap& labels) {
  cv::Mat m(labels.height(), labels.width(), CV_16UC1);
  for (int y = 0; y < m.rows; ++y) {
    auto* row = m.ptr<std::uint16_t>(y);
    for (int x = 0; x < m.cols; ++x) row[x] = labels.at(x, y);
  }
  store_mat(path, m);
}

void write_gray(const fs::path& path, const FloatMap& map) {
  cv::Mat m(map.height(), map.width(), CV_8UC1);
  for (int y = 0; y < m.rows; ++y) {
    auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) {
      const float v = std::clamp(map.at(x, y), 0.0f, 1.0f);
      row[x] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
  }
  store_mat(path, m);
}

std::string encode_png(const Image& image) {
  if (image.channels() != 3) throw ShapeError("encode_png: expected 3 channels");
  cv::Mat m(image.height(), image.width(), CV_8UC3);
  for (int y = 0; y < m.rows; ++y) {
    auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < m.cols; ++x) {
      row[x] = cv::Vec3b(image.at(x, y, 2), image.at(x, y, 1), image.at(x, y, 0));
    }
  }
  std::vector<std::uint8_t> buf;
  if (!cv::imencode(".png", m, buf)) throw IoError("PNG encoding failed");
  return std::string(buf.begin(), buf.end());
}

LabelMap decode_labels(const std::string& bytes, const std::string& origin) {
  const std::vector<std::uint8_t> buf(bytes.begin(), bytes.end());
  cv::Mat m;
  try {
    m = cv::imdecode(buf, cv::IMREAD_UNCHANGED);
  } catch (const cv::Exception& e) {
    throw IoError("cannot decode label map from " + origin + ": " + e.what());
  }
  if (m.empty()) throw IoError("cannot decode label map from " + origin);
  if (m.channels() != 1) throw IoError("label map must be single-channel: " + origin);
  if (m.depth() == CV_8U) m.convertTo(m, CV_16U);
  if (m.depth() != CV_16U) throw IoError("label map must be 16-bit: " + origin);
  LabelMap labels(m.cols, m.rows, 1);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<std::uint16_t>(y);
    for (int x = 0; x < m.cols; ++x) labels.at(x, y) = row[x];
  }
  return labels;
}

FloatMap read_gray(const fs::path& path) {
  cv::Mat m = load_mat(path, cv::IMREAD_GRAYSCALE);
  FloatMap map(m.cols, m.rows, 1);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) map.at(x, y) = row[x] / 255.0f;
  }
  return map;
}

FlowField read_flow(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open flow file: " + path.string());
  char magic[8];
  std::uint32_t dims[2];
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!in || std::memcmp(magic, kFlowMagic, 8) != 0) {
    throw IoError("bad flow header: " + path.string());
  }
  FlowField flow(static_cast<int>(dims[0]), static_cast<int>(dims[1]), 2);
  const auto bytes = static_cast<std::streamsize>(flow.storage().size() * sizeof(float));
  in.read(reinterpret_cast<char*>(flow.storage().data()), bytes);
  if (in.gcount() != bytes) throw IoError("truncated flow file: " + path.string());
  return flow;
}

void write_flow(const fs::path& path, const FlowField& flow) {
  if (flow.channels() != 2) throw ShapeError("write_flow: expected 2 channels");
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write flow file: " + path.string());
  const std::uint32_t dims[2] = {static_cast<std::uint32_t>(flow.width()),
                                 static_cast<std::uint32_t>(flow.height())};
  out.write(kFlowMagic, 8);
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(flow.storage().data()),
            static_cast<std::streamsize>(flow.storage().size() * sizeof(float)));
  if (!out) throw IoError("short write: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write: " + path.string());
}

std::string format_double(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

std::string hash_text(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = kHex[h & 0xf];
  return out;
}

// ---------------------------------------------------------------------------
// KeyValueFile

KeyValueFile KeyValueFile::parse(const std::string& text, const std::string& origin) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  KeyValueFile kv;
  kv.origin_ = origin;
  for (const auto& [key, node] : tree) {
    if (node.empty()) {
      kv.entries_.emplace_back(key, node.data());
    } else {
      for (const auto& [sub, leaf] : node) kv.entries_.emplace_back(key + "." + sub, leaf.data());
    }
  }
  return kv;
}

KeyValueFile KeyValueFile::load(const fs::path& path) {
  return parse(read_text(path), path.string());
}

std::string KeyValueFile::str() const {
  std::ostringstream out;
  std::vector<std::string> sections;
  for (const auto& [k, v] : entries_) {
    const auto dot = k.find('.');
    if (dot == std::string::npos) {
      out << k << " = " << v << '\n';
    } else {
      const std::string s = k.substr(0, dot);
      if (std::find(sections.begin(), sections.end(), s) == sections.end()) sections.push_back(s);
    }
  }
  for (const auto& s : sections) {
    out << "\n[" << s << "]\n";
    for (const auto& [k, v] : entries_) {
      if (k.size() > s.size() && k.compare(0, s.size(), s) == 0 && k[s.size()] == '.') {
        out << k.substr(s.size() + 1) << " = " << v << '\n';
      }
    }
  }
  return out.str();
}

void KeyValueFile::save(const fs::path& path) const { write_text(path, str()); }

bool KeyValueFile::contains(const std::string& key) const { return find(key).has_value(); }

std::optional<std::string> KeyValueFile::find(const std::string& key) const {
  for (const auto& [k, v] : entries_) {
    if (k == key) return v;
  }
  return std::nullopt;
}

std::string KeyValueFile::get(const std::string& key, const std::string& fallback) const {
  return find(key).value_or(fallback);
}

std::string KeyValueFile::require(const std::string& key) const {
  auto v = find(key);
  if (!v) throw ConfigError(origin_ + ": missing key '" + key + "'");
  return *v;
}

double KeyValueFile::get_double(const std::string& key, double fallback) const {
  auto v = find(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    double d = std::stod(*v, &used);
    if (used != v->size()) throw std::invalid_argument(*v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ": key '" + key + "' is not a number: " + *v);
  }
}

std::int64_t KeyValueFile::get_int(const std::string& key, std::int64_t fallback) const {
  auto v = find(key);
  if (!v) return fallback;
  std::int64_t out = 0;
  auto res = std::from_chars(v->data(), v->data() + v->size(), out);
  if (res.ec != std::errc() || res.ptr != v->data() + v->size()) {
    throw ConfigError(origin_ + ": key '" + key + "' is not an integer: " + *v);
  }
  return out;
}

bool KeyValueFile::get_bool(const std::string& key, bool fallback) const {
  auto v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
  throw ConfigError(origin_ + ": key '" + key + "' is not a boolean: " + *v);
}

void KeyValueFile::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = value;
      return;
    }
  }
  entries_.emplace_back(key, value);
}

void KeyValueFile::set(const std::string& key, double value) { set(key, format_double(value)); }
void KeyValueFile::set(const std::string& key, std::int64_t value) { set(key, std::to_string(value)); }
void KeyValueFile::set(const std::string& key, bool value) { set(key, std::string(value ? "true" : "false")); }

KeyValueFile KeyValueFile::section(const std::string& prefix) const {
  KeyValueFile out;
  out.origin_ = origin_ + "[" + prefix + "]";
  const std::string p = prefix + ".";
  for (const auto& [k, v] : entries_) {
    if (k.compare(0, p.size(), p) == 0) out.entries_.emplace_back(k.substr(p.size()), v);
  }
  return out;
}

}  // namespace basup::io
