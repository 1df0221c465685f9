#include "basup/nn/serialize.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "basup/error.hpp"

namespace basup::nn {

namespace {

template <typename V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& in, const std::filesystem::path& path) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw IoError("truncated model file: " + path.string());
  return v;
}

}  // namespace

void write_model_file(const std::filesystem::path& path, const char (&magic)[8], std::uint32_t version,
                      const io::KeyValueFile& header, const std::vector<Parameter<float>*>& params) {
  const std::string text = header.str();
  io::ensure_parent(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write model file: " + path.string());
  out.write(magic, sizeof(magic));
  put<std::uint32_t>(out, version);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    for (int d : {p->value.n(), p->value.c(), p->value.h(), p->value.w()}) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    }
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(float)));
  }
  if (!out) throw IoError("failed writing model file: " + path.string());
}

io::KeyValueFile read_model_header(std::istream& in, const std::filesystem::path& path, const char (&magic)[8],
                                   std::uint32_t version) {
  char found[8];
  in.read(found, sizeof(found));
  if (!in || std::memcmp(found, magic, sizeof(found)) != 0) {
    throw IoError("not a " + std::string(magic, sizeof(magic)) + " model file: " + path.string());
  }
  const auto v = get<std::uint32_t>(in, path);
  if (v != version) throw IoError("unsupported model file version " + std::to_string(v) + ": " + path.string());
  const auto len = get<std::uint64_t>(in, path);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("truncated model file: " + path.string());
  return io::KeyValueFile::parse(text, path.string());
}

void read_model_tensors(std::istream& in, const std::filesystem::path& path,
                        const std::vector<Parameter<float>*>& params) {
  std::map<std::string, Parameter<float>*> by_name;
  for (auto* p : params) by_name[p->name] = p;
  const auto count = get<std::uint32_t>(in, path);
  if (count != by_name.size()) {
    throw Error("checkpoint/config mismatch: " + std::to_string(count) + " stored tensors, network has " +
                std::to_string(by_name.size()) + " (" + path.string() + ")");
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    int dims[4];
    for (int& d : dims) d = static_cast<int>(get<std::uint32_t>(in, path));
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw Error("checkpoint/config mismatch: unknown tensor '" + name + "' in " + path.string());
    }
    auto& value = it->second->value;
    if (value.n() != dims[0] || value.c() != dims[1] || value.h() != dims[2] || value.w() != dims[3]) {
      throw Error("checkpoint/config mismatch: tensor '" + name + "' has shape (" + std::to_string(dims[0]) + "," +
                  std::to_string(dims[1]) + "," + std::to_string(dims[2]) + "," + std::to_string(dims[3]) +
                  "), network expects " + value.shape_string());
    }
    in.read(reinterpret_cast<char*>(value.data()), static_cast<std::streamsize>(value.size() * sizeof(float)));
    if (!in) throw IoError("truncated model file: " + path.string());
  }
}

}  // namespace basup::nn
