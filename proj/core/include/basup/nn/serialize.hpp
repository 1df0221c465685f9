#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "basup/io.hpp"
#include "basup/nn/tensor.hpp"

namespace basup::nn {

/// Container shared by model checkpoints: 8-byte magic, u32 version, u64
/// header length, key-value header text, u32 tensor count, then per tensor
/// u32 name length, name, four u32 dims and float32 data (little-endian).
void write_model_file(const std::filesystem::path& path, const char (&magic)[8], std::uint32_t version,
                      const io::KeyValueFile& header, const std::vector<Parameter<float>*>& params);

/// Reads the header of a model file, checking magic and version.
io::KeyValueFile read_model_header(std::istream& in, const std::filesystem::path& path, const char (&magic)[8],
                                   std::uint32_t version);
/// Reads the tensor section into `params`, matching by name and shape.
/// Throws Error("checkpoint/config mismatch ...") on any disagreement.
void read_model_tensors(std::istream& in, const std::filesystem::path& path,
                        const std::vector<Parameter<float>*>& params);

}  // namespace basup::nn
