#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "alprio/tensor.hpp"

namespace alprio {

// ALPT1 container: magic "ALPT1", u8 rank, rank x u32 little-endian dims,
// then the row-major float32 little-endian payload.
inline constexpr char kTensorMagic[5] = {'A', 'L', 'P', 'T', '1'};

std::vector<std::uint8_t> encode_tensor(const FloatTensor& t);
FloatTensor decode_tensor(const std::vector<std::uint8_t>& bytes, const std::string& origin);

void write_tensor(const std::filesystem::path& path, const FloatTensor& t);
FloatTensor read_tensor(const std::filesystem::path& path);

// Whole-file helpers shared by the manifest, checkpoint and record writers.
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace alprio
