#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace egflow {

// Little-endian f32 blobs and small text files.
std::vector<std::uint8_t> encode_f32_le(std::span<const float> values);
std::vector<float> decode_f32_le(std::span<const std::uint8_t> bytes);

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

std::string hex64(std::uint64_t v);

}  // namespace egflow
