#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rtknet/tensor.hpp"

namespace rtknet {

// Tensor files are a JSON manifest {"dtype":"f32","shape":[...],"file":"x.bin"}
// next to a headerless little-endian float32 payload, row-major.

nlohmann::json tensor_manifest(const Shape& shape, const std::string& file);

// Writes `<stem>.bin` beside the manifest and the manifest itself.
void save_tensor(const std::filesystem::path& manifest_path, const Tensor& tensor);
Tensor load_tensor(const std::filesystem::path& manifest_path);

// Resolves a manifest object whose "file" is relative to `base_dir`.
Tensor load_tensor_entry(const nlohmann::json& entry, const std::filesystem::path& base_dir);

void write_f32_le(const std::filesystem::path& path, std::span<const float> values);
std::vector<float> read_f32_le(const std::filesystem::path& path, std::size_t expected_count);

void write_u32_le(const std::filesystem::path& path, std::span<const std::uint32_t> values);
std::vector<std::uint32_t> read_u32_le(const std::filesystem::path& path, std::size_t expected_count);

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> values);
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path, std::size_t expected_count);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);

}  // namespace rtknet
