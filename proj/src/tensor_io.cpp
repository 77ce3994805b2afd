#include "rtknet/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace rtknet {

namespace fs = std::filesystem;

namespace {

template <typename Word>
void write_words(const fs::path& path, std::span<const Word> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  std::vector<unsigned char> bytes(values.size() * sizeof(Word));
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::conditional_t<sizeof(Word) == 4, std::uint32_t, std::uint8_t>>(values[i]);
    for (std::size_t b = 0; b < sizeof(Word); ++b) {
      bytes[i * sizeof(Word) + b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xffu);
    }
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to " + path.string());
}

template <typename Word>
std::vector<Word> read_words(const fs::path& path, std::size_t expected_count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto length = static_cast<std::size_t>(in.tellg());
  if (length != expected_count * sizeof(Word)) {
    throw FormatError(path.string() + " holds " + std::to_string(length) + " bytes, expected " +
                      std::to_string(expected_count * sizeof(Word)));
  }
  in.seekg(0);
  std::vector<unsigned char> bytes(length);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(length));
  std::vector<Word> out(expected_count);
  using Bits = std::conditional_t<sizeof(Word) == 4, std::uint32_t, std::uint8_t>;
  for (std::size_t i = 0; i < expected_count; ++i) {
    Bits bits = 0;
    for (std::size_t b = 0; b < sizeof(Word); ++b) {
      bits = static_cast<Bits>(bits | (static_cast<Bits>(bytes[i * sizeof(Word) + b]) << (8 * b)));
    }
    out[i] = std::bit_cast<Word>(bits);
  }
  return out;
}

}  // namespace

nlohmann::json tensor_manifest(const Shape& shape, const std::string& file) {
  return {{"dtype", "f32"}, {"shape", shape}, {"file", file}};
}

void save_tensor(const fs::path& manifest_path, const Tensor& tensor) {
  const std::string bin_name = manifest_path.stem().string() + ".bin";
  write_f32_le(manifest_path.parent_path() / bin_name, tensor.data());
  write_json(manifest_path, tensor_manifest(tensor.shape(), bin_name));
}

Tensor load_tensor_entry(const nlohmann::json& entry, const fs::path& base_dir) {
  if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") || !entry.contains("file")) {
    throw FormatError("tensor manifest needs dtype, shape and file");
  }
  if (entry.at("dtype") != "f32") {
    throw FormatError("unsupported tensor dtype " + entry.at("dtype").dump());
  }
  Shape shape;
  try {
    shape = entry.at("shape").get<Shape>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad tensor shape: ") + e.what());
  }
  if (shape.empty() || std::find(shape.begin(), shape.end(), 0u) != shape.end()) {
    throw FormatError("tensor shape " + shape_string(shape) + " must be nonempty with positive dims");
  }
  std::size_t count = 1;
  for (auto d : shape) count *= d;
  auto data = read_f32_le(base_dir / entry.at("file").get<std::string>(), count);
  return Tensor(std::move(shape), std::move(data));
}

Tensor load_tensor(const fs::path& manifest_path) {
  return load_tensor_entry(read_json(manifest_path), manifest_path.parent_path());
}

void write_f32_le(const fs::path& path, std::span<const float> values) { write_words(path, values); }
std::vector<float> read_f32_le(const fs::path& path, std::size_t n) { return read_words<float>(path, n); }

void write_u32_le(const fs::path& path, std::span<const std::uint32_t> values) { write_words(path, values); }
std::vector<std::uint32_t> read_u32_le(const fs::path& path, std::size_t n) {
  return read_words<std::uint32_t>(path, n);
}

void write_bytes(const fs::path& path, std::span<const std::uint8_t> values) { write_words(path, values); }
std::vector<std::uint8_t> read_bytes(const fs::path& path, std::size_t n) {
  return read_words<std::uint8_t>(path, n);
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& doc) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << doc.dump(2) << '\n';
}

}  // namespace rtknet
