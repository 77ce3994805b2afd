#include "rtknet/scene.hpp"

#include <cmath>
#include <string>

#include "rtknet/tensor_io.hpp"

namespace rtknet {

namespace fs = std::filesystem;

std::size_t BinaryMask::area() const {
  std::size_t n = 0;
  for (auto b : bits) n += b ? 1 : 0;
  return n;
}

TensorD BinaryMask::to_tensor() const {
  std::vector<double> v(bits.begin(), bits.end());
  return TensorD({height, width}, std::move(v));
}

std::optional<Pixel> mask_centroid(const BinaryMask& mask) {
  double rows = 0.0, cols = 0.0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < mask.height; ++r) {
    for (std::size_t c = 0; c < mask.width; ++c) {
      if (mask.at(r, c)) {
        rows += static_cast<double>(r);
        cols += static_cast<double>(c);
        ++n;
      }
    }
  }
  if (n == 0) return std::nullopt;
  const auto count = static_cast<double>(n);
  return Pixel{static_cast<std::size_t>(std::round(rows / count)), static_cast<std::size_t>(std::round(cols / count))};
}

void GroundTruthScene::derive_semantic_map() {
  semantic_map.assign(height * width, kIgnoreLabel);
  for (const auto& seg : segments) {
    for (std::size_t p = 0; p < seg.mask.bits.size(); ++p) {
      if (seg.mask.bits[p]) semantic_map[p] = static_cast<std::int32_t>(seg.class_id);
    }
  }
}

void GroundTruthScene::validate() const {
  std::vector<std::uint8_t> covered(height * width, 0);
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& m = segments[i].mask;
    if (m.height != height || m.width != width || m.bits.size() != height * width) {
      throw InputError("segment " + std::to_string(i) + " mask is not " + std::to_string(height) + "x" +
                       std::to_string(width));
    }
    for (std::size_t p = 0; p < m.bits.size(); ++p) {
      if (!m.bits[p]) continue;
      if (covered[p]) throw InputError("segment " + std::to_string(i) + " overlaps an earlier segment");
      covered[p] = 1;
    }
  }
  if (semantic_map.size() != height * width) throw InputError("semantic map size does not match the scene");
}

GroundTruthScene make_scene(std::size_t height, std::size_t width, std::vector<Segment> segments) {
  GroundTruthScene scene{height, width, std::move(segments), {}};
  scene.derive_semantic_map();
  scene.validate();
  return scene;
}

PanopticLabelMap scene_to_label_map(const GroundTruthScene& scene, const PostprocConfig& cfg) {
  PanopticLabelMap map{scene.width, scene.height, cfg.offset, cfg.void_id,
                       std::vector<std::uint32_t>(scene.width * scene.height, cfg.void_id)};
  std::size_t next_instance = 1;
  for (const auto& seg : scene.segments) {
    const std::size_t instance = seg.is_thing ? next_instance++ : 0;
    const std::uint32_t id = encode_panoptic_id(seg.class_id, instance, cfg);
    for (std::size_t p = 0; p < seg.mask.bits.size(); ++p) {
      if (seg.mask.bits[p]) map.ids[p] = id;
    }
  }
  return map;
}

void save_scene(const fs::path& dir, const GroundTruthScene& scene) {
  fs::create_directories(dir);
  nlohmann::json segments = nlohmann::json::array();
  for (std::size_t i = 0; i < scene.segments.size(); ++i) {
    const auto& seg = scene.segments[i];
    const std::string file = "mask_" + std::to_string(i) + ".u8";
    write_bytes(dir / file, seg.mask.bits);
    segments.push_back({{"class_id", seg.class_id}, {"is_thing", seg.is_thing}, {"mask_file", file}});
  }
  write_json(dir / "scene.json", {{"width", scene.width}, {"height", scene.height}, {"segments", segments}});
}

GroundTruthScene load_scene(const fs::path& dir) {
  const auto doc = read_json(dir / "scene.json");
  GroundTruthScene scene;
  try {
    scene.width = doc.at("width").get<std::size_t>();
    scene.height = doc.at("height").get<std::size_t>();
    for (const auto& entry : doc.at("segments")) {
      Segment seg{entry.at("class_id").get<std::size_t>(), entry.at("is_thing").get<bool>(),
                  BinaryMask(scene.height, scene.width)};
      seg.mask.bits = read_bytes(dir / entry.at("mask_file").get<std::string>(), scene.height * scene.width);
      for (auto& b : seg.mask.bits) {
        if (b > 1) throw FormatError("mask values must be 0 or 1");
      }
      scene.segments.push_back(std::move(seg));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(dir.string() + "/scene.json: " + e.what());
  }
  scene.derive_semantic_map();
  scene.validate();
  return scene;
}

}  // namespace rtknet
