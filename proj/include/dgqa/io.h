// PNG images and on-disk dataset manifests.
#ifndef DGQA_IO_H_
#define DGQA_IO_H_

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgqa/distortion.h"
#include "dgqa/image.h"

namespace dgqa {

namespace fs = std::filesystem;

// Any 8/16-bit gray, gray-alpha, RGB, RGBA or palette PNG; alpha is dropped.
RasterImage read_png(const fs::path& path);
// 8-bit RGB; values are clamped and rounded to the nearest of 256 levels.
void write_png(const fs::path& path, const RasterImage& image);
// The image exactly as write_png then read_png would return it.
RasterImage quantize_8bit(const RasterImage& image);

// Every *.png directly under `dir`, sorted by file name; ids are file stems.
std::vector<Reference> read_reference_dir(const fs::path& dir);
void write_reference_dir(const fs::path& dir, const std::vector<Reference>& refs);

void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);
// Two-space indented dump with a trailing newline.
void write_json(const fs::path& path, const nlohmann::json& j);
nlohmann::json read_json(const fs::path& path);

inline constexpr const char* kDatasetManifest = "manifest.json";
inline constexpr const char* kTargetLabels = "labels.json";

// <dir>/manifest.json plus <dir>/images/*.png. `extra` fields are merged
// into the manifest object.
void write_dataset(const fs::path& dir, const DomainDataset& dataset,
                   const nlohmann::json& extra = nlohmann::json::object());
DomainDataset read_dataset(const fs::path& dir);

// Target images without labels: <dir>/manifest.json and <dir>/images/.
struct TargetManifest {
  std::vector<std::string> image_paths;  // relative to the target directory
  std::vector<std::string> reference_ids;
};
void write_target_images(const fs::path& dir, const std::vector<Sample>& samples,
                         const nlohmann::json& extra = nlohmann::json::object());
TargetManifest read_target_manifest(const fs::path& dir);
std::vector<RasterImage> read_target_images(const fs::path& dir);

// Withheld labels, one entry per target image in manifest order.
struct TargetLabels {
  std::vector<double> quality;
  std::vector<std::vector<int>> families;  // provenance, may be empty
};
void write_target_labels(const fs::path& path, const TargetLabels& labels);
TargetLabels read_target_labels(const fs::path& path);

}  // namespace dgqa

#endif  // DGQA_IO_H_
