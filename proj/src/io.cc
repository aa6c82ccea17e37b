#include "dgqa/io.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include <png.h>

#include "dgqa/errors.h"

namespace dgqa {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

[[noreturn]] void png_fail(png_structp png, png_const_charp message) {
  // Unwinds through libpng's setjmp frame.
  auto* error = static_cast<std::string*>(png_get_error_ptr(png));
  if (error) *error = message;
  png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

uint8_t to_byte(float v) {
  const float c = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f;
  return static_cast<uint8_t>(std::lround(c * 255.0f));
}

std::string image_file_name(const Sample& s, size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "_%04zu_L%d.png", index, s.level);
  return s.reference_id + buf;
}

}  // namespace

RasterImage read_png(const fs::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open image '" + path.string() + "'");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError("not a PNG file: '" + path.string() + "'");
  }
  std::string error;
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, png_fail, png_warn);
  if (!png) throw IoError("libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  std::vector<uint8_t> pixels;
  std::vector<png_bytep> rows;
  png_uint_32 width = 0, height = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("cannot decode '" + path.string() + "': " + error);
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_gray_to_rgb(png);
  }
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const size_t stride = png_get_rowbytes(png, info);
  pixels.resize(stride * height);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  if (stride != static_cast<size_t>(width) * 3) {
    throw IoError("unexpected pixel layout in '" + path.string() + "'");
  }
  RasterImage image(static_cast<int>(width), static_cast<int>(height));
  auto out = image.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(pixels[i]) / 255.0f;
  return image;
}

void write_png(const fs::path& path, const RasterImage& image) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot write image '" + path.string() + "'");
  std::string error;
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, png_fail, png_warn);
  if (!png) throw IoError("libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  const size_t stride = static_cast<size_t>(image.width()) * 3;
  std::vector<uint8_t> pixels(stride * static_cast<size_t>(image.height()));
  const auto in = image.data();
  for (size_t i = 0; i < pixels.size(); ++i) pixels[i] = to_byte(in[i]);
  std::vector<png_bytep> rows(static_cast<size_t>(image.height()));
  for (size_t y = 0; y < rows.size(); ++y) rows[y] = pixels.data() + y * stride;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("cannot encode '" + path.string() + "': " + error);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width()),
               static_cast<png_uint_32>(image.height()), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(file.get()) != 0) {
    throw IoError("cannot write image '" + path.string() + "'");
  }
}

RasterImage quantize_8bit(const RasterImage& image) {
  RasterImage out = image;
  for (float& v : out.data()) v = static_cast<float>(to_byte(v)) / 255.0f;
  return out;
}

std::vector<Reference> read_reference_dir(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) {
    throw IoError("reference directory '" + dir.string() + "' does not exist");
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") {
      files.push_back(entry.path());
    }
  }
  if (ec) throw IoError("cannot list '" + dir.string() + "': " + ec.message());
  if (files.empty()) throw IoError("no PNG images in '" + dir.string() + "'");
  std::sort(files.begin(), files.end());
  std::vector<Reference> refs;
  for (const auto& f : files) refs.push_back({f.stem().string(), read_png(f)});
  return refs;
}

void write_reference_dir(const fs::path& dir, const std::vector<Reference>& refs) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  for (const auto& r : refs) write_png(dir / (r.id + ".png"), r.image);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  out.close();
  if (!out) throw IoError("cannot write '" + path.string() + "'");
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

nlohmann::json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("malformed JSON in '" + path.string() + "': " + e.what());
  }
}

void write_dataset(const fs::path& dir, const DomainDataset& dataset,
                   const nlohmann::json& extra) {
  dataset.validate();
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  nlohmann::json samples = nlohmann::json::array();
  for (size_t i = 0; i < dataset.samples.size(); ++i) {
    const Sample& s = dataset.samples[i];
    const std::string rel = "images/" + image_file_name(s, i);
    write_png(dir / rel, s.image);
    samples.push_back({{"image", rel},
                       {"reference_id", s.reference_id},
                       {"level", s.level},
                       {"quality", s.quality}});
  }
  nlohmann::json manifest = {{"format", "dgqa-dataset"},
                             {"version", 1},
                             {"name", dataset.name},
                             {"domain_id", to_int(dataset.domain)}};
  for (const auto& [key, value] : extra.items()) manifest[key] = value;
  manifest["samples"] = std::move(samples);
  write_json(dir / kDatasetManifest, manifest);
}

DomainDataset read_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / kDatasetManifest;
  const nlohmann::json m = read_json(manifest_path);
  DomainDataset d;
  try {
    if (m.at("format") != "dgqa-dataset") {
      throw IoError("'" + manifest_path.string() + "' is not a dataset manifest");
    }
    d.name = m.at("name").get<std::string>();
    d.domain = DomainId{m.at("domain_id").get<int>()};
    for (const auto& sj : m.at("samples")) {
      Sample s{read_png(dir / sj.at("image").get<std::string>()),
               sj.at("quality").get<double>(),
               sj.at("reference_id").get<std::string>(), sj.value("level", 0)};
      d.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid manifest '" + manifest_path.string() + "': " + e.what());
  }
  d.validate();
  return d;
}

void write_target_images(const fs::path& dir, const std::vector<Sample>& samples,
                         const nlohmann::json& extra) {
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  nlohmann::json images = nlohmann::json::array();
  for (size_t i = 0; i < samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "images/target_%04zu.png", i);
    write_png(dir / name, samples[i].image);
    images.push_back({{"image", name}, {"reference_id", samples[i].reference_id}});
  }
  nlohmann::json manifest = {{"format", "dgqa-target"}, {"version", 1}};
  for (const auto& [key, value] : extra.items()) manifest[key] = value;
  manifest["images"] = std::move(images);
  write_json(dir / kDatasetManifest, manifest);
}

TargetManifest read_target_manifest(const fs::path& dir) {
  const fs::path manifest_path = dir / kDatasetManifest;
  const nlohmann::json m = read_json(manifest_path);
  TargetManifest t;
  try {
    if (m.at("format") != "dgqa-target") {
      throw IoError("'" + manifest_path.string() + "' is not a target manifest");
    }
    for (const auto& ij : m.at("images")) {
      t.image_paths.push_back(ij.at("image").get<std::string>());
      t.reference_ids.push_back(ij.value("reference_id", std::string()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid manifest '" + manifest_path.string() + "': " + e.what());
  }
  return t;
}

std::vector<RasterImage> read_target_images(const fs::path& dir) {
  const TargetManifest t = read_target_manifest(dir);
  std::vector<RasterImage> out;
  for (const auto& p : t.image_paths) out.push_back(read_png(dir / p));
  return out;
}

void write_target_labels(const fs::path& path, const TargetLabels& labels) {
  nlohmann::json entries = nlohmann::json::array();
  for (size_t i = 0; i < labels.quality.size(); ++i) {
    nlohmann::json e = {{"index", i}, {"quality", labels.quality[i]}};
    if (i < labels.families.size()) e["families"] = labels.families[i];
    entries.push_back(std::move(e));
  }
  write_json(path, {{"format", "dgqa-target-labels"}, {"version", 1}, {"labels", entries}});
}

TargetLabels read_target_labels(const fs::path& path) {
  const nlohmann::json j = read_json(path);
  TargetLabels out;
  try {
    if (j.at("format") != "dgqa-target-labels") {
      throw IoError("'" + path.string() + "' is not a target label file");
    }
    for (const auto& e : j.at("labels")) {
      out.quality.push_back(e.at("quality").get<double>());
      out.families.push_back(e.value("families", std::vector<int>{}));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid label file '" + path.string() + "': " + e.what());
  }
  return out;
}

}  // namespace dgqa
