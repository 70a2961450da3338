#include "wsod/manifest_io.hpp"

#include <png.h>

#include <cstdio>
#include <fstream>
#include <memory>

#include "json.hpp"

namespace wsod {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json box_json(const BBox& b) { return json::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

BBox box_from(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 4) {
    throw std::invalid_argument(what + " must be an array of 4 numbers");
  }
  BBox b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
         j[3].get<double>()};
  if (!b.valid()) throw std::invalid_argument(what + " is degenerate");
  return b;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

std::string record_to_json_line(const ImageRecord& r) {
  json j;
  j["id"] = r.id;
  j["group"] = r.group;
  j["split"] = to_string(r.split);
  j["image"] = r.image_path;
  j["width"] = r.image.width;
  j["height"] = r.image.height;
  if (r.is_strong()) {
    const auto& a = r.strong();
    j["supervision"] = "strong";
    j["label"] = to_string(a.moi_label);
    j["moi_box"] = box_json(a.moi_box);
    json bg = json::array();
    for (const auto& b : a.background_boxes) bg.push_back(box_json(b));
    j["background_boxes"] = bg;
  } else {
    j["supervision"] = "weak";
    j["label"] = to_string(r.weak().label);
  }
  if (r.truth) {
    json t;
    t["label"] = to_string(r.truth->label);
    if (r.truth->moi_box) t["moi_box"] = box_json(*r.truth->moi_box);
    json mb = json::array();
    for (const auto& b : r.truth->mass_boxes) mb.push_back(box_json(b));
    t["mass_boxes"] = mb;
    j["truth"] = t;
  }
  return j.dump();
}

ImageRecord record_from_json_line(const std::string& line, int line_no) {
  std::string id = "?";
  try {
    const json j = json::parse(line);
    id = j.at("id").get<std::string>();
    ImageRecord r;
    r.id = id;
    r.group = j.at("group").get<std::string>();
    r.split = parse_split(j.at("split").get<std::string>());
    r.image_path = j.at("image").get<std::string>();
    const int width = j.at("width").get<int>();
    const int height = j.at("height").get<int>();
    r.image.width = width;
    r.image.height = height;
    const std::string sup = j.at("supervision").get<std::string>();
    const DiagnosisLabel label =
        parse_diagnosis(j.at("label").get<std::string>());
    if (sup == "strong") {
      StrongAnnotation a;
      a.moi_label = label;
      a.moi_box = box_from(j.at("moi_box"), "moi_box");
      if (j.contains("background_boxes")) {
        for (const auto& b : j["background_boxes"]) {
          a.background_boxes.push_back(box_from(b, "background box"));
        }
      }
      validate_strong(a, width, height, id);
      r.annotation = std::move(a);
    } else if (sup == "weak") {
      if (j.contains("moi_box") || j.contains("background_boxes")) {
        throw std::invalid_argument("weak record carries a bounding box");
      }
      r.annotation = WeakAnnotation{label};
    } else {
      throw std::invalid_argument("unknown supervision kind '" + sup + "'");
    }
    if (j.contains("truth")) {
      const json& t = j["truth"];
      SyntheticTruth truth;
      truth.label = parse_diagnosis(t.at("label").get<std::string>());
      if (t.contains("moi_box")) truth.moi_box = box_from(t["moi_box"], "truth box");
      for (const auto& b : t.at("mass_boxes")) {
        truth.mass_boxes.push_back(box_from(b, "truth mass box"));
      }
      r.truth = std::move(truth);
    }
    return r;
  } catch (const std::exception& e) {
    throw ManifestError("manifest line " + std::to_string(line_no) +
                        " (record '" + id + "'): " + e.what());
  }
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  const fs::path dir = path.has_parent_path() ? path.parent_path() : ".";
  fs::create_directories(dir);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  json header{{"format", "wsod-manifest"},
              {"version", kManifestVersion},
              {"source", to_string(m.source)}};
  out << header.dump() << '\n';
  for (const auto& r : m.records) {
    out << record_to_json_line(r) << '\n';
    if (!r.image.empty()) {
      const fs::path img = dir / r.image_path;
      fs::create_directories(img.parent_path());
      write_png(r.image, img);
    }
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest " + path.string());
  const fs::path dir = path.has_parent_path() ? path.parent_path() : ".";
  DatasetManifest m;
  std::string line;
  if (!std::getline(in, line)) throw ManifestError("empty manifest");
  try {
    const json header = json::parse(line);
    if (header.at("format") != "wsod-manifest") {
      throw std::invalid_argument("not a wsod manifest");
    }
    if (header.at("version").get<int>() != kManifestVersion) {
      throw std::invalid_argument("unsupported manifest version");
    }
    m.source = header.at("source") == "synthetic" ? DataSource::kSynthetic
                                                  : DataSource::kExternal;
  } catch (const std::exception& e) {
    throw ManifestError(std::string("manifest header: ") + e.what());
  }
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ImageRecord r = record_from_json_line(line, line_no);
    const int w = r.image.width;
    const int h = r.image.height;
    try {
      r.image = read_png(dir / r.image_path);
    } catch (const std::exception& e) {
      throw ManifestError("record '" + r.id + "': " + e.what());
    }
    if (r.image.width != w || r.image.height != h) {
      throw ManifestError("record '" + r.id +
                          "': image size does not match the manifest");
    }
    m.records.push_back(std::move(r));
  }
  try {
    validate_manifest(m);
  } catch (const std::exception& e) {
    throw ManifestError(e.what());
  }
  return m;
}

GrayImage read_png(const fs::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open image " + path.string());
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng init failed");
  }
  GrayImage img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("corrupt PNG " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
      color == PNG_COLOR_TYPE_PALETTE) {
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  png_read_update_info(png, info);
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y) {
    rows[y] = img.pixels.data() + static_cast<std::size_t>(y) * img.width;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const GrayImage& img, const fs::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot write image " + path.string());
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG encode failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() +
                                             static_cast<std::size_t>(y) *
                                                 img.width));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace wsod
