#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "wsod/dataset.hpp"

namespace wsod {

// Raised for any schema violation; the message names the offending record.
class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Line-delimited JSON manifest. The first line is a header
//   {"format":"wsod-manifest","version":1,"source":"synthetic"}
// and every following line is one record:
//   {"id":"s00000","group":"train_g00000","split":"train",
//    "image":"images/s00000.png","width":128,"height":128,
//    "supervision":"strong","label":"B",
//    "moi_box":[x0,y0,x1,y1],"background_boxes":[[x0,y0,x1,y1],...],
//    "truth":{...}}
// Weak records carry "supervision":"weak" and a label only; a box on a weak
// record is a schema error. "truth" is optional generator ground truth.
inline constexpr int kManifestVersion = 1;

// Writes `path` and every record's image (relative to path's directory).
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);

// Loads the manifest and all referenced images. Throws ManifestError.
DatasetManifest load_manifest(const std::filesystem::path& path);

// Single-record codec, exposed for schema tests. `line_no` is only used in
// error messages.
std::string record_to_json_line(const ImageRecord& r);
ImageRecord record_from_json_line(const std::string& line, int line_no);

GrayImage read_png(const std::filesystem::path& path);
void write_png(const GrayImage& img, const std::filesystem::path& path);

}  // namespace wsod
