#include "wsod/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace wsod {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'W', 'S', 'O', 'D', 'C', 'K', 'P', 'T'};

template <class T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T take(std::ifstream& in, const std::string& what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw CheckpointError("truncated checkpoint (" + what + ")");
  }
  return v;
}

}  // namespace

void save_checkpoint(const Detector& model, int iteration,
                     const std::filesystem::path& path, const Json& extra) {
  Json header;
  header["detector"] = to_json(model.config());
  header["seed"] = model.seed();
  header["iteration"] = iteration;
  Json tensors = Json::array();
  for (const auto& t : model.params().tensors()) {
    tensors.push_back({{"name", t.name}, {"shape", t.shape}});
  }
  header["tensors"] = std::move(tensors);
  header["extra"] = extra;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : model.params().tensors()) {
    out.write(reinterpret_cast<const char*>(t.values.data()),
              static_cast<std::streamsize>(t.values.size() * sizeof(float)));
  }
  if (!out) throw CheckpointError("write failed for " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, 8) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint file");
  }
  const auto version = take<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version));
  }
  const auto len = take<std::uint64_t>(in, "header length");
  if (len > (1u << 26)) throw CheckpointError("implausible header length");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) {
    throw CheckpointError("truncated checkpoint header");
  }
  Json header;
  try {
    header = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  }
  DetectorConfig cfg;
  std::uint64_t seed = 0;
  int iteration = 0;
  try {
    cfg = detector_config_from_json(header.at("detector"));
    seed = header.at("seed").get<std::uint64_t>();
    iteration = header.at("iteration").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  }
  LoadedCheckpoint ck{Detector(cfg, seed), iteration,
                      header.value("extra", Json::object())};
  auto tensors = ck.model.params().tensors();
  const Json& names = header.at("tensors");
  if (names.size() != tensors.size()) {
    throw CheckpointError("checkpoint tensor count does not match the model");
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& t = tensors[i];
    if (names[i].at("name").get<std::string>() != t.name ||
        names[i].at("shape").get<std::vector<int>>() != t.shape) {
      throw CheckpointError("checkpoint tensor '" +
                            names[i].at("name").get<std::string>() +
                            "' does not match the model layout");
    }
    if (!in.read(reinterpret_cast<char*>(t.values.data()),
                 static_cast<std::streamsize>(t.values.size() * sizeof(float)))) {
      throw CheckpointError("truncated checkpoint data");
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw CheckpointError("trailing bytes after checkpoint data");
  }
  return ck;
}

}  // namespace wsod
