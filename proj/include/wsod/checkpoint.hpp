#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>

#include "wsod/config_io.hpp"
#include "wsod/detector.hpp"

namespace wsod {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Layout: "WSODCKPT", u32 version, u64 header length, JSON header (detector
// config, seed, iteration, tensor names and shapes, free-form `extra`), then
// every tensor's values as little-endian float32 in header order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Detector& model, int iteration,
                     const std::filesystem::path& path,
                     const Json& extra = Json::object());

struct LoadedCheckpoint {
  Detector model;
  int iteration = 0;
  Json extra;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace wsod
