#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lbn/errors.hpp"
#include "lbn/model.hpp"

namespace lbn {

// Checkpoint file layout, all integers little-endian:
//
//   "LBN1"                      4 bytes magic
//   u16 version                 currently 1
//   u32 record count
//   record*:
//     u32 name length, name bytes (UTF-8)
//     u32 rank, u64 dims[rank]
//     u64 payload length in bytes (8 * product(dims))
//     payload: IEEE-754 binary64 values, row-major
//
// Record names: "spec" ({input_dim, queries, classes, hidden widths...}),
// "hidden.<l>.weight|bias", "bn.<l>.mu_h|var_h|gamma|beta|phi_raw|eps",
// "head.weight|bias".

inline constexpr char kCheckpointMagic[4] = {'L', 'B', 'N', '1'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

enum class CheckpointErrc { Io, BadMagic, VersionMismatch, Truncated, Malformed };

class CheckpointError : public Error {
 public:
  CheckpointError(CheckpointErrc code, const std::string& what) : Error(what), code_(code) {}
  CheckpointErrc code() const { return code_; }

 private:
  CheckpointErrc code_;
};

struct TensorRecord {
  std::string name;
  Tensor value;
};

std::vector<TensorRecord> to_records(const Model& model);
Model from_records(const std::vector<TensorRecord>& records);

std::vector<std::uint8_t> encode_checkpoint(const Model& model);
Model decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace lbn
