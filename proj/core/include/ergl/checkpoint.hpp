#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ergl/config.hpp"
#include "ergl/model.hpp"
#include "ergl/optim.hpp"

namespace ergl::pipeline {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> value;

  bool operator==(const NamedTensor&) const = default;
};

struct Checkpoint {
  TrainConfig config;
  std::vector<std::size_t> event_ids;      // canonical (increasing) order
  std::vector<std::string> event_names;    // names of event_ids
  std::vector<std::string> scene_vocab;
  double best_val_acc = 0.0;
  std::uint64_t best_epoch = 0;            // 1-based
  std::uint64_t adam_step = 0;
  std::vector<NamedTensor> tensors;        // parameters, buffers, adamw.m.*, adamw.v.*

  bool operator==(const Checkpoint&) const = default;
};

// Parameters then buffers, in registry order.
std::vector<NamedTensor> model_state(ErglModel<float>& model);
// Appends optimizer moments as adamw.m.<param> / adamw.v.<param>.
void append_optimizer_state(std::vector<NamedTensor>& out, ErglModel<float>& model,
                            const AdamWState<float>& state);

// Rebuilds the model described by the checkpoint and loads its state.
ErglModel<float> restore_model(const Checkpoint& ckpt);
AdamWState<float> restore_optimizer(const Checkpoint& ckpt, ErglModel<float>& model);

// Serialised layout (little-endian):
//   "ERGLCKP1" | u32 version | config text | event ids | event names |
//   scene vocab | f64 best acc | u64 best epoch | u64 adam step |
//   tensors (name, rank, dims, f32 data) | u32 CRC-32 of everything before it
std::string encode_checkpoint(const Checkpoint& ckpt, std::uint32_t version = kCheckpointVersion);
// Throws ChecksumError for truncated or corrupted bytes and VersionError for
// any version other than kCheckpointVersion.
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ergl::pipeline
