#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ergl/model.hpp"

namespace ergl::pipeline {

enum class Profile {
  kPaper,  // 4 conv blocks, 64/128/256/512 channels
  kTest,   // 1 conv block of 8 channels
};

std::string profile_name(Profile p);
Profile parse_profile(const std::string& name);

struct TrainConfig {
  std::size_t n_events = 25;
  std::size_t u_layers = 2;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::size_t epochs = 300;
  double val_fraction = 0.30;
  std::uint64_t seed = 0;
  Profile profile = Profile::kPaper;
  double block_dropout = 0.2;
  double head_dropout = 0.5;

  // Throws ConfigError on out-of-range values.
  void validate() const;
  ModelConfig model_config(std::size_t num_scenes) const;

  bool operator==(const TrainConfig&) const = default;
};

// "key = value" lines; '#' starts a comment. Keys keep file order.
std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text,
                                                                  const std::string& source);

// Sets one TrainConfig field from its textual value. Returns false for keys
// that are not TrainConfig fields; throws ConfigError for unparsable values.
bool apply_setting(TrainConfig& config, const std::string& key, const std::string& value);

// Parses a whole config file. Unknown keys are errors unless listed in
// `extra_keys`, whose values are returned through `extras`.
TrainConfig read_config_file(const std::filesystem::path& path,
                             const std::vector<std::string>& extra_keys = {},
                             std::vector<std::pair<std::string, std::string>>* extras = nullptr);

std::string to_config_text(const TrainConfig& config);

}  // namespace ergl::pipeline
