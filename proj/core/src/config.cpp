#include "ergl/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ergl/errors.hpp"
#include "ergl/pseudo_labels.hpp"

namespace ergl::pipeline {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& value) {
  N out{};
  const char* first = value.data();
  const char* last = first + value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) {
    throw ConfigError("invalid value '" + value + "' for " + key);
  }
  return out;
}

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

std::string profile_name(Profile p) { return p == Profile::kPaper ? "paper" : "test"; }

Profile parse_profile(const std::string& name) {
  if (name == "paper") return Profile::kPaper;
  if (name == "test") return Profile::kTest;
  throw ConfigError("unknown profile '" + name + "' (expected paper or test)");
}

void TrainConfig::validate() const {
  if (n_events < 2 || n_events > encoder::kEventVocabSize) {
    throw ConfigError("n_events must be in [2, 527], got " + std::to_string(n_events));
  }
  if (u_layers < 1) throw ConfigError("u_layers must be at least 1");
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ConfigError("val_fraction must be in (0, 1)");
  }
  if (!(block_dropout >= 0.0 && block_dropout < 1.0) ||
      !(head_dropout >= 0.0 && head_dropout < 1.0)) {
    throw ConfigError("dropout rates must be in [0, 1)");
  }
}

ModelConfig TrainConfig::model_config(std::size_t num_scenes) const {
  ModelConfig m;
  m.backbone = profile == Profile::kPaper ? encoder::paper_backbone() : encoder::test_backbone();
  m.backbone.block_dropout = block_dropout;
  m.num_events = n_events;
  m.num_scenes = num_scenes;
  m.gcn_layers = u_layers;
  m.head_dropout = head_dropout;
  return m;
}

std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text,
                                                                  const std::string& source) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key or value");
    }
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

bool apply_setting(TrainConfig& c, const std::string& key, const std::string& value) {
  if (key == "n_events") c.n_events = parse_number<std::size_t>(key, value);
  else if (key == "u_layers") c.u_layers = parse_number<std::size_t>(key, value);
  else if (key == "batch_size") c.batch_size = parse_number<std::size_t>(key, value);
  else if (key == "lr") c.lr = parse_number<double>(key, value);
  else if (key == "weight_decay") c.weight_decay = parse_number<double>(key, value);
  else if (key == "epochs") c.epochs = parse_number<std::size_t>(key, value);
  else if (key == "val_fraction") c.val_fraction = parse_number<double>(key, value);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "profile") c.profile = parse_profile(value);
  else if (key == "block_dropout") c.block_dropout = parse_number<double>(key, value);
  else if (key == "head_dropout") c.head_dropout = parse_number<double>(key, value);
  else return false;
  return true;
}

TrainConfig read_config_file(const std::filesystem::path& path,
                             const std::vector<std::string>& extra_keys,
                             std::vector<std::pair<std::string, std::string>>* extras) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  TrainConfig c;
  for (const auto& [key, value] : parse_key_values(ss.str(), path.string())) {
    if (apply_setting(c, key, value)) continue;
    if (std::find(extra_keys.begin(), extra_keys.end(), key) != extra_keys.end()) {
      if (extras) extras->emplace_back(key, value);
      continue;
    }
    throw ConfigError(path.string() + ": unknown key '" + key + "'");
  }
  return c;
}

std::string to_config_text(const TrainConfig& c) {
  std::ostringstream out;
  out << "n_events = " << c.n_events << '\n'
      << "u_layers = " << c.u_layers << '\n'
      << "batch_size = " << c.batch_size << '\n'
      << "lr = " << format_double(c.lr) << '\n'
      << "weight_decay = " << format_double(c.weight_decay) << '\n'
      << "epochs = " << c.epochs << '\n'
      << "val_fraction = " << format_double(c.val_fraction) << '\n'
      << "seed = " << c.seed << '\n'
      << "profile = " << profile_name(c.profile) << '\n'
      << "block_dropout = " << format_double(c.block_dropout) << '\n'
      << "head_dropout = " << format_double(c.head_dropout) << '\n';
  return out.str();
}

}  // namespace ergl::pipeline
