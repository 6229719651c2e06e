#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace ergl::encoder {

// Width of the pretrained tagger's event vocabulary.
inline constexpr std::size_t kEventVocabSize = 527;

// Soft event-occurrence probabilities per clip. Real tables carry the full
// 527-event vocabulary; toy tables may be narrower.
class PseudoLabelTable {
 public:
  PseudoLabelTable() = default;
  explicit PseudoLabelTable(std::vector<std::string> event_names);

  void add_row(std::string clip_id, std::vector<double> probabilities);

  std::size_t num_events() const { return event_names_.size(); }
  std::size_t num_clips() const { return clip_ids_.size(); }
  const std::vector<std::string>& event_names() const { return event_names_; }
  const std::vector<std::string>& clip_ids() const { return clip_ids_; }

  bool contains(const std::string& clip_id) const { return index_.count(clip_id) != 0; }
  // Throws InputError for an unknown clip.
  std::span<const double> row(const std::string& clip_id) const;

 private:
  std::vector<std::string> event_names_;
  std::vector<std::string> clip_ids_;
  std::vector<double> values_;  // [clips x events]
  std::unordered_map<std::string, std::size_t> index_;
};

// CSV: header "clip_id,<event_0>,...,<event_k>", one row per clip.
PseudoLabelTable read_pseudo_labels(const std::filesystem::path& path);
void write_pseudo_labels(const std::filesystem::path& path, const PseudoLabelTable& table);

struct RankedEvent {
  std::size_t index;
  double total;  // probability summed over the ranked clips
};

// All events ordered by accumulated probability (descending), ties broken
// by smaller index.
std::vector<RankedEvent> rank_events(const PseudoLabelTable& table,
                                     std::span<const std::string> clip_ids);

// The n top-ranked events, returned in increasing index order.
std::vector<std::size_t> rank_top_n(const PseudoLabelTable& table,
                                    std::span<const std::string> clip_ids, std::size_t n);

}  // namespace ergl::encoder
