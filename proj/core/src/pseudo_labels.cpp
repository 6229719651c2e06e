#include "ergl/pseudo_labels.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>

#include "ergl/csv.hpp"
#include "ergl/errors.hpp"

namespace ergl::encoder {

PseudoLabelTable::PseudoLabelTable(std::vector<std::string> event_names)
    : event_names_(std::move(event_names)) {
  if (event_names_.empty()) throw InputError("pseudo-label table needs at least one event");
}

void PseudoLabelTable::add_row(std::string clip_id, std::vector<double> probabilities) {
  if (probabilities.size() != event_names_.size()) {
    throw InputError("pseudo-labels for '" + clip_id + "' have " +
                     std::to_string(probabilities.size()) + " values, expected " +
                     std::to_string(event_names_.size()));
  }
  for (double p : probabilities) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw InputError("pseudo-label for '" + clip_id + "' outside [0, 1]: " + std::to_string(p));
    }
  }
  if (!index_.emplace(clip_id, clip_ids_.size()).second) {
    throw InputError("duplicate clip_id in pseudo-label table: " + clip_id);
  }
  clip_ids_.push_back(std::move(clip_id));
  values_.insert(values_.end(), probabilities.begin(), probabilities.end());
}

std::span<const double> PseudoLabelTable::row(const std::string& clip_id) const {
  auto it = index_.find(clip_id);
  if (it == index_.end()) throw InputError("clip_id not in pseudo-label table: " + clip_id);
  return {values_.data() + it->second * event_names_.size(), event_names_.size()};
}

PseudoLabelTable read_pseudo_labels(const std::filesystem::path& path) {
  const csv::Table t = csv::read_file(path);
  if (t.header.size() < 2 || t.header[0] != "clip_id") {
    throw IoError(path.string() + ": header must start with clip_id followed by event names");
  }
  PseudoLabelTable table(std::vector<std::string>(t.header.begin() + 1, t.header.end()));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& fields = t.rows[r];
    std::vector<double> probs(fields.size() - 1);
    for (std::size_t i = 1; i < fields.size(); ++i) {
      const std::string& f = fields[i];
      const auto res = std::from_chars(f.data(), f.data() + f.size(), probs[i - 1]);
      if (res.ec != std::errc() || res.ptr != f.data() + f.size()) {
        throw IoError(path.string() + ":" + std::to_string(t.line_numbers[r]) +
                      ": malformed number '" + f + "'");
      }
    }
    table.add_row(fields[0], std::move(probs));
  }
  return table;
}

void write_pseudo_labels(const std::filesystem::path& path, const PseudoLabelTable& table) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  std::vector<std::string> header{"clip_id"};
  header.insert(header.end(), table.event_names().begin(), table.event_names().end());
  out << csv::join_line(header) << '\n';
  char buf[32];
  for (const std::string& id : table.clip_ids()) {
    std::vector<std::string> fields{id};
    for (double v : table.row(id)) {
      std::snprintf(buf, sizeof(buf), "%.9g", v);
      fields.emplace_back(buf);
    }
    out << csv::join_line(fields) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<RankedEvent> rank_events(const PseudoLabelTable& table,
                                     std::span<const std::string> clip_ids) {
  if (clip_ids.empty()) throw ConfigError("rank_events: no training clips given");
  std::vector<RankedEvent> ranked(table.num_events());
  for (std::size_t e = 0; e < ranked.size(); ++e) ranked[e] = {e, 0.0};
  for (const std::string& id : clip_ids) {
    const auto row = table.row(id);
    for (std::size_t e = 0; e < ranked.size(); ++e) ranked[e].total += row[e];
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const RankedEvent& a, const RankedEvent& b) {
    if (a.total != b.total) return a.total > b.total;
    return a.index < b.index;
  });
  return ranked;
}

std::vector<std::size_t> rank_top_n(const PseudoLabelTable& table,
                                    std::span<const std::string> clip_ids, std::size_t n) {
  if (n == 0 || n > table.num_events()) {
    throw ConfigError("rank_top_n: n = " + std::to_string(n) + " outside [1, " +
                      std::to_string(table.num_events()) + "]");
  }
  const std::vector<RankedEvent> ranked = rank_events(table, clip_ids);
  std::vector<std::size_t> top;
  top.reserve(n);
  for (std::size_t i = 0; i < n; ++i) top.push_back(ranked[i].index);
  std::sort(top.begin(), top.end());
  return top;
}

}  // namespace ergl::encoder
