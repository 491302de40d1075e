#include "ego/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ego/rng.hpp"

namespace ego::corpus {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::string lowercase_ascii(std::string s) {
  for (char& c : s) {
    unsigned char u = static_cast<unsigned char>(c);
    if (u < 128) c = static_cast<char>(std::tolower(u));
  }
  return s;
}

void index_one_pos(const std::map<std::string, std::set<std::string>>& entries,
                   const char* pos_name,
                   std::map<std::string, std::set<std::string>>& normalized,
                   std::unordered_map<std::string, std::string>& lookup) {
  normalized.clear();
  lookup.clear();
  for (const auto& [canonical, surfaces] : entries) {
    auto& out = normalized[canonical];
    for (const auto& surface : surfaces) {
      std::string lower = lowercase_ascii(surface);
      auto [it, inserted] = lookup.emplace(lower, canonical);
      if (!inserted && it->second != canonical) {
        fail(ErrorKind::kValidation,
             "taxonomy: " + std::string(pos_name) + " surface form '" + lower +
                 "' maps to both '" + it->second + "' and '" + canonical + "'");
      }
      out.insert(lower);
    }
  }
}

}  // namespace

void Taxonomy::build_index() {
  auto nouns_in = nouns;
  auto verbs_in = verbs;
  index_one_pos(nouns_in, "noun", nouns, noun_lookup);
  index_one_pos(verbs_in, "verb", verbs, verb_lookup);
}

std::vector<NarrationRecord> load_narrations(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    fail(ErrorKind::kIo, "cannot open narration file: " + path.string());
  }

  std::vector<NarrationRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;  // blank lines are skipped

    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(ErrorKind::kParse, path.string() + ":" + std::to_string(line_no) +
                                  ": malformed record: " + e.what());
    }

    auto schema_error = [&](const std::string& what) {
      fail(ErrorKind::kSchema,
           path.string() + ":" + std::to_string(line_no) + ": " + what);
    };
    if (!obj.is_object()) schema_error("record is not an object");
    for (const char* field : {"video_id", "timestamp_sec", "text"}) {
      if (!obj.contains(field))
        schema_error(std::string("missing field \"") + field + "\"");
    }
    if (!obj["video_id"].is_string()) schema_error("\"video_id\" must be a string");
    if (!obj["timestamp_sec"].is_number())
      schema_error("\"timestamp_sec\" must be a number");
    if (!obj["text"].is_string()) schema_error("\"text\" must be a string");

    NarrationRecord rec;
    rec.video_id = obj["video_id"].get<std::string>();
    rec.timestamp_sec = obj["timestamp_sec"].get<double>();
    rec.text = obj["text"].get<std::string>();
    if (rec.timestamp_sec < 0.0) schema_error("\"timestamp_sec\" must be >= 0");
    if (trim(rec.text).empty()) schema_error("\"text\" is blank");
    records.push_back(std::move(rec));
  }
  return records;
}

Taxonomy load_taxonomy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    fail(ErrorKind::kIo, "cannot open taxonomy file: " + path.string());
  }

  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::kParse, path.string() + ": malformed taxonomy: " + e.what());
  }
  if (!doc.is_object() || !doc.contains("nouns") || !doc.contains("verbs")) {
    fail(ErrorKind::kSchema,
         path.string() + ": taxonomy needs top-level \"nouns\" and \"verbs\"");
  }

  Taxonomy tax;
  auto read_pos = [&](const char* key,
                      std::map<std::string, std::set<std::string>>& out) {
    const json& section = doc[key];
    if (!section.is_object()) {
      fail(ErrorKind::kSchema, path.string() + ": \"" + key +
                                   "\" must map canonicals to surface arrays");
    }
    for (const auto& [canonical, surfaces] : section.items()) {
      if (!surfaces.is_array()) {
        fail(ErrorKind::kSchema, path.string() + ": surfaces of '" + canonical +
                                     "' must be an array");
      }
      auto& set = out[canonical];
      for (const auto& surface : surfaces) {
        if (!surface.is_string()) {
          fail(ErrorKind::kSchema, path.string() + ": surface of '" +
                                       canonical + "' must be a string");
        }
        set.insert(surface.get<std::string>());
      }
    }
  };
  read_pos("nouns", tax.nouns);
  read_pos("verbs", tax.verbs);
  tax.build_index();
  return tax;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char c : text) {
    unsigned char u = static_cast<unsigned char>(c);
    if (u < 128 && std::ispunct(u)) {
      cleaned.push_back(' ');
    } else if (u < 128) {
      cleaned.push_back(static_cast<char>(std::tolower(u)));
    } else {
      cleaned.push_back(c);  // non-ASCII bytes pass through untouched
    }
  }
  std::vector<std::string> tokens;
  std::istringstream stream(cleaned);
  std::string token;
  while (stream >> token) tokens.push_back(token);
  return tokens;
}

TaggedNarration tag_narration(const NarrationRecord& record,
                              const Taxonomy& taxonomy) {
  TaggedNarration tagged;
  tagged.record = record;
  for (const std::string& token : tokenize(record.text)) {
    if (auto it = taxonomy.noun_lookup.find(token);
        it != taxonomy.noun_lookup.end()) {
      tagged.noun_set.insert(it->second);
    }
    if (auto it = taxonomy.verb_lookup.find(token);
        it != taxonomy.verb_lookup.end()) {
      tagged.verb_set.insert(it->second);
    }
  }
  return tagged;
}

ClipTextPair pair_clip(const TaggedNarration& narration, double window_sec,
                       double video_duration_sec,
                       std::optional<std::string> pair_id) {
  if (video_duration_sec <= 0.0) {
    fail(ErrorKind::kInvalidInput, "pair_clip: video duration must be > 0");
  }
  if (window_sec <= 0.0) {
    fail(ErrorKind::kInvalidInput, "pair_clip: window must be > 0");
  }
  const double t = narration.record.timestamp_sec;
  if (t < 0.0 || t > video_duration_sec) {
    fail(ErrorKind::kInvalidInput,
         "pair_clip: timestamp " + std::to_string(t) +
             " outside [0, duration=" + std::to_string(video_duration_sec) + "]");
  }

  ClipTextPair pair;
  pair.clip.video_id = narration.record.video_id;
  pair.clip.start_sec = std::max(0.0, t - window_sec / 2.0);
  pair.clip.end_sec = std::min(video_duration_sec, t + window_sec / 2.0);
  pair.narration = narration;
  if (pair_id) {
    pair.pair_id = std::move(*pair_id);
  } else {
    std::ostringstream id;
    id << narration.record.video_id << "@" << std::fixed << t;
    pair.pair_id = id.str();
  }
  return pair;
}

const std::vector<SceneAdjacencyIndex::Entry>&
SceneAdjacencyIndex::video_entries(const std::string& video_id) const {
  auto it = per_video_.find(video_id);
  if (it == per_video_.end()) {
    fail(ErrorKind::kLookup, "unknown video: " + video_id);
  }
  return it->second;
}

bool SceneAdjacencyIndex::contains(const std::string& pair_id) const {
  return locations_.count(pair_id) > 0;
}

SceneAdjacencyIndex build_adjacency_index(std::span<const ClipTextPair> pairs) {
  SceneAdjacencyIndex index;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const ClipTextPair& pair = pairs[i];
    index.per_video_[pair.clip.video_id].push_back(
        {pair.pair_id, pair.narration.record.timestamp_sec, i});
  }
  for (auto& [video_id, entries] : index.per_video_) {
    std::stable_sort(entries.begin(), entries.end(),
                     [](const auto& a, const auto& b) {
                       return a.timestamp_sec < b.timestamp_sec;
                     });
    for (std::size_t pos = 0; pos < entries.size(); ++pos) {
      auto [it, inserted] = index.locations_.emplace(
          entries[pos].pair_id,
          SceneAdjacencyIndex::Location{video_id, pos});
      if (!inserted) {
        fail(ErrorKind::kValidation,
             "duplicate pair_id: " + entries[pos].pair_id);
      }
    }
  }
  return index;
}

std::optional<std::string> sample_scene_negative(
    const SceneAdjacencyIndex& index, const std::string& anchor_pair_id,
    double max_gap_sec, std::uint64_t rng_seed) {
  auto loc = index.locations_.find(anchor_pair_id);
  if (loc == index.locations_.end()) {
    fail(ErrorKind::kLookup, "unknown anchor pair_id: " + anchor_pair_id);
  }
  const auto& entries = index.per_video_.at(loc->second.video_id);
  const double anchor_t = entries[loc->second.position].timestamp_sec;

  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (i == loc->second.position) continue;
    const double gap = std::abs(entries[i].timestamp_sec - anchor_t);
    if (gap > 0.0 && gap < max_gap_sec) candidates.push_back(i);
  }
  if (candidates.empty()) return std::nullopt;

  auto engine = rng::engine(rng_seed);
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  return entries[candidates[pick(engine)]].pair_id;
}

std::vector<std::vector<double>> frame_schedule(const ClipSpan& span,
                                                double feature_fps,
                                                int frames_per_sample,
                                                int stride) {
  if (!(span.start_sec >= 0.0) || !(span.start_sec < span.end_sec)) {
    fail(ErrorKind::kInvalidInput, "frame_schedule: invalid clip span");
  }
  if (feature_fps <= 0.0) {
    fail(ErrorKind::kInvalidInput, "frame_schedule: feature_fps must be > 0");
  }
  if (frames_per_sample <= 0 || stride <= 0) {
    fail(ErrorKind::kInvalidInput,
         "frame_schedule: frames_per_sample and stride must be positive");
  }

  const double anchor_step = 1.0 / feature_fps;
  const double frame_step = static_cast<double>(stride) / feature_fps;
  std::vector<std::vector<double>> samples;
  for (long k = 0;; ++k) {
    const double anchor = span.start_sec + static_cast<double>(k) * anchor_step;
    if (anchor > span.end_sec) break;
    std::vector<double> frames;
    frames.reserve(static_cast<std::size_t>(frames_per_sample));
    for (int j = 0; j < frames_per_sample; ++j) {
      frames.push_back(
          std::min(anchor + static_cast<double>(j) * frame_step, span.end_sec));
    }
    samples.push_back(std::move(frames));
  }
  return samples;
}

}  // namespace ego::corpus
