#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ego/error.hpp"

namespace ego::corpus {

// One timestamped free-text narration from a video's narration stream.
struct NarrationRecord {
  std::string video_id;
  double timestamp_sec = 0.0;  // seconds from video start, >= 0
  std::string text;            // non-empty after whitespace trimming
};

// Dictionary of canonical nouns/verbs and their lowercase surface forms.
// A surface form may belong to at most one canonical entry per part of
// speech; load_taxonomy rejects anything else.
struct Taxonomy {
  std::map<std::string, std::set<std::string>> nouns;  // canonical -> surfaces
  std::map<std::string, std::set<std::string>> verbs;

  // surface -> canonical, built by load_taxonomy / build_index.
  std::unordered_map<std::string, std::string> noun_lookup;
  std::unordered_map<std::string, std::string> verb_lookup;

  // Lowercases surface forms, rebuilds the reverse lookups, and rejects a
  // surface form mapped to two canonicals within the same map.
  void build_index();
};

struct TaggedNarration {
  NarrationRecord record;
  std::set<std::string> noun_set;  // canonical entries only
  std::set<std::string> verb_set;
};

struct ClipSpan {
  std::string video_id;
  double start_sec = 0.0;
  double end_sec = 0.0;  // 0 <= start < end
};

struct ClipTextPair {
  ClipSpan clip;
  TaggedNarration narration;  // timestamp lies inside [start_sec, end_sec]
  std::string pair_id;        // unique
};

// Per-video, timestamp-sorted view over a set of ClipTextPairs, used to find
// temporally adjacent clips for scene-negative sampling. Videos are keyed
// lexicographically; lookups are read-only after construction.
class SceneAdjacencyIndex {
 public:
  struct Entry {
    std::string pair_id;
    double timestamp_sec;
    std::size_t source_index;  // position in the input pair list
  };

  const std::vector<Entry>& video_entries(const std::string& video_id) const;
  bool contains(const std::string& pair_id) const;
  std::size_t total_pairs() const { return locations_.size(); }
  const std::map<std::string, std::vector<Entry>>& per_video() const {
    return per_video_;
  }

 private:
  struct Location {
    std::string video_id;
    std::size_t position;  // index into the video's entry list
  };

  std::map<std::string, std::vector<Entry>> per_video_;
  std::unordered_map<std::string, Location> locations_;

  friend SceneAdjacencyIndex build_adjacency_index(
      std::span<const ClipTextPair> pairs);
  friend std::optional<std::string> sample_scene_negative(
      const SceneAdjacencyIndex& index, const std::string& anchor_pair_id,
      double max_gap_sec, std::uint64_t rng_seed);
};

// Reads one JSON object per line with required fields "video_id" (string),
// "timestamp_sec" (number >= 0) and "text" (non-blank string). Errors carry
// the 1-based line number.
std::vector<NarrationRecord> load_narrations(const std::filesystem::path& path);

// Reads a JSON document with top-level "nouns" and "verbs" maps, each
// canonical -> array of surface strings, and indexes it.
Taxonomy load_taxonomy(const std::filesystem::path& path);

// Lowercases the narration, strips ASCII punctuation, splits on whitespace
// and collects the canonical entries whose surface forms appear as whole
// tokens. Empty result sets are legal.
TaggedNarration tag_narration(const NarrationRecord& record,
                              const Taxonomy& taxonomy);

// Tokenization used by tag_narration, exposed for tests and tooling.
std::vector<std::string> tokenize(const std::string& text);

// Centers a window of window_sec seconds on the narration timestamp and
// clamps it to [0, video_duration_sec]. pair_id defaults to
// "<video_id>@<timestamp>"; callers that may see duplicate timestamps should
// pass an explicit unique id.
ClipTextPair pair_clip(const TaggedNarration& narration, double window_sec,
                       double video_duration_sec,
                       std::optional<std::string> pair_id = std::nullopt);

// Partitions pairs by video and sorts each partition by narration timestamp.
// The sort is stable: equal timestamps keep input order. Duplicate pair_ids
// are a validation error.
SceneAdjacencyIndex build_adjacency_index(std::span<const ClipTextPair> pairs);

// Uniformly samples one pair from the anchor's video with
// 0 < |delta t| < max_gap_sec, excluding the anchor. Returns nullopt when no
// candidate exists. Deterministic given rng_seed.
std::optional<std::string> sample_scene_negative(
    const SceneAdjacencyIndex& index, const std::string& anchor_pair_id,
    double max_gap_sec, std::uint64_t rng_seed);

inline std::optional<std::string> sample_scene_negative(
    const SceneAdjacencyIndex& index, const std::string& anchor_pair_id,
    std::uint64_t rng_seed) {
  return sample_scene_negative(index, anchor_pair_id, 60.0, rng_seed);
}

// Frame-sampling timetable for feature extraction. Anchor k sits at
// start_sec + k / feature_fps for every k with the anchor still inside the
// span; each anchor expands to frames_per_sample timestamps spaced
// stride / feature_fps apart and clamped to end_sec.
std::vector<std::vector<double>> frame_schedule(const ClipSpan& span,
                                                double feature_fps = 1.87,
                                                int frames_per_sample = 4,
                                                int stride = 4);

}  // namespace ego::corpus
