#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "ego/error.hpp"
#include "ego/evalkit.hpp"

namespace ego::io {

// ---------------------------------------------------------------------------
// Feature files ("EGOF")
//
//   bytes 0..3   magic "EGOF"
//   bytes 4..7   u32 LE row count
//   bytes 8..11  u32 LE dim
//   then count*dim  f32 LE values, row-major
//   then count      newline-terminated UTF-8 pair ids, row order
// ---------------------------------------------------------------------------

struct FeatureFile {
  Eigen::MatrixXf values;
  std::vector<std::string> pair_ids;  // aligned with rows
};

void write_feature_file(const std::filesystem::path& path,
                        const Eigen::MatrixXf& values,
                        std::span<const std::string> pair_ids);

FeatureFile read_feature_file(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Checkpoints ("EGOC")
//
//   bytes 0..3    magic "EGOC"
//   bytes 4..7    u32 LE format version (currently 1)
//   bytes 8..11   u32 LE d_in
//   bytes 12..15  u32 LE d_out
//   then d_in*d_out f64 LE weight entries, row-major, then d_out f64 LE bias
// ---------------------------------------------------------------------------

struct Checkpoint {
  Eigen::MatrixXd weight;  // d_in x d_out
  Eigen::VectorXd bias;    // d_out
};

void write_checkpoint(const std::filesystem::path& path,
                      const Eigen::MatrixXd& weight,
                      const Eigen::VectorXd& bias);

Checkpoint read_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Checksums and line-oriented JSON
// ---------------------------------------------------------------------------

std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex_file(const std::filesystem::path& path);

struct JsonLine {
  nlohmann::json value;
  std::size_t line_no;  // 1-based
};

// Parses every non-blank line as a JSON object; parse failures carry the
// line number.
std::vector<JsonLine> read_jsonl(const std::filesystem::path& path);

// Prediction lines: {"query_id": str, "spans": [[start, end, score], ...],
// "label": str?}. Spans are re-ranked by score (stable) on load.
std::vector<eval::TemporalPrediction> load_predictions(
    const std::filesystem::path& path);

// Ground-truth lines: {"query_id": str, "span": [start, end], "label": str?}.
std::vector<eval::GroundTruthSegment> load_ground_truth(
    const std::filesystem::path& path);

// MCQ lines: {"kind": "inter_video"|"intra_video", "answer_index": int,
// "query": [f...], "candidates": [[f...], ...]}.
std::vector<eval::McqQuestion> load_mcq_questions(
    const std::filesystem::path& path);

void write_mcq_questions(const std::filesystem::path& path,
                         std::span<const eval::McqQuestion> questions);

}  // namespace ego::io
