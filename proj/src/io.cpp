#include "ego/io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include <openssl/evp.h>

namespace ego::io {

using nlohmann::json;

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

void put_f64(std::string& out, double v) {
  const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(char((bits >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(std::string bytes, std::string name)
      : bytes_(std::move(bytes)), name_(std::move(name)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= std::uint32_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= std::uint64_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 8;
    return std::bit_cast<double>(v);
  }

  std::string magic() {
    need(4);
    std::string m = bytes_.substr(pos_, 4);
    pos_ += 4;
    return m;
  }

  std::string line() {
    auto nl = bytes_.find('\n', pos_);
    if (nl == std::string::npos) {
      fail(ErrorKind::kParse, name_ + ": missing newline-terminated id");
    }
    std::string s = bytes_.substr(pos_, nl - pos_);
    pos_ = nl + 1;
    return s;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size()) {
      fail(ErrorKind::kParse, name_ + ": truncated file");
    }
  }

  std::string bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return bytes;
}

void spill(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::kIo, "write failed: " + path.string());
}

double number_at(const json& value, const std::string& context) {
  if (!value.is_number()) {
    fail(ErrorKind::kSchema, context + ": expected a number");
  }
  return value.get<double>();
}

}  // namespace

void write_feature_file(const std::filesystem::path& path,
                        const Eigen::MatrixXf& values,
                        std::span<const std::string> pair_ids) {
  if (pair_ids.size() != static_cast<std::size_t>(values.rows())) {
    fail(ErrorKind::kShape, "feature file: one pair id per row required");
  }
  for (const auto& id : pair_ids) {
    if (id.find('\n') != std::string::npos) {
      fail(ErrorKind::kValidation, "pair id contains a newline: " + id);
    }
  }
  std::string out;
  out.reserve(12 + static_cast<std::size_t>(values.size()) * 4);
  out += "EGOF";
  put_u32(out, static_cast<std::uint32_t>(values.rows()));
  put_u32(out, static_cast<std::uint32_t>(values.cols()));
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      put_f32(out, values(i, j));
    }
  }
  for (const auto& id : pair_ids) {
    out += id;
    out += '\n';
  }
  spill(path, out);
}

FeatureFile read_feature_file(const std::filesystem::path& path) {
  Reader reader(slurp(path), path.string());
  if (reader.magic() != "EGOF") {
    fail(ErrorKind::kParse, path.string() + ": bad magic, not a feature file");
  }
  const std::uint32_t count = reader.u32();
  const std::uint32_t dim = reader.u32();

  FeatureFile file;
  file.values.resize(count, dim);
  for (std::uint32_t i = 0; i < count; ++i) {
    for (std::uint32_t j = 0; j < dim; ++j) {
      file.values(i, j) = reader.f32();
    }
  }
  file.pair_ids.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    file.pair_ids.push_back(reader.line());
  }
  if (!reader.at_end()) {
    fail(ErrorKind::kParse, path.string() + ": trailing bytes");
  }
  return file;
}

void write_checkpoint(const std::filesystem::path& path,
                      const Eigen::MatrixXd& weight,
                      const Eigen::VectorXd& bias) {
  if (bias.size() != weight.cols()) {
    fail(ErrorKind::kShape, "checkpoint: bias size != weight cols");
  }
  std::string out;
  out.reserve(16 + static_cast<std::size_t>(weight.size() + bias.size()) * 8);
  out += "EGOC";
  put_u32(out, 1);  // format version
  put_u32(out, static_cast<std::uint32_t>(weight.rows()));
  put_u32(out, static_cast<std::uint32_t>(weight.cols()));
  for (Eigen::Index i = 0; i < weight.rows(); ++i) {
    for (Eigen::Index j = 0; j < weight.cols(); ++j) {
      put_f64(out, weight(i, j));
    }
  }
  for (Eigen::Index j = 0; j < bias.size(); ++j) put_f64(out, bias(j));
  spill(path, out);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  Reader reader(slurp(path), path.string());
  if (reader.magic() != "EGOC") {
    fail(ErrorKind::kParse, path.string() + ": bad magic, not a checkpoint");
  }
  const std::uint32_t version = reader.u32();
  if (version != 1) {
    fail(ErrorKind::kParse,
         path.string() + ": unsupported checkpoint version " +
             std::to_string(version));
  }
  const std::uint32_t d_in = reader.u32();
  const std::uint32_t d_out = reader.u32();

  Checkpoint ckpt;
  ckpt.weight.resize(d_in, d_out);
  for (std::uint32_t i = 0; i < d_in; ++i) {
    for (std::uint32_t j = 0; j < d_out; ++j) {
      ckpt.weight(i, j) = reader.f64();
    }
  }
  ckpt.bias.resize(d_out);
  for (std::uint32_t j = 0; j < d_out; ++j) ckpt.bias(j) = reader.f64();
  if (!reader.at_end()) {
    fail(ErrorKind::kParse, path.string() + ": trailing bytes");
  }
  return ckpt;
}

std::string sha256_hex(std::span<const unsigned char> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int digest_len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &digest_len,
                 EVP_sha256(), nullptr) != 1) {
    fail(ErrorKind::kIo, "sha256 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(digest_len * 2);
  for (unsigned int i = 0; i < digest_len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string sha256_hex_file(const std::filesystem::path& path) {
  const std::string bytes = slurp(path);
  return sha256_hex(std::span<const unsigned char>(
      reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()));
}

std::vector<JsonLine> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open: " + path.string());
  std::vector<JsonLine> lines;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      lines.push_back({json::parse(line), line_no});
    } catch (const json::parse_error& e) {
      fail(ErrorKind::kParse,
           path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return lines;
}

std::vector<eval::TemporalPrediction> load_predictions(
    const std::filesystem::path& path) {
  std::vector<eval::TemporalPrediction> predictions;
  for (const auto& [obj, line_no] : read_jsonl(path)) {
    const std::string context = path.string() + ":" + std::to_string(line_no);
    if (!obj.is_object() || !obj.contains("query_id") ||
        !obj.contains("spans")) {
      fail(ErrorKind::kSchema,
           context + ": prediction needs \"query_id\" and \"spans\"");
    }
    eval::TemporalPrediction pred;
    pred.query_id = obj.at("query_id").get<std::string>();
    if (!obj.at("spans").is_array()) {
      fail(ErrorKind::kSchema, context + ": \"spans\" must be an array");
    }
    for (const auto& triple : obj.at("spans")) {
      if (!triple.is_array() || triple.size() != 3) {
        fail(ErrorKind::kSchema,
             context + ": span must be [start, end, score]");
      }
      eval::ScoredSpan scored;
      scored.span.start_sec = number_at(triple[0], context);
      scored.span.end_sec = number_at(triple[1], context);
      scored.score = number_at(triple[2], context);
      pred.spans.push_back(scored);
    }
    if (obj.contains("label")) {
      pred.label = obj.at("label").get<std::string>();
    }
    std::stable_sort(pred.spans.begin(), pred.spans.end(),
                     [](const eval::ScoredSpan& a, const eval::ScoredSpan& b) {
                       return a.score > b.score;
                     });
    predictions.push_back(std::move(pred));
  }
  return predictions;
}

std::vector<eval::GroundTruthSegment> load_ground_truth(
    const std::filesystem::path& path) {
  std::vector<eval::GroundTruthSegment> segments;
  for (const auto& [obj, line_no] : read_jsonl(path)) {
    const std::string context = path.string() + ":" + std::to_string(line_no);
    if (!obj.is_object() || !obj.contains("query_id") || !obj.contains("span")) {
      fail(ErrorKind::kSchema,
           context + ": ground truth needs \"query_id\" and \"span\"");
    }
    eval::GroundTruthSegment gt;
    gt.query_id = obj.at("query_id").get<std::string>();
    if (!obj.at("span").is_array() || obj.at("span").size() != 2) {
      fail(ErrorKind::kSchema, context + ": \"span\" must be [start, end]");
    }
    gt.span.start_sec = number_at(obj.at("span")[0], context);
    gt.span.end_sec = number_at(obj.at("span")[1], context);
    if (obj.contains("label")) gt.label = obj.at("label").get<std::string>();
    segments.push_back(std::move(gt));
  }
  return segments;
}

std::vector<eval::McqQuestion> load_mcq_questions(
    const std::filesystem::path& path) {
  std::vector<eval::McqQuestion> questions;
  for (const auto& [obj, line_no] : read_jsonl(path)) {
    const std::string context = path.string() + ":" + std::to_string(line_no);
    for (const char* field : {"kind", "answer_index", "query", "candidates"}) {
      if (!obj.contains(field)) {
        fail(ErrorKind::kSchema,
             context + ": question missing \"" + field + "\"");
      }
    }
    eval::McqQuestion q;
    const std::string kind = obj.at("kind").get<std::string>();
    if (kind == "inter_video") {
      q.kind = eval::McqKind::kInterVideo;
    } else if (kind == "intra_video") {
      q.kind = eval::McqKind::kIntraVideo;
    } else {
      fail(ErrorKind::kSchema, context + ": unknown kind '" + kind + "'");
    }
    q.answer_index = obj.at("answer_index").get<int>();

    const auto& query = obj.at("query");
    if (!query.is_array() || query.empty()) {
      fail(ErrorKind::kSchema, context + ": \"query\" must be a float array");
    }
    q.query.resize(static_cast<Eigen::Index>(query.size()));
    for (std::size_t i = 0; i < query.size(); ++i) {
      q.query(static_cast<Eigen::Index>(i)) = number_at(query[i], context);
    }
    const auto& candidates = obj.at("candidates");
    if (!candidates.is_array() || candidates.size() < 2) {
      fail(ErrorKind::kSchema, context + ": need at least 2 candidates");
    }
    for (const auto& cand : candidates) {
      if (!cand.is_array() || cand.size() != query.size()) {
        fail(ErrorKind::kSchema,
             context + ": candidate dim != query dim");
      }
      Eigen::VectorXd vec(static_cast<Eigen::Index>(cand.size()));
      for (std::size_t i = 0; i < cand.size(); ++i) {
        vec(static_cast<Eigen::Index>(i)) = number_at(cand[i], context);
      }
      q.candidates.push_back(std::move(vec));
    }
    if (q.answer_index < 0 ||
        q.answer_index >= static_cast<int>(q.candidates.size())) {
      fail(ErrorKind::kSchema, context + ": answer_index out of range");
    }
    questions.push_back(std::move(q));
  }
  return questions;
}

void write_mcq_questions(const std::filesystem::path& path,
                         std::span<const eval::McqQuestion> questions) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write: " + path.string());
  for (const auto& q : questions) {
    json obj;
    obj["kind"] =
        q.kind == eval::McqKind::kInterVideo ? "inter_video" : "intra_video";
    obj["answer_index"] = q.answer_index;
    json query = json::array();
    for (Eigen::Index i = 0; i < q.query.size(); ++i) query.push_back(q.query(i));
    obj["query"] = std::move(query);
    json candidates = json::array();
    for (const auto& cand : q.candidates) {
      json vec = json::array();
      for (Eigen::Index i = 0; i < cand.size(); ++i) vec.push_back(cand(i));
      candidates.push_back(std::move(vec));
    }
    obj["candidates"] = std::move(candidates);
    out << obj.dump() << "\n";
  }
  if (!out) fail(ErrorKind::kIo, "write failed: " + path.string());
}

}  // namespace ego::io
