#include "distiltag/teacher_logits.h"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "distiltag/error.h"
#include "json.hpp"

namespace distiltag {

namespace {
constexpr const char* kFormatName = "teacher-logits";
}

TeacherLogitsStore::TeacherLogitsStore(std::vector<std::string> tagset, std::string teacher)
    : tagset_(std::move(tagset)), teacher_(std::move(teacher)) {}

void TeacherLogitsStore::add(TeacherLogits logits) {
  if (logits.cols != tagset_.size() || logits.values.size() != logits.rows * logits.cols) {
    fail(ErrorKind::kDimension, "teacher logits for sentence " +
                                    std::to_string(logits.sentence_id) + " are " +
                                    std::to_string(logits.rows) + "x" +
                                    std::to_string(logits.cols) + ", store expects K=" +
                                    std::to_string(tagset_.size()));
  }
  for (const float v : logits.values) {
    if (!std::isfinite(v)) {
      fail(ErrorKind::kDomain, "non-finite teacher logit for sentence " +
                                   std::to_string(logits.sentence_id));
    }
  }
  const auto id = logits.sentence_id;
  records_.insert_or_assign(id, std::move(logits));
}

const TeacherLogits* TeacherLogitsStore::find(std::size_t sentence_id) const {
  const auto it = records_.find(sentence_id);
  return it == records_.end() ? nullptr : &it->second;
}

const TeacherLogits& TeacherLogitsStore::at(std::size_t sentence_id) const {
  const auto* r = find(sentence_id);
  if (!r) fail(ErrorKind::kCoverage, "no teacher logits for sentence " + std::to_string(sentence_id));
  return *r;
}

std::vector<std::size_t> TeacherLogitsStore::ids() const {
  std::vector<std::size_t> out;
  out.reserve(records_.size());
  for (const auto& [id, r] : records_) out.push_back(id);
  return out;
}

std::vector<std::size_t> TeacherLogitsStore::missing(std::span<const std::size_t> wanted) const {
  std::vector<std::size_t> out;
  for (const auto id : wanted) {
    if (!records_.count(id)) out.push_back(id);
  }
  return out;
}

void TeacherLogitsStore::check_coverage(std::span<const Sentence> sentences) const {
  std::vector<std::size_t> absent;
  for (const auto& s : sentences) {
    const auto* r = find(s.id);
    if (!r) {
      absent.push_back(s.id);
      continue;
    }
    if (r->rows != s.size()) {
      fail(ErrorKind::kAlignment, "teacher logits for sentence " + std::to_string(s.id) +
                                      " have " + std::to_string(r->rows) + " rows for " +
                                      std::to_string(s.size()) + " tokens");
    }
  }
  if (!absent.empty()) {
    std::string list;
    for (std::size_t i = 0; i < absent.size() && i < 20; ++i) {
      list += (i ? "," : "") + std::to_string(absent[i]);
    }
    if (absent.size() > 20) list += ",...";
    fail(ErrorKind::kCoverage, std::to_string(absent.size()) +
                                   " sentences lack teacher logits: " + list);
  }
}

void TeacherLogitsStore::check_alignment(const TagSet& tagset) const {
  if (tagset_ != tagset.labels()) {
    fail(ErrorKind::kAlignment, "teacher tagset order differs from the student tagset");
  }
}

void TeacherLogitsStore::write(std::ostream& out) const {
  nlohmann::ordered_json header;
  header["format"] = kFormatName;
  header["version"] = kTeacherLogitsVersion;
  header["tagset"] = tagset_;
  header["teacher"] = teacher_;
  header["K"] = tagset_.size();
  out << header.dump() << '\n';
  for (const auto& [id, r] : records_) {
    nlohmann::ordered_json record;
    record["sentence_id"] = id;
    record["token_count"] = r.rows;
    auto rows = nlohmann::ordered_json::array();
    for (std::size_t t = 0; t < r.rows; ++t) {
      auto row = nlohmann::ordered_json::array();
      // float -> double is exact and the dump is shortest-round-trip.
      for (const float v : r.row(t)) row.push_back(static_cast<double>(v));
      rows.push_back(std::move(row));
    }
    record["rows"] = std::move(rows);
    out << record.dump() << '\n';
  }
  if (!out) fail(ErrorKind::kIo, "failed writing teacher logits");
}

TeacherLogitsStore TeacherLogitsStore::read(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::kFormat, "teacher logits file is empty");
  TeacherLogitsStore store;
  try {
    const auto header = nlohmann::json::parse(line);
    if (header.at("format").get<std::string>() != kFormatName) {
      fail(ErrorKind::kFormat, "not a teacher-logits file");
    }
    if (header.at("version").get<int>() != kTeacherLogitsVersion) {
      fail(ErrorKind::kFormat, "unsupported teacher-logits version " + header.at("version").dump());
    }
    store.tagset_ = header.at("tagset").get<std::vector<std::string>>();
    store.teacher_ = header.value("teacher", "");
    if (header.at("K").get<std::size_t>() != store.tagset_.size()) {
      fail(ErrorKind::kFormat, "teacher-logits header K disagrees with its tagset");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("bad teacher-logits header: ") + e.what());
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    TeacherLogits r;
    try {
      const auto record = nlohmann::json::parse(line);
      r.sentence_id = record.at("sentence_id").get<std::size_t>();
      r.rows = record.at("token_count").get<std::size_t>();
      r.cols = store.tagset_.size();
      const auto& rows = record.at("rows");
      if (rows.size() != r.rows) {
        fail(ErrorKind::kFormat, "line " + std::to_string(line_no) + ": token_count " +
                                     std::to_string(r.rows) + " but " +
                                     std::to_string(rows.size()) + " rows");
      }
      r.values.reserve(r.rows * r.cols);
      for (const auto& row : rows) {
        if (row.size() != r.cols) {
          fail(ErrorKind::kFormat, "line " + std::to_string(line_no) + ": row of " +
                                       std::to_string(row.size()) + " scores, expected " +
                                       std::to_string(r.cols));
        }
        for (const auto& v : row) r.values.push_back(static_cast<float>(v.get<double>()));
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kFormat, "teacher-logits line " + std::to_string(line_no) + ": " + e.what());
    }
    store.add(std::move(r));
  }
  return store;
}

void TeacherLogitsStore::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write '" + path + "'");
  write(out);
}

TeacherLogitsStore TeacherLogitsStore::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open teacher logits '" + path + "'");
  return read(in);
}

}  // namespace distiltag
