#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "distiltag/data.h"

namespace distiltag {

inline constexpr int kTeacherLogitsVersion = 1;

// Per-token class scores from a teacher for one sentence, [rows, cols] with
// columns in the student's tagset order.
struct TeacherLogits {
  std::size_t sentence_id = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;

  std::span<const float> row(std::size_t t) const { return {values.data() + t * cols, cols}; }
};

// Line-delimited JSON store. Line 1 is the header
//   {"format": "teacher-logits", "version": 1, "tagset": [...],
//    "teacher": "...", "K": k}
// and every later line is one record
//   {"sentence_id": id, "token_count": L, "rows": [[k floats] x L]}.
class TeacherLogitsStore {
 public:
  TeacherLogitsStore() = default;
  TeacherLogitsStore(std::vector<std::string> tagset, std::string teacher);

  const std::vector<std::string>& tagset() const { return tagset_; }
  const std::string& teacher() const { return teacher_; }
  std::size_t num_tags() const { return tagset_.size(); }
  std::size_t size() const { return records_.size(); }

  // Throws kDimension on a row-width mismatch; replaces an existing id.
  void add(TeacherLogits logits);
  const TeacherLogits* find(std::size_t sentence_id) const;
  const TeacherLogits& at(std::size_t sentence_id) const;
  std::vector<std::size_t> ids() const;

  // Ids from `wanted` without a record.
  std::vector<std::size_t> missing(std::span<const std::size_t> wanted) const;
  // Throws kCoverage listing missing ids, or kAlignment when a record's row
  // count differs from its sentence's token count.
  void check_coverage(std::span<const Sentence> sentences) const;
  // Throws kAlignment unless the header tagset equals `tagset` in order.
  void check_alignment(const TagSet& tagset) const;

  void write(std::ostream& out) const;
  static TeacherLogitsStore read(std::istream& in);
  void save(const std::string& path) const;
  static TeacherLogitsStore load(const std::string& path);

 private:
  std::vector<std::string> tagset_;
  std::string teacher_;
  std::map<std::size_t, TeacherLogits> records_;
};

}  // namespace distiltag
