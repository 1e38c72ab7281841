#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lifenorm/csv.hpp"
#include "lifenorm/editor.hpp"
#include "lifenorm/errors.hpp"
#include "lifenorm/stream.hpp"

namespace lifenorm {

inline std::string trace_header(Eigen::Index d_h, Eigen::Index d) {
  std::string header = "step,sample";
  for (Eigen::Index i = 0; i < d_h; ++i)
    header += ",h_" + std::to_string(i);
  for (Eigen::Index j = 0; j < d; ++j) header += ",v_" + std::to_string(j);
  return header;
}

/// One row per sample: step id, sample index within the batch, hidden
/// activations, then gradient coordinates. Values use the same shortest
/// round-trip format as the step log, so an exported trace replays the exact
/// doubles the run saw.
inline void write_trace(std::ostream& out,
                        const std::vector<EditBatch>& batches,
                        std::int64_t first_step = 1) {
  if (batches.empty())
    throw DimensionError("write_trace: need at least one batch");
  const Eigen::Index d_h = batches.front().h.rows();
  const Eigen::Index d = batches.front().v_raw.rows();
  out << trace_header(d_h, d) << '\n';
  for (std::size_t k = 0; k < batches.size(); ++k) {
    const EditBatch& b = batches[k];
    if (b.h.rows() != d_h || b.v_raw.rows() != d)
      throw DimensionError("write_trace: batches disagree on dimensions");
    for (Eigen::Index i = 0; i < b.n(); ++i) {
      out << (first_step + static_cast<std::int64_t>(k)) << ',' << i;
      for (Eigen::Index r = 0; r < d_h; ++r)
        out << ',' << format_double(b.h(r, i));
      for (Eigen::Index r = 0; r < d; ++r)
        out << ',' << format_double(b.v_raw(r, i));
      out << '\n';
    }
  }
}

/// Replays a recorded gradient stream. The whole file is parsed eagerly so
/// malformed input fails up front with a row-numbered message rather than
/// mid-run. Replayed batches carry no ground truth and no targets.
class TraceSource : public StreamSource {
 public:
  explicit TraceSource(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open trace '" + path + "'");
    parse(f, path);
  }

  TraceSource(std::istream& in, const std::string& name) { parse(in, name); }

  StreamDraw next_batch(Eigen::Index) override {
    if (pos_ >= batches_.size())
      throw IoError("trace '" + name_ + "': exhausted after " +
                    std::to_string(batches_.size()) + " steps");
    StreamDraw draw;
    draw.batch = batches_[pos_++];
    return draw;
  }

  Eigen::Index d() const { return d_; }
  Eigen::Index d_h() const { return d_h_; }
  std::int64_t steps() const {
    return static_cast<std::int64_t>(batches_.size());
  }

 private:
  [[noreturn]] void fail(std::size_t row, const std::string& what) const {
    throw IoError("trace '" + name_ + "': row " + std::to_string(row) + ": " +
                  what);
  }

  static std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      if (comma == std::string::npos) {
        fields.push_back(line.substr(start));
        return fields;
      }
      fields.push_back(line.substr(start, comma - start));
      start = comma + 1;
    }
  }

  void parse(std::istream& in, const std::string& name) {
    name_ = name;
    std::string line;
    if (!std::getline(in, line))
      throw IoError("trace '" + name_ + "': empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();

    std::vector<std::string> cols = split_line(line);
    if (cols.size() < 4 || cols[0] != "step" || cols[1] != "sample")
      fail(1, "header must start with step,sample and carry h_ and v_ columns");
    std::size_t at = 2;
    while (at < cols.size() &&
           cols[at] == "h_" + std::to_string(at - 2))
      ++at;
    d_h_ = static_cast<Eigen::Index>(at - 2);
    const std::size_t v_from = at;
    while (at < cols.size() &&
           cols[at] == "v_" + std::to_string(at - v_from))
      ++at;
    d_ = static_cast<Eigen::Index>(at - v_from);
    if (d_h_ < 1 || d_ < 1 || at != cols.size())
      fail(1, "header must list h_0..h_{d_h-1} then v_0..v_{d-1}");

    const std::size_t fields_per_row = 2 + static_cast<std::size_t>(d_h_ + d_);
    std::vector<Eigen::VectorXd> h_rows, v_rows;
    std::int64_t current_step = 0;
    bool have_step = false;
    std::size_t row = 1;

    const auto flush_batch = [&]() {
      const Eigen::Index n = static_cast<Eigen::Index>(h_rows.size());
      EditBatch batch;
      batch.h.resize(d_h_, n);
      batch.v_raw.resize(d_, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        batch.h.col(i) = h_rows[static_cast<std::size_t>(i)];
        batch.v_raw.col(i) = v_rows[static_cast<std::size_t>(i)];
      }
      batches_.push_back(std::move(batch));
      h_rows.clear();
      v_rows.clear();
    };

    while (std::getline(in, line)) {
      ++row;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) fail(row, "empty line");
      const std::vector<std::string> fields = split_line(line);
      if (fields.size() != fields_per_row)
        fail(row, "expected " + std::to_string(fields_per_row) +
                      " fields, got " + std::to_string(fields.size()));
      const std::int64_t step = parse_integer(fields[0], row, "step");
      const std::int64_t sample = parse_integer(fields[1], row, "sample");
      if (!have_step || step != current_step) {
        if (have_step) {
          if (step <= current_step)
            fail(row, "step ids must increase (got " + std::to_string(step) +
                          " after " + std::to_string(current_step) + ")");
          flush_batch();
        }
        current_step = step;
        have_step = true;
      }
      if (sample != static_cast<std::int64_t>(h_rows.size()))
        fail(row, "expected sample index " + std::to_string(h_rows.size()) +
                      ", got " + std::to_string(sample));
      Eigen::VectorXd h(d_h_), v(d_);
      for (Eigen::Index r = 0; r < d_h_; ++r)
        h[r] = parse_number(fields[static_cast<std::size_t>(2 + r)], row);
      for (Eigen::Index r = 0; r < d_; ++r)
        v[r] = parse_number(
            fields[static_cast<std::size_t>(2 + d_h_ + r)], row);
      h_rows.push_back(std::move(h));
      v_rows.push_back(std::move(v));
    }
    if (!have_step) throw IoError("trace '" + name_ + "': no data rows");
    flush_batch();
  }

  std::int64_t parse_integer(const std::string& s, std::size_t row,
                             const char* what) const {
    std::int64_t out = 0;
    const char* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, out);
    if (ec != std::errc() || ptr != end)
      fail(row, "bad " + std::string(what) + " value '" + s + "'");
    return out;
  }

  double parse_number(const std::string& s, std::size_t row) const {
    double out = 0.0;
    const char* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, out);
    if (ec != std::errc() || ptr != end)
      fail(row, "bad numeric value '" + s + "'");
    return out;
  }

  std::string name_;
  Eigen::Index d_ = 0;
  Eigen::Index d_h_ = 0;
  std::vector<EditBatch> batches_;
  std::size_t pos_ = 0;
};

}  // namespace lifenorm
