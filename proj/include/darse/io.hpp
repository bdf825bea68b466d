#pragma once

// Persistence: history streams (one JSON object per line), CSV helpers, and
// whole-file reads and writes.

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <memory>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "darse/error.hpp"
#include "darse/search.hpp"

namespace darse {

using json = nlohmann::json;

inline json to_json(const HistoryEntry& e) {
  return json{{"evaluation_index", e.evaluation_index},
              {"phase", to_string(e.phase)},
              {"iteration", e.iteration},
              {"ranks", e.rank_vector.ranks},
              {"metric", e.metric}};
}

/// One history record; the serialized form never contains a newline.
inline std::string format_history_line(const HistoryEntry& e) { return to_json(e).dump(); }

inline HistoryEntry parse_history_line(const std::string& line, std::size_t line_no = 0) {
  try {
    const json j = json::parse(line);
    HistoryEntry e;
    e.evaluation_index = j.at("evaluation_index").get<long long>();
    e.phase = parse_phase(j.at("phase").get<std::string>());
    e.iteration = j.at("iteration").get<int>();
    e.rank_vector = RankVector(j.at("ranks").get<std::vector<int>>());
    e.metric = j.at("metric").get<double>();
    if (!std::isfinite(e.metric)) throw ParseError("non-finite metric", line_no);
    return e;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& ex) {
    throw ParseError("history line " + std::to_string(line_no) + ": " + ex.what(), line_no);
  }
}

inline ExplorationHistory read_history(std::istream& is) {
  ExplorationHistory h;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    HistoryEntry e = parse_history_line(line, line_no);
    try {
      h.restore(std::move(e));
    } catch (const InvalidInput& ex) {
      throw ParseError("history line " + std::to_string(line_no) + ": " + ex.what(), line_no);
    }
  }
  return h;
}

/// Streams each appended history entry to a file, flushing per record so an
/// interrupted run loses at most the record being written.
class HistoryFileWriter {
 public:
  explicit HistoryFileWriter(const std::filesystem::path& path)
      : out_(std::make_shared<std::ofstream>(path, std::ios::binary | std::ios::trunc)) {
    if (!*out_) throw InvalidInput("cannot open " + path.string() + " for writing");
  }

  HistorySink sink() const {
    return [out = out_](const HistoryEntry& e) {
      *out << format_history_line(e) << '\n';
      out->flush();
    };
  }

 private:
  std::shared_ptr<std::ofstream> out_;
};

/// Shortest decimal text that parses back to exactly `v`.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw InvalidInput("cannot format number");
  return std::string(buf, ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError("bad number '" + s + "'");
  }
  return v;
}

/// Quotes a CSV cell when it contains a separator, quote, or line break.
inline std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

/// Splits one CSV record (no embedded line breaks).
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cells.back() += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cells.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.emplace_back();
    } else {
      cells.back() += c;
    }
  }
  return cells;
}

/// Ranks joined with '@', e.g. "4@8@2".
inline std::string join_ranks(const RankVector& r) {
  std::string s;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (i) s += '@';
    s += std::to_string(r[i]);
  }
  return s;
}

inline RankVector split_ranks(const std::string& s) {
  std::vector<int> out;
  if (s.empty()) return RankVector(out);
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, '@')) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) {
      throw ParseError("bad rank list '" + s + "'");
    }
    out.push_back(v);
  }
  return RankVector(std::move(out));
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidInput("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw InvalidInput("failed writing " + path.string());
}

}  // namespace darse
