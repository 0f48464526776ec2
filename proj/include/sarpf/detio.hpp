#pragma once

// Line-oriented detection / ground-truth interchange files.
//
//   detections:    image_id class_id x_min y_min x_max y_max score
//   ground truth:  image_id class_id x_min y_min x_max y_max
//
// Fields are whitespace separated; ids are integers, coordinates and scores
// decimal text. Blank lines and lines starting with '#' are ignored.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sarpf/detmetrics.hpp"

namespace sarpf {

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

namespace detail {

inline std::vector<std::string> fields_of(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> out;
  for (std::string f; is >> f;) out.push_back(f);
  return out;
}

inline std::int64_t parse_int(const std::string& s, std::size_t line, const char* what) {
  std::int64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) throw ParseError(line, std::string("bad ") + what + " '" + s + "'");
  return v;
}

inline double parse_real(const std::string& s, std::size_t line, const char* what) {
  double v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || !std::isfinite(v)) {
    throw ParseError(line, std::string("bad ") + what + " '" + s + "'");
  }
  return v;
}

template <typename Fn>
void for_each_record(std::istream& in, std::size_t arity, Fn&& fn) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto f = fields_of(line);
    if (f.size() != arity) {
      throw ParseError(lineno, "expected " + std::to_string(arity) + " fields, found " + std::to_string(f.size()));
    }
    fn(f, lineno);
  }
}

inline Box parse_box(const std::vector<std::string>& f, std::size_t line) {
  Box b{parse_real(f[2], line, "x_min"), parse_real(f[3], line, "y_min"), parse_real(f[4], line, "x_max"),
        parse_real(f[5], line, "y_max")};
  if (!b.valid()) throw ParseError(line, "box has max < min");
  return b;
}

}  // namespace detail

inline std::vector<Detection> read_detections(std::istream& in) {
  std::vector<Detection> out;
  detail::for_each_record(in, 7, [&](const std::vector<std::string>& f, std::size_t line) {
    Detection d;
    d.image_id = detail::parse_int(f[0], line, "image_id");
    d.class_id = detail::parse_int(f[1], line, "class_id");
    d.box = detail::parse_box(f, line);
    d.score = detail::parse_real(f[6], line, "score");
    if (d.score < 0.0 || d.score > 1.0) throw ParseError(line, "score outside [0, 1]");
    out.push_back(d);
  });
  return out;
}

inline std::vector<GroundTruth> read_ground_truth(std::istream& in) {
  std::vector<GroundTruth> out;
  detail::for_each_record(in, 6, [&](const std::vector<std::string>& f, std::size_t line) {
    GroundTruth g;
    g.image_id = detail::parse_int(f[0], line, "image_id");
    g.class_id = detail::parse_int(f[1], line, "class_id");
    g.box = detail::parse_box(f, line);
    out.push_back(g);
  });
  return out;
}

}  // namespace sarpf
