#pragma once

#include <string>

#include "trireid/errors.hpp"

namespace trireid {

enum class Platform { Aerial, Ground };
enum class Modality { Visible, Infrared };

inline const char* to_string(Platform p) {
  return p == Platform::Aerial ? "aerial" : "ground";
}
inline const char* to_string(Modality m) {
  return m == Modality::Visible ? "visible" : "infrared";
}

inline Platform platform_from(const std::string& s) {
  if (s == "aerial") return Platform::Aerial;
  if (s == "ground") return Platform::Ground;
  throw DataError("unknown platform '" + s + "'");
}
inline Modality modality_from(const std::string& s) {
  if (s == "visible") return Modality::Visible;
  if (s == "infrared") return Modality::Infrared;
  throw DataError("unknown modality '" + s + "'");
}

/// Which of the three training streams are enabled.
struct StreamMask {
  bool st1 = true;
  bool st2 = true;
  bool st3 = true;

  bool operator==(const StreamMask&) const = default;
  bool any() const { return st1 || st2 || st3; }
  int count() const { return (st1 ? 1 : 0) + (st2 ? 1 : 0) + (st3 ? 1 : 0); }

  std::string format() const {
    std::string out;
    auto push = [&](const char* name) {
      if (!out.empty()) out += ',';
      out += name;
    };
    if (st1) push("st1");
    if (st2) push("st2");
    if (st3) push("st3");
    return out;
  }

  static StreamMask parse(const std::string& s) {
    StreamMask m{false, false, false};
    size_t pos = 0;
    while (pos <= s.size()) {
      size_t comma = s.find(',', pos);
      if (comma == std::string::npos) comma = s.size();
      std::string tok = s.substr(pos, comma - pos);
      size_t b = tok.find_first_not_of(" \t");
      size_t e = tok.find_last_not_of(" \t");
      tok = b == std::string::npos ? "" : tok.substr(b, e - b + 1);
      if (tok == "st1")
        m.st1 = true;
      else if (tok == "st2")
        m.st2 = true;
      else if (tok == "st3")
        m.st3 = true;
      else if (!tok.empty())
        throw ConfigError("unknown stream '" + tok + "' in stream_mask");
      pos = comma + 1;
      if (comma == s.size()) break;
    }
    return m;
  }
};

}  // namespace trireid
