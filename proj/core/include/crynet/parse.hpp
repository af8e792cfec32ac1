#pragma once

#include <cstdlib>
#include <string>

#include "crynet/errors.hpp"

namespace crynet {

/// Parses a whole string as a double. Unlike std::stod, subnormal and
/// underflowing values parse instead of throwing.
inline double parse_double(const std::string& s) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') throw ParseError("bad number '" + s + "'");
  return v;
}

}  // namespace crynet
