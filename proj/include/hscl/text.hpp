#pragma once

#include <cstdio>
#include <string>

namespace hscl {

// Round-trip-exact decimal formatting for CSV/JSON output.
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace hscl
