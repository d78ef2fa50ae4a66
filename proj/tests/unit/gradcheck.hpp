#pragma once

#include <algorithm>
#include <cmath>

// |a - n| / max(|a|, |n|), with a small floor so entries that are zero
// (up to round-off) in both routes do not blow up.
inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}
