#ifndef SLUREJ_RATES_HPP_
#define SLUREJ_RATES_HPP_

#include <cmath>
#include <cstdio>
#include <optional>
#include <string>

namespace slurej {

/// Harmonic mean of two error percentages. Undefined when either is zero.
inline std::optional<double> f1_error(double far, double frr) {
  if (!(far > 0.0) || !(frr > 0.0)) return std::nullopt;
  return 2.0 * far * frr / (far + frr);
}

inline double round1(double pct) { return std::round(pct * 10.0) / 10.0; }

inline std::string format_pct(double pct) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", round1(pct) + 0.0);
  return buf;
}

inline std::string format_pct(const std::optional<double>& pct) {
  return pct ? format_pct(*pct) : std::string("-");
}

}  // namespace slurej

#endif  // SLUREJ_RATES_HPP_
