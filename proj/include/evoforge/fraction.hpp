#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace evoforge {

/// Exact non-negative-denominator rational, always stored reduced.
class Fraction {
 public:
  constexpr Fraction() = default;
  Fraction(std::int64_t num, std::int64_t den);

  std::int64_t num() const noexcept { return num_; }
  std::int64_t den() const noexcept { return den_; }

  double to_double() const noexcept { return static_cast<double>(num_) / static_cast<double>(den_); }

  /// "n/d" form; integers print as "n/1".
  std::string str() const;

  /// Half-up decimal rounding computed in integer arithmetic, e.g. 1853/2000 -> "0.9265".
  std::string decimal(int places) const;

  /// Accepts "n/d", an integer, or a plain decimal literal ("0.357").
  static Fraction parse(std::string_view text);

  /// ceil(*this * n) for n >= 0, without floating point.
  std::int64_t ceil_times(std::int64_t n) const;

  friend Fraction operator+(const Fraction& a, const Fraction& b);
  friend Fraction operator-(const Fraction& a, const Fraction& b);
  friend Fraction operator*(const Fraction& a, const Fraction& b);
  friend Fraction operator/(const Fraction& a, const Fraction& b);
  friend bool operator==(const Fraction& a, const Fraction& b) = default;
  friend bool operator<(const Fraction& a, const Fraction& b);
  friend bool operator<=(const Fraction& a, const Fraction& b) { return !(b < a); }
  friend bool operator>(const Fraction& a, const Fraction& b) { return b < a; }

 private:
  std::int64_t num_ = 0;
  std::int64_t den_ = 1;
};

}  // namespace evoforge
