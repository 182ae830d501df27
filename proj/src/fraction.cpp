#include "evoforge/fraction.hpp"

#include <cctype>
#include <numeric>
#include <stdexcept>

#include "evoforge/error.hpp"

namespace evoforge {

Fraction::Fraction(std::int64_t num, std::int64_t den) {
  if (den == 0) fail(ErrorCode::validation, "fraction with zero denominator");
  if (den < 0) {
    num = -num;
    den = -den;
  }
  const std::int64_t g = std::gcd(num < 0 ? -num : num, den);
  num_ = g == 0 ? 0 : num / g;
  den_ = g == 0 ? 1 : den / g;
}

std::string Fraction::str() const { return std::to_string(num_) + "/" + std::to_string(den_); }

std::string Fraction::decimal(int places) const {
  if (places < 0) places = 0;
  std::int64_t scale = 1;
  for (int i = 0; i < places; ++i) scale *= 10;
  const bool negative = num_ < 0;
  const __int128 n = static_cast<__int128>(negative ? -num_ : num_) * scale;
  __int128 q = n / den_;
  const __int128 r = n % den_;
  if (2 * r >= den_) ++q;
  const auto whole = static_cast<std::int64_t>(q / scale);
  const auto frac = static_cast<std::int64_t>(q % scale);
  std::string out = (negative && q != 0 ? "-" : "") + std::to_string(whole);
  if (places > 0) {
    std::string digits = std::to_string(frac);
    out += "." + std::string(static_cast<std::size_t>(places) - digits.size(), '0') + digits;
  }
  return out;
}

Fraction Fraction::parse(std::string_view text) {
  auto bad = [&] { fail(ErrorCode::validation, "not a rational: '" + std::string(text) + "'"); };
  auto parse_int = [&](std::string_view s) -> std::int64_t {
    if (s.empty()) bad();
    std::int64_t v = 0;
    std::size_t i = 0;
    bool neg = false;
    if (s[0] == '-') {
      neg = true;
      i = 1;
      if (s.size() == 1) bad();
    }
    for (; i < s.size(); ++i) {
      if (!std::isdigit(static_cast<unsigned char>(s[i]))) bad();
      v = v * 10 + (s[i] - '0');
      if (v > (std::int64_t{1} << 55)) bad();
    }
    return neg ? -v : v;
  };
  if (auto slash = text.find('/'); slash != std::string_view::npos) {
    return {parse_int(text.substr(0, slash)), parse_int(text.substr(slash + 1))};
  }
  if (auto dot = text.find('.'); dot != std::string_view::npos) {
    std::string_view whole = text.substr(0, dot);
    std::string_view frac = text.substr(dot + 1);
    if (frac.empty() || frac.size() > 15) bad();
    std::int64_t scale = 1;
    for (std::size_t i = 0; i < frac.size(); ++i) scale *= 10;
    const bool neg = !whole.empty() && whole[0] == '-';
    const std::int64_t w = (whole.empty() || whole == "-") ? 0 : parse_int(whole);
    const std::int64_t f = parse_int(frac);
    const std::int64_t mag = (w < 0 ? -w : w) * scale + f;
    return {neg ? -mag : mag, scale};
  }
  return {parse_int(text), 1};
}

std::int64_t Fraction::ceil_times(std::int64_t n) const {
  const __int128 p = static_cast<__int128>(num_) * n;
  __int128 q = p / den_;
  if (p % den_ != 0 && p > 0) ++q;
  return static_cast<std::int64_t>(q);
}

Fraction operator+(const Fraction& a, const Fraction& b) {
  return {a.num_ * b.den_ + b.num_ * a.den_, a.den_ * b.den_};
}
Fraction operator-(const Fraction& a, const Fraction& b) {
  return {a.num_ * b.den_ - b.num_ * a.den_, a.den_ * b.den_};
}
Fraction operator*(const Fraction& a, const Fraction& b) { return {a.num_ * b.num_, a.den_ * b.den_}; }
Fraction operator/(const Fraction& a, const Fraction& b) { return {a.num_ * b.den_, a.den_ * b.num_}; }
bool operator<(const Fraction& a, const Fraction& b) {
  return static_cast<__int128>(a.num_) * b.den_ < static_cast<__int128>(b.num_) * a.den_;
}

}  // namespace evoforge
