#pragma once

/*
 * Scalar numeric utilities shared by the bound evaluators: log-domain
 * arithmetic, exact rational thresholds, Gaussian tail functions and
 * log-domain binomial tail sums.
 */

#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace nlc {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kPosInf = std::numeric_limits<double>::infinity();

// ln(e^a + e^b) without overflow; -inf encodes zero mass
inline double log_add(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    double hi = a > b ? a : b;
    double lo = a > b ? b : a;
    return hi + std::log1p(std::exp(lo - hi));
}

// ln(e^a - e^b), requires a >= b
inline double log_sub(double a, double b) {
    if (b == kNegInf) return a;
    if (b > a) throw std::domain_error("log_sub: negative result");
    if (a == b) return kNegInf;
    return a + std::log1p(-std::exp(b - a));
}

/*
 * Nonnegative real stored as its natural logarithm. Zero is the log value
 * -inf. Addition goes through log_add, so sums of many tiny or huge terms
 * keep full relative precision where doubles in linear domain would flush
 * to zero or overflow.
 */
class LogReal {
  public:
    LogReal() : ln_(kNegInf) {}

    static LogReal from_log(double ln) { return LogReal(ln); }
    static LogReal from_linear(double x) {
        if (x < 0.0 || std::isnan(x))
            throw std::domain_error("LogReal: negative or nan input");
        return LogReal(std::log(x));
    }
    static LogReal zero() { return LogReal(kNegInf); }
    static LogReal one() { return LogReal(0.0); }

    double ln() const { return ln_; }
    double linear() const { return std::exp(ln_); }
    bool is_zero() const { return ln_ == kNegInf; }

    LogReal& operator+=(LogReal o) {
        ln_ = log_add(ln_, o.ln_);
        return *this;
    }
    LogReal& operator*=(LogReal o) {
        ln_ = (is_zero() || o.is_zero()) ? kNegInf : ln_ + o.ln_;
        return *this;
    }
    friend LogReal operator+(LogReal a, LogReal b) { return a += b; }
    friend LogReal operator*(LogReal a, LogReal b) { return a *= b; }
    friend LogReal operator/(LogReal a, LogReal b) {
        if (b.is_zero()) throw std::domain_error("LogReal: division by zero");
        return a.is_zero() ? zero() : from_log(a.ln_ - b.ln_);
    }
    friend auto operator<=>(LogReal a, LogReal b) { return a.ln_ <=> b.ln_; }
    friend bool operator==(LogReal a, LogReal b) { return a.ln_ == b.ln_; }

  private:
    explicit LogReal(double ln) : ln_(ln) {}
    double ln_;
};

/*
 * Exact rational with int64 numerator and denominator, kept in lowest terms
 * with den > 0. Intermediates use __int128; results that do not fit in
 * int64 after reduction throw std::overflow_error. Used for distortion
 * thresholds, where floor and comparison decisions must be exact.
 */
struct Rational {
    std::int64_t num = 0;
    std::int64_t den = 1;

    Rational() = default;
    Rational(std::int64_t n) : num(n), den(1) {}
    Rational(std::int64_t n, std::int64_t d) { *this = reduce(n, d); }

    static Rational reduce(__int128 n, __int128 d) {
        if (d == 0) throw std::domain_error("Rational: zero denominator");
        if (d < 0) {
            n = -n;
            d = -d;
        }
        __int128 g = gcd128(n < 0 ? -n : n, d);
        if (g > 1) {
            n /= g;
            d /= g;
        }
        if (n > max64_ || n < -max64_ - 1 || d > max64_)
            throw std::overflow_error("Rational: value exceeds 64-bit range");
        Rational r;
        r.num = static_cast<std::int64_t>(n);
        r.den = static_cast<std::int64_t>(d);
        return r;
    }

    // accepts "p/q", integers and plain decimals such as "0.125"
    static Rational parse(const std::string& text) {
        std::string s = trimmed(text);
        if (s.empty()) throw std::invalid_argument("Rational: empty string");
        auto slash = s.find('/');
        if (slash != std::string::npos) {
            Rational p = parse_decimal(s.substr(0, slash));
            Rational q = parse_decimal(s.substr(slash + 1));
            return p / q;
        }
        return parse_decimal(s);
    }

    double to_double() const {
        return static_cast<double>(num) / static_cast<double>(den);
    }

    std::int64_t floor() const {
        std::int64_t q = num / den;
        std::int64_t r = num % den;
        return (r != 0 && num < 0) ? q - 1 : q;
    }

    std::string str() const {
        return den == 1 ? std::to_string(num)
                        : std::to_string(num) + "/" + std::to_string(den);
    }

    friend Rational operator-(Rational a) { return reduce(-__int128(a.num), a.den); }
    friend Rational operator+(Rational a, Rational b) {
        return reduce(__int128(a.num) * b.den + __int128(b.num) * a.den,
                      __int128(a.den) * b.den);
    }
    friend Rational operator-(Rational a, Rational b) { return a + (-b); }
    friend Rational operator*(Rational a, Rational b) {
        return reduce(__int128(a.num) * b.num, __int128(a.den) * b.den);
    }
    friend Rational operator/(Rational a, Rational b) {
        if (b.num == 0) throw std::domain_error("Rational: division by zero");
        return reduce(__int128(a.num) * b.den, __int128(a.den) * b.num);
    }
    friend std::strong_ordering operator<=>(Rational a, Rational b) {
        __int128 l = __int128(a.num) * b.den;
        __int128 r = __int128(b.num) * a.den;
        if (l < r) return std::strong_ordering::less;
        if (l > r) return std::strong_ordering::greater;
        return std::strong_ordering::equal;
    }
    friend bool operator==(Rational a, Rational b) {
        return a.num == b.num && a.den == b.den;
    }

  private:
    static constexpr __int128 max64_ = std::numeric_limits<std::int64_t>::max();

    static __int128 gcd128(__int128 a, __int128 b) {
        while (b != 0) {
            __int128 t = a % b;
            a = b;
            b = t;
        }
        return a == 0 ? 1 : a;
    }

    static std::string trimmed(const std::string& s) {
        auto b = s.find_first_not_of(" \t");
        auto e = s.find_last_not_of(" \t");
        return b == std::string::npos ? "" : s.substr(b, e - b + 1);
    }

    static Rational parse_decimal(const std::string& s) {
        if (s.empty()) throw std::invalid_argument("Rational: empty field");
        std::size_t i = 0;
        bool neg = false;
        if (s[i] == '+' || s[i] == '-') {
            neg = s[i] == '-';
            ++i;
        }
        __int128 mant = 0;
        __int128 scale = 1;
        bool seen_digit = false, seen_dot = false;
        for (; i < s.size(); ++i) {
            char c = s[i];
            if (c == '.') {
                if (seen_dot) throw std::invalid_argument("Rational: bad number '" + s + "'");
                seen_dot = true;
            } else if (c >= '0' && c <= '9') {
                mant = mant * 10 + (c - '0');
                if (seen_dot) scale *= 10;
                seen_digit = true;
                if (mant > max64_ || scale > max64_)
                    throw std::overflow_error("Rational: too many digits in '" + s + "'");
            } else {
                throw std::invalid_argument("Rational: bad number '" + s + "'");
            }
        }
        if (!seen_digit) throw std::invalid_argument("Rational: bad number '" + s + "'");
        return reduce(neg ? -mant : mant, scale);
    }
};

// entropy of (p, 1-p) in nats; 0 log 0 = 0
inline double binary_entropy(double p) {
    if (p < 0.0 || p > 1.0) throw std::domain_error("binary_entropy: p outside [0,1]");
    if (p == 0.0 || p == 1.0) return 0.0;
    return -p * std::log(p) - (1.0 - p) * std::log1p(-p);
}

// standard normal upper tail P[N(0,1) > x]
inline double gaussian_q(double x) {
    return 0.5 * std::erfc(x / std::numbers::sqrt2);
}

// inverse of gaussian_q on (0,1); bisection bracket then Newton polish
inline double gaussian_q_inv(double eps) {
    if (!(eps > 0.0 && eps < 1.0))
        throw std::domain_error("gaussian_q_inv: eps outside (0,1)");
    double lo = -40.0, hi = 40.0;
    while (hi - lo > 1e-12) {
        double mid = 0.5 * (lo + hi);
        if (gaussian_q(mid) > eps)
            lo = mid;
        else
            hi = mid;
    }
    double x = 0.5 * (lo + hi);
    for (int it = 0; it < 4; ++it) {
        double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
        if (pdf < 1e-300) break;
        x += (gaussian_q(x) - eps) / pdf;
    }
    return x;
}

// ln C(n, k)
inline double log_binom(std::int64_t n, std::int64_t k) {
    if (k < 0 || k > n) return kNegInf;
    return std::lgamma(double(n) + 1.0) - std::lgamma(double(k) + 1.0) -
           std::lgamma(double(n - k) + 1.0);
}

/*
 * ln of the binomial tail sum C(n,0) + C(n,1) + ... + C(n,j).
 * Returns -inf for j < 0 and n ln 2 for j >= n, matching the conventions
 * the erased-coin bound formulas rely on.
 */
inline double log_binosum(std::int64_t n, std::int64_t j) {
    if (n < 0) throw std::domain_error("log_binosum: negative n");
    if (j < 0) return kNegInf;
    if (j >= n) return double(n) * std::numbers::ln2;
    double acc = kNegInf;
    for (std::int64_t i = 0; i <= j; ++i) acc = log_add(acc, log_binom(n, i));
    return acc;
}

// all prefixes at once: out[j] = log_binosum(n, j) for j in [0, n], O(n)
inline std::vector<double> log_binosum_prefix(std::int64_t n) {
    if (n < 0) throw std::domain_error("log_binosum_prefix: negative n");
    std::vector<double> out(static_cast<std::size_t>(n) + 1);
    double acc = kNegInf;
    double lb = 0.0;  // ln C(n, 0)
    for (std::int64_t j = 0; j <= n; ++j) {
        acc = log_add(acc, lb);
        out[static_cast<std::size_t>(j)] = acc;
        if (j < n) lb += std::log(double(n - j)) - std::log(double(j + 1));
    }
    return out;
}

struct MomentTriple {
    double mean = 0.0;
    double variance = 0.0;
    double third_abs = 0.0;  // E|W - mean|^3
};

inline constexpr double kBerryEsseenC0 = 0.5600;
inline constexpr double kBerryEsseenC0Iid = 0.4784;

/*
 * Berry-Esseen ratio c0 * T / V^(3/2) with T and V the averages of the
 * per-entry third absolute central moments and variances. The iid flag
 * selects the sharper constant valid for identically distributed entries.
 */
inline double berry_esseen_ratio(const std::vector<MomentTriple>& moments,
                                 bool identically_distributed = false) {
    if (moments.empty()) throw std::invalid_argument("berry_esseen_ratio: no entries");
    double v = 0.0, t = 0.0;
    for (std::size_t i = 0; i < moments.size(); ++i) {
        if (!(moments[i].variance > 0.0))
            throw std::invalid_argument("berry_esseen_ratio: nonpositive variance at entry " +
                                        std::to_string(i));
        if (moments[i].third_abs < 0.0)
            throw std::invalid_argument("berry_esseen_ratio: negative third moment at entry " +
                                        std::to_string(i));
        v += moments[i].variance;
        t += moments[i].third_abs;
    }
    v /= double(moments.size());
    t /= double(moments.size());
    double c0 = identically_distributed ? kBerryEsseenC0Iid : kBerryEsseenC0;
    return c0 * t / std::pow(v, 1.5);
}

}  // namespace nlc
