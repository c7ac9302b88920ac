// A double wrapper that counts scalar multiplications. Instantiating the op
// templates with it turns any forward pass into an instrumented-multiply
// trace, which is the independent oracle for the static MAC counters.
// Multiplication is counted; addition, division, comparisons and
// transcendental calls are not.
#pragma once

#include <cmath>
#include <cstdint>

namespace counting {

struct CountingScalar {
  double v = 0.0;

  CountingScalar() = default;
  CountingScalar(double x) : v(x) {}  // implicit, mirrors double conversions
  CountingScalar(int x) : v(x) {}

  static thread_local std::uint64_t multiplies;
  static void reset() { multiplies = 0; }

  CountingScalar operator-() const { return {-v}; }

  friend CountingScalar operator+(CountingScalar a, CountingScalar b) { return {a.v + b.v}; }
  friend CountingScalar operator-(CountingScalar a, CountingScalar b) { return {a.v - b.v}; }
  friend CountingScalar operator*(CountingScalar a, CountingScalar b) {
    ++multiplies;
    return {a.v * b.v};
  }
  friend CountingScalar operator/(CountingScalar a, CountingScalar b) { return {a.v / b.v}; }

  CountingScalar& operator+=(CountingScalar o) {
    v += o.v;
    return *this;
  }
  CountingScalar& operator-=(CountingScalar o) {
    v -= o.v;
    return *this;
  }
  CountingScalar& operator*=(CountingScalar o) {
    ++multiplies;
    v *= o.v;
    return *this;
  }

  friend bool operator<(CountingScalar a, CountingScalar b) { return a.v < b.v; }
  friend bool operator>(CountingScalar a, CountingScalar b) { return a.v > b.v; }
  friend bool operator<=(CountingScalar a, CountingScalar b) { return a.v <= b.v; }
  friend bool operator>=(CountingScalar a, CountingScalar b) { return a.v >= b.v; }
  friend bool operator==(CountingScalar a, CountingScalar b) { return a.v == b.v; }
  friend bool operator!=(CountingScalar a, CountingScalar b) { return a.v != b.v; }
};

inline thread_local std::uint64_t CountingScalar::multiplies = 0;

inline CountingScalar exp(CountingScalar a) { return {std::exp(a.v)}; }
inline CountingScalar sqrt(CountingScalar a) { return {std::sqrt(a.v)}; }
inline CountingScalar erf(CountingScalar a) { return {std::erf(a.v)}; }
inline CountingScalar abs(CountingScalar a) { return {std::fabs(a.v)}; }

}  // namespace counting
