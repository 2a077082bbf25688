#include <doctest.h>

#include <cmath>

#include "fiberflow/rng.hpp"

using namespace fiberflow;

TEST_SUITE("rng") {
  TEST_CASE("philox4x32-10 known-answer vectors") {
    using B = Philox4x32::Block;
    using K = Philox4x32::Key;
    CHECK(Philox4x32::generate(B{0, 0, 0, 0}, K{0, 0}) ==
          B{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
    CHECK(Philox4x32::generate(B{0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                               K{0xffffffffu, 0xffffffffu}) ==
          B{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
    CHECK(Philox4x32::generate(B{0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                               K{0xa4093822u, 0x299f31d0u}) ==
          B{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
  }

  TEST_CASE("streams are reproducible and distinct") {
    StreamRng a({42, 7}), b({42, 7}), c({42, 8});
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
      const double x = a.normal();
      CHECK(x == b.normal());
      differs = differs || x != c.normal();
    }
    CHECK(differs);
  }

  TEST_CASE("normal moments") {
    StreamRng rng({1, 0});
    const int n = 200000;
    double s1 = 0, s2 = 0, s4 = 0;
    for (int i = 0; i < n; ++i) {
      const double x = rng.normal();
      s1 += x;
      s2 += x * x;
      s4 += x * x * x * x;
    }
    // Standard errors: mean 1/sqrt(n), second moment sqrt(2/n), fourth sqrt(96/n).
    CHECK(std::abs(s1 / n) < 4.0 / std::sqrt(n));
    CHECK(std::abs(s2 / n - 1.0) < 4.0 * std::sqrt(2.0 / n));
    CHECK(std::abs(s4 / n - 3.0) < 4.0 * std::sqrt(96.0 / n));
  }

  TEST_CASE("uniforms lie strictly inside (0,1)") {
    StreamRng rng({0, 0});
    for (int i = 0; i < 10000; ++i) {
      const double u = rng.uniform();
      CHECK((u > 0.0 && u < 1.0));
    }
  }
}
