#include <doctest.h>

#include <cmath>
#include <set>

#include "psiflow/rng.hpp"

using namespace psiflow;

// Known-answer vectors of the reference Philox4x32-10 implementation.
TEST_CASE("philox bijection known answers") {
  CHECK(Philox::bijection({0, 0, 0, 0}, {0, 0}) == Philox::Block{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(Philox::bijection({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}) ==
        Philox::Block{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(Philox::bijection({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
        Philox::Block{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("streams are reproducible and distinct") {
  Philox a(42, stream_id(StreamPurpose::hidden_layers, 3));
  Philox b(42, stream_id(StreamPurpose::hidden_layers, 3));
  Philox c(42, stream_id(StreamPurpose::hidden_layers, 4));
  Philox d(42, stream_id(StreamPurpose::collocation, 3));
  std::set<std::uint64_t> seen;
  for (int k = 0; k < 100; ++k) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    seen.insert(x);
    seen.insert(c.next_u64());
    seen.insert(d.next_u64());
  }
  CHECK(seen.size() == 300);
}

TEST_CASE("uniform draws stay in range with the right mean") {
  Philox rng(5);
  double sum = 0.0;
  const int n = 200000;
  for (int k = 0; k < n; ++k) {
    const double u = rng.uniform(-2.0, 3.0);
    REQUIRE(u >= -2.0);
    REQUIRE(u <= 3.0);
    sum += u;
  }
  CHECK(std::abs(sum / n - 0.5) < 0.02);  // about 6 standard errors
}
