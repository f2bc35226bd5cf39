#pragma once

#include <array>
#include <cstdint>

namespace mflow {

// Philox4x64 with 10 rounds (Salmon et al. counter-based family). The
// generator is a pure function of (counter, key); streams are addressed, not
// advanced, which keeps every draw independent of execution order.
struct Philox4x64 {
  using Counter = std::array<std::uint64_t, 4>;
  using Key = std::array<std::uint64_t, 2>;

  static constexpr int rounds = 10;
  static constexpr const char* name = "philox4x64-10";

  static Counter generate(Counter ctr, Key key);
};

// Purpose tags occupying the second key word, so that draws for different
// roles never share a counter space.
enum class StreamDomain : std::uint64_t {
  noise = 1,
  class_label = 2,
  reference = 3,
  training = 4,
  oracle = 5,
  probe = 6,
  init = 7,
};

// A sequential view over one substream addressed by (seed, domain, index, sub).
// The n-th draw of a stream is fixed by its address alone.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, StreamDomain domain, std::uint64_t index,
               std::uint64_t sub = 0);

  std::uint64_t next_u64();
  // Uniform on the open interval (0, 1), 53 bits.
  double uniform();
  // Standard normal via Box-Muller; consumes two uniforms per pair.
  double normal();
  // Index in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  Philox4x64::Key key_;
  Philox4x64::Counter ctr_;
  Philox4x64::Counter block_{};
  int pos_ = 4;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace mflow
