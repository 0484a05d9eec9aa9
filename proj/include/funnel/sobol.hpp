#pragma once
// Gray-code Sobol sequence (32-bit, up to 6 dimensions) with a seed-derived
// digital-shift scramble. Direction numbers follow the standard Joe-Kuo
// table for the low dimensions used here. The digital shift preserves the
// dyadic equidistribution of the unshifted sequence while decorrelating
// independent runs.

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace funnel {

namespace detail {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

class SobolSequence {
 public:
  static constexpr int kMaxDims = 6;
  static constexpr int kBits = 32;

  explicit SobolSequence(int dims, uint64_t seed = 0) : dims_(dims) {
    if (dims < 1 || dims > kMaxDims) {
      throw std::invalid_argument("SobolSequence: dims must be in [1, 6]");
    }
    // Primitive-polynomial degrees s, coefficients a, and initial direction
    // numbers m for dimensions 2..6 (dimension 1 is the van der Corput base).
    struct JoeKuo {
      int s;
      uint32_t a;
      std::array<uint32_t, 4> m;
    };
    static constexpr std::array<JoeKuo, 5> kTable{{
        {1, 0, {1, 0, 0, 0}},
        {2, 1, {1, 3, 0, 0}},
        {3, 1, {1, 3, 1, 0}},
        {3, 2, {1, 1, 1, 0}},
        {4, 1, {1, 1, 3, 3}},
    }};

    dirs_.assign(dims, {});
    for (int k = 0; k < kBits; ++k) dirs_[0][k] = 1u << (kBits - 1 - k);
    for (int d = 1; d < dims; ++d) {
      const JoeKuo& jk = kTable[d - 1];
      auto& v = dirs_[d];
      for (int k = 0; k < jk.s; ++k) v[k] = jk.m[k] << (kBits - 1 - k);
      for (int k = jk.s; k < kBits; ++k) {
        uint32_t val = v[k - jk.s] ^ (v[k - jk.s] >> jk.s);
        for (int i = 1; i < jk.s; ++i) {
          if ((jk.a >> (jk.s - 1 - i)) & 1u) val ^= v[k - i];
        }
        v[k] = val;
      }
    }

    uint64_t sm = seed;
    shift_.resize(dims);
    for (int d = 0; d < dims; ++d) {
      shift_[d] = static_cast<uint32_t>(detail::splitmix64(sm) >> 32);
    }
    state_.assign(dims, 0);
  }

  int dims() const { return dims_; }

  // Writes the next point into out[0..dims); components lie in [0, 1).
  // The sequence starts at index 0 so that every block [0, 2^m) keeps the
  // dyadic equidistribution property.
  void next(double* out) {
    if (index_ > 0) {
      // Gray-code order: flip the direction number of ctz(index).
      uint64_t k = index_;
      int ctz = 0;
      while (!(k & 1u)) {
        k >>= 1;
        ++ctz;
      }
      for (int d = 0; d < dims_; ++d) state_[d] ^= dirs_[d][ctz];
    }
    ++index_;
    for (int d = 0; d < dims_; ++d) out[d] = (state_[d] ^ shift_[d]) * 0x1p-32;
  }

  std::vector<double> next() {
    std::vector<double> out(dims_);
    next(out.data());
    return out;
  }

 private:
  int dims_;
  uint64_t index_ = 0;
  std::vector<std::array<uint32_t, kBits>> dirs_;
  std::vector<uint32_t> state_;
  std::vector<uint32_t> shift_;
};

}  // namespace funnel
