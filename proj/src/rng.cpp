#include "spanid/rng.hpp"

#include <set>

namespace spanid {

// Floyd's algorithm: k draws regardless of n, no full permutation. Result is
// sorted ascending.
std::vector<uint64_t> Rng::sample_indices(uint64_t n, uint64_t k) {
  std::vector<uint64_t> out;
  if (k == 0 || n == 0) return out;
  if (k >= n) {
    out.resize(n);
    for (uint64_t i = 0; i < n; ++i) out[i] = i;
    return out;
  }
  std::set<uint64_t> chosen;
  for (uint64_t j = n - k; j < n; ++j) {
    uint64_t t = below(j + 1);
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  out.assign(chosen.begin(), chosen.end());
  return out;
}

}  // namespace spanid
