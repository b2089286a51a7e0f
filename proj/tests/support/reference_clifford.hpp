#pragma once

// Test-only Clifford oracle: blade products by explicit bubble sort of basis
// index lists, and a dense float64 product built on it.

#include <admkit/clifford.hpp>

#include <map>
#include <utility>
#include <vector>

namespace admkit::testing {

struct RefProduct {
  Blade out;
  int sign;
};

inline RefProduct reference_blade_product(Blade a, Blade b, const Signature& sig) {
  std::vector<int> idx;
  for (int i = 0; i < sig.dims(); ++i)
    if (a & (1u << i)) idx.push_back(i);
  for (int i = 0; i < sig.dims(); ++i)
    if (b & (1u << i)) idx.push_back(i);
  int sign = 1;
  bool swapped = true;
  while (swapped) {
    swapped = false;
    for (std::size_t k = 0; k + 1 < idx.size(); ++k) {
      if (idx[k] > idx[k + 1]) {
        std::swap(idx[k], idx[k + 1]);
        sign = -sign;
        swapped = true;
      }
    }
  }
  // Contract equal neighbours using the metric.
  std::vector<int> kept;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (k + 1 < idx.size() && idx[k] == idx[k + 1]) {
      const int i = idx[k];
      const int square = i < sig.r ? 0 : (i < sig.r + sig.p ? 1 : -1);
      sign *= square;
      ++k;
    } else {
      kept.push_back(idx[k]);
    }
  }
  Blade out = 0;
  for (int i : kept) out |= 1u << i;
  return {out, sign};
}

// Dense coefficient vectors indexed by blade mask.
inline std::vector<double> reference_dense_product(const std::vector<double>& a, const std::vector<double>& b,
                                                   const Signature& sig) {
  const std::size_t n = a.size();
  std::vector<double> out(n, 0.0);
  for (Blade i = 0; i < n; ++i)
    for (Blade j = 0; j < n; ++j) {
      const RefProduct p = reference_blade_product(i, j, sig);
      out[p.out] += p.sign * a[i] * b[j];
    }
  return out;
}

}  // namespace admkit::testing
