// Copyright 2026 The fqbmru Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <complex>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "fqbmru/errors.hpp"

namespace fqbmru {

/// One step of the affine recurrence h_t = a ⊙ h_{t-1} + b.
template <class S>
struct AffineScanElement {
  std::vector<S> a;
  std::vector<S> b;

  static AffineScanElement identity(std::size_t d) {
    return {std::vector<S>(d, S(1)), std::vector<S>(d, S(0))};
  }

  std::size_t dim() const { return a.size(); }

  friend bool operator==(const AffineScanElement&, const AffineScanElement&) = default;
};

/// Composition "first, then second": (a1, b1) ∘ (a2, b2) = (a1 a2, a2 b1 + b2).
template <class S>
AffineScanElement<S> compose(const AffineScanElement<S>& first, const AffineScanElement<S>& second) {
  if (first.dim() != second.dim()) throw dimension_error("compose: element dimensions differ");
  AffineScanElement<S> out;
  const std::size_t d = first.dim();
  out.a.resize(d);
  out.b.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    out.a[i] = first.a[i] * second.a[i];
    out.b[i] = second.a[i] * first.b[i] + second.b[i];
  }
  return out;
}

template <class S>
std::vector<S> apply(const AffineScanElement<S>& e, std::span<const S> h) {
  if (h.size() != e.dim()) throw dimension_error("apply: state dimension differs from element");
  std::vector<S> out(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) out[i] = e.a[i] * h[i] + e.b[i];
  return out;
}

namespace detail {

// Blelloch up/down sweep over one block; returns inclusive prefixes.
template <class S>
std::vector<AffineScanElement<S>> blelloch_inclusive(std::span<const AffineScanElement<S>> elems) {
  const std::size_t n = elems.size();
  if (n == 0) return {};
  const std::size_t d = elems[0].dim();
  std::size_t padded = 1;
  while (padded < n) padded <<= 1;

  std::vector<AffineScanElement<S>> tree(padded, AffineScanElement<S>::identity(d));
  for (std::size_t i = 0; i < n; ++i) tree[i] = elems[i];

  for (std::size_t stride = 1; stride < padded; stride <<= 1) {
    for (std::size_t i = 2 * stride - 1; i < padded; i += 2 * stride) {
      tree[i] = compose(tree[i - stride], tree[i]);
    }
  }
  tree[padded - 1] = AffineScanElement<S>::identity(d);
  for (std::size_t stride = padded >> 1; stride >= 1; stride >>= 1) {
    for (std::size_t i = 2 * stride - 1; i < padded; i += 2 * stride) {
      AffineScanElement<S> left = std::move(tree[i - stride]);
      tree[i - stride] = tree[i];
      tree[i] = compose(tree[i], left);
    }
  }
  std::vector<AffineScanElement<S>> inclusive;
  inclusive.reserve(n);
  for (std::size_t i = 0; i < n; ++i) inclusive.push_back(compose(tree[i], elems[i]));
  return inclusive;
}

}  // namespace detail

inline constexpr std::size_t kDefaultScanBlock = 64;

/// Inclusive prefix composition of `elems`. Each block of `block` elements is
/// scanned with an up/down sweep; block carries are chained in order, so the
/// grouping (and thus the rounding) is fixed for a given length and block size.
template <class S>
std::vector<AffineScanElement<S>> inclusive_scan(std::span<const AffineScanElement<S>> elems,
                                                 std::size_t block = kDefaultScanBlock) {
  if (block == 0) throw precondition_error("inclusive_scan: block size must be positive");
  std::vector<AffineScanElement<S>> out;
  out.reserve(elems.size());
  bool have_carry = false;
  AffineScanElement<S> carry;
  for (std::size_t start = 0; start < elems.size(); start += block) {
    const std::size_t len = std::min(block, elems.size() - start);
    auto local = detail::blelloch_inclusive<S>(elems.subspan(start, len));
    for (auto& e : local) {
      out.push_back(have_carry ? compose(carry, e) : std::move(e));
    }
    carry = out.back();
    have_carry = true;
  }
  return out;
}

template <class S>
std::vector<AffineScanElement<S>> inclusive_scan(const std::vector<AffineScanElement<S>>& elems,
                                                 std::size_t block = kDefaultScanBlock) {
  return inclusive_scan<S>(std::span<const AffineScanElement<S>>(elems), block);
}

/// States h_1..h_T obtained by applying each inclusive prefix to h0.
template <class S>
std::vector<std::vector<S>> scan_states(std::span<const AffineScanElement<S>> elems,
                                        std::span<const S> h0,
                                        std::size_t block = kDefaultScanBlock) {
  auto prefix = inclusive_scan<S>(elems, block);
  std::vector<std::vector<S>> states;
  states.reserve(prefix.size());
  for (const auto& p : prefix) states.push_back(fqbmru::apply<S>(p, h0));
  return states;
}

}  // namespace fqbmru
