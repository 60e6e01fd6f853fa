#pragma once

#include <cstddef>
#include <utility>

namespace gfqi {

/// Sums leaf(begin, end) over [begin, end) with a fixed binary split. The
/// summation tree depends only on the range and the leaf width, so results
/// are bit-identical however the leaves are scheduled.
template <class Leaf>
auto pairwise_reduce(std::ptrdiff_t begin, std::ptrdiff_t end, std::ptrdiff_t leaf_width,
                     Leaf&& leaf) -> decltype(leaf(begin, end)) {
  if (end - begin <= leaf_width) return leaf(begin, end);
  const std::ptrdiff_t mid = begin + (end - begin) / 2;
  auto left = pairwise_reduce(begin, mid, leaf_width, leaf);
  auto right = pairwise_reduce(mid, end, leaf_width, leaf);
  return decltype(left)(left + right);
}

inline constexpr std::ptrdiff_t kReduceLeafBlocks = 64;

}  // namespace gfqi
