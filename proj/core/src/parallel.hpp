#pragma once

#include <cstddef>
#include <functional>

namespace scopeformer::detail {

/// Splits [0, n) into contiguous chunks across the configured worker count.
/// Each index is handled by exactly one worker, so per-element results are
/// identical for any thread count.
void parallel_for(std::size_t n, std::size_t min_chunk,
                  const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace scopeformer::detail
