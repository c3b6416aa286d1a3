#pragma once

#include <functional>

namespace distcal {

// Runs fn(0..count-1) across a small thread pool. Each index owns its output
// slot and its own RandomStream, so results are identical for any thread
// count; callers reduce the stored slots sequentially afterwards.
void parallel_for(long long count, const std::function<void(long long)>& fn,
                  int threads = 0);

}  // namespace distcal
