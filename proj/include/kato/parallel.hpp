#pragma once

#include <cstddef>
#include <functional>

namespace kato {

/// Worker count used by parallel_for; 1 means run inline.
void set_thread_count(int n);
int thread_count();

/// Calls body(i) exactly once for each i in [0, n). Work items must write
/// only to their own slot; callers reduce the slots in index order so
/// results do not depend on the schedule.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace kato
