#pragma once

#include <cstddef>
#include <functional>

namespace v4d {

/// Worker count: hardware concurrency capped by the V4D_THREADS env var.
std::size_t thread_count();

/// Runs body(i) for i in [0, count). Items are independent; callers that
/// reduce must do so in index order afterwards to stay bit-deterministic.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace v4d
