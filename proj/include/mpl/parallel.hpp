// Copyright 2026 The mplssl Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace mpl {

// Block-partitioned parallel loop over [0, n). Each index owns its output
// slot, so results never depend on the schedule. MPL_SSL_DETERMINISTIC=1
// forces single-threaded execution.
inline void parallel_for(long n, int threads, const std::function<void(long)>& fn) {
  if (const char* env = std::getenv("MPL_SSL_DETERMINISTIC"); env && env[0] == '1') threads = 1;
  threads = std::max(1, threads);
  if (threads == 1 || n <= 1) {
    for (long i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<long> next{0};
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (long i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  for (auto& th : pool) th.join();
}

}  // namespace mpl
