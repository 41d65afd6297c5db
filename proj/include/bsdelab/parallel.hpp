#pragma once

// Chunked parallel loops. Work is split into fixed-size chunks whose
// boundaries do not depend on the thread count, so any reduction done
// chunk-by-chunk and then combined in chunk order is reproducible.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace bsdelab {

inline constexpr std::size_t kDefaultChunk = 2048;

inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

inline std::size_t chunk_count(std::size_t n, std::size_t chunk) { return chunk == 0 ? 0 : (n + chunk - 1) / chunk; }

/// Calls body(begin, end, chunk_index) for every chunk of [0, n).
template <class Body>
void parallel_for_chunks(std::size_t n, std::size_t chunk, int threads, Body&& body) {
    const std::size_t chunks = chunk_count(n, chunk);
    if (chunks == 0) return;
    const int workers = std::min<int>(resolve_threads(threads), static_cast<int>(chunks));
    if (workers <= 1) {
        for (std::size_t c = 0; c < chunks; ++c) body(c * chunk, std::min(n, (c + 1) * chunk), c);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto run = [&] {
        for (;;) {
            const std::size_t c = next.fetch_add(1);
            if (c >= chunks) return;
            try {
                body(c * chunk, std::min(n, (c + 1) * chunk), c);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                next.store(chunks);
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers - 1));
    for (int w = 1; w < workers; ++w) pool.emplace_back(run);
    run();
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace bsdelab
