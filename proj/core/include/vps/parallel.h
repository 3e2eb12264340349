#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace vps {

// Process-wide worker cap set by the CLI --threads flag. 1 is the reference
// deterministic mode; results for n>1 stay bitwise identical because every
// reduction in this codebase combines fixed-size chunk partials in chunk order.
int& worker_threads();

// Splits [0,n) into fixed-size chunks (independent of the thread count) and
// runs fn(begin,end,chunk_index) over them. chunk_count() gives the number of
// partial slots a caller must allocate before reducing sequentially.
struct ChunkedRange {
    std::size_t n;
    std::size_t chunk = 4096;

    std::size_t chunk_count() const { return n == 0 ? 0 : (n + chunk - 1) / chunk; }

    template <class Fn>
    void run(Fn&& fn, int threads) const {
        const std::size_t nc = chunk_count();
        if (nc == 0) return;
        if (threads <= 1 || nc == 1) {
            for (std::size_t c = 0; c < nc; ++c)
                fn(c * chunk, std::min(n, (c + 1) * chunk), c);
            return;
        }
        std::vector<std::thread> pool;
        const int nt = std::min<std::size_t>(threads, nc);
        for (int t = 0; t < nt; ++t) {
            pool.emplace_back([&, t]() {
                for (std::size_t c = t; c < nc; c += nt)
                    fn(c * chunk, std::min(n, (c + 1) * chunk), c);
            });
        }
        for (auto& th : pool) th.join();
    }
};

template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, int threads, std::size_t chunk = 4096) {
    ChunkedRange r{n, chunk};
    r.run([&](std::size_t b, std::size_t e, std::size_t) {
        for (std::size_t i = b; i < e; ++i) fn(i);
    }, threads);
}

inline int& worker_threads() {
    static int n = 1;
    return n;
}

} // namespace vps
