#pragma once

#include <cstdint>
#include <functional>
#include <string>

namespace mtdnet {

// Splitmix64 step. Used to derive independent RNG streams from one base seed
// (per epoch, per image, per parameter sweep) without correlated sequences.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt);

// Worker cap for kernels that parallelize internally. Resolution order:
// set_thread_cap() override, then MTDNET_THREADS, then 1.
int thread_count();
void set_thread_cap(int n);

// Runs fn(i) for i in [0, n). Splits into contiguous index ranges across
// thread_count() workers; ranges are disjoint, so results are bit-identical
// for any worker count as long as fn writes only to its own index.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

// Locale-independent shortest-round-trip formatting (dot decimal separator).
std::string format_double(double v);

}  // namespace mtdnet
