#pragma once

#include <cstdint>
#include <functional>
#include <string>

namespace kclg {

std::string fnv1aHex(const std::string& data);

// Default enumeration budget; KCLG_BUDGET overrides it.
std::uint64_t defaultBudget();

// Runs fn(i) for i in [0,n) on up to `threads` workers (0 = hardware concurrency).
void parallelFor(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

// Shortest round-trip text for a double.
std::string formatDouble(double v);

} // namespace kclg
