#pragma once

#include <cstddef>

// Records the largest single heap request made while a probe is active.
// Works by interposing malloc and friends, which Eigen and operator new use.
namespace acceptance {

void start_alloc_probe();
std::size_t stop_alloc_probe();  // largest request in bytes since start

}  // namespace acceptance
