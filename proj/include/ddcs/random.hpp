#pragma once

#include "ddcs/core.hpp"

#include <cstdint>

namespace ddcs {

// Stateless normal generator: every draw is a hash of (seed, counter, channel, component),
// so results do not depend on the order in which rollouts or time steps are evaluated.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    double uniform(std::uint64_t counter, std::uint64_t channel, std::uint64_t component) const;
    double normal(std::uint64_t counter, std::uint64_t channel, std::uint64_t component) const;
    Vector normal_vector(std::uint64_t counter, std::uint64_t channel, Index dim) const;
    // Sample of N(0, F F') given the factor F.
    Vector gaussian(std::uint64_t counter, std::uint64_t channel, const Matrix& factor) const;

private:
    std::uint64_t key(std::uint64_t counter, std::uint64_t channel, std::uint64_t component) const;
    std::uint64_t seed_;
};

std::uint64_t splitmix64(std::uint64_t x);
// Child seed for a labelled sub-stream (replicate index, rollout index, stage tag, ...).
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t label);
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t a, std::uint64_t b);

// Common channel tags.
namespace channel {
inline constexpr std::uint64_t process = 1;
inline constexpr std::uint64_t measurement = 2;
inline constexpr std::uint64_t excitation = 3;
inline constexpr std::uint64_t initial_state = 4;
inline constexpr std::uint64_t history_process = 5;
inline constexpr std::uint64_t history_measurement = 6;
inline constexpr std::uint64_t auxiliary = 7;
} // namespace channel

} // namespace ddcs
