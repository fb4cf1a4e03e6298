#include "ddcs/random.hpp"

#include <cmath>
#include <numbers>

namespace ddcs {

std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t label)
{
    return splitmix64(splitmix64(parent) ^ splitmix64(label + 0x632be59bd9b4e019ULL));
}

std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t a, std::uint64_t b)
{
    return derive_seed(derive_seed(parent, a), b);
}

std::uint64_t CounterRng::key(std::uint64_t counter, std::uint64_t channel, std::uint64_t component) const
{
    std::uint64_t h = splitmix64(seed_);
    h = splitmix64(h ^ (channel * 0xd1b54a32d192ed03ULL));
    h = splitmix64(h ^ counter);
    h = splitmix64(h ^ (component * 0x8cb92ba72f3d8dd7ULL));
    return h;
}

static double to_unit_open(std::uint64_t bits)
{
    // 53 random bits mapped to (0, 1)
    return (static_cast<double>(bits >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

double CounterRng::uniform(std::uint64_t counter, std::uint64_t channel, std::uint64_t component) const
{
    return to_unit_open(key(counter, channel, component));
}

double CounterRng::normal(std::uint64_t counter, std::uint64_t channel, std::uint64_t component) const
{
    const std::uint64_t k = key(counter, channel, component);
    const double u1 = to_unit_open(k);
    const double u2 = to_unit_open(splitmix64(k ^ 0xa0761d6478bd642fULL));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Vector CounterRng::normal_vector(std::uint64_t counter, std::uint64_t channel, Index dim) const
{
    Vector v(dim);
    for (Index i = 0; i < dim; ++i) v(i) = normal(counter, channel, static_cast<std::uint64_t>(i));
    return v;
}

Vector CounterRng::gaussian(std::uint64_t counter, std::uint64_t channel, const Matrix& factor) const
{
    return factor * normal_vector(counter, channel, factor.cols());
}

} // namespace ddcs
