#include "enkf/random.hpp"

namespace enkf {

std::uint64_t splitmix64(std::uint64_t& state) noexcept
{
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

namespace {

std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

std::uint64_t mix(std::uint64_t h, std::uint64_t v) noexcept
{
    std::uint64_t s = h ^ (v * 0xD6E8FEB86659FD93ULL);
    return splitmix64(s);
}

}  // namespace

Rng::Rng(std::uint64_t seed) noexcept
{
    std::uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
}

Rng::result_type Rng::operator()() noexcept
{
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

Eigen::VectorXd Rng::normals(Eigen::Index n)
{
    Eigen::VectorXd out(n);
    for (Eigen::Index i = 0; i < n; ++i) out[i] = normal_(*this);
    return out;
}

Rng SeededStream::engine(Phase phase, std::uint64_t step, std::uint64_t member) const noexcept
{
    std::uint64_t h = mix(seed_, static_cast<std::uint64_t>(phase));
    h = mix(h, step);
    h = mix(h, member);
    return Rng(h);
}

SeededStream SeededStream::derive(std::uint64_t tag) const noexcept
{
    return SeededStream(mix(mix(seed_, 0x5EEDULL), tag));
}

}  // namespace enkf
