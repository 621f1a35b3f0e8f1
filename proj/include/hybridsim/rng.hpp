#pragma once

#include <cstdint>
#include <string_view>

namespace hybridsim
{
    // SplitMix64 finalizer. Bijective on 64-bit words.
    constexpr std::uint64_t mix64(std::uint64_t z) noexcept
    {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    constexpr std::uint64_t fnv1a(std::string_view s) noexcept
    {
        std::uint64_t h = 1469598103934665603ULL;
        for (char c : s)
        {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ULL;
        }
        return h;
    }

    // Counter-based stream: output i is a pure function of (key, i), so the
    // full stream state is the pair and can be shipped across process
    // boundaries or rewound exactly.
    class RngStream
    {
    public:
        constexpr RngStream() noexcept = default;
        constexpr RngStream(std::uint64_t key, std::uint64_t cursor) noexcept : key_(key), cursor_(cursor) {}

        // Stream for one simulated entity.
        static constexpr RngStream for_entity(std::uint64_t master_seed, std::uint64_t entity_id) noexcept
        {
            return RngStream(mix64(mix64(master_seed) ^ mix64(entity_id + 0x2545F4914F6CDD1DULL)), 0);
        }

        // Named engine-level stream, e.g. "partition", optionally indexed.
        static constexpr RngStream for_role(std::uint64_t master_seed, std::string_view role, std::uint64_t index = 0) noexcept
        {
            return RngStream(mix64(mix64(master_seed ^ fnv1a(role)) + mix64(index ^ 0xD1B54A32D192ED03ULL)), 0);
        }

        constexpr std::uint64_t next_u64() noexcept
        {
            ++cursor_;
            return mix64(key_ + cursor_ * 0x9E3779B97F4A7C15ULL);
        }

        // Uniform in [0, 1).
        constexpr double next_unit() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

        // Uniform in [lo, hi).
        constexpr double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * next_unit(); }

        // Uniform integer in [0, bound), bound > 0. Lemire's multiply-shift; the
        // bias is below 2^-32 for the bounds used here.
        constexpr std::uint64_t below(std::uint64_t bound) noexcept
        {
            __extension__ using u128 = unsigned __int128;
            return static_cast<std::uint64_t>((static_cast<u128>(next_u64()) * bound) >> 64);
        }

        constexpr bool bernoulli(double p) noexcept
        {
            if (p <= 0.0)
            {
                return false;
            }
            if (p >= 1.0)
            {
                return true;
            }
            return next_unit() < p;
        }

        constexpr std::uint64_t key() const noexcept { return key_; }
        constexpr std::uint64_t cursor() const noexcept { return cursor_; }

        friend constexpr bool operator==(const RngStream &, const RngStream &) = default;

    private:
        std::uint64_t key_ = 0;
        std::uint64_t cursor_ = 0;
    };
}
