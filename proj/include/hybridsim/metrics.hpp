#pragma once

#include "hybridsim/territory.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace hybridsim
{
    // Level 0 message counters. delivered counts copies consumed by an active
    // receiver; every delivered copy lands in exactly one of relayed or a drop
    // reason. reach_total counts receptions scheduled at routing time.
    struct MessageCounters
    {
        std::uint64_t generated = 0;
        std::uint64_t delivered = 0;
        std::uint64_t relayed = 0;
        std::uint64_t cache_filtered = 0;
        std::uint64_t ttl_filtered = 0;
        std::uint64_t geofiltered = 0;
        std::uint64_t ring_filtered = 0;
        std::uint64_t budget_filtered = 0;
        std::uint64_t gossip_declined = 0;
        std::uint64_t frozen_drops = 0;
        std::uint64_t reach_total = 0;

        void count(FilterReason r) noexcept;

        std::uint64_t non_relayed_drops() const noexcept
        {
            return cache_filtered + ttl_filtered + geofiltered + ring_filtered + budget_filtered + gossip_declined;
        }

        MessageCounters &operator+=(const MessageCounters &o) noexcept;

        // Stable (name, value) listing; the order is the CSV column order.
        std::vector<std::pair<std::string_view, std::uint64_t>> fields() const;

        friend bool operator==(const MessageCounters &, const MessageCounters &) = default;
    };

    inline constexpr std::array<std::string_view, 11> message_counter_names = {
        "generated",     "delivered",     "relayed",         "cache_filtered", "ttl_filtered", "geofiltered",
        "ring_filtered", "budget_filtered", "gossip_declined", "frozen_drops",   "reach_total",
    };

    struct Level1Metrics
    {
        std::uint64_t spawns = 0;
        std::uint64_t completed = 0;
        std::uint64_t failures = 0;
        std::uint64_t entities_transferred = 0;
        std::uint64_t status_exchanges = 0;
        double emissions = 0.0;
        std::uint64_t customers = 0;
        std::uint64_t market_messages = 0;
        std::uint64_t route_discoveries = 0;
        std::uint64_t pedestrians_arrived = 0;
        std::uint64_t conservation_checks = 0;

        friend bool operator==(const Level1Metrics &, const Level1Metrics &) = default;
    };

    struct RunMetrics
    {
        std::uint64_t seed = 0;
        std::size_t num_entities = 0;
        std::uint32_t num_lps = 0;
        Timestep steps_completed = 0;
        MessageCounters totals;
        std::vector<MessageCounters> per_step;
        // Envelopes routed after the final step, never consumed.
        std::uint64_t in_flight_at_end = 0;
        Level1Metrics level1;
        std::vector<std::pair<std::string, std::string>> config_echo;
        double wall_clock_seconds = 0.0;

        // Empty when the accounting identities hold, else a description of the first violated one.
        std::string accounting_error() const;

        // Everything except wall_clock_seconds, as a deterministic text blob.
        std::string deterministic_digest() const;
    };
}
