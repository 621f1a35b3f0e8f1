#pragma once

#include "hybridsim/geometry.hpp"
#include "hybridsim/lru_cache.hpp"
#include "hybridsim/rng.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hybridsim
{
    using EntityId = std::uint32_t;
    using Timestep = std::int64_t;

    // Area per entity used to size the world (spaceunits^2).
    inline constexpr double area_per_entity = 10000.0;

    struct DisseminationParams
    {
        double interaction_range = 250.0;
        double forwarding_threshold = 225.0;
        double gossip_probability = 0.2;
        double geofilter_distance = 1000.0;
        double generation_probability = 0.001;
        int ttl = 6;
        std::size_t cache_capacity = 128;
        int max_relays_per_step = 10;

        // Throws std::invalid_argument naming the offending field.
        void validate() const;

        static DisseminationParams good_tuning() { return {}; }

        // Aggressive gossip with a wide forwarding ring.
        static DisseminationParams bad_tuning()
        {
            DisseminationParams p;
            p.gossip_probability = 0.6;
            p.forwarding_threshold = 100.0;
            return p;
        }
    };

    enum class EntityKind : std::uint8_t
    {
        Static,
        Mobile,
    };

    std::string_view to_string(EntityKind k) noexcept;
    EntityKind entity_kind_from_string(std::string_view s);

    struct DisseminationMessage
    {
        std::uint64_t message_id = 0;
        EntityId origin_entity = 0;
        Vec2 origin_position;
        int ttl_remaining = 0;
        int hop_count = 0;
        Timestep created_at = 0;

        friend bool operator==(const DisseminationMessage &, const DisseminationMessage &) = default;
    };

    struct SimulatedEntity
    {
        EntityId id = 0;
        EntityKind kind = EntityKind::Static;
        Vec2 position;
        std::optional<Vec2> rwp_target;
        double rwp_speed = 0.0;
        RngStream rng;
        LruIdCache dup_cache;
        int relays_this_step = 0;
        std::uint32_t next_message_seq = 0;
        // False while the entity is handed over to a Level 1 simulator.
        bool active = true;

        friend bool operator==(const SimulatedEntity &, const SimulatedEntity &) = default;
    };

    struct World
    {
        double side_length = 0.0;
        std::vector<SimulatedEntity> entities;

        std::size_t size() const noexcept { return entities.size(); }
    };

    double world_side_for(std::size_t num_entities) noexcept;

    // Uniform placement on the torus from each entity's own stream; even ids are
    // mobile, odd ids static.
    World make_world(std::size_t num_entities, std::uint64_t master_seed, std::size_t cache_capacity = 128);

    // Random Waypoint with zero sleep time. Speed is redrawn for every leg.
    inline constexpr double rwp_min_speed = 1.0;
    inline constexpr double rwp_max_speed = 14.0;
    void rwp_step(SimulatedEntity &entity, double side);

    std::uint64_t make_message_id(EntityId origin, std::uint32_t seq) noexcept;

    // The originator records its own message in its duplicate cache so echoes
    // of it are not re-relayed.
    std::optional<DisseminationMessage> generate_message(SimulatedEntity &entity, Timestep t, const DisseminationParams &params);

    enum class FilterReason : std::uint8_t
    {
        Relayed,
        Cache,
        Ttl,
        Geofilter,
        Ring,
        Budget,
        Gossip,
    };

    std::string_view to_string(FilterReason r) noexcept;

    struct RelayOutcome
    {
        FilterReason reason = FilterReason::Cache;
        // Set only when reason == Relayed: the copy to broadcast next step.
        std::optional<DisseminationMessage> forwarded;

        bool relayed() const noexcept { return reason == FilterReason::Relayed; }
    };

    // Filters run in a fixed order: cache, ttl, geofilter, ring, budget, gossip
    // coin. The cache is touched unconditionally.
    RelayOutcome decide_relay(SimulatedEntity &receiver, const DisseminationMessage &msg, Vec2 sender_position,
                              const DisseminationParams &params, double side);

    // Uniform bucket grid over the torus with cells no smaller than the query radius,
    // so a range query only inspects the 3x3 block around the centre cell.
    class SpatialGrid
    {
    public:
        SpatialGrid() = default;
        SpatialGrid(double side, double min_cell_size);

        void rebuild(std::span<const Vec2> positions);

        // Ids within radius (inclusive) of center, ascending. exclude is skipped.
        std::vector<EntityId> query(std::span<const Vec2> positions, Vec2 center, double radius,
                                    std::optional<EntityId> exclude = std::nullopt) const;

        std::size_t cells_per_axis() const noexcept { return cells_; }

    private:
        std::size_t cell_of(double coord) const noexcept;

        double side_ = 0.0;
        double cell_size_ = 0.0;
        std::size_t cells_ = 1;
        // CSR layout: cell_start_[c]..cell_start_[c+1] indexes into members_.
        std::vector<std::uint32_t> cell_start_;
        std::vector<EntityId> members_;
    };

    // All entities other than sender within range of the sender's position.
    std::vector<EntityId> broadcast_reach(std::span<const Vec2> positions, const SpatialGrid &grid, EntityId sender,
                                          double range);
}
