#include "hybridsim/territory.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hybridsim
{
    void DisseminationParams::validate() const
    {
        auto fail = [](const std::string &msg) { throw std::invalid_argument(msg); };
        if (!(interaction_range > 0.0))
        {
            fail("interaction_range must be > 0");
        }
        if (!(forwarding_threshold > 0.0 && forwarding_threshold < interaction_range))
        {
            fail("forwarding_threshold must be in (0, interaction_range)");
        }
        if (!(gossip_probability >= 0.0 && gossip_probability <= 1.0))
        {
            fail("gossip_probability must be in [0, 1]");
        }
        if (!(geofilter_distance >= 0.0))
        {
            fail("geofilter_distance must be >= 0");
        }
        if (!(generation_probability >= 0.0 && generation_probability <= 1.0))
        {
            fail("generation_probability must be in [0, 1]");
        }
        if (ttl < 0)
        {
            fail("ttl must be >= 0");
        }
        if (cache_capacity < 1)
        {
            fail("cache_capacity must be >= 1");
        }
        if (max_relays_per_step < 0)
        {
            fail("max_relays_per_step must be >= 0");
        }
    }

    std::string_view to_string(EntityKind k) noexcept
    {
        return k == EntityKind::Mobile ? "mobile" : "static";
    }

    EntityKind entity_kind_from_string(std::string_view s)
    {
        if (s == "mobile")
        {
            return EntityKind::Mobile;
        }
        if (s == "static")
        {
            return EntityKind::Static;
        }
        throw std::invalid_argument("unknown entity kind: " + std::string(s));
    }

    std::string_view to_string(FilterReason r) noexcept
    {
        switch (r)
        {
        case FilterReason::Relayed:
            return "relayed";
        case FilterReason::Cache:
            return "cache";
        case FilterReason::Ttl:
            return "ttl";
        case FilterReason::Geofilter:
            return "geofilter";
        case FilterReason::Ring:
            return "ring";
        case FilterReason::Budget:
            return "budget";
        case FilterReason::Gossip:
            return "gossip";
        }
        return "?";
    }

    double world_side_for(std::size_t num_entities) noexcept
    {
        return std::sqrt(static_cast<double>(num_entities) * area_per_entity);
    }

    World make_world(std::size_t num_entities, std::uint64_t master_seed, std::size_t cache_capacity)
    {
        if (num_entities == 0)
        {
            throw std::invalid_argument("make_world: need at least one entity");
        }
        World w;
        w.side_length = world_side_for(num_entities);
        w.entities.reserve(num_entities);
        for (std::size_t i = 0; i < num_entities; ++i)
        {
            SimulatedEntity e;
            e.id = static_cast<EntityId>(i);
            e.kind = (i % 2 == 0) ? EntityKind::Mobile : EntityKind::Static;
            e.rng = RngStream::for_entity(master_seed, i);
            e.position.x = e.rng.uniform(0.0, w.side_length);
            e.position.y = e.rng.uniform(0.0, w.side_length);
            e.dup_cache = LruIdCache(cache_capacity);
            w.entities.push_back(std::move(e));
        }
        return w;
    }

    void rwp_step(SimulatedEntity &entity, double side)
    {
        if (entity.kind != EntityKind::Mobile)
        {
            throw std::logic_error("rwp_step: entity " + std::to_string(entity.id) + " is static");
        }
        if (!entity.rwp_target)
        {
            Vec2 target;
            target.x = entity.rng.uniform(0.0, side);
            target.y = entity.rng.uniform(0.0, side);
            entity.rwp_target = target;
            entity.rwp_speed = entity.rng.uniform(rwp_min_speed, rwp_max_speed);
        }
        const Vec2 target = *entity.rwp_target;
        const double dx = toroidal_delta(entity.position.x, target.x, side);
        const double dy = toroidal_delta(entity.position.y, target.y, side);
        const double remaining = std::sqrt(dx * dx + dy * dy);
        if (remaining <= entity.rwp_speed)
        {
            entity.position = target;
            entity.rwp_target.reset();
            return;
        }
        const double f = entity.rwp_speed / remaining;
        entity.position = wrap_position({entity.position.x + dx * f, entity.position.y + dy * f}, side);
    }

    std::uint64_t make_message_id(EntityId origin, std::uint32_t seq) noexcept
    {
        return (static_cast<std::uint64_t>(origin) << 32) | seq;
    }

    std::optional<DisseminationMessage> generate_message(SimulatedEntity &entity, Timestep t, const DisseminationParams &params)
    {
        if (!entity.rng.bernoulli(params.generation_probability))
        {
            return std::nullopt;
        }
        DisseminationMessage m;
        m.message_id = make_message_id(entity.id, entity.next_message_seq++);
        m.origin_entity = entity.id;
        m.origin_position = entity.position;
        m.ttl_remaining = params.ttl;
        m.hop_count = 0;
        m.created_at = t;
        entity.dup_cache.touch(m.message_id);
        return m;
    }

    RelayOutcome decide_relay(SimulatedEntity &receiver, const DisseminationMessage &msg, Vec2 sender_position,
                              const DisseminationParams &params, double side)
    {
        if (receiver.dup_cache.touch(msg.message_id))
        {
            return {FilterReason::Cache, std::nullopt};
        }
        if (msg.ttl_remaining <= 0)
        {
            return {FilterReason::Ttl, std::nullopt};
        }
        if (toroidal_distance(receiver.position, msg.origin_position, side) > params.geofilter_distance)
        {
            return {FilterReason::Geofilter, std::nullopt};
        }
        if (toroidal_distance(receiver.position, sender_position, side) <= params.forwarding_threshold)
        {
            return {FilterReason::Ring, std::nullopt};
        }
        if (receiver.relays_this_step >= params.max_relays_per_step)
        {
            return {FilterReason::Budget, std::nullopt};
        }
        if (!receiver.rng.bernoulli(params.gossip_probability))
        {
            return {FilterReason::Gossip, std::nullopt};
        }
        DisseminationMessage copy = msg;
        --copy.ttl_remaining;
        ++copy.hop_count;
        ++receiver.relays_this_step;
        return {FilterReason::Relayed, copy};
    }

    SpatialGrid::SpatialGrid(double side, double min_cell_size) : side_(side)
    {
        if (!(side > 0.0) || !(min_cell_size > 0.0))
        {
            throw std::invalid_argument("SpatialGrid: side and cell size must be positive");
        }
        cells_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(side / min_cell_size)));
        cell_size_ = side / static_cast<double>(cells_);
    }

    std::size_t SpatialGrid::cell_of(double coord) const noexcept
    {
        auto c = static_cast<std::size_t>(coord / cell_size_);
        return std::min(c, cells_ - 1);
    }

    void SpatialGrid::rebuild(std::span<const Vec2> positions)
    {
        const std::size_t ncell = cells_ * cells_;
        cell_start_.assign(ncell + 1, 0);
        std::vector<std::uint32_t> cell_index(positions.size());
        for (std::size_t i = 0; i < positions.size(); ++i)
        {
            const std::size_t c = cell_of(positions[i].y) * cells_ + cell_of(positions[i].x);
            cell_index[i] = static_cast<std::uint32_t>(c);
            ++cell_start_[c + 1];
        }
        for (std::size_t c = 0; c < ncell; ++c)
        {
            cell_start_[c + 1] += cell_start_[c];
        }
        members_.resize(positions.size());
        std::vector<std::uint32_t> fill(cell_start_.begin(), cell_start_.end() - 1);
        for (std::size_t i = 0; i < positions.size(); ++i)
        {
            members_[fill[cell_index[i]]++] = static_cast<EntityId>(i);
        }
    }

    std::vector<EntityId> SpatialGrid::query(std::span<const Vec2> positions, Vec2 center, double radius,
                                             std::optional<EntityId> exclude) const
    {
        std::vector<EntityId> out;
        if (cell_start_.empty())
        {
            return out;
        }
        if (radius > cell_size_)
        {
            for (EntityId id = 0; id < positions.size(); ++id)
            {
                if ((!exclude || *exclude != id) && toroidal_distance(center, positions[id], side_) <= radius)
                {
                    out.push_back(id);
                }
            }
            return out;
        }
        const auto cx = static_cast<long>(cell_of(wrap_coordinate(center.x, side_)));
        const auto cy = static_cast<long>(cell_of(wrap_coordinate(center.y, side_)));
        const long n = static_cast<long>(cells_);
        // With fewer than three cells per axis the 3x3 neighbourhood aliases; dedupe.
        long xs[3];
        long ys[3];
        int nx = 0;
        int ny = 0;
        for (long d = -1; d <= 1; ++d)
        {
            const long x = ((cx + d) % n + n) % n;
            const long y = ((cy + d) % n + n) % n;
            if (std::find(xs, xs + nx, x) == xs + nx)
            {
                xs[nx++] = x;
            }
            if (std::find(ys, ys + ny, y) == ys + ny)
            {
                ys[ny++] = y;
            }
        }
        for (int iy = 0; iy < ny; ++iy)
        {
            for (int ix = 0; ix < nx; ++ix)
            {
                const auto c = static_cast<std::size_t>(ys[iy] * n + xs[ix]);
                for (std::uint32_t k = cell_start_[c]; k < cell_start_[c + 1]; ++k)
                {
                    const EntityId id = members_[k];
                    if (exclude && *exclude == id)
                    {
                        continue;
                    }
                    if (toroidal_distance(center, positions[id], side_) <= radius)
                    {
                        out.push_back(id);
                    }
                }
            }
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    std::vector<EntityId> broadcast_reach(std::span<const Vec2> positions, const SpatialGrid &grid, EntityId sender,
                                          double range)
    {
        return grid.query(positions, positions[sender], range, sender);
    }
}
