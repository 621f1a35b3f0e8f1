#pragma once

#include "hybridsim/geometry.hpp"
#include "hybridsim/rng.hpp"
#include "hybridsim/territory.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

namespace hybridsim
{
    using NodeId = std::uint32_t;

    struct MarketConfig
    {
        std::uint32_t grid_rows = 10;
        std::uint32_t grid_cols = 10;
        // Spacing and range chosen so only 4-neighbour sellers hear each other.
        double spacing = 10.0;
        double radio_range = 12.0;
        double walking_speed = 1.4;
        int hop_limit = 64;
        int max_backoff = 16;

        void validate() const;
    };

    enum class PedestrianState : std::uint8_t
    {
        Querying,
        Walking,
        Arrived,
    };

    struct PedestrianNode
    {
        EntityId entity_id = 0;
        NodeId node = 0;
        Vec2 position;
        Vec2 injected_at;
        double walking_speed = 1.4;
        NodeId target_seller = 0;
        std::optional<Vec2> known_target_position;
        PedestrianState state = PedestrianState::Querying;

        // Fine steps until the in-flight query's reply arrives; 0 when idle.
        int reply_in = 0;
        int last_route_hops = 0;
        // Unreachable-target retry state.
        int retry_wait = 0;
        int backoff = 1;
        std::uint64_t retries = 0;
        std::uint64_t rng_draws = 0;
    };

    struct RouteEntry
    {
        NodeId next_hop = 0;
        std::uint32_t seq = 0;
        int hop_count = 0;
    };

    // Per node: destination -> route.
    using RouteTable = std::map<NodeId, RouteEntry>;

    struct MarketCounters
    {
        std::uint64_t messages_sent = 0;
        std::uint64_t route_discoveries = 0;
        std::uint64_t unreachable = 0;
        std::uint64_t fine_steps = 0;
        std::uint64_t hop_floor = 0; // sum of 2 x route hops over completed queries

        friend bool operator==(const MarketCounters &, const MarketCounters &) = default;
    };

    // Sellers occupy node ids [0, seller_count); pedestrians follow. Pedestrians
    // originate and terminate traffic but never forward it.
    class MarketScene
    {
    public:
        explicit MarketScene(const MarketConfig &config = {});
        // Arbitrary seller layout (used for topology tests).
        MarketScene(std::vector<Vec2> seller_positions, const MarketConfig &config);

        const MarketConfig &config() const noexcept { return config_; }
        std::size_t seller_count() const noexcept { return seller_count_; }
        std::size_t node_count() const noexcept { return positions_.size(); }
        Vec2 position(NodeId n) const { return positions_.at(n); }
        bool is_seller(NodeId n) const noexcept { return n < seller_count_; }
        bool has_grid_layout() const noexcept { return grid_layout_; }

        NodeId add_pedestrian(EntityId entity, Vec2 position, NodeId target_seller);
        std::vector<PedestrianNode> &pedestrians() noexcept { return pedestrians_; }
        const std::vector<PedestrianNode> &pedestrians() const noexcept { return pedestrians_; }
        PedestrianNode &pedestrian(NodeId n);

        void move_node(NodeId n, Vec2 to);

        // Unit-disk neighbours at current positions, ascending.
        std::vector<NodeId> neighbors(NodeId n) const;

        RouteTable &routes(NodeId n) { return routes_.at(n); }
        const RouteTable &routes(NodeId n) const { return routes_.at(n); }
        // Drops every route whose destination or next hop is n.
        void invalidate_routes_via(NodeId n);

        std::uint32_t next_seq(NodeId n) { return ++seq_.at(n); }

        MarketCounters &counters() noexcept { return counters_; }
        const MarketCounters &counters() const noexcept { return counters_; }

        // Invoked for every radio transmission (from, to).
        void set_transmission_tap(std::function<void(NodeId, NodeId)> tap) { tap_ = std::move(tap); }
        void note_transmission(NodeId from, NodeId to) const
        {
            if (tap_)
            {
                tap_(from, to);
            }
        }

    private:
        MarketConfig config_;
        std::size_t seller_count_ = 0;
        std::vector<Vec2> positions_;
        std::vector<RouteTable> routes_;
        std::vector<std::uint32_t> seq_;
        bool grid_layout_ = false;
        std::vector<PedestrianNode> pedestrians_;
        MarketCounters counters_;
        std::function<void(NodeId, NodeId)> tap_;
    };

    struct RouteOutcome
    {
        bool reachable = false;
        int hop_count = 0;
        std::uint64_t transmissions = 0;
    };

    // Flooded request with per-node duplicate suppression and a hop limit,
    // then a unicast reply along the reverse path installing forward routes.
    RouteOutcome route_discover(MarketScene &scene, NodeId src, NodeId dst);

    // Advances one fine step of a QUERYING pedestrian. Returns the seller
    // position once the reply has arrived.
    std::optional<Vec2> query_seller(PedestrianNode &ped, MarketScene &scene);

    // Advances one fine step of movement.
    void pedestrian_step(PedestrianNode &ped, MarketScene &scene);

    struct MarketStatus
    {
        std::uint64_t querying = 0;
        std::uint64_t walking = 0;
        std::uint64_t arrived = 0;
        MarketCounters counters;
    };

    // Customer handed in from Level 1a, with the entity's own RNG stream.
    struct MarketCustomer
    {
        EntityId entity_id = 0;
        RngStream rng;
    };

    class MarketSimulation
    {
    public:
        explicit MarketSimulation(const MarketConfig &config = {});

        // Places each customer next to a random edge seller and picks a uniform
        // target seller, both from the customer's stream (3 draws).
        void inject(std::span<MarketCustomer> customers);

        MarketStatus advance_fine_step();
        MarketStatus advance_coarse_step(int substeps);
        MarketStatus status() const;

        MarketScene &scene() noexcept { return scene_; }
        const MarketScene &scene() const noexcept { return scene_; }

    private:
        MarketScene scene_;
    };

    // n_customers pedestrians, substeps fine steps per coarse step, for
    // coarse_steps steps. Returns one status per coarse step.
    std::vector<MarketStatus> run_market(MarketSimulation &sim, std::span<MarketCustomer> customers, int substeps,
                                         int coarse_steps);
}
