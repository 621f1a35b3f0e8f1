#include "hybridsim/market.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace hybridsim
{
    namespace
    {
        constexpr double arrival_epsilon = 1e-9;

        void install_route(RouteTable &table, NodeId dst, RouteEntry entry)
        {
            auto it = table.find(dst);
            if (it == table.end() || entry.seq > it->second.seq ||
                (entry.seq == it->second.seq && entry.hop_count < it->second.hop_count))
            {
                table[dst] = entry;
            }
        }
    }

    void MarketConfig::validate() const
    {
        if (grid_rows == 0 || grid_cols == 0)
        {
            throw std::invalid_argument("market grid must have at least one row and column");
        }
        if (!(spacing > 0.0) || !(radio_range > 0.0) || !(walking_speed > 0.0))
        {
            throw std::invalid_argument("market spacing, radio_range and walking_speed must be > 0");
        }
        if (hop_limit < 1 || max_backoff < 1)
        {
            throw std::invalid_argument("market hop_limit and max_backoff must be >= 1");
        }
    }

    MarketScene::MarketScene(const MarketConfig &config) : config_(config)
    {
        config_.validate();
        for (std::uint32_t r = 0; r < config_.grid_rows; ++r)
        {
            for (std::uint32_t c = 0; c < config_.grid_cols; ++c)
            {
                positions_.push_back({c * config_.spacing, r * config_.spacing});
            }
        }
        seller_count_ = positions_.size();
        routes_.resize(seller_count_);
        seq_.assign(seller_count_, 0);
        grid_layout_ = true;
    }

    MarketScene::MarketScene(std::vector<Vec2> seller_positions, const MarketConfig &config)
        : config_(config), positions_(std::move(seller_positions))
    {
        config_.validate();
        seller_count_ = positions_.size();
        routes_.resize(seller_count_);
        seq_.assign(seller_count_, 0);
    }

    NodeId MarketScene::add_pedestrian(EntityId entity, Vec2 position, NodeId target_seller)
    {
        if (target_seller >= seller_count_)
        {
            throw std::out_of_range("add_pedestrian: target " + std::to_string(target_seller) + " is not a seller");
        }
        const auto node = static_cast<NodeId>(positions_.size());
        positions_.push_back(position);
        routes_.emplace_back();
        seq_.push_back(0);
        PedestrianNode p;
        p.entity_id = entity;
        p.node = node;
        p.position = position;
        p.injected_at = position;
        p.walking_speed = config_.walking_speed;
        p.target_seller = target_seller;
        pedestrians_.push_back(p);
        return node;
    }

    PedestrianNode &MarketScene::pedestrian(NodeId n)
    {
        if (n < seller_count_ || n >= positions_.size())
        {
            throw std::out_of_range("node " + std::to_string(n) + " is not a pedestrian");
        }
        return pedestrians_[n - seller_count_];
    }

    void MarketScene::move_node(NodeId n, Vec2 to)
    {
        if (is_seller(n))
        {
            throw std::logic_error("sellers are fixed");
        }
        positions_.at(n) = to;
    }

    std::vector<NodeId> MarketScene::neighbors(NodeId n) const
    {
        std::vector<NodeId> out;
        const Vec2 p = positions_.at(n);
        for (NodeId m = 0; m < positions_.size(); ++m)
        {
            if (m != n && planar_distance(p, positions_[m]) <= config_.radio_range)
            {
                out.push_back(m);
            }
        }
        return out;
    }

    void MarketScene::invalidate_routes_via(NodeId n)
    {
        for (auto &table : routes_)
        {
            std::erase_if(table, [n](const auto &kv) { return kv.first == n || kv.second.next_hop == n; });
        }
    }

    RouteOutcome route_discover(MarketScene &scene, NodeId src, NodeId dst)
    {
        if (src == dst)
        {
            throw std::invalid_argument("route_discover: src == dst");
        }
        if (src >= scene.node_count() || dst >= scene.node_count())
        {
            throw std::out_of_range("route_discover: unknown node");
        }
        auto &counters = scene.counters();
        ++counters.route_discoveries;
        const std::uint32_t src_seq = scene.next_seq(src);
        const int hop_limit = scene.config().hop_limit;

        std::vector<int> level(scene.node_count(), -1);
        std::vector<NodeId> parent(scene.node_count(), src);
        level[src] = 0;
        std::vector<NodeId> frontier{src};
        RouteOutcome out;
        while (!frontier.empty())
        {
            std::vector<NodeId> next;
            for (NodeId u : frontier)
            {
                const bool forwards = u == src || (scene.is_seller(u) && u != dst);
                if (!forwards || level[u] >= hop_limit)
                {
                    continue;
                }
                ++out.transmissions;
                for (NodeId v : scene.neighbors(u))
                {
                    scene.note_transmission(u, v);
                    if (level[v] != -1)
                    {
                        continue;
                    }
                    level[v] = level[u] + 1;
                    parent[v] = u;
                    install_route(scene.routes(v), src, {u, src_seq, level[v]});
                    next.push_back(v);
                }
            }
            std::sort(next.begin(), next.end());
            frontier = std::move(next);
        }
        counters.messages_sent += out.transmissions;
        if (level[dst] == -1)
        {
            ++counters.unreachable;
            return out;
        }
        const int h = level[dst];
        const std::uint32_t dst_seq = scene.next_seq(dst);
        for (NodeId v = dst; v != src; v = parent[v])
        {
            const NodeId p = parent[v];
            scene.note_transmission(v, p);
            install_route(scene.routes(p), dst, {v, dst_seq, h - level[p]});
            ++out.transmissions;
        }
        counters.messages_sent += static_cast<std::uint64_t>(h);
        out.reachable = true;
        out.hop_count = h;
        return out;
    }

    std::optional<Vec2> query_seller(PedestrianNode &ped, MarketScene &scene)
    {
        if (ped.state != PedestrianState::Querying)
        {
            throw std::logic_error("query_seller: pedestrian is not querying");
        }
        if (ped.reply_in > 0)
        {
            if (--ped.reply_in == 0)
            {
                return scene.position(ped.target_seller);
            }
            return std::nullopt;
        }
        if (ped.retry_wait > 0)
        {
            --ped.retry_wait;
            return std::nullopt;
        }
        auto &counters = scene.counters();
        int hops = 0;
        const auto &table = scene.routes(ped.node);
        if (auto it = table.find(ped.target_seller); it != table.end())
        {
            hops = it->second.hop_count;
            counters.messages_sent += 2 * static_cast<std::uint64_t>(hops);
        }
        else
        {
            const RouteOutcome r = route_discover(scene, ped.node, ped.target_seller);
            if (!r.reachable)
            {
                ++ped.retries;
                ped.retry_wait = ped.backoff;
                ped.backoff = std::min(ped.backoff * 2, scene.config().max_backoff);
                return std::nullopt;
            }
            hops = r.hop_count;
        }
        ped.last_route_hops = hops;
        counters.hop_floor += 2 * static_cast<std::uint64_t>(hops);
        // Store-and-forward: one hop per fine step, this step carrying the first.
        ped.reply_in = 2 * hops - 1;
        return std::nullopt;
    }

    void pedestrian_step(PedestrianNode &ped, MarketScene &scene)
    {
        if (ped.state != PedestrianState::Walking)
        {
            return;
        }
        const Vec2 target = *ped.known_target_position;
        const double d = planar_distance(ped.position, target);
        if (d <= ped.walking_speed + arrival_epsilon)
        {
            ped.position = target;
            ped.state = PedestrianState::Arrived;
        }
        else
        {
            const double f = ped.walking_speed / d;
            ped.position = {ped.position.x + (target.x - ped.position.x) * f,
                            ped.position.y + (target.y - ped.position.y) * f};
        }
        scene.move_node(ped.node, ped.position);
    }

    MarketSimulation::MarketSimulation(const MarketConfig &config) : scene_(config) {}

    void MarketSimulation::inject(std::span<MarketCustomer> customers)
    {
        const MarketConfig &cfg = scene_.config();
        const double half = cfg.spacing / 2.0;
        for (MarketCustomer &c : customers)
        {
            const std::uint64_t side = c.rng.below(4);
            const std::uint64_t along = c.rng.below(side < 2 ? cfg.grid_cols : cfg.grid_rows);
            const auto target = static_cast<NodeId>(c.rng.below(scene_.seller_count()));
            const double far_x = (cfg.grid_cols - 1) * cfg.spacing;
            const double far_y = (cfg.grid_rows - 1) * cfg.spacing;
            const double a = static_cast<double>(along) * cfg.spacing;
            Vec2 pos;
            switch (side)
            {
            case 0:
                pos = {a, -half};
                break;
            case 1:
                pos = {a, far_y + half};
                break;
            case 2:
                pos = {-half, a};
                break;
            default:
                pos = {far_x + half, a};
                break;
            }
            const NodeId node = scene_.add_pedestrian(c.entity_id, pos, target);
            scene_.pedestrian(node).rng_draws = 3;
        }
    }

    MarketStatus MarketSimulation::status() const
    {
        MarketStatus s;
        for (const auto &p : scene_.pedestrians())
        {
            switch (p.state)
            {
            case PedestrianState::Querying:
                ++s.querying;
                break;
            case PedestrianState::Walking:
                ++s.walking;
                break;
            case PedestrianState::Arrived:
                ++s.arrived;
                break;
            }
        }
        s.counters = scene_.counters();
        return s;
    }

    MarketStatus MarketSimulation::advance_fine_step()
    {
        for (auto &p : scene_.pedestrians())
        {
            if (p.state == PedestrianState::Querying)
            {
                if (auto pos = query_seller(p, scene_))
                {
                    p.known_target_position = *pos;
                    p.state = PedestrianState::Walking;
                    scene_.invalidate_routes_via(p.node);
                }
            }
            else if (p.state == PedestrianState::Walking)
            {
                pedestrian_step(p, scene_);
            }
        }
        ++scene_.counters().fine_steps;
        return status();
    }

    MarketStatus MarketSimulation::advance_coarse_step(int substeps)
    {
        if (substeps < 1)
        {
            throw std::invalid_argument("substeps must be >= 1");
        }
        for (int i = 0; i < substeps; ++i)
        {
            advance_fine_step();
        }
        return status();
    }

    std::vector<MarketStatus> run_market(MarketSimulation &sim, std::span<MarketCustomer> customers, int substeps,
                                         int coarse_steps)
    {
        sim.inject(customers);
        std::vector<MarketStatus> out;
        for (int k = 0; k < coarse_steps; ++k)
        {
            out.push_back(sim.advance_coarse_step(substeps));
        }
        return out;
    }
}
