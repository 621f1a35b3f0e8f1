#include "oracles.hpp"

#include "hybridsim/market.hpp"

#include <doctest.h>

#include <random>
#include <set>

using namespace hybridsim;

namespace
{
    NodeId grid_id(int r, int c) { return static_cast<NodeId>(r * 10 + c); }

    std::vector<MarketCustomer> customers(std::size_t n, std::uint64_t seed)
    {
        std::vector<MarketCustomer> out;
        for (std::size_t i = 0; i < n; ++i)
        {
            out.push_back({static_cast<EntityId>(i), RngStream::for_entity(seed, i)});
        }
        return out;
    }
}

TEST_CASE("default scene")
{
    MarketScene s;
    CHECK(s.seller_count() == 100);
    CHECK(s.has_grid_layout());
    CHECK(s.position(grid_id(3, 7)) == Vec2{70, 30});
    CHECK(s.neighbors(grid_id(0, 0)) == std::vector<NodeId>{1, 10});
    CHECK(s.neighbors(grid_id(5, 5)) == std::vector<NodeId>{45, 54, 56, 65});
}

TEST_CASE("route discovery")
{
    SUBCASE("adjacent sellers are one hop apart")
    {
        MarketScene s;
        const RouteOutcome r = route_discover(s, grid_id(4, 4), grid_id(4, 5));
        CHECK(r.reachable);
        CHECK(r.hop_count == 1);
        CHECK(s.routes(grid_id(4, 4)).at(grid_id(4, 5)).next_hop == grid_id(4, 5));
    }
    SUBCASE("corner to opposite corner is 18 hops")
    {
        MarketScene s;
        const RouteOutcome r = route_discover(s, grid_id(0, 0), grid_id(9, 9));
        CHECK(r.reachable);
        CHECK(r.hop_count == 18);
        CHECK(s.routes(grid_id(0, 0)).at(grid_id(9, 9)).hop_count == 18);
        // The reply installs a route at every node of the path.
        NodeId at = grid_id(0, 0);
        int hops = 0;
        while (at != grid_id(9, 9))
        {
            const RouteEntry &e = s.routes(at).at(grid_id(9, 9));
            CHECK(e.hop_count == 18 - hops);
            CHECK(planar_distance(s.position(at), s.position(e.next_hop)) <= s.config().radio_range);
            at = e.next_hop;
            ++hops;
        }
        CHECK(hops == 18);
    }
    SUBCASE("every transmission is within radio range")
    {
        MarketScene s;
        std::uint64_t taps = 0;
        bool local = true;
        s.set_transmission_tap([&](NodeId a, NodeId b) {
            ++taps;
            local = local && planar_distance(s.position(a), s.position(b)) <= s.config().radio_range;
        });
        route_discover(s, grid_id(2, 3), grid_id(8, 1));
        CHECK(local);
        CHECK(taps > 0);
    }
    SUBCASE("disconnected destination")
    {
        MarketConfig cfg;
        MarketScene s({{0, 0}, {10, 0}, {100, 100}}, cfg);
        const RouteOutcome r = route_discover(s, 0, 2);
        CHECK_FALSE(r.reachable);
        CHECK(s.counters().unreachable == 1);
        CHECK(s.routes(0).count(2) == 0);
    }
    SUBCASE("hop limit bounds the flood")
    {
        MarketConfig cfg;
        cfg.hop_limit = 5;
        MarketScene s(cfg);
        CHECK_FALSE(route_discover(s, grid_id(0, 0), grid_id(0, 9)).reachable);
        CHECK(route_discover(s, grid_id(0, 0), grid_id(0, 5)).hop_count == 5);
    }
    SUBCASE("hop counts equal BFS on random connected topologies")
    {
        std::mt19937_64 gen(5150);
        int checked = 0;
        while (checked < 40)
        {
            std::uniform_real_distribution<double> u(0.0, 60.0);
            std::vector<Vec2> nodes(40);
            for (auto &p : nodes)
            {
                p = {u(gen), u(gen)};
            }
            MarketConfig cfg;
            bool connected = true;
            for (std::size_t j = 1; j < nodes.size() && connected; ++j)
            {
                connected = oracle::bfs_hops(nodes, cfg.radio_range, 0, j).has_value();
            }
            if (!connected)
            {
                continue;
            }
            ++checked;
            for (int q = 0; q < 10; ++q)
            {
                const auto src = static_cast<NodeId>(gen() % nodes.size());
                auto dst = static_cast<NodeId>(gen() % nodes.size());
                if (dst == src)
                {
                    dst = (dst + 1) % nodes.size();
                }
                MarketScene s(nodes, cfg);
                const RouteOutcome r = route_discover(s, src, dst);
                REQUIRE(r.reachable);
                CHECK(r.hop_count == *oracle::bfs_hops(nodes, cfg.radio_range, src, dst));
            }
        }
    }
    SUBCASE("a fresher sequence number replaces a route")
    {
        MarketScene s;
        route_discover(s, grid_id(0, 0), grid_id(0, 3));
        const std::uint32_t first = s.routes(grid_id(0, 0)).at(grid_id(0, 3)).seq;
        route_discover(s, grid_id(0, 0), grid_id(0, 3));
        CHECK(s.routes(grid_id(0, 0)).at(grid_id(0, 3)).seq > first);
    }
}

TEST_CASE("seller query latency")
{
    SUBCASE("target in radio range replies within 2 fine steps")
    {
        MarketScene s;
        const NodeId n = s.add_pedestrian(1, {0, -5}, grid_id(0, 0));
        PedestrianNode &p = s.pedestrian(n);
        CHECK_FALSE(query_seller(p, s).has_value());
        const auto pos = query_seller(p, s);
        REQUIRE(pos.has_value());
        CHECK(*pos == s.position(grid_id(0, 0)));
        CHECK(s.counters().hop_floor == 2);
    }
    SUBCASE("target 18 hops away needs at least 36 fine steps")
    {
        MarketScene s;
        // Diagonally off seller (0,0), out of range of every other seller.
        const NodeId n = s.add_pedestrian(1, {-5, -5}, grid_id(9, 9));
        PedestrianNode &p = s.pedestrian(n);
        int steps = 0;
        std::optional<Vec2> pos;
        while (!pos && steps < 200)
        {
            pos = query_seller(p, s);
            ++steps;
        }
        REQUIRE(pos.has_value());
        CHECK(p.last_route_hops == 19);
        CHECK(steps >= 36);
        CHECK(steps == 2 * p.last_route_hops);
    }
    SUBCASE("disconnected pedestrian keeps querying with backoff")
    {
        MarketScene s;
        const NodeId n = s.add_pedestrian(1, {-500, -500}, grid_id(5, 5));
        PedestrianNode &p = s.pedestrian(n);
        std::vector<int> intervals;
        for (int i = 0; i < 200; ++i)
        {
            const std::uint64_t before = p.retries;
            CHECK_FALSE(query_seller(p, s).has_value());
            if (p.retries > before)
            {
                intervals.push_back(p.retry_wait);
            }
        }
        CHECK(p.state == PedestrianState::Querying);
        CHECK(s.counters().unreachable == p.retries);
        REQUIRE(intervals.size() >= 6);
        CHECK(std::vector<int>(intervals.begin(), intervals.begin() + 6) == std::vector<int>{1, 2, 4, 8, 16, 16});
    }
}

TEST_CASE("pedestrian movement")
{
    MarketScene s;
    SUBCASE("within one stride arrives")
    {
        PedestrianNode &p = s.pedestrian(s.add_pedestrian(1, {0.5, 0}, 0));
        p.state = PedestrianState::Walking;
        p.known_target_position = Vec2{0, 0};
        pedestrian_step(p, s);
        CHECK(p.state == PedestrianState::Arrived);
        CHECK(p.position == Vec2{0, 0});
    }
    SUBCASE("14 m at 1.4 m per step takes 10 steps")
    {
        PedestrianNode &p = s.pedestrian(s.add_pedestrian(1, {14, 0}, 0));
        p.state = PedestrianState::Walking;
        p.known_target_position = Vec2{0, 0};
        int steps = 0;
        while (p.state != PedestrianState::Arrived)
        {
            pedestrian_step(p, s);
            ++steps;
        }
        CHECK(steps == 10);
    }
    SUBCASE("querying and arrived pedestrians stay put")
    {
        PedestrianNode &p = s.pedestrian(s.add_pedestrian(1, {14, 0}, 0));
        pedestrian_step(p, s);
        CHECK(p.position == Vec2{14, 0});
        p.state = PedestrianState::Arrived;
        p.known_target_position = Vec2{0, 0};
        pedestrian_step(p, s);
        CHECK(p.position == Vec2{14, 0});
    }
}

TEST_CASE("market runs")
{
    SUBCASE("no customers: all zero status")
    {
        MarketSimulation sim;
        std::vector<MarketCustomer> none;
        const auto st = run_market(sim, none, 3, 2);
        REQUIRE(st.size() == 2);
        CHECK(st[1].querying + st[1].walking + st[1].arrived == 0);
        CHECK(st[1].counters.messages_sent == 0);
        CHECK(st[1].counters.fine_steps == 6);
    }
    SUBCASE("five customers over three coarse steps")
    {
        MarketSimulation sim;
        auto cs = customers(5, 3);
        const auto st = run_market(sim, cs, 3, 3);
        CHECK(st.size() == 3);
        CHECK(sim.scene().pedestrians().size() == 5);
        CHECK(st.back().counters.fine_steps == 9);
        for (const auto &c : cs)
        {
            CHECK(c.rng.cursor() == 3);
        }
    }
    SUBCASE("injection sits just outside an edge seller, targets are sellers")
    {
        MarketSimulation sim;
        auto cs = customers(200, 8);
        sim.inject(cs);
        std::set<NodeId> targets;
        for (const auto &p : sim.scene().pedestrians())
        {
            CHECK(p.target_seller < 100);
            targets.insert(p.target_seller);
            const bool outside =
                p.position.x == -5.0 || p.position.y == -5.0 || p.position.x == 95.0 || p.position.y == 95.0;
            CHECK(outside);
            CHECK_FALSE(sim.scene().neighbors(p.node).empty());
        }
        CHECK(targets.size() > 50);
    }
    SUBCASE("everybody arrives, states advance in order, message floor holds")
    {
        MarketSimulation sim;
        auto cs = customers(10, 21);
        sim.inject(cs);
        std::vector<PedestrianState> last(10, PedestrianState::Querying);
        bool ordered = true;
        for (int f = 0; f < 400 && sim.status().arrived < 10; ++f)
        {
            sim.advance_fine_step();
            for (std::size_t i = 0; i < 10; ++i)
            {
                const PedestrianState now = sim.scene().pedestrians()[i].state;
                ordered = ordered && static_cast<int>(now) - static_cast<int>(last[i]) <= 1 &&
                          static_cast<int>(now) >= static_cast<int>(last[i]);
                last[i] = now;
            }
        }
        CHECK(ordered);
        const MarketStatus st = sim.status();
        CHECK(st.arrived == 10);
        CHECK(st.counters.messages_sent >= st.counters.hop_floor);
        std::uint64_t floor = 0;
        for (const auto &p : sim.scene().pedestrians())
        {
            floor += 2 * static_cast<std::uint64_t>(p.last_route_hops);
            CHECK(p.position == sim.scene().position(p.target_seller));
        }
        CHECK(st.counters.hop_floor == floor);
    }
    CHECK_THROWS(MarketSimulation().advance_coarse_step(0));
}
