#include "oracles.hpp"

#include "hybridsim/territory.hpp"

#include <doctest.h>

#include <random>

using namespace hybridsim;

namespace
{
    SimulatedEntity mobile_at(Vec2 p, std::uint64_t seed = 1)
    {
        SimulatedEntity e;
        e.kind = EntityKind::Mobile;
        e.position = p;
        e.rng = RngStream::for_entity(seed, 0);
        return e;
    }

    DisseminationMessage fresh_message(std::uint64_t id, Vec2 origin)
    {
        DisseminationMessage m;
        m.message_id = id;
        m.origin_position = origin;
        m.ttl_remaining = 6;
        return m;
    }
}

TEST_CASE("toroidal distance")
{
    CHECK(toroidal_distance({0, 0}, {0, 0}, 1000) == 0.0);
    CHECK(toroidal_distance({0, 0}, {9990, 0}, 10000) == doctest::Approx(10.0));
    CHECK(toroidal_distance({100, 200}, {400, 600}, 10000) == doctest::Approx(500.0));

    std::mt19937_64 gen(11);
    std::uniform_real_distribution<double> u(0.0, 3000.0);
    for (int i = 0; i < 2000; ++i)
    {
        const Vec2 a{u(gen), u(gen)}, b{u(gen), u(gen)};
        const double d = toroidal_distance(a, b, 3000.0);
        CHECK(d == doctest::Approx(toroidal_distance(b, a, 3000.0)));
        CHECK(d <= 3000.0 * std::sqrt(2.0) / 2.0 + 1e-9);
        CHECK(d == doctest::Approx(oracle::torus_distance(a, b, 3000.0)));
    }
}

TEST_CASE("world sizing and placement")
{
    const World w = make_world(1000, 5);
    CHECK(w.side_length * w.side_length / 1000.0 == doctest::Approx(10000.0));
    std::size_t mobile = 0;
    for (const auto &e : w.entities)
    {
        mobile += e.kind == EntityKind::Mobile;
        CHECK(e.position.x >= 0.0);
        CHECK(e.position.x < w.side_length);
        CHECK(e.position.y >= 0.0);
        CHECK(e.position.y < w.side_length);
    }
    CHECK(mobile == 500);
    CHECK_THROWS_AS(make_world(0, 1), std::invalid_argument);
}

TEST_CASE("random waypoint kinematics")
{
    SUBCASE("arrival within one step snaps and clears the target")
    {
        SimulatedEntity e = mobile_at({0, 0});
        e.rwp_target = Vec2{10, 0};
        e.rwp_speed = 14;
        rwp_step(e, 10000);
        CHECK(e.position == Vec2{10, 0});
        CHECK_FALSE(e.rwp_target.has_value());
    }
    SUBCASE("straight-line advance")
    {
        SimulatedEntity e = mobile_at({0, 0});
        e.rwp_target = Vec2{100, 0};
        e.rwp_speed = 5;
        rwp_step(e, 10000);
        CHECK(e.position.x == doctest::Approx(5.0));
        CHECK(e.position.y == doctest::Approx(0.0));
    }
    SUBCASE("shortest path crosses the seam")
    {
        SimulatedEntity e = mobile_at({2, 50});
        e.rwp_target = Vec2{995, 50};
        e.rwp_speed = 4;
        rwp_step(e, 1000);
        CHECK(e.position.x == doctest::Approx(998.0));
    }
    SUBCASE("static entities do not move")
    {
        SimulatedEntity e;
        e.kind = EntityKind::Static;
        CHECK_THROWS_AS(rwp_step(e, 1000), std::logic_error);
    }
    SUBCASE("speed draws are uniform on [1, 14]")
    {
        SimulatedEntity e = mobile_at({0, 0}, 99);
        double lo = 1e9, hi = -1e9, sum = 0;
        const int n = 100000;
        for (int i = 0; i < n; ++i)
        {
            e.rwp_target.reset();
            rwp_step(e, 10000);
            lo = std::min(lo, e.rwp_speed);
            hi = std::max(hi, e.rwp_speed);
            sum += e.rwp_speed;
        }
        CHECK(lo >= 1.0);
        CHECK(hi <= 14.0);
        CHECK(sum / n == doctest::Approx(7.5).epsilon(0.1 / 7.5));
    }
}

TEST_CASE("message generation")
{
    DisseminationParams p;
    SimulatedEntity e = mobile_at({3, 4});
    e.id = 17;

    p.generation_probability = 0.0;
    for (int t = 0; t < 1000; ++t)
    {
        CHECK_FALSE(generate_message(e, t, p).has_value());
    }

    p.generation_probability = 1.0;
    for (int t = 0; t < 20; ++t)
    {
        const auto m = generate_message(e, t, p);
        REQUIRE(m.has_value());
        CHECK(m->ttl_remaining == 6);
        CHECK(m->hop_count == 0);
        CHECK(m->origin_entity == 17);
        CHECK(m->origin_position == Vec2{3, 4});
        CHECK(m->created_at == t);
        CHECK(e.dup_cache.contains(m->message_id));
    }
    CHECK(e.next_message_seq == 20);
}

TEST_CASE("generation count is binomial(16000 x 900, 0.001)")
{
    World w = make_world(16000, 3);
    const DisseminationParams p;
    std::uint64_t generated = 0;
    for (Timestep t = 0; t < 900; ++t)
    {
        for (auto &e : w.entities)
        {
            generated += generate_message(e, t, p).has_value();
        }
    }
    // mean 14400, sd ~ 120
    CHECK(generated >= 14000);
    CHECK(generated <= 14800);
}

TEST_CASE("relay filters in order")
{
    const double side = 10000;
    DisseminationParams p;
    SimulatedEntity rx = mobile_at({5000, 5000});

    SUBCASE("duplicate")
    {
        rx.dup_cache.touch(42);
        CHECK(decide_relay(rx, fresh_message(42, {5000, 5000}), {5240, 5000}, p, side).reason == FilterReason::Cache);
    }
    SUBCASE("ttl exhausted")
    {
        DisseminationMessage m = fresh_message(1, {5000, 5000});
        m.ttl_remaining = 0;
        m.hop_count = 6;
        CHECK(decide_relay(rx, m, {5240, 5000}, p, side).reason == FilterReason::Ttl);
        CHECK(rx.dup_cache.contains(1));
    }
    SUBCASE("geofilter: 1001 from origin drops, 1000 passes")
    {
        p.gossip_probability = 1.0;
        CHECK(decide_relay(rx, fresh_message(1, {3999, 5000}), {5240, 5000}, p, side).reason ==
              FilterReason::Geofilter);
        CHECK(decide_relay(rx, fresh_message(2, {4000, 5000}), {5240, 5000}, p, side).reason == FilterReason::Relayed);
    }
    SUBCASE("ring: 200 and exactly 225 drop, 225.5 passes")
    {
        p.gossip_probability = 1.0;
        CHECK(decide_relay(rx, fresh_message(1, {5000, 5000}), {5200, 5000}, p, side).reason == FilterReason::Ring);
        CHECK(decide_relay(rx, fresh_message(2, {5000, 5000}), {5225, 5000}, p, side).reason == FilterReason::Ring);
        CHECK(decide_relay(rx, fresh_message(3, {5000, 5000}), {5225.5, 5000}, p, side).reason ==
              FilterReason::Relayed);
    }
    SUBCASE("budget: the 11th relay in a step is dropped")
    {
        p.gossip_probability = 1.0;
        for (int i = 0; i < 10; ++i)
        {
            CHECK(decide_relay(rx, fresh_message(100 + i, {5000, 5000}), {5240, 5000}, p, side).relayed());
        }
        CHECK(rx.relays_this_step == 10);
        CHECK(decide_relay(rx, fresh_message(200, {5000, 5000}), {5240, 5000}, p, side).reason ==
              FilterReason::Budget);
    }
    SUBCASE("gossip coin")
    {
        p.gossip_probability = 0.0;
        CHECK(decide_relay(rx, fresh_message(1, {5000, 5000}), {5240, 5000}, p, side).reason == FilterReason::Gossip);
    }
    SUBCASE("relayed copy carries one more hop")
    {
        p.gossip_probability = 1.0;
        DisseminationMessage m = fresh_message(9, {5000, 5000});
        m.ttl_remaining = 4;
        m.hop_count = 2;
        const RelayOutcome out = decide_relay(rx, m, {5240, 5000}, p, side);
        REQUIRE(out.forwarded.has_value());
        CHECK(out.forwarded->ttl_remaining == 3);
        CHECK(out.forwarded->hop_count == 3);
        CHECK(out.forwarded->message_id == 9);
    }
}

TEST_CASE("gossip coin frequency matches its probability")
{
    DisseminationParams p;
    SimulatedEntity rx = mobile_at({5000, 5000}, 4);
    int relayed = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i)
    {
        rx.relays_this_step = 0;
        relayed += decide_relay(rx, fresh_message(1000 + i, {5000, 5000}), {5240, 5000}, p, 10000).relayed();
    }
    // 0.2 +- 4 sd
    CHECK(std::abs(relayed / static_cast<double>(n) - 0.2) < 4 * std::sqrt(0.2 * 0.8 / n));
}

TEST_CASE("LRU duplicate cache")
{
    SUBCASE("refresh protects an entry from eviction")
    {
        LruIdCache c(128);
        for (std::uint64_t id = 1; id <= 128; ++id)
        {
            CHECK_FALSE(c.touch(id));
        }
        CHECK(c.touch(1));
        c.touch(129);
        CHECK(c.contains(1));
        CHECK_FALSE(c.contains(2));
        CHECK(c.size() == 128);
    }
    SUBCASE("second touch reports presence")
    {
        LruIdCache c(4);
        CHECK_FALSE(c.touch(7));
        CHECK(c.touch(7));
    }
    SUBCASE("random trace against the timestamp oracle")
    {
        std::mt19937_64 gen(2024);
        std::uniform_int_distribution<std::uint64_t> id(0, 300);
        LruIdCache c(128);
        oracle::Lru o(128);
        for (int i = 0; i < 10000; ++i)
        {
            const std::uint64_t x = id(gen);
            REQUIRE(c.touch(x) == o.touch(x));
            REQUIRE(c.size() <= 128);
        }
        const auto got = c.entries();
        CHECK(std::vector<std::uint64_t>(got.begin(), got.end()) == o.entries());
    }
    SUBCASE("round trip through entries")
    {
        LruIdCache c(8);
        for (std::uint64_t id : {5, 3, 9, 3})
        {
            c.touch(id);
        }
        CHECK(LruIdCache::from_entries(8, c.entries()) == c);
        CHECK_THROWS(LruIdCache(0));
    }
}

TEST_CASE("broadcast reach")
{
    SUBCASE("lone entity hears nobody")
    {
        const std::vector<Vec2> pos{{50, 50}};
        SpatialGrid g(100, 250);
        g.rebuild(pos);
        CHECK(broadcast_reach(pos, g, 0, 250).empty());
    }
    SUBCASE("exactly 250 is in range")
    {
        const std::vector<Vec2> pos{{100, 100}, {350, 100}, {100, 350.0001}};
        SpatialGrid g(3000, 250);
        g.rebuild(pos);
        CHECK(broadcast_reach(pos, g, 0, 250) == std::vector<EntityId>{1});
    }
    SUBCASE("range reaches across the seam")
    {
        const std::vector<Vec2> pos{{5, 5}, {2995, 2995}};
        SpatialGrid g(3000, 250);
        g.rebuild(pos);
        CHECK(broadcast_reach(pos, g, 0, 250) == std::vector<EntityId>{1});
    }
    SUBCASE("matches the all-pairs scan on random worlds")
    {
        for (std::uint64_t seed = 0; seed < 20; ++seed)
        {
            const World w = make_world(1000, seed);
            std::vector<Vec2> pos;
            for (const auto &e : w.entities)
            {
                pos.push_back(e.position);
            }
            SpatialGrid g(w.side_length, 250);
            g.rebuild(pos);
            for (EntityId s = 0; s < pos.size(); s += 7)
            {
                REQUIRE(broadcast_reach(pos, g, s, 250) == oracle::reach(pos, s, 250, w.side_length));
            }
        }
    }
}
