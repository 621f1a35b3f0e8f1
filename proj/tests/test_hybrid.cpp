#include "oracles.hpp"

#include "hybridsim/hybrid.hpp"

#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>

using namespace hybridsim;

namespace
{
    using namespace std::chrono_literals;

    // Barrier-time engine state without running the engine.
    struct Harness
    {
        World world;
        std::vector<LogicalProcess> lps;
        std::vector<LpId> owner;
        std::vector<Vec2> positions;
        RunMetrics metrics;
        EngineConfig config;
        DisseminationParams params;
        EngineContext ctx;

        explicit Harness(std::size_t n, std::uint32_t num_lps = 2)
            : world(make_world(n, 3)), owner(n), positions(n),
              ctx(world, lps, owner, positions, metrics, config, params)
        {
            std::vector<EntityId> ids(n);
            for (EntityId e = 0; e < n; ++e)
            {
                ids[e] = e;
                positions[e] = world.entities[e].position;
            }
            const auto parts = partition_entities(ids, num_lps, 3);
            lps.resize(num_lps);
            for (LpId lp = 0; lp < num_lps; ++lp)
            {
                lps[lp].lp_id = lp;
                lps[lp].owned_entities = parts[lp];
                for (EntityId e : parts[lp])
                {
                    owner[e] = lp;
                }
            }
        }
    };

    // Accepts one connection and hands it to script on a background thread.
    class FakeWrapper
    {
    public:
        explicit FakeWrapper(std::function<void(LineChannel &)> script) : listener_(Endpoint{"127.0.0.1", 0})
        {
            thread_ = std::thread([this, script = std::move(script)] {
                for (int i = 0; i < 100; ++i)
                {
                    if (auto ch = listener_.accept(50ms))
                    {
                        try
                        {
                            script(*ch);
                        }
                        catch (const std::exception &)
                        {
                        }
                        return;
                    }
                }
            });
        }
        ~FakeWrapper() { thread_.join(); }
        Endpoint endpoint() const { return listener_.endpoint(); }

    private:
        TcpListener listener_;
        std::thread thread_;
    };

    // Reads INIT plus its ENTITY records and answers READY.
    std::vector<SimulatedEntity> handshake(LineChannel &ch)
    {
        const ControlMessage init = ControlMessage::decode(*ch.read_line(2s));
        std::vector<SimulatedEntity> es;
        for (std::uint64_t i = 0; i < init.get_uint("entities"); ++i)
        {
            es.push_back(decode_entity(ControlMessage::decode(*ch.read_line(2s))));
        }
        ControlMessage ready(ControlKind::Ready, init.step());
        ready.set("wrapper", init.get_uint("wrapper")).set("entities", init.get_uint("entities"));
        ch.send_line(ready.encode());
        return es;
    }

    void send_status(LineChannel &ch, Timestep t, std::uint32_t wrapper)
    {
        WrapperStatus st;
        st.step = t;
        st.wrapper_id = wrapper;
        ch.send_line(st.encode().encode());
    }

    SpawnOptions options_for(const Endpoint &ep)
    {
        SpawnOptions o;
        o.endpoint = ep;
        o.io_timeout = 2000ms;
        return o;
    }

    std::vector<EntityId> first_ids(std::size_t k)
    {
        std::vector<EntityId> ids(k);
        for (EntityId i = 0; i < k; ++i)
        {
            ids[i] = i * 3;
        }
        return ids;
    }

    WrapperStatus status(Level1Phase phase, std::uint64_t customers, std::uint64_t querying, std::uint64_t walking)
    {
        WrapperStatus s;
        s.phase = phase;
        s.customers = customers;
        s.querying = querying;
        s.walking = walking;
        return s;
    }
}

TEST_CASE("trigger policies")
{
    Harness h(2000);
    SUBCASE("infinite density threshold never fires")
    {
        TriggerPolicy p;
        p.mode = TriggerPolicy::Mode::Density;
        for (Timestep t = 0; t < 20; ++t)
        {
            CHECK_FALSE(check_trigger(h.world, h.positions, t, p, 1, 0).has_value());
        }
    }
    SUBCASE("scripted trigger fires exactly at its step with the configured count")
    {
        TriggerPolicy p;
        p.spawn_at = {300};
        p.transfer_count = 6;
        for (Timestep t = 0; t < 600; ++t)
        {
            const auto r = check_trigger(h.world, h.positions, t, p, 1, 0);
            CHECK(r.has_value() == (t == 300));
            if (r)
            {
                CHECK(r->selected.size() == 6);
                CHECK(std::is_sorted(r->selected.begin(), r->selected.end()));
                // Nobody outside the selection is closer to the centre than the farthest selected.
                for (const auto &e : h.world.entities)
                {
                    const bool chosen =
                        std::find(r->selected.begin(), r->selected.end(), e.id) != r->selected.end();
                    if (!chosen)
                    {
                        CHECK(oracle::torus_distance(h.positions[e.id], r->center, h.world.side_length) >= r->radius);
                    }
                }
            }
        }
        CHECK_FALSE(check_trigger(h.world, h.positions, 300, p, 1, 1).has_value());
    }
    SUBCASE("density trigger on a clustered scenario matches the brute-force count")
    {
        const Vec2 hot{700, 900};
        for (EntityId e = 0; e < 60; ++e)
        {
            h.positions[e] = {hot.x + 3.0 * (e % 8), hot.y + 3.0 * (e / 8)};
            h.world.entities[e].position = h.positions[e];
        }
        TriggerPolicy p;
        p.mode = TriggerPolicy::Mode::Density;
        p.threshold = 50;
        p.radius = 250;
        p.transfer_count = 5;
        const auto r = check_trigger(h.world, h.positions, 0, p, 1, 0);
        REQUIRE(r.has_value());
        const std::size_t brute = oracle::count_within(h.world, h.positions, r->center, 250);
        CHECK(brute >= 50);
        CHECK(r->members.size() == brute);
        CHECK(r->selected.size() == 5);

        p.max_spawns = 1;
        CHECK_FALSE(check_trigger(h.world, h.positions, 0, p, 1, 1).has_value());
    }
}

TEST_CASE("decision policies")
{
    SUBCASE("fixed duration of 3: CONTINUE, CONTINUE, END")
    {
        DecisionPolicy p;
        const WrapperStatus s = status(Level1Phase::Market, 4, 4, 0);
        CHECK_FALSE(p.should_end(s, 1));
        CHECK_FALSE(p.should_end(s, 2));
        CHECK(p.should_end(s, 3));
    }
    SUBCASE("until idle ends once no pedestrian remains")
    {
        DecisionPolicy p;
        p.mode = DecisionPolicy::Mode::UntilIdle;
        CHECK_FALSE(p.should_end(status(Level1Phase::Transport, 3, 0, 0), 1));
        CHECK(p.should_end(status(Level1Phase::Transport, 0, 0, 0), 1));
        CHECK_FALSE(p.should_end(status(Level1Phase::Market, 3, 2, 1), 2));
        CHECK_FALSE(p.should_end(status(Level1Phase::Market, 3, 0, 1), 3));
        CHECK(p.should_end(status(Level1Phase::Market, 3, 0, 0), 4));
        p.max_steps = 5;
        CHECK(p.should_end(status(Level1Phase::Market, 3, 3, 0), 5));
    }
}

TEST_CASE("spawn preconditions and failures")
{
    Harness h(100);
    const Level1Config cfg;
    SUBCASE("nothing to transfer")
    {
        CHECK_THROWS_AS(spawn_level1(h.ctx, {}, {}, cfg, options_for({"127.0.0.1", 1})), std::invalid_argument);
    }
    SUBCASE("connection failure restores the entities")
    {
        // Bind and release a port so nobody is listening on it.
        Endpoint dead;
        {
            TcpListener l(Endpoint{"127.0.0.1", 0});
            dead = l.endpoint();
        }
        const World before = h.world;
        const auto ids = first_ids(4);
        CHECK_THROWS_AS(spawn_level1(h.ctx, make_transfer_records(h.ctx, ids, 5), {}, cfg, options_for(dead)),
                        TransferError);
        CHECK(h.ctx.active_entity_count() == 100);
        CHECK(h.world.entities == before.entities);
        CHECK(h.metrics.level1.spawns == 0);
    }
    SUBCASE("entities in an active transfer cannot be sent twice")
    {
        WrapperServer server;
        const auto ids = first_ids(2);
        WrapperHandle w = spawn_level1(h.ctx, make_transfer_records(h.ctx, ids, 0), {}, cfg, options_for(server.endpoint()));
        std::vector<LevelTransferRecord> recs{{ids[0], h.world.entities[ids[0]], 0, 0}};
        CHECK_THROWS_AS(spawn_level1(h.ctx, recs, {}, cfg, options_for(server.endpoint())), TransferError);
        abort_transfer(h.ctx, w);
        CHECK(h.ctx.active_entity_count() == 100);
    }
}

TEST_CASE("a real wrapper session")
{
    WrapperServer server;
    Harness h(300, 3);
    const Level1Config cfg;
    TimestepAlignment align;

    SUBCASE("one transferred entity leaves exactly one hole")
    {
        const std::vector<EntityId> one{7};
        WrapperHandle w = spawn_level1(h.ctx, make_transfer_records(h.ctx, one, 2), align, cfg, options_for(server.endpoint()));
        CHECK(h.ctx.active_entity_count() == 299);
        CHECK_FALSE(h.world.entities[7].active);
        CHECK(h.metrics.level1.entities_transferred == 1);
        coordinate_step(w, 2, {}, true);
        reintegrate(h.ctx, w);
        CHECK(h.ctx.active_entity_count() == 300);
    }
    SUBCASE("immediate END returns the world to its pre-spawn state")
    {
        const World before = h.world;
        const auto owners = h.owner;
        const auto ids = first_ids(5);
        WrapperHandle w = spawn_level1(h.ctx, make_transfer_records(h.ctx, ids, 0), align, cfg, options_for(server.endpoint()));
        const WrapperStatus st = coordinate_step(w, 0, {}, true);
        CHECK(st.phase == Level1Phase::Transport);
        CHECK(st.fine_steps == 3);
        const WrapperResult r = reintegrate(h.ctx, w);
        CHECK(r.entities == 5);
        CHECK(w.state == WrapperState::Done);
        CHECK(h.world.entities == before.entities);
        CHECK(h.owner == owners);
        for (LpId lp = 0; lp < 3; ++lp)
        {
            CHECK(std::is_sorted(h.lps[lp].owned_entities.begin(), h.lps[lp].owned_entities.end()));
        }
        CHECK(h.ctx.active_entity_count() == 300);
    }
    SUBCASE("fixed duration: CONTINUE, CONTINUE, END and cursor accounting")
    {
        const auto ids = first_ids(4);
        const auto records = make_transfer_records(h.ctx, ids, 10);
        WrapperHandle w = spawn_level1(h.ctx, records, align, cfg, options_for(server.endpoint()));
        const DecisionPolicy policy;
        std::vector<std::uint64_t> fine;
        for (Timestep t = 10; !w.end_sent; ++t)
        {
            fine.push_back(coordinate_step(w, t, policy).fine_steps);
        }
        CHECK(fine == std::vector<std::uint64_t>{3, 6, 9});
        CHECK(w.status_pairs == 3);
        std::vector<std::string> replies;
        for (const auto &line : *w.transcript)
        {
            if (line.rfind("> CONTINUE", 0) == 0 || line.rfind("> END", 0) == 0)
            {
                replies.push_back(line);
            }
        }
        CHECK(replies == std::vector<std::string>{"> CONTINUE step=10 wrapper=0", "> CONTINUE step=11 wrapper=0",
                                                  "> END step=12 wrapper=0"});
        const WrapperResult r = reintegrate(h.ctx, w);
        CHECK(r.customers == 4);
        for (const auto &rec : records)
        {
            const SimulatedEntity &now = h.world.entities[rec.entity_id];
            CHECK(now.active);
            CHECK(now.rng.key() == rec.snapshot.rng.key());
            CHECK(now.rng.cursor() == rec.snapshot.rng.cursor() + 3);
            SimulatedEntity masked = now;
            masked.position = rec.snapshot.position;
            masked.rng = rec.snapshot.rng;
            CHECK(masked == rec.snapshot);
        }
    }
}

TEST_CASE("protocol violations roll the transfer back")
{
    Harness h(120);
    const Level1Config cfg;
    const auto ids = first_ids(3);

    SUBCASE("RESULT missing an entity names it")
    {
        FakeWrapper fake([&](LineChannel &ch) {
            auto es = handshake(ch);
            send_status(ch, 0, 0);
            ch.read_line(2s);
            WrapperResult r;
            r.entities = 3;
            ch.send_line(r.encode().encode());
            for (std::size_t i = 0; i + 1 < es.size(); ++i)
            {
                ch.send_line(encode_entity(es[i], 0, 0).encode());
            }
            ch.send_line("BYE step=0 wrapper=0");
            ch.read_line(2s);
        });
        WrapperHandle w = spawn_level1(h.ctx, make_transfer_records(h.ctx, ids, 0), {}, cfg, options_for(fake.endpoint()));
        coordinate_step(w, 0, {}, true);
        try
        {
            reintegrate(h.ctx, w);
            FAIL("expected a conservation error");
        }
        catch (const TransferError &ex)
        {
            CHECK(std::string(ex.what()).find("missing entity " + std::to_string(ids.back())) != std::string::npos);
        }
        abort_transfer(h.ctx, w);
        CHECK(h.ctx.active_entity_count() == 120);
        CHECK(h.metrics.level1.failures == 1);
    }
    SUBCASE("cursor drift is rejected")
    {
        FakeWrapper fake([&](LineChannel &ch) {
            auto es = handshake(ch);
            send_status(ch, 0, 0);
            ch.read_line(2s);
            WrapperResult r;
            r.entities = 3;
            ch.send_line(r.encode().encode());
            for (auto &e : es)
            {
                e.rng.next_u64();
                ch.send_line(encode_entity(e, 0, 0).encode());
            }
            ch.send_line("BYE step=0 wrapper=0");
            ch.read_line(2s);
        });
        WrapperHandle w = spawn_level1(h.ctx, make_transfer_records(h.ctx, ids, 0), {}, cfg, options_for(fake.endpoint()));
        coordinate_step(w, 0, {}, true);
        CHECK_THROWS_AS(reintegrate(h.ctx, w), TransferError);
        abort_transfer(h.ctx, w);
    }
    SUBCASE("malformed STATUS restores from the snapshot")
    {
        const World before = h.world;
        FakeWrapper fake([&](LineChannel &ch) {
            handshake(ch);
            ch.send_line("STATUS step=0 wrapper=0 phase=warp");
            ch.read_line(2s);
        });
        WrapperHandle w = spawn_level1(h.ctx, make_transfer_records(h.ctx, ids, 0), {}, cfg, options_for(fake.endpoint()));
        CHECK_THROWS_AS(coordinate_step(w, 0, {}), ProtocolError);
        abort_transfer(h.ctx, w);
        CHECK(h.world.entities == before.entities);
        CHECK(w.state == WrapperState::Done);
    }
    SUBCASE("STATUS for the wrong step")
    {
        FakeWrapper fake([&](LineChannel &ch) {
            handshake(ch);
            send_status(ch, 4, 0);
            ch.read_line(2s);
        });
        WrapperHandle w = spawn_level1(h.ctx, make_transfer_records(h.ctx, ids, 0), {}, cfg, options_for(fake.endpoint()));
        CHECK_THROWS_AS(coordinate_step(w, 0, {}), ProtocolError);
        abort_transfer(h.ctx, w);
    }
    SUBCASE("bad READY aborts the spawn")
    {
        FakeWrapper fake([&](LineChannel &ch) {
            ControlMessage::decode(*ch.read_line(2s));
            for (int i = 0; i < 3; ++i)
            {
                ch.read_line(2s);
            }
            ch.send_line("READY step=0 wrapper=0 entities=2");
            ch.read_line(2s);
        });
        CHECK_THROWS_AS(
            spawn_level1(h.ctx, make_transfer_records(h.ctx, ids, 0), {}, cfg, options_for(fake.endpoint())),
            TransferError);
        CHECK(h.ctx.active_entity_count() == 120);
    }
    SUBCASE("silent wrapper times out")
    {
        FakeWrapper fake([&](LineChannel &ch) {
            handshake(ch);
            ch.read_line(2s);
        });
        SpawnOptions o = options_for(fake.endpoint());
        o.io_timeout = 100ms;
        WrapperHandle w = spawn_level1(h.ctx, make_transfer_records(h.ctx, ids, 0), {}, cfg, o);
        CHECK_THROWS_AS(coordinate_step(w, 0, {}), ConnectionError);
        abort_transfer(h.ctx, w);
        CHECK(h.ctx.active_entity_count() == 120);
    }
}

namespace
{
    struct CoordinatedRun
    {
        RunMetrics metrics;
        std::vector<BarrierTrace> trace;
        std::vector<WrapperTranscript> transcripts;
        std::vector<std::string> errors;
    };

    CoordinatedRun coordinated(std::size_t n, std::uint32_t lps, Timestep steps, HybridConfig hc,
                               std::uint64_t seed = 7, const ModelHooks &hooks = {})
    {
        TerritoryModel model{{}, make_world(n, seed)};
        EngineConfig ec;
        ec.num_lps = lps;
        ec.total_timesteps = steps;
        ec.master_seed = seed;
        HybridCoordinator coord(std::move(hc), seed);
        CoordinatedRun out;
        out.metrics = run_simulation(ec, model, &coord, hooks);
        out.trace = coord.barrier_trace();
        out.transcripts = coord.transcripts();
        out.errors = coord.errors();
        return out;
    }
}

TEST_CASE("coordinated runs")
{
    SUBCASE("two concurrent wrappers are both serviced at every barrier")
    {
        HybridConfig hc;
        hc.trigger.spawn_at = {4, 4};
        const CoordinatedRun r = coordinated(200, 2, 12, hc);
        CHECK(r.errors.empty());
        CHECK(r.metrics.level1.spawns == 2);
        CHECK(r.metrics.level1.completed == 2);
        CHECK(r.metrics.level1.status_exchanges == 6);
        CHECK(r.metrics.level1.conservation_checks == 12);
        for (const BarrierTrace &b : r.trace)
        {
            CHECK(b.statuses_processed == b.wrappers_active);
            CHECK(b.wrappers_active == ((b.step >= 4 && b.step <= 6) ? 2u : 0u));
            CHECK(b.entities_in_transfer == ((b.step >= 4 && b.step < 6) ? 8u : 0u));
        }
        REQUIRE(r.transcripts.size() == 2);
    }
    SUBCASE("frozen entities receive no Level 0 traffic")
    {
        HybridConfig hc;
        hc.trigger.spawn_at = {5};
        hc.trigger.transfer_count = 40;
        hc.decision.duration = 30;
        std::mutex mu;
        std::vector<std::pair<Timestep, EntityId>> seen;
        ModelHooks hooks;
        hooks.on_entity = [&](LpId, Timestep t, const SimulatedEntity &e) {
            std::lock_guard lk(mu);
            seen.emplace_back(t, e.id);
        };
        const CoordinatedRun r = coordinated(2000, 2, 60, hc, 11, hooks);
        CHECK(r.errors.empty());
        CHECK(r.metrics.totals.frozen_drops > 0);
        CHECK(r.metrics.accounting_error().empty());
        // 40 entities are away for steps 6..34.
        std::size_t at20 = 0;
        for (const auto &[t, e] : seen)
        {
            at20 += t == 20;
        }
        CHECK(at20 == 1960);
    }
    SUBCASE("hybrid runs are still independent of the LP count")
    {
        HybridConfig hc;
        hc.trigger.spawn_at = {3, 3, 9};
        hc.trigger.transfer_count = 6;
        const CoordinatedRun a = coordinated(600, 1, 20, hc, 2);
        const CoordinatedRun b = coordinated(600, 4, 20, hc, 2);
        CHECK(a.metrics.deterministic_digest() == b.metrics.deterministic_digest());
        REQUIRE(a.transcripts.size() == b.transcripts.size());
        for (std::size_t i = 0; i < a.transcripts.size(); ++i)
        {
            CHECK(a.transcripts[i].lines == b.transcripts[i].lines);
        }
    }
    SUBCASE("wrapper still running at the last step is ended and reintegrated")
    {
        HybridConfig hc;
        hc.trigger.spawn_at = {8};
        hc.decision.duration = 50;
        const CoordinatedRun r = coordinated(300, 1, 10, hc);
        CHECK(r.metrics.level1.completed == 1);
        CHECK(r.metrics.level1.status_exchanges == 2);
        CHECK(r.trace.back().entities_in_transfer == 0);
    }
    SUBCASE("until-idle wrapper runs until its pedestrians arrive")
    {
        HybridConfig hc;
        hc.trigger.spawn_at = {2};
        hc.decision.mode = DecisionPolicy::Mode::UntilIdle;
        const CoordinatedRun r = coordinated(300, 2, 150, hc);
        CHECK(r.errors.empty());
        CHECK(r.metrics.level1.completed == 1);
        CHECK(r.metrics.level1.pedestrians_arrived == r.metrics.level1.customers);
        CHECK(r.metrics.level1.customers == 4);
    }
    SUBCASE("density trigger spawns at most once per barrier")
    {
        HybridConfig hc;
        hc.trigger.mode = TriggerPolicy::Mode::Density;
        hc.trigger.threshold = 6;
        hc.trigger.max_spawns = 3;
        const CoordinatedRun r = coordinated(500, 2, 20, hc);
        CHECK(r.metrics.level1.spawns == 3);
        std::size_t prev = 0;
        for (const BarrierTrace &b : r.trace)
        {
            CHECK(b.wrappers_active <= prev + 1);
            prev = b.wrappers_active;
        }
    }
    SUBCASE("unreachable endpoint fails the spawn but not the run")
    {
        Endpoint dead;
        {
            TcpListener l(Endpoint{"127.0.0.1", 0});
            dead = l.endpoint();
        }
        HybridConfig hc;
        hc.trigger.spawn_at = {1};
        hc.endpoint = dead;
        const CoordinatedRun r = coordinated(200, 2, 5, hc);
        CHECK(r.metrics.level1.failures == 1);
        CHECK(r.metrics.level1.spawns == 0);
        CHECK(r.errors.size() == 1);
    }
    SUBCASE("remote endpoint from the environment")
    {
        WrapperServer remote;
        ::setenv("HYBRIDSIM_L1_ENDPOINT", remote.endpoint().to_string().c_str(), 1);
        REQUIRE(level1_endpoint_from_env().has_value());
        HybridConfig hc;
        hc.trigger.spawn_at = {1};
        const CoordinatedRun r = coordinated(200, 1, 6, hc);
        ::unsetenv("HYBRIDSIM_L1_ENDPOINT");
        CHECK(r.metrics.level1.completed == 1);
        remote.stop();
        CHECK(remote.sessions_completed() == 1);
    }
}
