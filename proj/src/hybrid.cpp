#include "hybridsim/hybrid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <future>
#include <set>

namespace hybridsim
{
    namespace
    {
        std::vector<EntityId> nearest_active(const World &world, std::span<const Vec2> positions, Vec2 center,
                                             std::span<const EntityId> candidates, std::size_t count)
        {
            std::vector<std::pair<double, EntityId>> ranked;
            ranked.reserve(candidates.size());
            for (EntityId e : candidates)
            {
                if (world.entities[e].active)
                {
                    ranked.emplace_back(toroidal_distance(positions[e], center, world.side_length), e);
                }
            }
            const std::size_t k = std::min(count, ranked.size());
            std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(k), ranked.end());
            std::vector<EntityId> out;
            for (std::size_t i = 0; i < k; ++i)
            {
                out.push_back(ranked[i].second);
            }
            std::sort(out.begin(), out.end());
            return out;
        }

        ControlMessage read_record(WrapperHandle &h)
        {
            std::optional<std::string> line = h.channel.read_line(h.io_timeout);
            if (!line)
            {
                throw ProtocolError("wrapper " + std::to_string(h.wrapper_id) + " closed the connection");
            }
            return ControlMessage::decode(*line);
        }
    }

    std::string_view to_string(WrapperState s) noexcept
    {
        switch (s)
        {
        case WrapperState::RunningL1a:
            return "RUNNING_L1A";
        case WrapperState::RunningL1b:
            return "RUNNING_L1B";
        case WrapperState::Done:
            return "DONE";
        }
        return "?";
    }

    void TriggerPolicy::validate() const
    {
        if (transfer_count == 0)
        {
            throw std::invalid_argument("transfer_count must be >= 1");
        }
        if (!(radius > 0.0))
        {
            throw std::invalid_argument("trigger radius must be > 0");
        }
        if (std::isnan(threshold) || threshold < 1.0)
        {
            throw std::invalid_argument("trigger threshold must be >= 1");
        }
    }

    std::optional<TriggerRegion> check_trigger(const World &world, std::span<const Vec2> positions, Timestep t,
                                               const TriggerPolicy &policy, std::uint64_t master_seed,
                                               std::size_t spawn_index)
    {
        if (spawn_index >= policy.max_spawns)
        {
            return std::nullopt;
        }
        if (policy.mode == TriggerPolicy::Mode::Scripted)
        {
            std::vector<Timestep> schedule = policy.spawn_at;
            std::sort(schedule.begin(), schedule.end());
            if (spawn_index >= schedule.size() || schedule[spawn_index] != t)
            {
                return std::nullopt;
            }
            RngStream rng = RngStream::for_role(master_seed, "trigger", spawn_index);
            TriggerRegion r;
            r.center = {rng.uniform(0.0, world.side_length), rng.uniform(0.0, world.side_length)};
            std::vector<EntityId> all(world.size());
            for (EntityId e = 0; e < all.size(); ++e)
            {
                all[e] = e;
            }
            r.selected = nearest_active(world, positions, r.center, all, policy.transfer_count);
            if (r.selected.empty())
            {
                return std::nullopt;
            }
            for (EntityId e : r.selected)
            {
                r.radius = std::max(r.radius, toroidal_distance(positions[e], r.center, world.side_length));
            }
            r.members = r.selected;
            return r;
        }

        if (!std::isfinite(policy.threshold))
        {
            return std::nullopt;
        }
        SpatialGrid grid(world.side_length, policy.radius);
        grid.rebuild(positions);
        for (const SimulatedEntity &c : world.entities)
        {
            if (!c.active)
            {
                continue;
            }
            std::vector<EntityId> inside;
            for (EntityId e : grid.query(positions, positions[c.id], policy.radius))
            {
                if (world.entities[e].active)
                {
                    inside.push_back(e);
                }
            }
            if (static_cast<double>(inside.size()) >= policy.threshold)
            {
                TriggerRegion r;
                r.center = positions[c.id];
                r.radius = policy.radius;
                r.members = inside;
                r.selected = nearest_active(world, positions, r.center, inside, policy.transfer_count);
                return r;
            }
        }
        return std::nullopt;
    }

    void DecisionPolicy::validate() const
    {
        if (duration < 1 || max_steps < 1)
        {
            throw std::invalid_argument("decision duration and max_steps must be >= 1");
        }
    }

    bool DecisionPolicy::should_end(const WrapperStatus &status, std::uint64_t status_index) const
    {
        if (mode == Mode::FixedDuration)
        {
            return status_index >= duration;
        }
        if (status_index >= max_steps)
        {
            return true;
        }
        if (status.phase == Level1Phase::Transport)
        {
            return status.customers == 0;
        }
        return status.querying + status.walking == 0;
    }

    std::vector<LevelTransferRecord> make_transfer_records(const EngineContext &ctx, std::span<const EntityId> ids,
                                                           Timestep t)
    {
        std::vector<LevelTransferRecord> out;
        for (EntityId e : ids)
        {
            const SimulatedEntity &ent = ctx.world().entities.at(e);
            if (!ent.active)
            {
                throw TransferError("entity " + std::to_string(e) + " is already transferred");
            }
            out.push_back({e, ent, t, ctx.owner_of(e)});
        }
        std::sort(out.begin(), out.end(), [](const auto &a, const auto &b) { return a.entity_id < b.entity_id; });
        return out;
    }

    WrapperHandle spawn_level1(EngineContext &ctx, std::vector<LevelTransferRecord> records,
                               const TimestepAlignment &align, const Level1Config &config, const SpawnOptions &options)
    {
        if (records.empty())
        {
            throw std::invalid_argument("spawn_level1: no entities to transfer");
        }
        align.validate();
        std::sort(records.begin(), records.end(), [](const auto &a, const auto &b) { return a.entity_id < b.entity_id; });
        const Timestep t = records.front().transferred_at;
        for (std::size_t i = 0; i < records.size(); ++i)
        {
            const auto &r = records[i];
            if ((i > 0 && records[i - 1].entity_id == r.entity_id) || !ctx.world().entities.at(r.entity_id).active)
            {
                throw TransferError("entity " + std::to_string(r.entity_id) + " is already transferred");
            }
            if (r.transferred_at != t)
            {
                throw std::invalid_argument("spawn_level1: records from different steps");
            }
        }

        WrapperHandle h;
        h.wrapper_id = options.wrapper_id;
        h.endpoint = options.endpoint;
        h.spawned_at = t;
        h.io_timeout = options.io_timeout;
        h.records = std::move(records);
        h.transcript = std::make_shared<std::vector<std::string>>();

        for (const auto &r : h.records)
        {
            ctx.freeze(r.entity_id);
        }
        try
        {
            h.channel = tcp_connect(options.endpoint, options.io_timeout);
            if (options.record_transcript)
            {
                h.channel.set_tap([log = h.transcript](char dir, std::string_view line) {
                    std::string entry(1, dir);
                    entry += ' ';
                    entry += line;
                    log->push_back(std::move(entry));
                });
            }
            WrapperInit init;
            init.wrapper_id = options.wrapper_id;
            init.step = t;
            init.entity_count = h.records.size();
            init.world_side = ctx.world().side_length;
            init.alignment = align;
            init.market = config.market;
            init.transport = config.transport;
            init.transport.n_vehicles = h.records.size();
            init.transport.seed = options.l1a_seed;
            init.transport_command = config.transport_command;
            h.channel.send_line(init.encode().encode());
            for (const auto &r : h.records)
            {
                h.channel.send_line(encode_entity(r.snapshot, t).encode());
            }
            const ControlMessage ready = read_record(h);
            if (ready.kind() != ControlKind::Ready || ready.step() != t ||
                ready.get_uint("entities") != h.records.size())
            {
                throw ProtocolError("bad READY from wrapper " + std::to_string(h.wrapper_id));
            }
        }
        catch (const std::exception &ex)
        {
            h.channel.close();
            for (const auto &r : h.records)
            {
                ctx.restore(r.snapshot);
            }
            throw TransferError("spawn of wrapper " + std::to_string(options.wrapper_id) + " at " +
                                options.endpoint.to_string() + " failed: " + ex.what());
        }
        ++ctx.metrics().level1.spawns;
        ctx.metrics().level1.entities_transferred += h.records.size();
        return h;
    }

    WrapperStatus coordinate_step(WrapperHandle &handle, Timestep t, const DecisionPolicy &policy, bool force_end)
    {
        if (handle.state == WrapperState::Done || handle.end_sent)
        {
            throw std::logic_error("coordinate_step on a finished wrapper");
        }
        const ControlMessage m = read_record(handle);
        if (m.kind() != ControlKind::Status || m.step() != t)
        {
            throw ProtocolError("wrapper " + std::to_string(handle.wrapper_id) + ": expected STATUS step=" +
                                std::to_string(t) + ", got " + std::string(to_string(m.kind())) +
                                " step=" + std::to_string(m.step()));
        }
        const WrapperStatus status = WrapperStatus::decode(m);
        if (status.wrapper_id != handle.wrapper_id)
        {
            throw ProtocolError("STATUS from wrapper " + std::to_string(status.wrapper_id) + " on the channel of " +
                                std::to_string(handle.wrapper_id));
        }
        ++handle.status_pairs;
        const bool end = force_end || policy.should_end(status, handle.status_pairs);
        ControlMessage reply(end ? ControlKind::End : ControlKind::Continue, t);
        reply.set("wrapper", handle.wrapper_id);
        handle.channel.send_line(reply.encode());
        handle.state = status.phase == Level1Phase::Transport ? WrapperState::RunningL1a : WrapperState::RunningL1b;
        handle.end_sent = end;
        handle.last_status = status;
        return status;
    }

    WrapperResult reintegrate(EngineContext &ctx, WrapperHandle &handle)
    {
        if (!handle.end_sent || !handle.last_status)
        {
            throw std::logic_error("reintegrate before END");
        }
        const Timestep t = handle.last_status->step;
        const ControlMessage head = read_record(handle);
        if (head.step() != t)
        {
            throw ProtocolError("RESULT for step " + std::to_string(head.step()) + ", expected " + std::to_string(t));
        }
        const WrapperResult result = WrapperResult::decode(head);

        std::vector<std::pair<SimulatedEntity, std::uint64_t>> returned;
        for (;;)
        {
            const ControlMessage m = read_record(handle);
            if (m.kind() == ControlKind::Bye)
            {
                break;
            }
            if (m.kind() != ControlKind::Entity)
            {
                throw ProtocolError("expected ENTITY or BYE after RESULT, got " + std::string(to_string(m.kind())));
            }
            if (!m.has("l1_draws"))
            {
                throw ProtocolError("returned ENTITY lacks l1_draws");
            }
            returned.emplace_back(decode_entity(m), m.get_uint("l1_draws"));
        }

        std::set<EntityId> seen;
        for (const auto &[e, draws] : returned)
        {
            const auto it = std::find_if(handle.records.begin(), handle.records.end(),
                                         [id = e.id](const auto &r) { return r.entity_id == id; });
            if (it == handle.records.end())
            {
                throw TransferError("RESULT of wrapper " + std::to_string(handle.wrapper_id) +
                                    " returned entity " + std::to_string(e.id) + " that was never transferred");
            }
            if (!seen.insert(e.id).second)
            {
                throw TransferError("RESULT of wrapper " + std::to_string(handle.wrapper_id) +
                                    " returned entity " + std::to_string(e.id) + " twice");
            }
            const RngStream &before = it->snapshot.rng;
            if (e.rng.key() != before.key() || e.rng.cursor() != before.cursor() + draws)
            {
                throw TransferError("entity " + std::to_string(e.id) + " rng cursor " + std::to_string(e.rng.cursor()) +
                                    " != " + std::to_string(before.cursor()) + " + " + std::to_string(draws));
            }
        }
        for (const auto &r : handle.records)
        {
            if (!seen.contains(r.entity_id))
            {
                throw TransferError("RESULT of wrapper " + std::to_string(handle.wrapper_id) + " is missing entity " +
                                    std::to_string(r.entity_id));
            }
        }
        if (result.entities != handle.records.size())
        {
            throw TransferError("RESULT of wrapper " + std::to_string(handle.wrapper_id) + " announces " +
                                std::to_string(result.entities) + " entities, " +
                                std::to_string(handle.records.size()) + " were transferred");
        }

        std::sort(returned.begin(), returned.end(), [](const auto &a, const auto &b) { return a.first.id < b.first.id; });
        for (std::size_t i = 0; i < returned.size(); ++i)
        {
            // Only position and the rng cursor may change across Level 1.
            SimulatedEntity restored = handle.records[i].snapshot;
            restored.position = returned[i].first.position;
            restored.rng = returned[i].first.rng;
            ctx.restore(std::move(restored));
        }
        handle.channel.close();
        handle.state = WrapperState::Done;

        Level1Metrics &l1 = ctx.metrics().level1;
        ++l1.completed;
        l1.emissions += result.emissions;
        l1.customers += result.customers;
        l1.market_messages += result.messages_sent;
        l1.route_discoveries += result.route_discoveries;
        l1.pedestrians_arrived += result.arrived;
        return result;
    }

    void abort_transfer(EngineContext &ctx, WrapperHandle &handle)
    {
        handle.channel.close();
        for (const auto &r : handle.records)
        {
            if (!ctx.world().entities.at(r.entity_id).active)
            {
                ctx.restore(r.snapshot);
            }
        }
        handle.state = WrapperState::Done;
        ++ctx.metrics().level1.failures;
    }

    std::optional<Endpoint> level1_endpoint_from_env()
    {
        const char *v = std::getenv("HYBRIDSIM_L1_ENDPOINT");
        if (!v || !*v)
        {
            return std::nullopt;
        }
        return Endpoint::parse(v);
    }

    HybridCoordinator::HybridCoordinator(HybridConfig config, std::uint64_t master_seed)
        : config_(std::move(config)), master_seed_(master_seed)
    {
        config_.trigger.validate();
        config_.decision.validate();
        config_.alignment.validate();
        config_.level1.market.validate();
        config_.level1.transport.validate();
        if (config_.endpoint)
        {
            endpoint_ = *config_.endpoint;
        }
        else if (auto env = level1_endpoint_from_env())
        {
            endpoint_ = *env;
        }
        else
        {
            server_ = std::make_unique<WrapperServer>(Endpoint{"127.0.0.1", 0}, config_.io_timeout);
            endpoint_ = server_->endpoint();
        }
    }

    HybridCoordinator::~HybridCoordinator()
    {
        for (auto &h : active_)
        {
            h.channel.close();
        }
        if (server_)
        {
            server_->stop();
        }
    }

    std::size_t HybridCoordinator::entities_in_transfer() const
    {
        std::size_t n = 0;
        for (const auto &h : active_)
        {
            if (h.state != WrapperState::Done)
            {
                n += h.records.size();
            }
        }
        return n;
    }

    void HybridCoordinator::finish(WrapperHandle &h)
    {
        transcripts_.push_back({h.wrapper_id, h.spawned_at, h.transcript ? *h.transcript : std::vector<std::string>{}});
    }

    void HybridCoordinator::on_barrier(Timestep t, EngineContext &ctx)
    {
        const bool final_step = t + 1 >= ctx.config().total_timesteps;

        while (auto region = check_trigger(ctx.world(), ctx.positions(), t, config_.trigger, master_seed_, spawn_attempts_))
        {
            const auto id = static_cast<std::uint32_t>(spawn_attempts_++);
            SpawnOptions opt;
            opt.wrapper_id = id;
            opt.endpoint = endpoint_;
            opt.io_timeout = config_.io_timeout;
            opt.record_transcript = config_.record_transcripts;
            opt.l1a_seed = RngStream::for_role(master_seed_, "l1a", id).next_u64();
            try
            {
                active_.push_back(spawn_level1(ctx, make_transfer_records(ctx, region->selected, t), config_.alignment,
                                               config_.level1, opt));
            }
            catch (const TransferError &ex)
            {
                errors_.push_back(ex.what());
                ++ctx.metrics().level1.failures;
            }
            if (config_.trigger.mode == TriggerPolicy::Mode::Density)
            {
                break;
            }
        }

        BarrierTrace trace{t, active_.size(), 0, 0};
        std::vector<std::exception_ptr> failed(active_.size());
        auto service = [&](std::size_t i) {
            try
            {
                coordinate_step(active_[i], t, config_.decision, final_step);
            }
            catch (...)
            {
                failed[i] = std::current_exception();
            }
        };
        if (active_.size() == 1)
        {
            service(0);
        }
        else
        {
            std::vector<std::future<void>> pending;
            for (std::size_t i = 0; i < active_.size(); ++i)
            {
                pending.push_back(std::async(std::launch::async, service, i));
            }
            for (auto &f : pending)
            {
                f.get();
            }
        }

        for (std::size_t i = 0; i < active_.size(); ++i)
        {
            WrapperHandle &h = active_[i];
            if (failed[i])
            {
                try
                {
                    std::rethrow_exception(failed[i]);
                }
                catch (const std::exception &ex)
                {
                    errors_.push_back("wrapper " + std::to_string(h.wrapper_id) + " at step " + std::to_string(t) +
                                      ": " + ex.what());
                }
                abort_transfer(ctx, h);
                finish(h);
                continue;
            }
            ++trace.statuses_processed;
            ++ctx.metrics().level1.status_exchanges;
            if (h.end_sent)
            {
                reintegrate(ctx, h);
                finish(h);
            }
        }
        std::erase_if(active_, [](const WrapperHandle &h) { return h.state == WrapperState::Done; });
        trace.entities_in_transfer = entities_in_transfer();
        trace_.push_back(trace);
    }
}
