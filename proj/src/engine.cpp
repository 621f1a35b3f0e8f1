#include "hybridsim/engine.hpp"

#include <algorithm>
#include <atomic>
#include <numeric>
#include <sstream>
#include <thread>
#include <tuple>

namespace hybridsim
{
    void EngineConfig::validate() const
    {
        if (num_lps < 1)
        {
            throw std::invalid_argument("num_lps must be >= 1");
        }
        if (total_timesteps < 1)
        {
            throw std::invalid_argument("total_timesteps must be >= 1");
        }
        if (!(timestep_duration > 0.0))
        {
            throw std::invalid_argument("timestep_duration must be > 0");
        }
        if (barrier_timeout.count() <= 0)
        {
            throw std::invalid_argument("barrier_timeout must be > 0");
        }
    }

    std::vector<std::vector<EntityId>> partition_entities(std::span<const EntityId> entity_ids, std::uint32_t num_lps,
                                                          std::uint64_t seed)
    {
        if (entity_ids.empty())
        {
            throw std::invalid_argument("partition_entities: no entities");
        }
        if (num_lps < 1)
        {
            throw std::invalid_argument("partition_entities: num_lps must be >= 1");
        }
        if (num_lps > entity_ids.size())
        {
            throw std::invalid_argument("partition_entities: num_lps (" + std::to_string(num_lps) +
                                        ") exceeds entity count (" + std::to_string(entity_ids.size()) + ")");
        }
        std::vector<EntityId> shuffled(entity_ids.begin(), entity_ids.end());
        RngStream rng = RngStream::for_role(seed, "partition");
        for (std::size_t i = shuffled.size() - 1; i > 0; --i)
        {
            const std::size_t j = rng.below(i + 1);
            std::swap(shuffled[i], shuffled[j]);
        }
        std::vector<std::vector<EntityId>> parts(num_lps);
        for (std::size_t i = 0; i < shuffled.size(); ++i)
        {
            parts[i % num_lps].push_back(shuffled[i]);
        }
        for (auto &p : parts)
        {
            std::sort(p.begin(), p.end());
        }
        return parts;
    }

    bool envelope_order(const InterLpEnvelope &a, const InterLpEnvelope &b) noexcept
    {
        return std::tie(a.destination_entity, a.message.message_id, a.sender, a.message.hop_count) <
               std::tie(b.destination_entity, b.message.message_id, b.sender, b.message.hop_count);
    }

    void LogicalProcess::add_owned(EntityId e)
    {
        auto it = std::lower_bound(owned_entities.begin(), owned_entities.end(), e);
        if (it != owned_entities.end() && *it == e)
        {
            throw std::logic_error("LP " + std::to_string(lp_id) + " already owns entity " + std::to_string(e));
        }
        owned_entities.insert(it, e);
    }

    bool LogicalProcess::remove_owned(EntityId e)
    {
        auto it = std::lower_bound(owned_entities.begin(), owned_entities.end(), e);
        if (it == owned_entities.end() || *it != e)
        {
            return false;
        }
        owned_entities.erase(it);
        return true;
    }

    StepError::StepError(LpId lp_, Timestep t, EntityId e, const std::string &what)
        : std::runtime_error("lp " + std::to_string(lp_) + " step " + std::to_string(t) + " entity " +
                             std::to_string(e) + ": " + what),
          lp(lp_), step(t), entity(e)
    {
    }

    namespace
    {
        std::string describe_silent(Timestep t, const std::vector<LpId> &silent)
        {
            std::ostringstream os;
            os << "EOS barrier timeout at step " << t << "; silent lp_id:";
            for (LpId id : silent)
            {
                os << ' ' << id;
            }
            return os.str();
        }
    }

    BarrierTimeout::BarrierTimeout(Timestep t, std::vector<LpId> silent)
        : std::runtime_error(describe_silent(t, silent)), step(t), silent_lps(std::move(silent))
    {
    }

    SimulationAborted::SimulationAborted(const std::string &what, RunMetrics partial_, std::exception_ptr cause_)
        : std::runtime_error(what), partial(std::move(partial_)), cause(std::move(cause_))
    {
    }

    StepReport run_step(LogicalProcess &lp, Timestep t, World &world, std::span<Vec2> positions,
                        const DisseminationParams &params, const ModelHooks &hooks)
    {
        StepReport report{lp.lp_id, t, {}};
        if (hooks.on_step_begin)
        {
            hooks.on_step_begin(lp.lp_id, t);
        }
        const auto &inbox = lp.inbox;
        std::size_t k = 0;
        for (EntityId id : lp.owned_entities)
        {
            // Inbox entries for ids not owned anymore belong to frozen entities.
            while (k < inbox.size() && inbox[k].destination_entity < id)
            {
                ++report.counters.frozen_drops;
                ++k;
            }
            SimulatedEntity &e = world.entities[id];
            try
            {
                e.relays_this_step = 0;
                if (hooks.on_entity)
                {
                    hooks.on_entity(lp.lp_id, t, e);
                }
                for (; k < inbox.size() && inbox[k].destination_entity == id; ++k)
                {
                    const InterLpEnvelope &env = inbox[k];
                    RelayOutcome outcome = decide_relay(e, env.message, env.sender_position, params, world.side_length);
                    report.counters.count(outcome.reason);
                    if (hooks.on_decision)
                    {
                        hooks.on_decision(lp.lp_id, t, e, env, outcome);
                    }
                    if (outcome.forwarded)
                    {
                        lp.outbox.push_back({id, *outcome.forwarded});
                    }
                }
                if (e.kind == EntityKind::Mobile)
                {
                    rwp_step(e, world.side_length);
                }
                if (auto m = generate_message(e, t, params))
                {
                    ++report.counters.generated;
                    lp.outbox.push_back({id, *m});
                }
                positions[id] = e.position;
            }
            catch (const StepError &)
            {
                throw;
            }
            catch (const std::exception &ex)
            {
                throw StepError(lp.lp_id, t, id, ex.what());
            }
        }
        report.counters.frozen_drops += inbox.size() - k;
        lp.inbox.clear();
        if (hooks.on_step_end)
        {
            hooks.on_step_end(lp.lp_id, t);
        }
        return report;
    }

    StepBarrier::StepBarrier(std::uint32_t num_lps, std::chrono::milliseconds timeout)
        : num_lps_(num_lps), timeout_(timeout), eos_received_(num_lps, false)
    {
        if (num_lps_ == 0)
        {
            throw std::invalid_argument("StepBarrier: num_lps must be >= 1");
        }
    }

    void StepBarrier::synchronize_eos(LpId lp, Timestep step, const std::function<void()> &on_complete)
    {
        std::unique_lock lk(mutex_);
        if (aborted_)
        {
            std::rethrow_exception(aborted_);
        }
        if (lp >= num_lps_)
        {
            throw std::out_of_range("StepBarrier: lp_id " + std::to_string(lp) + " out of range");
        }
        if (eos_received_[lp])
        {
            throw std::logic_error("StepBarrier: lp " + std::to_string(lp) + " announced EOS twice");
        }
        if (arrived_ == 0)
        {
            step_ = step;
        }
        else if (step != step_)
        {
            throw std::logic_error("StepBarrier: lp " + std::to_string(lp) + " announced step " + std::to_string(step) +
                                   " while barrier is at step " + std::to_string(step_));
        }
        eos_received_[lp] = true;
        ++arrived_;
        if (arrived_ == num_lps_)
        {
            if (on_complete)
            {
                try
                {
                    on_complete();
                }
                catch (...)
                {
                    aborted_ = std::current_exception();
                    cv_.notify_all();
                    throw;
                }
            }
            std::fill(eos_received_.begin(), eos_received_.end(), false);
            arrived_ = 0;
            ++generation_;
            cv_.notify_all();
            return;
        }
        const std::uint64_t gen = generation_;
        const auto deadline = std::chrono::steady_clock::now() + timeout_;
        while (gen == generation_ && !aborted_)
        {
            if (cv_.wait_until(lk, deadline) == std::cv_status::timeout && gen == generation_ && !aborted_)
            {
                std::vector<LpId> silent;
                for (LpId i = 0; i < num_lps_; ++i)
                {
                    if (!eos_received_[i])
                    {
                        silent.push_back(i);
                    }
                }
                aborted_ = std::make_exception_ptr(BarrierTimeout(step, std::move(silent)));
                cv_.notify_all();
                std::rethrow_exception(aborted_);
            }
        }
        if (gen == generation_)
        {
            std::rethrow_exception(aborted_);
        }
    }

    void StepBarrier::abort(std::exception_ptr reason)
    {
        std::lock_guard lk(mutex_);
        if (!aborted_)
        {
            aborted_ = std::move(reason);
        }
        cv_.notify_all();
    }

    std::uint64_t StepBarrier::completed_rounds() const
    {
        std::lock_guard lk(mutex_);
        return generation_;
    }

    EngineContext::EngineContext(World &world, std::vector<LogicalProcess> &lps, std::vector<LpId> &owner,
                                 std::vector<Vec2> &positions, RunMetrics &metrics, const EngineConfig &config,
                                 const DisseminationParams &params)
        : world_(world), lps_(lps), owner_(owner), positions_(positions), metrics_(metrics), config_(config),
          params_(params)
    {
    }

    std::size_t EngineContext::active_entity_count() const noexcept
    {
        std::size_t n = 0;
        for (const auto &lp : lps_)
        {
            n += lp.owned_entities.size();
        }
        return n;
    }

    void EngineContext::freeze(EntityId e)
    {
        SimulatedEntity &ent = world_.entities.at(e);
        if (!ent.active || !lps_[owner_[e]].remove_owned(e))
        {
            throw std::logic_error("freeze: entity " + std::to_string(e) + " is not active");
        }
        ent.active = false;
    }

    void EngineContext::restore(SimulatedEntity state)
    {
        const EntityId e = state.id;
        SimulatedEntity &slot = world_.entities.at(e);
        if (slot.active)
        {
            throw std::logic_error("restore: entity " + std::to_string(e) + " is already active");
        }
        state.active = true;
        state.position = wrap_position(state.position, world_.side_length);
        positions_[e] = state.position;
        slot = std::move(state);
        lps_[owner_[e]].add_owned(e);
    }

    namespace
    {
        class EngineRun
        {
        public:
            EngineRun(const EngineConfig &config, TerritoryModel &model, CoarseStepHooks *hybrid, const ModelHooks &hooks)
                : config_(config), model_(model), hybrid_(hybrid), hooks_(hooks),
                  grid_(model.world.side_length, model.params.interaction_range),
                  barrier_positions_(config.num_lps, config.barrier_timeout),
                  barrier_eos_(config.num_lps, config.barrier_timeout),
                  ctx_(model_.world, lps_, owner_, positions_, metrics_, config_, model_.params)
            {
                const std::size_t n = model_.world.size();
                std::vector<EntityId> ids(n);
                std::iota(ids.begin(), ids.end(), EntityId{0});
                auto parts = partition_entities(ids, config_.num_lps, config_.master_seed);
                owner_.assign(n, 0);
                lps_.resize(config_.num_lps);
                for (LpId lp = 0; lp < config_.num_lps; ++lp)
                {
                    lps_[lp].lp_id = lp;
                    for (EntityId e : parts[lp])
                    {
                        owner_[e] = lp;
                        if (model_.world.entities[e].active)
                        {
                            lps_[lp].owned_entities.push_back(e);
                        }
                    }
                }
                positions_.resize(n);
                for (std::size_t i = 0; i < n; ++i)
                {
                    positions_[i] = model_.world.entities[i].position;
                }
                reports_.resize(config_.num_lps);
                reach_.assign(config_.num_lps, 0);
                buckets_.assign(config_.num_lps, std::vector<std::vector<InterLpEnvelope>>(config_.num_lps));
                metrics_.seed = config_.master_seed;
                metrics_.num_entities = n;
                metrics_.num_lps = config_.num_lps;
            }

            RunMetrics run()
            {
                if (config_.num_lps == 1)
                {
                    lp_main(0);
                }
                else
                {
                    std::vector<std::thread> threads;
                    threads.reserve(config_.num_lps);
                    for (LpId lp = 0; lp < config_.num_lps; ++lp)
                    {
                        threads.emplace_back([this, lp] { lp_main(lp); });
                    }
                    for (auto &th : threads)
                    {
                        th.join();
                    }
                }
                if (first_error_)
                {
                    std::string what = "simulation aborted";
                    try
                    {
                        std::rethrow_exception(first_error_);
                    }
                    catch (const std::exception &ex)
                    {
                        what = ex.what();
                    }
                    catch (...)
                    {
                    }
                    throw SimulationAborted(what, metrics_, first_error_);
                }
                for (const auto &lp : lps_)
                {
                    metrics_.in_flight_at_end += lp.inbox.size();
                }
                return std::move(metrics_);
            }

        private:
            void lp_main(LpId lp)
            {
                try
                {
                    for (Timestep t = 0; t < config_.total_timesteps; ++t)
                    {
                        reports_[lp] = run_step(lps_[lp], t, model_.world, positions_, model_.params, hooks_);
                        barrier_positions_.synchronize_eos(lp, t, [this] { grid_.rebuild(positions_); });
                        route(lp, t);
                        barrier_eos_.synchronize_eos(lp, t, [this, t] { complete_step(t); });
                        gather(lp);
                    }
                }
                catch (...)
                {
                    {
                        std::lock_guard lk(error_mutex_);
                        if (!first_error_)
                        {
                            first_error_ = std::current_exception();
                        }
                    }
                    barrier_positions_.abort(std::current_exception());
                    barrier_eos_.abort(std::current_exception());
                }
            }

            void route(LpId lp, Timestep t)
            {
                auto &outbox = lps_[lp].outbox;
                std::uint64_t reach = 0;
                const double range = model_.params.interaction_range;
                for (const Broadcast &b : outbox)
                {
                    const Vec2 from = positions_[b.sender];
                    for (EntityId r : broadcast_reach(positions_, grid_, b.sender, range))
                    {
                        buckets_[lp][owner_[r]].push_back({t, r, b.sender, from, b.message});
                        ++reach;
                    }
                }
                outbox.clear();
                reach_[lp] = reach;
            }

            void gather(LpId lp)
            {
                auto &inbox = lps_[lp].inbox;
                for (LpId src = 0; src < config_.num_lps; ++src)
                {
                    auto &bucket = buckets_[src][lp];
                    inbox.insert(inbox.end(), std::make_move_iterator(bucket.begin()), std::make_move_iterator(bucket.end()));
                    bucket.clear();
                }
                std::sort(inbox.begin(), inbox.end(), envelope_order);
            }

            // Runs single-threaded inside the EOS barrier.
            void complete_step(Timestep t)
            {
                MessageCounters step;
                for (LpId lp = 0; lp < config_.num_lps; ++lp)
                {
                    step += reports_[lp].counters;
                    step.reach_total += reach_[lp];
                }
                metrics_.totals += step;
                if (config_.record_per_step)
                {
                    metrics_.per_step.push_back(step);
                }
                if (hybrid_)
                {
                    hybrid_->on_barrier(t, ctx_);
                    const std::size_t accounted = ctx_.active_entity_count() + hybrid_->entities_in_transfer();
                    if (accounted != model_.world.size())
                    {
                        throw std::logic_error("entity conservation violated at step " + std::to_string(t) + ": " +
                                               std::to_string(accounted) + " accounted of " +
                                               std::to_string(model_.world.size()));
                    }
                    ++metrics_.level1.conservation_checks;
                }
                metrics_.steps_completed = t + 1;
            }

            const EngineConfig &config_;
            TerritoryModel &model_;
            CoarseStepHooks *hybrid_;
            const ModelHooks &hooks_;

            std::vector<LogicalProcess> lps_;
            std::vector<LpId> owner_;
            std::vector<Vec2> positions_;
            SpatialGrid grid_;
            std::vector<StepReport> reports_;
            std::vector<std::uint64_t> reach_;
            // buckets_[src][dst]: envelopes routed by src for entities owned by dst.
            std::vector<std::vector<std::vector<InterLpEnvelope>>> buckets_;
            StepBarrier barrier_positions_;
            StepBarrier barrier_eos_;
            RunMetrics metrics_;
            EngineContext ctx_;

            std::mutex error_mutex_;
            std::exception_ptr first_error_;
        };
    }

    RunMetrics run_simulation(const EngineConfig &config, TerritoryModel &model, CoarseStepHooks *hybrid,
                              const ModelHooks &hooks)
    {
        config.validate();
        model.params.validate();
        if (model.world.size() == 0)
        {
            throw std::invalid_argument("run_simulation: empty world");
        }
        const auto start = std::chrono::steady_clock::now();
        EngineRun run(config, model, hybrid, hooks);
        RunMetrics m;
        try
        {
            m = run.run();
        }
        catch (SimulationAborted &ab)
        {
            ab.partial.wall_clock_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            throw;
        }
        m.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return m;
    }
}
