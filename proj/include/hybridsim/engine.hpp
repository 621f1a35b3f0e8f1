#pragma once

#include "hybridsim/metrics.hpp"
#include "hybridsim/territory.hpp"

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hybridsim
{
    using LpId = std::uint32_t;

    struct EngineConfig
    {
        std::uint32_t num_lps = 1;
        Timestep total_timesteps = 900;
        std::uint64_t master_seed = 1;
        double timestep_duration = 1.0;
        std::chrono::milliseconds barrier_timeout{60000};
        bool record_per_step = true;

        void validate() const;
    };

    // Random, balanced, disjoint cover of entity_ids over num_lps LPs. Each
    // returned set is sorted ascending.
    std::vector<std::vector<EntityId>> partition_entities(std::span<const EntityId> entity_ids, std::uint32_t num_lps,
                                                          std::uint64_t seed);

    // One broadcast queued by its sender during a step.
    struct Broadcast
    {
        EntityId sender = 0;
        DisseminationMessage message;
    };

    struct InterLpEnvelope
    {
        Timestep produced_at = 0;
        EntityId destination_entity = 0;
        EntityId sender = 0;
        Vec2 sender_position;
        DisseminationMessage message;
    };

    // Canonical inbox order, independent of which LP produced an envelope.
    bool envelope_order(const InterLpEnvelope &a, const InterLpEnvelope &b) noexcept;

    struct LogicalProcess
    {
        LpId lp_id = 0;
        std::vector<EntityId> owned_entities; // sorted; frozen entities are removed
        std::vector<InterLpEnvelope> inbox;    // envelopes produced at the previous step
        std::vector<Broadcast> outbox;

        void add_owned(EntityId e);
        bool remove_owned(EntityId e);
    };

    struct StepReport
    {
        LpId lp = 0;
        Timestep step = 0;
        MessageCounters counters;
    };

    // Instrumentation and fault-injection points. They run on LP threads and
    // must be thread-safe when num_lps > 1.
    struct ModelHooks
    {
        std::function<void(LpId, Timestep)> on_step_begin;
        std::function<void(LpId, Timestep, const SimulatedEntity &)> on_entity;
        std::function<void(LpId, Timestep, const SimulatedEntity &, const InterLpEnvelope &, const RelayOutcome &)>
            on_decision;
        std::function<void(LpId, Timestep)> on_step_end;
    };

    class StepError : public std::runtime_error
    {
    public:
        StepError(LpId lp, Timestep t, EntityId e, const std::string &what);
        LpId lp;
        Timestep step;
        EntityId entity;
    };

    class BarrierTimeout : public std::runtime_error
    {
    public:
        BarrierTimeout(Timestep t, std::vector<LpId> silent);
        Timestep step;
        std::vector<LpId> silent_lps;
    };

    // Processes one LP for step t: for each owned entity in ascending id order,
    // consume its inbox envelopes, move it, then possibly generate a message.
    // Writes each owned entity's end-of-step position into positions.
    StepReport run_step(LogicalProcess &lp, Timestep t, World &world, std::span<Vec2> positions,
                        const DisseminationParams &params, const ModelHooks &hooks);

    // End-Of-Step barrier. The last LP to announce EOS for a step runs the
    // completion callback before any LP is released.
    class StepBarrier
    {
    public:
        StepBarrier(std::uint32_t num_lps, std::chrono::milliseconds timeout);

        // Blocks until every LP has announced EOS for step. Throws BarrierTimeout
        // naming the silent LPs, or rethrows an abort raised elsewhere.
        void synchronize_eos(LpId lp, Timestep step, const std::function<void()> &on_complete = {});

        // Releases all waiters with an error; later calls throw immediately.
        void abort(std::exception_ptr reason);

        std::uint64_t completed_rounds() const;

    private:
        std::uint32_t num_lps_;
        std::chrono::milliseconds timeout_;
        mutable std::mutex mutex_;
        std::condition_variable cv_;
        std::vector<bool> eos_received_;
        std::uint32_t arrived_ = 0;
        std::uint64_t generation_ = 0;
        Timestep step_ = 0;
        std::exception_ptr aborted_;
    };

    // Barrier-time view of the engine for cross-level coordination. Only valid
    // inside CoarseStepHooks callbacks, when no LP is mid-step.
    class EngineContext
    {
    public:
        EngineContext(World &world, std::vector<LogicalProcess> &lps, std::vector<LpId> &owner,
                      std::vector<Vec2> &positions, RunMetrics &metrics, const EngineConfig &config,
                      const DisseminationParams &params);

        World &world() noexcept { return world_; }
        const World &world() const noexcept { return world_; }
        std::span<const Vec2> positions() const noexcept { return positions_; }
        LpId owner_of(EntityId e) const { return owner_.at(e); }
        std::uint32_t num_lps() const noexcept { return static_cast<std::uint32_t>(lps_.size()); }
        const LogicalProcess &lp(LpId id) const { return lps_.at(id); }
        std::size_t active_entity_count() const noexcept;
        RunMetrics &metrics() noexcept { return metrics_; }
        const EngineConfig &config() const noexcept { return config_; }
        const DisseminationParams &params() const noexcept { return params_; }

        // Removes e from its owner's active set and marks it inactive.
        void freeze(EntityId e);

        // Gives e back to its owner with the supplied state (id must match).
        void restore(SimulatedEntity state);

    private:
        World &world_;
        std::vector<LogicalProcess> &lps_;
        std::vector<LpId> &owner_;
        std::vector<Vec2> &positions_;
        RunMetrics &metrics_;
        const EngineConfig &config_;
        const DisseminationParams &params_;
    };

    // Cross-level coordination plugged into the barrier.
    class CoarseStepHooks
    {
    public:
        virtual ~CoarseStepHooks() = default;

        // Runs once per coarse step after every LP has announced EOS(t) and all
        // envelopes for t+1 are routed.
        virtual void on_barrier(Timestep t, EngineContext &ctx) = 0;

        // Number of entities currently handed over to Level 1.
        virtual std::size_t entities_in_transfer() const = 0;
    };

    class SimulationAborted : public std::runtime_error
    {
    public:
        SimulationAborted(const std::string &what, RunMetrics partial, std::exception_ptr cause);
        RunMetrics partial;
        std::exception_ptr cause;
    };

    struct TerritoryModel
    {
        DisseminationParams params;
        World world;
    };

    // Runs total_timesteps lock-step coarse steps over num_lps LP threads (one
    // thread total when num_lps == 1). The model's world is updated in place.
    RunMetrics run_simulation(const EngineConfig &config, TerritoryModel &model, CoarseStepHooks *hybrid = nullptr,
                              const ModelHooks &hooks = {});
}
