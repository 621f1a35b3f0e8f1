#pragma once

#include "hybridsim/engine.hpp"
#include "hybridsim/level1.hpp"

#include <chrono>
#include <cstdint>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hybridsim
{
    // Snapshot taken at transfer; kept until RESULT validates so a failed
    // wrapper can be rolled back.
    struct LevelTransferRecord
    {
        EntityId entity_id = 0;
        SimulatedEntity snapshot;
        Timestep transferred_at = 0;
        LpId owner = 0;
    };

    enum class WrapperState : std::uint8_t
    {
        RunningL1a,
        RunningL1b,
        Done,
    };

    std::string_view to_string(WrapperState s) noexcept;

    struct Level1Config
    {
        MarketConfig market;
        TransportParams transport; // n_vehicles and seed are set per spawn
        std::optional<std::string> transport_command;
    };

    struct TriggerPolicy
    {
        enum class Mode : std::uint8_t
        {
            Scripted,
            Density,
        };

        Mode mode = Mode::Scripted;
        // Scripted: one spawn per entry; repeated entries spawn concurrently.
        std::vector<Timestep> spawn_at;
        std::size_t transfer_count = 4;
        // Density: fires when a circle of radius around some active entity
        // holds at least threshold active entities.
        double radius = 250.0;
        double threshold = std::numeric_limits<double>::infinity();
        std::size_t max_spawns = std::numeric_limits<std::size_t>::max();

        void validate() const;
    };

    struct TriggerRegion
    {
        Vec2 center;
        double radius = 0.0;
        std::vector<EntityId> members;  // active entities inside, ascending id
        std::vector<EntityId> selected; // the transfer_count members nearest center, ascending id
    };

    // Evaluated once per coarse step. spawn_index counts spawns already made,
    // which fixes the scripted center stream and the max_spawns cap.
    std::optional<TriggerRegion> check_trigger(const World &world, std::span<const Vec2> positions, Timestep t,
                                               const TriggerPolicy &policy, std::uint64_t master_seed,
                                               std::size_t spawn_index);

    struct DecisionPolicy
    {
        enum class Mode : std::uint8_t
        {
            FixedDuration,
            UntilIdle,
        };

        Mode mode = Mode::FixedDuration;
        std::uint64_t duration = 3;
        // UntilIdle ends after this many STATUS records regardless.
        std::uint64_t max_steps = 200;

        void validate() const;
        // status_index is 1 for the first STATUS of a wrapper.
        bool should_end(const WrapperStatus &status, std::uint64_t status_index) const;
    };

    class TransferError : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };

    struct WrapperHandle
    {
        std::uint32_t wrapper_id = 0;
        Endpoint endpoint;
        Timestep spawned_at = 0;
        WrapperState state = WrapperState::RunningL1a;
        LineChannel channel;
        std::vector<LevelTransferRecord> records; // ascending entity id
        std::uint64_t status_pairs = 0;
        bool end_sent = false;
        std::optional<WrapperStatus> last_status;
        std::chrono::milliseconds io_timeout{30000};
        // Every line on the wire, prefixed "> " (sent by Level 0) or "< ".
        std::shared_ptr<std::vector<std::string>> transcript;
    };

    struct SpawnOptions
    {
        std::uint32_t wrapper_id = 0;
        Endpoint endpoint;
        std::chrono::milliseconds io_timeout{30000};
        bool record_transcript = true;
        std::uint64_t l1a_seed = 1;
    };

    // Snapshots the given active entities without freezing them.
    std::vector<LevelTransferRecord> make_transfer_records(const EngineContext &ctx, std::span<const EntityId> ids,
                                                           Timestep t);

    // Freezes the entities, connects, sends INIT and ENTITY records and waits
    // for READY. On failure the entities are restored and TransferError thrown.
    WrapperHandle spawn_level1(EngineContext &ctx, std::vector<LevelTransferRecord> records,
                               const TimestepAlignment &align, const Level1Config &config, const SpawnOptions &options);

    // Receives exactly one STATUS for step t and answers CONTINUE or END.
    // Throws ProtocolError or ConnectionError; does not touch Level 0 state.
    WrapperStatus coordinate_step(WrapperHandle &handle, Timestep t, const DecisionPolicy &policy,
                                  bool force_end = false);

    // After END: reads RESULT, ENTITY x n and BYE, verifies the returned set and
    // rng cursors, restores the entities and merges Level 1 metrics.
    WrapperResult reintegrate(EngineContext &ctx, WrapperHandle &handle);

    // Restores every transferred entity from its snapshot and closes the handle.
    void abort_transfer(EngineContext &ctx, WrapperHandle &handle);

    struct HybridConfig
    {
        TriggerPolicy trigger;
        DecisionPolicy decision;
        TimestepAlignment alignment;
        Level1Config level1;
        // nullopt: HYBRIDSIM_L1_ENDPOINT if set, else an in-process server.
        std::optional<Endpoint> endpoint;
        std::chrono::milliseconds io_timeout{30000};
        bool record_transcripts = true;
    };

    struct WrapperTranscript
    {
        std::uint32_t wrapper_id = 0;
        Timestep spawned_at = 0;
        std::vector<std::string> lines;
    };

    struct BarrierTrace
    {
        Timestep step = 0;
        std::size_t wrappers_active = 0;
        std::size_t statuses_processed = 0;
        std::size_t entities_in_transfer = 0;
    };

    class HybridCoordinator : public CoarseStepHooks
    {
    public:
        HybridCoordinator(HybridConfig config, std::uint64_t master_seed);
        ~HybridCoordinator() override;

        void on_barrier(Timestep t, EngineContext &ctx) override;
        std::size_t entities_in_transfer() const override;

        Endpoint endpoint() const { return endpoint_; }
        const std::vector<WrapperTranscript> &transcripts() const noexcept { return transcripts_; }
        const std::vector<BarrierTrace> &barrier_trace() const noexcept { return trace_; }
        const std::vector<std::string> &errors() const noexcept { return errors_; }

    private:
        void finish(WrapperHandle &h);

        HybridConfig config_;
        std::uint64_t master_seed_;
        std::unique_ptr<WrapperServer> server_;
        Endpoint endpoint_;
        std::vector<WrapperHandle> active_;
        std::size_t spawn_attempts_ = 0;
        std::vector<WrapperTranscript> transcripts_;
        std::vector<BarrierTrace> trace_;
        std::vector<std::string> errors_;
    };

    // Endpoint for Level 1 wrappers from HYBRIDSIM_L1_ENDPOINT, if set.
    std::optional<Endpoint> level1_endpoint_from_env();
}
