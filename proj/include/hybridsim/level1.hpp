#pragma once

#include "hybridsim/market.hpp"
#include "hybridsim/net.hpp"
#include "hybridsim/territory.hpp"
#include "hybridsim/transport.hpp"
#include "hybridsim/wire.hpp"

#include <atomic>
#include <chrono>
#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace hybridsim
{
    // Fine steps subdivide one coarse step: fine_dt = coarse_dt / fine_substeps.
    struct TimestepAlignment
    {
        double coarse_dt = 1.0;
        int fine_substeps = 3;

        double fine_dt() const noexcept { return coarse_dt / fine_substeps; }
        void validate() const;
    };

    // Everything a wrapper needs besides the entities, carried by INIT.
    struct WrapperInit
    {
        std::uint32_t wrapper_id = 0;
        Timestep step = 0;
        std::uint64_t entity_count = 0;
        double world_side = 0.0;
        TimestepAlignment alignment;
        MarketConfig market;
        TransportParams transport; // n_vehicles is the transferred cohort size
        std::optional<std::string> transport_command;

        ControlMessage encode() const;
        static WrapperInit decode(const ControlMessage &m);
    };

    enum class Level1Phase : std::uint8_t
    {
        Transport,
        Market,
    };

    std::string_view to_string(Level1Phase p) noexcept;

    // One composite STATUS record per coarse step.
    struct WrapperStatus
    {
        Timestep step = 0;
        std::uint32_t wrapper_id = 0;
        Level1Phase phase = Level1Phase::Transport;
        std::uint64_t fine_steps = 0; // wrapper fine clock, cumulative
        double emissions = 0.0;
        std::uint64_t customers = 0;
        std::uint64_t querying = 0;
        std::uint64_t walking = 0;
        std::uint64_t arrived = 0;
        std::uint64_t messages_sent = 0;
        std::uint64_t route_discoveries = 0;
        std::uint64_t unreachable = 0;

        ControlMessage encode() const;
        static WrapperStatus decode(const ControlMessage &m);
        friend bool operator==(const WrapperStatus &, const WrapperStatus &) = default;
    };

    struct WrapperResult
    {
        Timestep step = 0;
        std::uint32_t wrapper_id = 0;
        std::uint64_t entities = 0;
        std::uint64_t fine_steps = 0;
        double emissions = 0.0;
        std::uint64_t customers = 0;
        std::uint64_t arrived = 0;
        std::uint64_t messages_sent = 0;
        std::uint64_t route_discoveries = 0;
        std::uint64_t unreachable = 0;
        std::uint64_t hop_floor = 0;

        ControlMessage encode() const;
        static WrapperResult decode(const ControlMessage &m);
        friend bool operator==(const WrapperResult &, const WrapperResult &) = default;
    };

    // Level 1 side of one transfer: the transport model for the first coarse
    // step, then the market. Each coarse step advances the fine clock by
    // fine_substeps.
    class Level1Session
    {
    public:
        Level1Session(WrapperInit init, std::vector<SimulatedEntity> entities);

        WrapperStatus advance();
        WrapperResult result() const;
        // Entities in ascending id order with Level 1 state applied, paired
        // with the draws Level 1 took from each stream.
        std::vector<std::pair<SimulatedEntity, std::uint64_t>> returned_entities() const;

        const WrapperInit &init() const noexcept { return init_; }
        const MarketSimulation &market() const noexcept { return market_; }
        std::uint64_t coarse_steps() const noexcept { return coarse_steps_; }

    private:
        WrapperInit init_;
        std::vector<SimulatedEntity> entities_;
        std::vector<std::uint64_t> entry_cursors_;
        std::size_t injected_ = 0;
        MarketSimulation market_;
        TransportResult transport_;
        std::uint64_t coarse_steps_ = 0;
        std::uint64_t fine_clock_ = 0;
        Timestep step_ = 0;
    };

    // Serves one connection: INIT, ENTITY x n, READY, then STATUS per coarse
    // step until END, then RESULT, ENTITY x n, BYE. Throws ProtocolError or
    // ConnectionError on a broken peer.
    void serve_wrapper_connection(LineChannel &channel, std::chrono::milliseconds timeout);

    // Accepts wrapper connections, one session thread each.
    class WrapperServer
    {
    public:
        explicit WrapperServer(const Endpoint &listen = {"127.0.0.1", 0},
                               std::chrono::milliseconds io_timeout = std::chrono::milliseconds(30000));
        ~WrapperServer();
        WrapperServer(const WrapperServer &) = delete;
        WrapperServer &operator=(const WrapperServer &) = delete;

        Endpoint endpoint() const { return listener_.endpoint(); }
        void stop();
        std::uint64_t sessions_completed() const noexcept { return completed_.load(); }
        std::vector<std::string> session_errors() const;

    private:
        void accept_loop();

        TcpListener listener_;
        std::chrono::milliseconds io_timeout_;
        std::atomic<bool> stopping_{false};
        std::atomic<std::uint64_t> completed_{0};
        mutable std::mutex mutex_;
        std::vector<std::thread> sessions_;
        std::vector<std::string> errors_;
        std::thread acceptor_;
    };
}
