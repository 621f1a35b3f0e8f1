#include "hybridsim/level1.hpp"

#include <algorithm>
#include <stdexcept>

namespace hybridsim
{
    namespace
    {
        ControlMessage read_record(LineChannel &ch, std::chrono::milliseconds timeout)
        {
            std::optional<std::string> line = ch.read_line(timeout);
            if (!line)
            {
                throw ProtocolError("peer closed the connection");
            }
            return ControlMessage::decode(*line);
        }

        void expect(const ControlMessage &m, ControlKind kind, Timestep step)
        {
            if (m.kind() != kind)
            {
                throw ProtocolError("expected " + std::string(to_string(kind)) + ", got " +
                                    std::string(to_string(m.kind())));
            }
            if (m.step() != step)
            {
                throw ProtocolError(std::string(to_string(kind)) + " for step " + std::to_string(m.step()) +
                                    ", expected step " + std::to_string(step));
            }
        }

        std::uint32_t get_u32(const ControlMessage &m, std::string_view key)
        {
            const std::uint64_t v = m.get_uint(key);
            if (v > 0xFFFFFFFFULL)
            {
                throw ProtocolError(std::string(key) + " out of range");
            }
            return static_cast<std::uint32_t>(v);
        }

        int get_small_int(const ControlMessage &m, std::string_view key)
        {
            const std::int64_t v = m.get_int(key);
            if (v < -(1LL << 30) || v > (1LL << 30))
            {
                throw ProtocolError(std::string(key) + " out of range");
            }
            return static_cast<int>(v);
        }

        template <typename F>
        void rethrow_as_protocol(F &&fn)
        {
            try
            {
                fn();
            }
            catch (const std::invalid_argument &ex)
            {
                throw ProtocolError(ex.what());
            }
        }
    }

    void TimestepAlignment::validate() const
    {
        if (fine_substeps < 1)
        {
            throw std::invalid_argument("fine_substeps must be >= 1");
        }
        if (!(coarse_dt > 0.0))
        {
            throw std::invalid_argument("coarse_dt must be > 0");
        }
    }

    ControlMessage WrapperInit::encode() const
    {
        ControlMessage m(ControlKind::Init, step);
        m.set("wrapper", wrapper_id);
        m.set("entities", entity_count);
        m.set_double("side", world_side);
        m.set_double("coarse_dt", alignment.coarse_dt);
        m.set("substeps", alignment.fine_substeps);
        m.set_double("fine_dt", alignment.fine_dt());
        m.set("market_rows", market.grid_rows);
        m.set("market_cols", market.grid_cols);
        m.set_double("market_spacing", market.spacing);
        m.set_double("radio_range", market.radio_range);
        m.set_double("walking_speed", market.walking_speed);
        m.set("hop_limit", market.hop_limit);
        m.set("max_backoff", market.max_backoff);
        m.set("parking_capacity", transport.parking_capacity);
        m.set_double("cruise_time", transport.cruise_time);
        m.set_double("mean_search_time", transport.mean_search_time);
        m.set_double("idle_time", transport.idle_time);
        m.set_double("cruise_rate", transport.cruise_rate);
        m.set_double("search_rate", transport.search_rate);
        m.set_double("idle_rate", transport.idle_rate);
        m.set("l1a_seed", transport.seed);
        if (transport_command)
        {
            m.set("l1a_command", *transport_command);
        }
        return m;
    }

    WrapperInit WrapperInit::decode(const ControlMessage &m)
    {
        if (m.kind() != ControlKind::Init)
        {
            throw ProtocolError("expected INIT, got " + std::string(to_string(m.kind())));
        }
        WrapperInit w;
        w.step = m.step();
        w.wrapper_id = get_u32(m, "wrapper");
        w.entity_count = m.get_uint("entities");
        w.world_side = m.get_double("side");
        w.alignment.coarse_dt = m.get_double("coarse_dt");
        w.alignment.fine_substeps = get_small_int(m, "substeps");
        w.market.grid_rows = get_u32(m, "market_rows");
        w.market.grid_cols = get_u32(m, "market_cols");
        w.market.spacing = m.get_double("market_spacing");
        w.market.radio_range = m.get_double("radio_range");
        w.market.walking_speed = m.get_double("walking_speed");
        w.market.hop_limit = get_small_int(m, "hop_limit");
        w.market.max_backoff = get_small_int(m, "max_backoff");
        w.transport.n_vehicles = w.entity_count;
        w.transport.parking_capacity = m.get_uint("parking_capacity");
        w.transport.cruise_time = m.get_double("cruise_time");
        w.transport.mean_search_time = m.get_double("mean_search_time");
        w.transport.idle_time = m.get_double("idle_time");
        w.transport.cruise_rate = m.get_double("cruise_rate");
        w.transport.search_rate = m.get_double("search_rate");
        w.transport.idle_rate = m.get_double("idle_rate");
        w.transport.seed = m.get_uint("l1a_seed");
        if (m.has("l1a_command"))
        {
            w.transport_command = m.get("l1a_command");
        }
        if (!(w.world_side > 0.0))
        {
            throw ProtocolError("INIT side must be > 0");
        }
        rethrow_as_protocol([&] {
            w.alignment.validate();
            w.market.validate();
            w.transport.validate();
        });
        return w;
    }

    std::string_view to_string(Level1Phase p) noexcept
    {
        return p == Level1Phase::Transport ? "l1a" : "l1b";
    }

    ControlMessage WrapperStatus::encode() const
    {
        ControlMessage m(ControlKind::Status, step);
        m.set("wrapper", wrapper_id);
        m.set("phase", std::string(to_string(phase)));
        m.set("fine_steps", fine_steps);
        m.set_double("emissions", emissions);
        m.set("customers", customers);
        m.set("querying", querying);
        m.set("walking", walking);
        m.set("arrived", arrived);
        m.set("messages", messages_sent);
        m.set("discoveries", route_discoveries);
        m.set("unreachable", unreachable);
        return m;
    }

    WrapperStatus WrapperStatus::decode(const ControlMessage &m)
    {
        if (m.kind() != ControlKind::Status)
        {
            throw ProtocolError("expected STATUS, got " + std::string(to_string(m.kind())));
        }
        WrapperStatus s;
        s.step = m.step();
        s.wrapper_id = get_u32(m, "wrapper");
        const std::string &phase = m.get("phase");
        if (phase == "l1a")
        {
            s.phase = Level1Phase::Transport;
        }
        else if (phase == "l1b")
        {
            s.phase = Level1Phase::Market;
        }
        else
        {
            throw ProtocolError("STATUS phase must be l1a or l1b, got '" + phase + "'");
        }
        s.fine_steps = m.get_uint("fine_steps");
        s.emissions = m.get_double("emissions");
        s.customers = m.get_uint("customers");
        s.querying = m.get_uint("querying");
        s.walking = m.get_uint("walking");
        s.arrived = m.get_uint("arrived");
        s.messages_sent = m.get_uint("messages");
        s.route_discoveries = m.get_uint("discoveries");
        s.unreachable = m.get_uint("unreachable");
        return s;
    }

    ControlMessage WrapperResult::encode() const
    {
        ControlMessage m(ControlKind::Result, step);
        m.set("wrapper", wrapper_id);
        m.set("entities", entities);
        m.set("fine_steps", fine_steps);
        m.set_double("emissions", emissions);
        m.set("customers", customers);
        m.set("arrived", arrived);
        m.set("messages", messages_sent);
        m.set("discoveries", route_discoveries);
        m.set("unreachable", unreachable);
        m.set("hop_floor", hop_floor);
        return m;
    }

    WrapperResult WrapperResult::decode(const ControlMessage &m)
    {
        if (m.kind() != ControlKind::Result)
        {
            throw ProtocolError("expected RESULT, got " + std::string(to_string(m.kind())));
        }
        WrapperResult r;
        r.step = m.step();
        r.wrapper_id = get_u32(m, "wrapper");
        r.entities = m.get_uint("entities");
        r.fine_steps = m.get_uint("fine_steps");
        r.emissions = m.get_double("emissions");
        r.customers = m.get_uint("customers");
        r.arrived = m.get_uint("arrived");
        r.messages_sent = m.get_uint("messages");
        r.route_discoveries = m.get_uint("discoveries");
        r.unreachable = m.get_uint("unreachable");
        r.hop_floor = m.get_uint("hop_floor");
        return r;
    }

    Level1Session::Level1Session(WrapperInit init, std::vector<SimulatedEntity> entities)
        : init_(std::move(init)), entities_(std::move(entities)), market_(init_.market), step_(init_.step)
    {
        init_.alignment.validate();
        if (entities_.size() != init_.entity_count)
        {
            throw ProtocolError("INIT announced " + std::to_string(init_.entity_count) + " entities, got " +
                                std::to_string(entities_.size()));
        }
        std::sort(entities_.begin(), entities_.end(), [](const auto &a, const auto &b) { return a.id < b.id; });
        for (std::size_t i = 1; i < entities_.size(); ++i)
        {
            if (entities_[i].id == entities_[i - 1].id)
            {
                throw ProtocolError("duplicate ENTITY id " + std::to_string(entities_[i].id));
            }
        }
        for (const auto &e : entities_)
        {
            entry_cursors_.push_back(e.rng.cursor());
        }
        init_.transport.n_vehicles = entities_.size();
    }

    WrapperStatus Level1Session::advance()
    {
        const int substeps = init_.alignment.fine_substeps;
        WrapperStatus s;
        if (coarse_steps_ == 0)
        {
            transport_ = init_.transport_command ? ExternalTransportCommand(*init_.transport_command).run(init_.transport)
                                                 : simulate_arrivals(init_.transport);
            s.phase = Level1Phase::Transport;
        }
        else
        {
            if (coarse_steps_ == 1)
            {
                // Customers are the lowest-id transferred entities.
                injected_ = static_cast<std::size_t>(transport_.customers_entering);
                std::vector<MarketCustomer> customers;
                for (std::size_t i = 0; i < injected_; ++i)
                {
                    customers.push_back({entities_[i].id, entities_[i].rng});
                }
                market_.inject(customers);
                for (std::size_t i = 0; i < injected_; ++i)
                {
                    entities_[i].rng = customers[i].rng;
                }
            }
            market_.advance_coarse_step(substeps);
            s.phase = Level1Phase::Market;
            ++step_;
        }
        ++coarse_steps_;
        fine_clock_ += static_cast<std::uint64_t>(substeps);

        const MarketStatus ms = market_.status();
        s.step = step_;
        s.wrapper_id = init_.wrapper_id;
        s.fine_steps = fine_clock_;
        s.emissions = transport_.total_emissions;
        s.customers = transport_.customers_entering;
        s.querying = ms.querying;
        s.walking = ms.walking;
        s.arrived = ms.arrived;
        s.messages_sent = ms.counters.messages_sent;
        s.route_discoveries = ms.counters.route_discoveries;
        s.unreachable = ms.counters.unreachable;
        return s;
    }

    WrapperResult Level1Session::result() const
    {
        const MarketStatus ms = market_.status();
        WrapperResult r;
        r.step = step_;
        r.wrapper_id = init_.wrapper_id;
        r.entities = entities_.size();
        r.fine_steps = fine_clock_;
        r.emissions = transport_.total_emissions;
        r.customers = transport_.customers_entering;
        r.arrived = ms.arrived;
        r.messages_sent = ms.counters.messages_sent;
        r.route_discoveries = ms.counters.route_discoveries;
        r.unreachable = ms.counters.unreachable;
        r.hop_floor = ms.counters.hop_floor;
        return r;
    }

    std::vector<std::pair<SimulatedEntity, std::uint64_t>> Level1Session::returned_entities() const
    {
        std::vector<std::pair<SimulatedEntity, std::uint64_t>> out;
        const auto &peds = market_.scene().pedestrians();
        for (std::size_t i = 0; i < entities_.size(); ++i)
        {
            SimulatedEntity e = entities_[i];
            if (i < injected_ && i < peds.size())
            {
                const PedestrianNode &p = peds[i];
                const Vec2 moved{e.position.x + (p.position.x - p.injected_at.x),
                                 e.position.y + (p.position.y - p.injected_at.y)};
                e.position = wrap_position(moved, init_.world_side);
            }
            const std::uint64_t draws = e.rng.cursor() - entry_cursors_[i];
            out.emplace_back(std::move(e), draws);
        }
        return out;
    }

    void serve_wrapper_connection(LineChannel &channel, std::chrono::milliseconds timeout)
    {
        const ControlMessage first = read_record(channel, timeout);
        const WrapperInit init = WrapperInit::decode(first);
        std::vector<SimulatedEntity> entities;
        for (std::uint64_t i = 0; i < init.entity_count; ++i)
        {
            const ControlMessage m = read_record(channel, timeout);
            expect(m, ControlKind::Entity, init.step);
            entities.push_back(decode_entity(m));
        }
        Level1Session session(init, std::move(entities));
        ControlMessage ready(ControlKind::Ready, init.step);
        ready.set("wrapper", init.wrapper_id);
        ready.set("entities", init.entity_count);
        channel.send_line(ready.encode());

        for (;;)
        {
            const WrapperStatus st = session.advance();
            channel.send_line(st.encode().encode());
            const ControlMessage reply = read_record(channel, timeout);
            if (reply.step() != st.step)
            {
                throw ProtocolError("reply for step " + std::to_string(reply.step()) + ", expected " +
                                    std::to_string(st.step));
            }
            if (reply.kind() == ControlKind::End)
            {
                break;
            }
            if (reply.kind() != ControlKind::Continue)
            {
                throw ProtocolError("expected CONTINUE or END, got " + std::string(to_string(reply.kind())));
            }
        }
        const WrapperResult r = session.result();
        channel.send_line(r.encode().encode());
        for (const auto &[e, draws] : session.returned_entities())
        {
            channel.send_line(encode_entity(e, r.step, draws).encode());
        }
        ControlMessage bye(ControlKind::Bye, r.step);
        bye.set("wrapper", init.wrapper_id);
        channel.send_line(bye.encode());
        channel.close();
    }

    WrapperServer::WrapperServer(const Endpoint &listen, std::chrono::milliseconds io_timeout)
        : listener_(listen), io_timeout_(io_timeout), acceptor_([this] { accept_loop(); })
    {
    }

    WrapperServer::~WrapperServer()
    {
        stop();
    }

    void WrapperServer::stop()
    {
        stopping_ = true;
        if (acceptor_.joinable())
        {
            acceptor_.join();
        }
        listener_.shutdown();
        std::vector<std::thread> sessions;
        {
            std::lock_guard lk(mutex_);
            sessions.swap(sessions_);
        }
        for (auto &t : sessions)
        {
            t.join();
        }
    }

    std::vector<std::string> WrapperServer::session_errors() const
    {
        std::lock_guard lk(mutex_);
        return errors_;
    }

    void WrapperServer::accept_loop()
    {
        while (!stopping_)
        {
            std::optional<LineChannel> ch = listener_.accept(std::chrono::milliseconds(50));
            if (!ch)
            {
                continue;
            }
            std::lock_guard lk(mutex_);
            sessions_.emplace_back([this, c = std::move(*ch)]() mutable {
                try
                {
                    serve_wrapper_connection(c, io_timeout_);
                    ++completed_;
                }
                catch (const std::exception &ex)
                {
                    std::lock_guard elk(mutex_);
                    errors_.push_back(ex.what());
                }
            });
        }
    }
}
