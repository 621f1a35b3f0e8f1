#include "hybridsim/transport.hpp"

#include "hybridsim/rng.hpp"
#include "hybridsim/wire.hpp"

#include <cerrno>
#include <cmath>
#include <cstring>
#include <functional>
#include <signal.h>
#include <stdexcept>
#include <sys/wait.h>
#include <unistd.h>

namespace hybridsim
{
    void TransportParams::validate() const
    {
        const double values[] = {cruise_time, mean_search_time, idle_time, cruise_rate, search_rate, idle_rate};
        for (double v : values)
        {
            if (!std::isfinite(v) || v < 0.0)
            {
                throw std::invalid_argument("transport parameters must be finite and nonnegative");
            }
        }
        if (!scripted_phases.empty() && scripted_phases.size() != n_vehicles)
        {
            throw std::invalid_argument("scripted_phases must list one entry per vehicle");
        }
        for (const auto &p : scripted_phases)
        {
            if (!(p.cruise >= 0.0 && p.search >= 0.0 && p.idle >= 0.0))
            {
                throw std::invalid_argument("scripted phase durations must be nonnegative");
            }
        }
    }

    double phase_emissions(const VehiclePhases &phases, const TransportParams &rates) noexcept
    {
        return phases.cruise * rates.cruise_rate + phases.search * rates.search_rate + phases.idle * rates.idle_rate;
    }

    TransportResult simulate_arrivals(const TransportParams &params)
    {
        params.validate();
        TransportResult r;
        double search_sum = 0.0;
        for (std::uint64_t i = 0; i < params.n_vehicles; ++i)
        {
            const bool parks = i < params.parking_capacity;
            VehiclePhases ph;
            if (!params.scripted_phases.empty())
            {
                ph = params.scripted_phases[i];
            }
            else
            {
                RngStream rng = RngStream::for_role(params.seed, "vehicle", i);
                const double occupancy =
                    params.parking_capacity == 0 ? 1.0
                                                 : static_cast<double>(std::min(i, params.parking_capacity)) /
                                                       static_cast<double>(params.parking_capacity);
                if (parks)
                {
                    // Search time grows with the share of bays already taken.
                    ph.search = params.mean_search_time * rng.uniform(0.5, 1.5) * (0.5 + occupancy);
                    ph.cruise = params.cruise_time;
                    ph.idle = params.idle_time;
                }
                else
                {
                    ph.search = 2.0 * params.mean_search_time;
                    ph.cruise = 2.0 * params.cruise_time;
                }
            }
            r.total_emissions += phase_emissions(ph, params);
            if (parks)
            {
                ++r.customers_entering;
                search_sum += ph.search;
            }
        }
        r.mean_parking_search = r.customers_entering ? search_sum / static_cast<double>(r.customers_entering) : 0.0;
        return r;
    }

    namespace
    {
        void for_each_kv(std::string_view text, const std::function<void(std::string_view, std::string_view)> &fn)
        {
            std::size_t pos = 0;
            while (pos < text.size())
            {
                std::size_t nl = text.find('\n', pos);
                if (nl == std::string_view::npos)
                {
                    nl = text.size();
                }
                std::string_view line = text.substr(pos, nl - pos);
                pos = nl + 1;
                if (!line.empty() && line.back() == '\r')
                {
                    line.remove_suffix(1);
                }
                if (line.empty() || line.front() == '#')
                {
                    continue;
                }
                const std::size_t eq = line.find('=');
                if (eq == std::string_view::npos)
                {
                    throw std::invalid_argument("expected key=value, got '" + std::string(line) + "'");
                }
                fn(line.substr(0, eq), line.substr(eq + 1));
            }
        }
    }

    std::string format_transport_params(const TransportParams &p)
    {
        std::string out;
        auto put = [&out](std::string_view k, const std::string &v) {
            out += k;
            out += '=';
            out += v;
            out += '\n';
        };
        put("n_vehicles", std::to_string(p.n_vehicles));
        put("parking_capacity", std::to_string(p.parking_capacity));
        put("cruise_time", format_double(p.cruise_time));
        put("mean_search_time", format_double(p.mean_search_time));
        put("idle_time", format_double(p.idle_time));
        put("cruise_rate", format_double(p.cruise_rate));
        put("search_rate", format_double(p.search_rate));
        put("idle_rate", format_double(p.idle_rate));
        put("seed", std::to_string(p.seed));
        return out;
    }

    TransportParams parse_transport_params(std::string_view text)
    {
        TransportParams p;
        for_each_kv(text, [&p](std::string_view k, std::string_view v) {
            if (k == "n_vehicles")
                p.n_vehicles = parse_uint(v);
            else if (k == "parking_capacity")
                p.parking_capacity = parse_uint(v);
            else if (k == "cruise_time")
                p.cruise_time = parse_double(v);
            else if (k == "mean_search_time")
                p.mean_search_time = parse_double(v);
            else if (k == "idle_time")
                p.idle_time = parse_double(v);
            else if (k == "cruise_rate")
                p.cruise_rate = parse_double(v);
            else if (k == "search_rate")
                p.search_rate = parse_double(v);
            else if (k == "idle_rate")
                p.idle_rate = parse_double(v);
            else if (k == "seed")
                p.seed = parse_uint(v);
            else
                throw std::invalid_argument("unknown transport parameter '" + std::string(k) + "'");
        });
        p.validate();
        return p;
    }

    std::string format_transport_result(const TransportResult &r)
    {
        return "total_emissions=" + format_double(r.total_emissions) + "\ncustomers_entering=" +
               std::to_string(r.customers_entering) + "\nmean_parking_search=" + format_double(r.mean_parking_search) +
               "\n";
    }

    TransportResult parse_transport_result(std::string_view text)
    {
        TransportResult r;
        bool emissions = false;
        bool customers = false;
        for_each_kv(text, [&](std::string_view k, std::string_view v) {
            if (k == "total_emissions")
            {
                r.total_emissions = parse_double(v);
                emissions = true;
            }
            else if (k == "customers_entering")
            {
                r.customers_entering = parse_uint(v);
                customers = true;
            }
            else if (k == "mean_parking_search")
            {
                r.mean_parking_search = parse_double(v);
            }
            else
            {
                throw std::invalid_argument("unknown transport result key '" + std::string(k) + "'");
            }
        });
        if (!emissions || !customers)
        {
            throw std::invalid_argument("transport result must carry total_emissions and customers_entering");
        }
        return r;
    }

    TransportResult ExternalTransportCommand::run(const TransportParams &params) const
    {
        params.validate();
        int in_pipe[2];
        int out_pipe[2];
        if (::pipe(in_pipe) != 0)
        {
            throw std::runtime_error(std::string("pipe: ") + std::strerror(errno));
        }
        if (::pipe(out_pipe) != 0)
        {
            ::close(in_pipe[0]);
            ::close(in_pipe[1]);
            throw std::runtime_error(std::string("pipe: ") + std::strerror(errno));
        }
        const pid_t pid = ::fork();
        if (pid < 0)
        {
            throw std::runtime_error(std::string("fork: ") + std::strerror(errno));
        }
        if (pid == 0)
        {
            ::dup2(in_pipe[0], STDIN_FILENO);
            ::dup2(out_pipe[1], STDOUT_FILENO);
            ::close(in_pipe[0]);
            ::close(in_pipe[1]);
            ::close(out_pipe[0]);
            ::close(out_pipe[1]);
            ::execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char *>(nullptr));
            ::_exit(127);
        }
        ::close(in_pipe[0]);
        ::close(out_pipe[1]);
        const std::string input = format_transport_params(params);
        // The child may exit without reading; ignore EPIPE rather than die on SIGPIPE.
        struct sigaction ignore{};
        struct sigaction previous{};
        ignore.sa_handler = SIG_IGN;
        ::sigaction(SIGPIPE, &ignore, &previous);
        std::size_t off = 0;
        while (off < input.size())
        {
            const ssize_t n = ::write(in_pipe[1], input.data() + off, input.size() - off);
            if (n <= 0)
            {
                if (n < 0 && errno == EINTR)
                {
                    continue;
                }
                break;
            }
            off += static_cast<std::size_t>(n);
        }
        ::close(in_pipe[1]);
        ::sigaction(SIGPIPE, &previous, nullptr);
        std::string output;
        char buf[4096];
        for (;;)
        {
            const ssize_t n = ::read(out_pipe[0], buf, sizeof buf);
            if (n < 0 && errno == EINTR)
            {
                continue;
            }
            if (n <= 0)
            {
                break;
            }
            output.append(buf, static_cast<std::size_t>(n));
        }
        ::close(out_pipe[0]);
        int status = 0;
        while (::waitpid(pid, &status, 0) < 0 && errno == EINTR)
        {
        }
        if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
        {
            throw std::runtime_error("external transport command failed: " + command_);
        }
        TransportResult r = parse_transport_result(output);
        if (r.customers_entering > std::min(params.n_vehicles, params.parking_capacity))
        {
            throw std::runtime_error("external transport command reported more customers than vehicles or bays");
        }
        return r;
    }
}
