#include "hybridsim/metrics.hpp"

#include <charconv>
#include <sstream>

namespace hybridsim
{
    void MessageCounters::count(FilterReason r) noexcept
    {
        ++delivered;
        switch (r)
        {
        case FilterReason::Relayed:
            ++relayed;
            break;
        case FilterReason::Cache:
            ++cache_filtered;
            break;
        case FilterReason::Ttl:
            ++ttl_filtered;
            break;
        case FilterReason::Geofilter:
            ++geofiltered;
            break;
        case FilterReason::Ring:
            ++ring_filtered;
            break;
        case FilterReason::Budget:
            ++budget_filtered;
            break;
        case FilterReason::Gossip:
            ++gossip_declined;
            break;
        }
    }

    MessageCounters &MessageCounters::operator+=(const MessageCounters &o) noexcept
    {
        generated += o.generated;
        delivered += o.delivered;
        relayed += o.relayed;
        cache_filtered += o.cache_filtered;
        ttl_filtered += o.ttl_filtered;
        geofiltered += o.geofiltered;
        ring_filtered += o.ring_filtered;
        budget_filtered += o.budget_filtered;
        gossip_declined += o.gossip_declined;
        frozen_drops += o.frozen_drops;
        reach_total += o.reach_total;
        return *this;
    }

    std::vector<std::pair<std::string_view, std::uint64_t>> MessageCounters::fields() const
    {
        const std::uint64_t values[] = {generated,     delivered,       relayed,         cache_filtered,
                                        ttl_filtered,  geofiltered,     ring_filtered,   budget_filtered,
                                        gossip_declined, frozen_drops,  reach_total};
        std::vector<std::pair<std::string_view, std::uint64_t>> out;
        out.reserve(message_counter_names.size());
        for (std::size_t i = 0; i < message_counter_names.size(); ++i)
        {
            out.emplace_back(message_counter_names[i], values[i]);
        }
        return out;
    }

    std::string RunMetrics::accounting_error() const
    {
        const auto &c = totals;
        if (c.delivered != c.relayed + c.non_relayed_drops())
        {
            return "delivered != relayed + per-reason drops";
        }
        if (c.reach_total != c.delivered + c.frozen_drops + in_flight_at_end)
        {
            return "reach_total != delivered + frozen_drops + in_flight_at_end";
        }
        MessageCounters sum;
        for (const auto &s : per_step)
        {
            sum += s;
        }
        if (!per_step.empty() && !(sum == totals))
        {
            return "per-step counters do not sum to totals";
        }
        return {};
    }

    std::string RunMetrics::deterministic_digest() const
    {
        std::ostringstream os;
        os << "seed=" << seed << " entities=" << num_entities << " steps=" << steps_completed
           << " in_flight=" << in_flight_at_end << '\n';
        auto dump = [&os](const MessageCounters &c) {
            for (const auto &[k, v] : c.fields())
            {
                os << k << '=' << v << ' ';
            }
            os << '\n';
        };
        dump(totals);
        for (const auto &s : per_step)
        {
            dump(s);
        }
        char buf[64];
        auto r = std::to_chars(buf, buf + sizeof buf, level1.emissions);
        os << "l1 spawns=" << level1.spawns << " completed=" << level1.completed << " failures=" << level1.failures
           << " transferred=" << level1.entities_transferred << " status=" << level1.status_exchanges
           << " emissions=" << std::string_view(buf, static_cast<std::size_t>(r.ptr - buf))
           << " customers=" << level1.customers << " market_messages=" << level1.market_messages
           << " routes=" << level1.route_discoveries << " arrived=" << level1.pedestrians_arrived << '\n';
        // num_lps and config_echo are left out so runs that differ only in
        // partitioning produce the same digest.
        return os.str();
    }
}
