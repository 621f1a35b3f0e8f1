#include "hybridsim/config.hpp"

#include "hybridsim/wire.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

namespace hybridsim
{
    namespace
    {
        constexpr double inf = std::numeric_limits<double>::infinity();

        std::string_view trim(std::string_view s)
        {
            while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
            {
                s.remove_prefix(1);
            }
            while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
            {
                s.remove_suffix(1);
            }
            return s;
        }

        std::vector<std::string_view> split(std::string_view s, char sep)
        {
            std::vector<std::string_view> out;
            std::size_t pos = 0;
            for (;;)
            {
                const std::size_t next = s.find(sep, pos);
                out.push_back(trim(s.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos)));
                if (next == std::string_view::npos)
                {
                    return out;
                }
                pos = next + 1;
            }
        }

        [[noreturn]] void out_of_range(std::string_view key, std::string_view value, std::string_view range)
        {
            throw ConfigError("key '" + std::string(key) + "': value '" + std::string(value) +
                              "' outside accepted range " + std::string(range));
        }

        std::int64_t to_int(std::string_view key, std::string_view value, std::int64_t lo, std::int64_t hi,
                            std::string_view range)
        {
            std::int64_t v = 0;
            const auto r = std::from_chars(value.data(), value.data() + value.size(), v);
            if (r.ec != std::errc{} || r.ptr != value.data() + value.size() || v < lo || v > hi)
            {
                out_of_range(key, value, range);
            }
            return v;
        }

        std::uint64_t to_uint64(std::string_view key, std::string_view value, std::string_view range)
        {
            std::uint64_t v = 0;
            const auto r = std::from_chars(value.data(), value.data() + value.size(), v);
            if (value.empty() || value.front() == '-' || r.ec != std::errc{} || r.ptr != value.data() + value.size())
            {
                out_of_range(key, value, range);
            }
            return v;
        }

        // lo_open / hi_open select exclusive bounds.
        double to_double(std::string_view key, std::string_view value, double lo, double hi, bool lo_open,
                         bool hi_open, std::string_view range)
        {
            double v = 0.0;
            if (value == "inf")
            {
                v = inf;
            }
            else
            {
                const auto r = std::from_chars(value.data(), value.data() + value.size(), v);
                if (r.ec != std::errc{} || r.ptr != value.data() + value.size() || std::isnan(v))
                {
                    out_of_range(key, value, range);
                }
            }
            if ((lo_open ? v <= lo : v < lo) || (hi_open ? v >= hi : v > hi))
            {
                out_of_range(key, value, range);
            }
            return v;
        }

        bool to_bool(std::string_view key, std::string_view value)
        {
            if (value == "true" || value == "1" || value == "yes")
            {
                return true;
            }
            if (value == "false" || value == "0" || value == "no")
            {
                return false;
            }
            out_of_range(key, value, "{true, false}");
        }

        struct KeySpec
        {
            std::string_view name;
            std::string_view range;
            std::function<void(ParsedConfig &, std::string_view key, std::string_view value)> apply;
            std::function<std::string(const ParsedConfig &)> show;
        };

        std::string show_double(double v)
        {
            return std::isinf(v) ? "inf" : format_double(v);
        }

        template <typename T>
        std::string join(const std::vector<T> &xs, const std::function<std::string(const T &)> &f, char sep = ',')
        {
            std::string out;
            for (std::size_t i = 0; i < xs.size(); ++i)
            {
                if (i)
                {
                    out += sep;
                }
                out += f(xs[i]);
            }
            return out;
        }

#define HS_INT(NAME, LO, HI, RANGE, FIELD)                                                                    \
    KeySpec                                                                                                   \
    {                                                                                                         \
        NAME, RANGE, [](ParsedConfig &c, std::string_view k, std::string_view v) {                           \
            c.FIELD = static_cast<std::remove_reference_t<decltype(c.FIELD)>>(to_int(k, v, LO, HI, RANGE)); \
        },                                                                                                    \
            [](const ParsedConfig &c) { return std::to_string(c.FIELD); }                                     \
    }
#define HS_DBL(NAME, LO, HI, LO_OPEN, HI_OPEN, RANGE, FIELD)                                                  \
    KeySpec                                                                                                   \
    {                                                                                                         \
        NAME, RANGE, [](ParsedConfig &c, std::string_view k, std::string_view v) {                           \
            c.FIELD = to_double(k, v, LO, HI, LO_OPEN, HI_OPEN, RANGE);                                       \
        },                                                                                                    \
            [](const ParsedConfig &c) { return show_double(c.FIELD); }                                        \
    }

        const std::vector<KeySpec> &key_table()
        {
            static const std::vector<KeySpec> table = {
                HS_INT("entities", 1, 100000000, "[1, 100000000]", sim.num_entities),
                HS_INT("lps", 1, 1024, "[1, 1024]", sim.engine.num_lps),
                HS_INT("steps", 1, 1000000000, "[1, 1000000000]", sim.engine.total_timesteps),
                {"seed", "[0, 18446744073709551615]",
                 [](ParsedConfig &c, std::string_view k, std::string_view v) {
                     c.sim.engine.master_seed = to_uint64(k, v, "[0, 18446744073709551615]");
                 },
                 [](const ParsedConfig &c) { return std::to_string(c.sim.engine.master_seed); }},
                HS_DBL("timestep_duration", 0.0, inf, true, true, "(0, inf)", sim.engine.timestep_duration),
                {"barrier_timeout_ms", "[1, 86400000]",
                 [](ParsedConfig &c, std::string_view k, std::string_view v) {
                     c.sim.engine.barrier_timeout = std::chrono::milliseconds(to_int(k, v, 1, 86400000, "[1, 86400000]"));
                 },
                 [](const ParsedConfig &c) { return std::to_string(c.sim.engine.barrier_timeout.count()); }},
                {"record_per_step", "{true, false}",
                 [](ParsedConfig &c, std::string_view k, std::string_view v) { c.sim.engine.record_per_step = to_bool(k, v); },
                 [](const ParsedConfig &c) { return std::string(c.sim.engine.record_per_step ? "true" : "false"); }},
                {"preset", "{good, bad}", [](ParsedConfig &, std::string_view, std::string_view) {},
                 [](const ParsedConfig &c) { return std::string(to_string(c.sim.preset)); }},

                HS_DBL("interaction_range", 0.0, inf, true, true, "(0, inf)", sim.params.interaction_range),
                HS_DBL("forwarding_threshold", 0.0, inf, true, true, "(0, interaction_range)",
                       sim.params.forwarding_threshold),
                HS_DBL("gossip_probability", 0.0, 1.0, false, false, "[0, 1]", sim.params.gossip_probability),
                HS_DBL("geofilter_distance", 0.0, inf, true, true, "(0, inf)", sim.params.geofilter_distance),
                HS_DBL("generation_probability", 0.0, 1.0, false, false, "[0, 1]", sim.params.generation_probability),
                HS_INT("ttl", 0, 1024, "[0, 1024]", sim.params.ttl),
                HS_INT("cache_capacity", 1, 1048576, "[1, 1048576]", sim.params.cache_capacity),
                HS_INT("max_relays_per_step", 0, 1048576, "[0, 1048576]", sim.params.max_relays_per_step),

                {"trigger", "{scripted, density}",
                 [](ParsedConfig &c, std::string_view k, std::string_view v) {
                     if (v == "scripted")
                         c.sim.hybrid.trigger.mode = TriggerPolicy::Mode::Scripted;
                     else if (v == "density")
                         c.sim.hybrid.trigger.mode = TriggerPolicy::Mode::Density;
                     else
                         out_of_range(k, v, "{scripted, density}");
                 },
                 [](const ParsedConfig &c) {
                     return std::string(c.sim.hybrid.trigger.mode == TriggerPolicy::Mode::Scripted ? "scripted"
                                                                                                   : "density");
                 }},
                {"spawn_at", "comma-separated steps in [0, steps), or none",
                 [](ParsedConfig &c, std::string_view, std::string_view v) { c.sim.hybrid.trigger.spawn_at = parse_schedule(v); },
                 [](const ParsedConfig &c) { return format_schedule(c.sim.hybrid.trigger.spawn_at); }},
                HS_INT("transfer_count", 1, 1000000, "[1, 1000000]", sim.hybrid.trigger.transfer_count),
                HS_DBL("trigger_radius", 0.0, inf, true, true, "(0, inf)", sim.hybrid.trigger.radius),
                HS_DBL("trigger_threshold", 1.0, inf, false, false, "[1, inf]", sim.hybrid.trigger.threshold),
                HS_INT("max_spawns", 0, 1000000000, "[0, 1000000000]", sim.hybrid.trigger.max_spawns),
                {"decision", "{fixed, until_idle}",
                 [](ParsedConfig &c, std::string_view k, std::string_view v) {
                     if (v == "fixed")
                         c.sim.hybrid.decision.mode = DecisionPolicy::Mode::FixedDuration;
                     else if (v == "until_idle")
                         c.sim.hybrid.decision.mode = DecisionPolicy::Mode::UntilIdle;
                     else
                         out_of_range(k, v, "{fixed, until_idle}");
                 },
                 [](const ParsedConfig &c) {
                     return std::string(c.sim.hybrid.decision.mode == DecisionPolicy::Mode::FixedDuration ? "fixed"
                                                                                                         : "until_idle");
                 }},
                HS_INT("decision_steps", 1, 1000000, "[1, 1000000]", sim.hybrid.decision.duration),
                HS_INT("decision_max_steps", 1, 1000000, "[1, 1000000]", sim.hybrid.decision.max_steps),
                HS_INT("substeps", 1, 100000, "[1, 100000]", sim.hybrid.alignment.fine_substeps),
                {"l1_endpoint", "host:port",
                 [](ParsedConfig &c, std::string_view k, std::string_view v) {
                     try
                     {
                         c.sim.hybrid.endpoint = Endpoint::parse(v);
                     }
                     catch (const std::invalid_argument &)
                     {
                         out_of_range(k, v, "host:port");
                     }
                 },
                 [](const ParsedConfig &c) {
                     return c.sim.hybrid.endpoint ? c.sim.hybrid.endpoint->to_string() : std::string("in-process");
                 }},
                {"wrapper_timeout_ms", "[1, 86400000]",
                 [](ParsedConfig &c, std::string_view k, std::string_view v) {
                     c.sim.hybrid.io_timeout = std::chrono::milliseconds(to_int(k, v, 1, 86400000, "[1, 86400000]"));
                 },
                 [](const ParsedConfig &c) { return std::to_string(c.sim.hybrid.io_timeout.count()); }},

                HS_INT("parking_capacity", 0, 1000000000, "[0, 1000000000]", sim.hybrid.level1.transport.parking_capacity),
                HS_DBL("cruise_time", 0.0, inf, false, true, "[0, inf)", sim.hybrid.level1.transport.cruise_time),
                HS_DBL("mean_search_time", 0.0, inf, false, true, "[0, inf)", sim.hybrid.level1.transport.mean_search_time),
                HS_DBL("idle_time", 0.0, inf, false, true, "[0, inf)", sim.hybrid.level1.transport.idle_time),
                HS_DBL("cruise_rate", 0.0, inf, false, true, "[0, inf)", sim.hybrid.level1.transport.cruise_rate),
                HS_DBL("search_rate", 0.0, inf, false, true, "[0, inf)", sim.hybrid.level1.transport.search_rate),
                HS_DBL("idle_rate", 0.0, inf, false, true, "[0, inf)", sim.hybrid.level1.transport.idle_rate),
                {"l1a_command", "shell command",
                 [](ParsedConfig &c, std::string_view, std::string_view v) {
                     c.sim.hybrid.level1.transport_command =
                         v.empty() ? std::nullopt : std::optional<std::string>(std::string(v));
                 },
                 [](const ParsedConfig &c) { return c.sim.hybrid.level1.transport_command.value_or(""); }},

                HS_INT("market_rows", 1, 1000, "[1, 1000]", sim.hybrid.level1.market.grid_rows),
                HS_INT("market_cols", 1, 1000, "[1, 1000]", sim.hybrid.level1.market.grid_cols),
                HS_DBL("market_spacing", 0.0, inf, true, true, "(0, inf)", sim.hybrid.level1.market.spacing),
                HS_DBL("radio_range", 0.0, inf, true, true, "(0, inf)", sim.hybrid.level1.market.radio_range),
                HS_DBL("walking_speed", 0.0, inf, true, true, "(0, inf)", sim.hybrid.level1.market.walking_speed),
                HS_INT("hop_limit", 1, 1000000, "[1, 1000000]", sim.hybrid.level1.market.hop_limit),
                HS_INT("max_backoff", 1, 1000000, "[1, 1000000]", sim.hybrid.level1.market.max_backoff),

                {"sweep_entities", "comma-separated integers in [1, 100000000]",
                 [](ParsedConfig &c, std::string_view k, std::string_view v) {
                     c.campaign.entity_counts.clear();
                     for (auto part : split(v, ','))
                         c.campaign.entity_counts.push_back(
                             static_cast<std::size_t>(to_int(k, part, 1, 100000000, "[1, 100000000]")));
                 },
                 [](const ParsedConfig &c) {
                     return join<std::size_t>(c.campaign.entity_counts, [](const std::size_t &x) { return std::to_string(x); });
                 }},
                {"sweep_lps", "comma-separated integers in [1, 1024]",
                 [](ParsedConfig &c, std::string_view k, std::string_view v) {
                     c.campaign.lp_counts.clear();
                     for (auto part : split(v, ','))
                         c.campaign.lp_counts.push_back(static_cast<std::uint32_t>(to_int(k, part, 1, 1024, "[1, 1024]")));
                 },
                 [](const ParsedConfig &c) {
                     return join<std::uint32_t>(c.campaign.lp_counts, [](const std::uint32_t &x) { return std::to_string(x); });
                 }},
                {"sweep_presets", "comma-separated presets from {good, bad}",
                 [](ParsedConfig &c, std::string_view k, std::string_view v) {
                     c.campaign.presets.clear();
                     for (auto part : split(v, ','))
                     {
                         try
                         {
                             c.campaign.presets.push_back(preset_from_string(part));
                         }
                         catch (const std::invalid_argument &)
                         {
                             out_of_range(k, part, "{good, bad}");
                         }
                     }
                 },
                 [](const ParsedConfig &c) {
                     return join<Preset>(c.campaign.presets, [](const Preset &p) { return std::string(to_string(p)); });
                 }},
                {"sweep_spawn_at", "';'-separated schedules, each comma-separated steps or none",
                 [](ParsedConfig &c, std::string_view, std::string_view v) {
                     c.campaign.spawn_schedules.clear();
                     for (auto part : split(v, ';'))
                         c.campaign.spawn_schedules.push_back(parse_schedule(part));
                 },
                 [](const ParsedConfig &c) {
                     return join<std::vector<Timestep>>(
                         c.campaign.spawn_schedules, [](const std::vector<Timestep> &s) { return format_schedule(s); }, ';');
                 }},
                HS_INT("repetitions", 1, 100000, "[1, 100000]", campaign.repetitions),
                {"base_seed", "[0, 18446744073709551615]",
                 [](ParsedConfig &c, std::string_view k, std::string_view v) {
                     c.campaign.base_seed = to_uint64(k, v, "[0, 18446744073709551615]");
                 },
                 [](const ParsedConfig &c) { return std::to_string(c.campaign.base_seed); }},
                {"fixed_seed", "{true, false}",
                 [](ParsedConfig &c, std::string_view k, std::string_view v) { c.campaign.fixed_seed = to_bool(k, v); },
                 [](const ParsedConfig &c) { return std::string(c.campaign.fixed_seed ? "true" : "false"); }},
                {"parallel_cells", "{true, false}",
                 [](ParsedConfig &c, std::string_view k, std::string_view v) { c.campaign.parallel_cells = to_bool(k, v); },
                 [](const ParsedConfig &c) { return std::string(c.campaign.parallel_cells ? "true" : "false"); }},
            };
            return table;
        }

#undef HS_INT
#undef HS_DBL

        const KeySpec *find_key(std::string_view name)
        {
            if (name == "ses")
            {
                name = "entities";
            }
            for (const auto &k : key_table())
            {
                if (k.name == name)
                {
                    return &k;
                }
            }
            return nullptr;
        }

        ConfigOverrides parse_lines(std::string_view text)
        {
            ConfigOverrides out;
            std::size_t pos = 0;
            int line_no = 0;
            while (pos <= text.size())
            {
                std::size_t nl = text.find('\n', pos);
                if (nl == std::string_view::npos)
                {
                    nl = text.size();
                }
                ++line_no;
                std::string_view line = text.substr(pos, nl - pos);
                pos = nl + 1;
                if (const std::size_t hash = line.find('#'); hash != std::string_view::npos)
                {
                    line = line.substr(0, hash);
                }
                line = trim(line);
                if (line.empty())
                {
                    continue;
                }
                const std::size_t eq = line.find('=');
                if (eq == std::string_view::npos)
                {
                    throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
                }
                out.emplace_back(std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))));
            }
            return out;
        }
    }

    std::string_view to_string(Preset p) noexcept
    {
        return p == Preset::Good ? "good" : "bad";
    }

    Preset preset_from_string(std::string_view s)
    {
        if (s == "good")
        {
            return Preset::Good;
        }
        if (s == "bad")
        {
            return Preset::Bad;
        }
        throw std::invalid_argument("unknown preset '" + std::string(s) + "', accepted {good, bad}");
    }

    DisseminationParams preset_params(Preset p)
    {
        return p == Preset::Good ? DisseminationParams::good_tuning() : DisseminationParams::bad_tuning();
    }

    bool SimulationConfig::hybrid_enabled() const noexcept
    {
        const auto &t = hybrid.trigger;
        return t.mode == TriggerPolicy::Mode::Scripted ? !t.spawn_at.empty() : std::isfinite(t.threshold);
    }

    void CampaignSpec::validate() const
    {
        if (repetitions < 1)
        {
            throw ConfigError("key 'repetitions': must be >= 1");
        }
        if (entity_counts.empty() || lp_counts.empty() || presets.empty() || spawn_schedules.empty())
        {
            throw ConfigError("campaign sweep axes must not be empty");
        }
    }

    std::vector<Timestep> parse_schedule(std::string_view text)
    {
        text = trim(text);
        std::vector<Timestep> out;
        if (text.empty() || text == "none")
        {
            return out;
        }
        for (auto part : split(text, ','))
        {
            out.push_back(to_int("spawn_at", part, 0, std::numeric_limits<std::int64_t>::max(), "[0, steps)"));
        }
        return out;
    }

    std::string format_schedule(const std::vector<Timestep> &schedule)
    {
        if (schedule.empty())
        {
            return "none";
        }
        return join<Timestep>(schedule, [](const Timestep &t) { return std::to_string(t); });
    }

    ParsedConfig parse_config(std::string_view file_text, const ConfigOverrides &overrides)
    {
        ConfigOverrides pairs = parse_lines(file_text);
        pairs.insert(pairs.end(), overrides.begin(), overrides.end());

        ParsedConfig c;
        bool base_seed_set = false;
        for (const auto &[k, v] : pairs)
        {
            const KeySpec *spec = find_key(k);
            if (!spec)
            {
                throw ConfigError("unknown key '" + k + "'");
            }
            if (spec->name == "preset")
            {
                try
                {
                    c.sim.preset = preset_from_string(v);
                }
                catch (const std::invalid_argument &)
                {
                    out_of_range(k, v, "{good, bad}");
                }
            }
            base_seed_set = base_seed_set || spec->name == "base_seed";
        }
        c.sim.params = preset_params(c.sim.preset);
        for (const auto &[k, v] : pairs)
        {
            find_key(k)->apply(c, k, v);
        }

        try
        {
            c.sim.params.validate();
        }
        catch (const std::invalid_argument &ex)
        {
            throw ConfigError(std::string("dissemination parameters: ") + ex.what());
        }
        try
        {
            c.sim.engine.validate();
            c.sim.hybrid.trigger.validate();
            c.sim.hybrid.decision.validate();
            c.sim.hybrid.alignment.validate();
            c.sim.hybrid.level1.market.validate();
            c.sim.hybrid.level1.transport.validate();
        }
        catch (const std::invalid_argument &ex)
        {
            throw ConfigError(ex.what());
        }
        for (Timestep t : c.sim.hybrid.trigger.spawn_at)
        {
            if (t >= c.sim.engine.total_timesteps)
            {
                out_of_range("spawn_at", std::to_string(t),
                             "[0, " + std::to_string(c.sim.engine.total_timesteps) + ")");
            }
        }

        if (!base_seed_set)
        {
            c.campaign.base_seed = c.sim.engine.master_seed;
        }
        if (c.campaign.entity_counts.empty())
        {
            c.campaign.entity_counts = {c.sim.num_entities};
        }
        if (c.campaign.lp_counts.empty())
        {
            c.campaign.lp_counts = {c.sim.engine.num_lps};
        }
        if (c.campaign.presets.empty())
        {
            c.campaign.presets = {c.sim.preset};
        }
        if (c.campaign.spawn_schedules.empty())
        {
            c.campaign.spawn_schedules = {c.sim.hybrid.trigger.spawn_at};
        }
        c.campaign.validate();

        for (const auto &k : key_table())
        {
            c.echo.emplace_back(std::string(k.name), k.show(c));
        }
        return c;
    }

    ParsedConfig load_config(const std::optional<std::filesystem::path> &file, const ConfigOverrides &overrides)
    {
        std::string text;
        if (file)
        {
            std::ifstream in(*file);
            if (!in)
            {
                throw ConfigError("cannot read config file '" + file->string() + "'");
            }
            std::ostringstream ss;
            ss << in.rdbuf();
            text = ss.str();
        }
        return parse_config(text, overrides);
    }

    std::string describe_config_keys()
    {
        const ParsedConfig defaults = parse_config("");
        std::string out;
        for (const auto &k : key_table())
        {
            out += std::string(k.name) + "  " + std::string(k.range) + "  default " + k.show(defaults) + "\n";
        }
        return out;
    }
}
