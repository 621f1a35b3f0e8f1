#include "hybridsim/campaign.hpp"

#include "hybridsim/wire.hpp"

#include <cmath>
#include <fstream>
#include <future>
#include <map>
#include <system_error>

namespace hybridsim
{
    namespace
    {
        std::string csv_field(const std::string &s)
        {
            if (s.find_first_of(",\"\n") == std::string::npos)
            {
                return s;
            }
            std::string out = "\"";
            for (char c : s)
            {
                if (c == '"')
                {
                    out += '"';
                }
                out += c == '\n' ? ' ' : c;
            }
            out += '"';
            return out;
        }

        std::string num(double v)
        {
            return format_double(v);
        }

        bool same_axes_except_lps(const CampaignCell &a, const CampaignCell &b)
        {
            return a.entities == b.entities && a.preset == b.preset && a.spawn_at == b.spawn_at;
        }

        void write_file(const std::filesystem::path &p, const std::string &content)
        {
            std::ofstream out(p, std::ios::binary | std::ios::trunc);
            if (!out)
            {
                throw std::runtime_error("cannot write '" + p.string() + "'");
            }
            out << content;
            if (!out)
            {
                throw std::runtime_error("write to '" + p.string() + "' failed");
            }
        }

        std::string cell_prefix(const CampaignCell &c)
        {
            return csv_field(c.label()) + "," + std::to_string(c.entities) + "," + std::to_string(c.lps) + "," +
                   std::string(to_string(c.preset)) + "," + csv_field(format_schedule(c.spawn_at));
        }
    }

    std::string CampaignCell::label() const
    {
        std::string s = "e" + std::to_string(entities) + "_lp" + std::to_string(lps) + "_" +
                        std::string(to_string(preset));
        if (!spawn_at.empty())
        {
            s += "_s";
            for (std::size_t i = 0; i < spawn_at.size(); ++i)
            {
                s += (i ? "+" : "") + std::to_string(spawn_at[i]);
            }
        }
        return s;
    }

    SingleRun run_single(const SimulationConfig &config)
    {
        const std::uint64_t seed = config.engine.master_seed;
        TerritoryModel model{config.params, make_world(config.num_entities, seed, config.params.cache_capacity)};
        SingleRun out;
        if (config.hybrid_enabled())
        {
            HybridConfig h = config.hybrid;
            h.alignment.coarse_dt = config.engine.timestep_duration;
            HybridCoordinator coord(h, seed);
            out.metrics = run_simulation(config.engine, model, &coord);
            out.transcripts = coord.transcripts();
            out.level1_errors = coord.errors();
        }
        else
        {
            out.metrics = run_simulation(config.engine, model);
        }
        out.metrics.config_echo = {
            {"entities", std::to_string(config.num_entities)},
            {"lps", std::to_string(config.engine.num_lps)},
            {"steps", std::to_string(config.engine.total_timesteps)},
            {"seed", std::to_string(seed)},
            {"preset", std::string(to_string(config.preset))},
            {"spawn_at", format_schedule(config.hybrid.trigger.spawn_at)},
        };
        return out;
    }

    bool CampaignResult::complete() const
    {
        for (const auto &c : cells)
        {
            if (!c.complete)
            {
                return false;
            }
        }
        return true;
    }

    std::vector<CampaignCell> expand_cells(const CampaignSpec &spec)
    {
        std::vector<CampaignCell> cells;
        for (std::size_t n : spec.entity_counts)
        {
            for (std::uint32_t lps : spec.lp_counts)
            {
                for (Preset p : spec.presets)
                {
                    for (const auto &schedule : spec.spawn_schedules)
                    {
                        cells.push_back({n, lps, p, schedule});
                    }
                }
            }
        }
        return cells;
    }

    const std::vector<std::string> &numeric_column_names()
    {
        static const std::vector<std::string> names = [] {
            std::vector<std::string> v{"steps_completed"};
            for (auto n : message_counter_names)
            {
                v.emplace_back(n);
            }
            for (const char *n : {"in_flight_at_end", "l1_spawns", "l1_completed", "l1_failures",
                                  "l1_entities_transferred", "l1_status_exchanges", "l1_emissions", "l1_customers",
                                  "l1_market_messages", "l1_route_discoveries", "l1_pedestrians_arrived"})
            {
                v.emplace_back(n);
            }
            return v;
        }();
        return names;
    }

    std::vector<double> numeric_columns(const RunMetrics &m)
    {
        std::vector<double> v{static_cast<double>(m.steps_completed)};
        for (const auto &[name, value] : m.totals.fields())
        {
            v.push_back(static_cast<double>(value));
        }
        const Level1Metrics &l = m.level1;
        for (std::uint64_t x : {m.in_flight_at_end, l.spawns, l.completed, l.failures, l.entities_transferred,
                                l.status_exchanges})
        {
            v.push_back(static_cast<double>(x));
        }
        v.push_back(l.emissions);
        for (std::uint64_t x : {l.customers, l.market_messages, l.route_discoveries, l.pedestrians_arrived})
        {
            v.push_back(static_cast<double>(x));
        }
        return v;
    }

    std::vector<CellSummary> summarize(const std::vector<RunRecord> &runs)
    {
        std::vector<CellSummary> cells;
        std::map<std::string, std::size_t> index;
        std::vector<std::vector<const RunRecord *>> members;
        for (const auto &r : runs)
        {
            const std::string key = r.cell.label();
            auto [it, inserted] = index.try_emplace(key, cells.size());
            if (inserted)
            {
                cells.push_back({r.cell, 0, 0, false, {}, {}, std::nullopt});
                members.emplace_back();
            }
            members[it->second].push_back(&r);
        }
        const std::size_t ncols = numeric_column_names().size();
        for (std::size_t i = 0; i < cells.size(); ++i)
        {
            CellSummary &c = cells[i];
            std::vector<std::vector<double>> rows;
            std::vector<double> wct;
            for (const RunRecord *r : members[i])
            {
                ++c.runs;
                if (r->ok)
                {
                    ++c.runs_ok;
                    rows.push_back(numeric_columns(r->metrics));
                    wct.push_back(r->metrics.wall_clock_seconds);
                }
            }
            c.complete = c.runs > 0 && c.runs_ok == c.runs;
            auto stat = [](const std::vector<double> &xs) {
                StatPair s;
                if (xs.empty())
                {
                    return s;
                }
                double sum = 0.0;
                for (double x : xs)
                {
                    sum += x;
                }
                s.mean = sum / static_cast<double>(xs.size());
                if (xs.size() > 1)
                {
                    double ss = 0.0;
                    for (double x : xs)
                    {
                        ss += (x - s.mean) * (x - s.mean);
                    }
                    s.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
                }
                return s;
            };
            for (std::size_t col = 0; col < ncols; ++col)
            {
                std::vector<double> xs;
                for (const auto &row : rows)
                {
                    xs.push_back(row[col]);
                }
                c.stats.push_back(stat(xs));
            }
            c.wall_clock = stat(wct);
        }
        for (CellSummary &c : cells)
        {
            for (const CellSummary &base : cells)
            {
                if (base.cell.lps == 1 && same_axes_except_lps(base.cell, c.cell) && base.complete && c.complete &&
                    c.wall_clock.mean > 0.0)
                {
                    c.speedup = base.wall_clock.mean / c.wall_clock.mean;
                }
            }
        }
        return cells;
    }

    CampaignResult run_campaign(const ParsedConfig &config, const CampaignProgress &progress)
    {
        const CampaignSpec &spec = config.campaign;
        spec.validate();
        const std::vector<CampaignCell> cells = expand_cells(spec);

        auto run_cell = [&](const CampaignCell &cell) {
            std::vector<RunRecord> records;
            for (unsigned rep = 0; rep < spec.repetitions; ++rep)
            {
                RunRecord r;
                r.cell = cell;
                r.repetition = rep;
                r.seed = spec.fixed_seed ? spec.base_seed : spec.base_seed + rep;
                SimulationConfig sim = config.sim;
                sim.num_entities = cell.entities;
                sim.engine.num_lps = cell.lps;
                sim.engine.master_seed = r.seed;
                sim.engine.record_per_step = false;
                sim.preset = cell.preset;
                if (cell.preset != config.sim.preset)
                {
                    // A preset only fixes the gossip coin and the ring threshold.
                    const DisseminationParams p = preset_params(cell.preset);
                    sim.params.gossip_probability = p.gossip_probability;
                    sim.params.forwarding_threshold = p.forwarding_threshold;
                }
                sim.hybrid.trigger.spawn_at = cell.spawn_at;
                try
                {
                    r.metrics = run_single(sim).metrics;
                    r.ok = true;
                    if (const std::string err = r.metrics.accounting_error(); !err.empty())
                    {
                        r.ok = false;
                        r.error = "accounting identity violated: " + err;
                    }
                    else if (r.metrics.level1.failures > 0)
                    {
                        r.ok = false;
                        r.error = std::to_string(r.metrics.level1.failures) + " level 1 transfer(s) failed";
                    }
                }
                catch (const SimulationAborted &ex)
                {
                    r.metrics = ex.partial;
                    r.error = ex.what();
                }
                catch (const std::exception &ex)
                {
                    r.error = ex.what();
                }
                if (progress)
                {
                    progress(r);
                }
                records.push_back(std::move(r));
            }
            return records;
        };

        CampaignResult result;
        if (spec.parallel_cells && cells.size() > 1)
        {
            std::vector<std::future<std::vector<RunRecord>>> futures;
            for (const auto &cell : cells)
            {
                futures.push_back(std::async(std::launch::async, run_cell, cell));
            }
            for (auto &f : futures)
            {
                for (auto &r : f.get())
                {
                    result.runs.push_back(std::move(r));
                }
            }
        }
        else
        {
            for (const auto &cell : cells)
            {
                for (auto &r : run_cell(cell))
                {
                    result.runs.push_back(std::move(r));
                }
            }
        }
        result.cells = summarize(result.runs);
        return result;
    }

    std::string detail_csv(const CampaignResult &result)
    {
        std::string out = "cell,entities,lps,preset,spawn_at,repetition,seed,status";
        for (const auto &n : numeric_column_names())
        {
            out += "," + n;
        }
        out += ",wall_clock_seconds,error\n";
        for (const auto &r : result.runs)
        {
            out += cell_prefix(r.cell) + "," + std::to_string(r.repetition) + "," + std::to_string(r.seed) + "," +
                   (r.ok ? "ok" : "failed");
            for (double v : numeric_columns(r.metrics))
            {
                out += "," + num(v);
            }
            out += "," + num(r.metrics.wall_clock_seconds) + "," + csv_field(r.error) + "\n";
        }
        return out;
    }

    std::string summary_csv(const CampaignResult &result)
    {
        std::string out = "cell,entities,lps,preset,spawn_at,runs,runs_ok,complete";
        for (const auto &n : numeric_column_names())
        {
            out += "," + n + "_mean," + n + "_sd";
        }
        out += ",wall_clock_seconds_mean,wall_clock_seconds_sd,speedup\n";
        for (const auto &c : result.cells)
        {
            out += cell_prefix(c.cell) + "," + std::to_string(c.runs) + "," + std::to_string(c.runs_ok) + "," +
                   (c.complete ? "true" : "false");
            for (const auto &s : c.stats)
            {
                out += "," + num(s.mean) + "," + num(s.sd);
            }
            out += "," + num(c.wall_clock.mean) + "," + num(c.wall_clock.sd) + "," +
                   (c.speedup ? num(*c.speedup) : std::string()) + "\n";
        }
        return out;
    }

    std::string per_step_csv(const RunMetrics &m)
    {
        std::string out = "step";
        for (auto n : message_counter_names)
        {
            out += ",";
            out += n;
        }
        out += "\n";
        for (std::size_t t = 0; t < m.per_step.size(); ++t)
        {
            out += std::to_string(t);
            for (const auto &[name, v] : m.per_step[t].fields())
            {
                out += "," + std::to_string(v);
            }
            out += "\n";
        }
        return out;
    }

    void emit_results(const CampaignResult &result, const std::filesystem::path &dir)
    {
        std::error_code ec;
        std::filesystem::create_directories(dir, ec);
        if (ec)
        {
            throw std::runtime_error("cannot create output directory '" + dir.string() + "': " + ec.message());
        }
        write_file(dir / "detail.csv", detail_csv(result));
        write_file(dir / "summary.csv", summary_csv(result));
    }
}
