#include "hybridsim/campaign.hpp"
#include "hybridsim/config.hpp"
#include "hybridsim/conformance.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#ifndef HYBRIDSIM_GOLDEN_DIR
#define HYBRIDSIM_GOLDEN_DIR "tests/golden"
#endif

namespace
{
    using namespace hybridsim;

    struct CommonFlags
    {
        std::optional<std::string> config;
        std::optional<std::string> ses;
        std::optional<std::string> lps;
        std::optional<std::string> steps;
        std::optional<std::string> seed;
        std::optional<std::string> preset;
        std::optional<std::string> spawn_at;
        std::optional<std::string> transfer_count;
        std::optional<std::string> substeps;
        std::vector<std::string> sets;
        std::optional<std::string> out;

        void attach(CLI::App *app)
        {
            app->add_option("--config", config, "Config file of 'key = value' lines");
            app->add_option("--ses", ses, "Number of simulated entities");
            app->add_option("--lps", lps, "Number of logical processes");
            app->add_option("--steps", steps, "Coarse timesteps");
            app->add_option("--seed", seed, "Master seed");
            app->add_option("--preset", preset, "Dissemination preset: good|bad");
            app->add_option("--spawn-at", spawn_at, "Level 1 spawn steps, T[,T...]");
            app->add_option("--transfer-count", transfer_count, "Entities per Level 1 spawn");
            app->add_option("--substeps", substeps, "Fine substeps per coarse step");
            app->add_option("--set", sets, "Extra key=value override (repeatable)");
            app->add_option("--out", out, "Output directory");
        }

        ConfigOverrides overrides() const
        {
            ConfigOverrides o;
            auto put = [&o](const char *key, const std::optional<std::string> &v) {
                if (v)
                {
                    o.emplace_back(key, *v);
                }
            };
            put("entities", ses);
            put("lps", lps);
            put("steps", steps);
            put("seed", seed);
            put("preset", preset);
            put("spawn_at", spawn_at);
            put("transfer_count", transfer_count);
            put("substeps", substeps);
            for (const auto &s : sets)
            {
                const auto eq = s.find('=');
                if (eq == std::string::npos)
                {
                    throw ConfigError("--set expects key=value, got '" + s + "'");
                }
                o.emplace_back(s.substr(0, eq), s.substr(eq + 1));
            }
            return o;
        }

        ParsedConfig load() const
        {
            return load_config(config ? std::optional<std::filesystem::path>(*config) : std::nullopt, overrides());
        }
    };

    void write_text(const std::filesystem::path &p, const std::string &text)
    {
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        if (!out || !(out << text))
        {
            throw std::runtime_error("cannot write '" + p.string() + "'");
        }
    }

    void print_metrics(const RunMetrics &m)
    {
        std::cout << "entities=" << m.num_entities << " lps=" << m.num_lps << " steps=" << m.steps_completed
                  << " seed=" << m.seed << "\n";
        for (const auto &[k, v] : m.totals.fields())
        {
            std::cout << "  " << k << "=" << v << "\n";
        }
        std::cout << "  in_flight_at_end=" << m.in_flight_at_end << "\n";
        const Level1Metrics &l = m.level1;
        if (l.spawns || l.failures)
        {
            std::cout << "  l1 spawns=" << l.spawns << " completed=" << l.completed << " failures=" << l.failures
                      << " transferred=" << l.entities_transferred << " status_pairs=" << l.status_exchanges
                      << " emissions=" << format_double(l.emissions) << " customers=" << l.customers
                      << " market_messages=" << l.market_messages << " arrived=" << l.pedestrians_arrived << "\n";
        }
        std::cout << "  wall_clock_seconds=" << format_double(m.wall_clock_seconds) << "\n";
    }

    int cmd_run(const CommonFlags &flags)
    {
        const ParsedConfig cfg = flags.load();
        const SingleRun run = run_single(cfg.sim);
        print_metrics(run.metrics);
        for (const auto &e : run.level1_errors)
        {
            std::cerr << "level 1: " << e << "\n";
        }
        if (const std::string err = run.metrics.accounting_error(); !err.empty())
        {
            std::cerr << "accounting identity violated: " << err << "\n";
            return 1;
        }
        if (flags.out)
        {
            const std::filesystem::path dir(*flags.out);
            std::filesystem::create_directories(dir);
            CampaignResult single;
            RunRecord r;
            r.cell = {cfg.sim.num_entities, cfg.sim.engine.num_lps, cfg.sim.preset, cfg.sim.hybrid.trigger.spawn_at};
            r.seed = cfg.sim.engine.master_seed;
            r.ok = true;
            r.metrics = run.metrics;
            single.runs.push_back(r);
            single.cells = summarize(single.runs);
            emit_results(single, dir);
            write_text(dir / "per_step.csv", per_step_csv(run.metrics));
            std::string echo;
            for (const auto &[k, v] : cfg.echo)
            {
                echo += k + " = " + v + "\n";
            }
            write_text(dir / "config.txt", echo);
            if (!run.transcripts.empty())
            {
                std::filesystem::create_directories(dir / "transcripts");
                for (const auto &t : run.transcripts)
                {
                    write_text(dir / "transcripts" / transcript_file_name(t.wrapper_id), render_transcript(t));
                }
            }
        }
        return run.level1_errors.empty() ? 0 : 1;
    }

    int cmd_campaign(const CommonFlags &flags, const std::vector<std::string> &extra)
    {
        CommonFlags f = flags;
        f.sets.insert(f.sets.end(), extra.begin(), extra.end());
        const ParsedConfig cfg = f.load();
        const CampaignResult result = run_campaign(cfg, [](const RunRecord &r) {
            std::cerr << r.cell.label() << " rep=" << r.repetition << " seed=" << r.seed << " "
                      << (r.ok ? "ok" : "FAILED: " + r.error) << " wct=" << format_double(r.metrics.wall_clock_seconds)
                      << "\n";
        });
        const std::filesystem::path dir(flags.out.value_or("results"));
        emit_results(result, dir);
        std::cout << summary_csv(result);
        if (!result.complete())
        {
            std::cerr << "campaign incomplete: at least one run failed\n";
            return 2;
        }
        return 0;
    }

    int cmd_conformance(const std::string &golden, bool update)
    {
        const ConformanceReport report = run_conformance(golden, update);
        for (const auto &c : report.checks)
        {
            std::cout << (c.matched ? "PASS " : "FAIL ") << c.file;
            if (!c.detail.empty())
            {
                std::cout << "  " << c.detail;
            }
            std::cout << "\n";
        }
        for (const auto &e : report.run.level1_errors)
        {
            std::cout << "level 1 error: " << e << "\n";
        }
        if (report.checks.empty())
        {
            std::cout << "FAIL no wrapper transcripts produced\n";
        }
        return report.passed() && report.run.level1_errors.empty() ? 0 : 1;
    }
}

int main(int argc, char **argv)
{
    CLI::App app{"Multi-level smart territory simulator"};
    app.require_subcommand(1);

    CommonFlags run_flags;
    CLI::App *run = app.add_subcommand("run", "Single seeded run");
    run_flags.attach(run);

    CommonFlags campaign_flags;
    std::optional<std::string> sweep_ses;
    std::optional<std::string> sweep_lps;
    std::optional<std::string> sweep_presets;
    std::optional<std::string> repetitions;
    CLI::App *campaign = app.add_subcommand("campaign", "Sweep over entities, LPs, presets and spawn schedules");
    campaign_flags.attach(campaign);
    campaign->add_option("--sweep-ses", sweep_ses, "Entity counts, N[,N...]");
    campaign->add_option("--sweep-lps", sweep_lps, "LP counts, K[,K...]");
    campaign->add_option("--sweep-presets", sweep_presets, "Presets, good|bad[,...]");
    campaign->add_option("--repetitions", repetitions, "Runs per cell");

    std::string golden = HYBRIDSIM_GOLDEN_DIR;
    bool update = false;
    CLI::App *conformance = app.add_subcommand("conformance", "Check wrapper transcripts against golden files");
    conformance->add_option("--golden", golden, "Golden transcript directory");
    conformance->add_flag("--update", update, "Rewrite the golden files");

    app.add_subcommand("keys", "List configuration keys with accepted ranges and defaults");

    CLI11_PARSE(app, argc, argv);

    try
    {
        if (run->parsed())
        {
            return cmd_run(run_flags);
        }
        if (campaign->parsed())
        {
            std::vector<std::string> extra;
            if (sweep_ses)
                extra.push_back("sweep_entities=" + *sweep_ses);
            if (sweep_lps)
                extra.push_back("sweep_lps=" + *sweep_lps);
            if (sweep_presets)
                extra.push_back("sweep_presets=" + *sweep_presets);
            if (repetitions)
                extra.push_back("repetitions=" + *repetitions);
            return cmd_campaign(campaign_flags, extra);
        }
        if (conformance->parsed())
        {
            return cmd_conformance(golden, update);
        }
        std::cout << describe_config_keys();
        return 0;
    }
    catch (const ConfigError &ex)
    {
        std::cerr << "config error: " << ex.what() << "\n";
        return 64;
    }
    catch (const std::exception &ex)
    {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
}
