#pragma once

#include "hybridsim/config.hpp"
#include "hybridsim/metrics.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace hybridsim
{
    struct CampaignCell
    {
        std::size_t entities = 0;
        std::uint32_t lps = 1;
        Preset preset = Preset::Good;
        std::vector<Timestep> spawn_at;

        std::string label() const;
    };

    struct RunRecord
    {
        CampaignCell cell;
        unsigned repetition = 0;
        std::uint64_t seed = 0;
        bool ok = false;
        std::string error;
        RunMetrics metrics;
    };

    struct SingleRun
    {
        RunMetrics metrics;
        std::vector<WrapperTranscript> transcripts;
        std::vector<std::string> level1_errors;
    };

    // One seeded run of the given configuration, with Level 1 coordination
    // when a trigger is configured.
    SingleRun run_single(const SimulationConfig &config);

    struct StatPair
    {
        double mean = 0.0;
        double sd = 0.0;
    };

    struct CellSummary
    {
        CampaignCell cell;
        std::size_t runs = 0;
        std::size_t runs_ok = 0;
        bool complete = false;
        // Aligned with numeric_column_names().
        std::vector<StatPair> stats;
        StatPair wall_clock;
        std::optional<double> speedup; // WCT(LP=1) / WCT(LP=k), same other axes
    };

    struct CampaignResult
    {
        std::vector<RunRecord> runs;
        std::vector<CellSummary> cells;

        bool complete() const;
    };

    // Cross product in order entities x lps x presets x schedules.
    std::vector<CampaignCell> expand_cells(const CampaignSpec &spec);

    using CampaignProgress = std::function<void(const RunRecord &)>;

    CampaignResult run_campaign(const ParsedConfig &config, const CampaignProgress &progress = {});

    // Aggregates already executed runs (cells in first-seen order).
    std::vector<CellSummary> summarize(const std::vector<RunRecord> &runs);

    // Deterministic per-run numeric columns, in CSV order.
    const std::vector<std::string> &numeric_column_names();
    std::vector<double> numeric_columns(const RunMetrics &m);

    std::string detail_csv(const CampaignResult &result);
    std::string summary_csv(const CampaignResult &result);
    std::string per_step_csv(const RunMetrics &m);

    // Writes detail.csv and summary.csv into dir (created if needed).
    void emit_results(const CampaignResult &result, const std::filesystem::path &dir);
}
