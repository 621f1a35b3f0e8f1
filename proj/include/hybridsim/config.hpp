#pragma once

#include "hybridsim/engine.hpp"
#include "hybridsim/hybrid.hpp"
#include "hybridsim/territory.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace hybridsim
{
    class ConfigError : public std::invalid_argument
    {
    public:
        using std::invalid_argument::invalid_argument;
    };

    enum class Preset : std::uint8_t
    {
        Good,
        Bad,
    };

    std::string_view to_string(Preset p) noexcept;
    Preset preset_from_string(std::string_view s);
    DisseminationParams preset_params(Preset p);

    struct SimulationConfig
    {
        std::size_t num_entities = 1000;
        EngineConfig engine;
        Preset preset = Preset::Good;
        DisseminationParams params;
        HybridConfig hybrid;

        bool hybrid_enabled() const noexcept;
    };

    struct CampaignSpec
    {
        std::vector<std::size_t> entity_counts;
        std::vector<std::uint32_t> lp_counts;
        std::vector<Preset> presets;
        std::vector<std::vector<Timestep>> spawn_schedules;
        unsigned repetitions = 5;
        std::uint64_t base_seed = 1;
        // Every repetition uses base_seed.
        bool fixed_seed = false;
        bool parallel_cells = false;

        void validate() const;
    };

    struct ParsedConfig
    {
        SimulationConfig sim;
        CampaignSpec campaign;
        // Effective key=value pairs in application order.
        std::vector<std::pair<std::string, std::string>> echo;
    };

    using ConfigOverrides = std::vector<std::pair<std::string, std::string>>;

    // `key = value` lines, '#' starts a comment. The preset is applied first,
    // then file keys, then overrides. Unspecified campaign axes default to
    // the single-run values.
    ParsedConfig parse_config(std::string_view file_text, const ConfigOverrides &overrides = {});
    ParsedConfig load_config(const std::optional<std::filesystem::path> &file, const ConfigOverrides &overrides = {});

    // One line per key: name, accepted range, default.
    std::string describe_config_keys();

    // "300,600" or "none".
    std::vector<Timestep> parse_schedule(std::string_view text);
    std::string format_schedule(const std::vector<Timestep> &schedule);
}
