#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hybridsim
{
    // Durations (timeunits) a vehicle spends in each driving phase.
    struct VehiclePhases
    {
        double cruise = 0.0;
        double search = 0.0;
        double idle = 0.0;
    };

    struct TransportParams
    {
        std::uint64_t n_vehicles = 0;
        std::uint64_t parking_capacity = 50;
        double cruise_time = 10.0;
        double mean_search_time = 5.0;
        double idle_time = 1.0;
        // grams per vehicle-timeunit
        double cruise_rate = 2.0;
        double search_rate = 2.5;
        double idle_rate = 1.0;
        std::uint64_t seed = 1;
        // When non-empty, replaces the drawn phases; must have n_vehicles entries.
        std::vector<VehiclePhases> scripted_phases;

        void validate() const;
    };

    struct TransportResult
    {
        double total_emissions = 0.0;
        std::uint64_t customers_entering = 0;
        double mean_parking_search = 0.0;

        friend bool operator==(const TransportResult &, const TransportResult &) = default;
    };

    // Quasi-steady arrival model. Vehicle i (arrival order) draws its search
    // time from its own substream of seed; it parks iff fewer than
    // parking_capacity vehicles arrived before it, otherwise it searches for
    // twice the mean and drives away. Emissions are the phase-weighted sum.
    TransportResult simulate_arrivals(const TransportParams &params);

    double phase_emissions(const VehiclePhases &phases, const TransportParams &rates) noexcept;

    // key=value line codec shared by the native model and the external-command
    // adapter. Unknown keys are rejected.
    std::string format_transport_params(const TransportParams &params);
    TransportParams parse_transport_params(std::string_view text);
    std::string format_transport_result(const TransportResult &result);
    TransportResult parse_transport_result(std::string_view text);

    // Runs `/bin/sh -c command`, writes the parameters to its stdin and reads
    // the result from its stdout.
    class ExternalTransportCommand
    {
    public:
        explicit ExternalTransportCommand(std::string command) : command_(std::move(command)) {}

        TransportResult run(const TransportParams &params) const;

    private:
        std::string command_;
    };
}
