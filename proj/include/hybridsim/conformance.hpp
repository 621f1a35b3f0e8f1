#pragma once

#include "hybridsim/campaign.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace hybridsim
{
    // Fixed scripted scenario: two concurrent wrappers, four entities each,
    // three coarse steps, three fine substeps.
    SimulationConfig conformance_scenario();

    // Transcript file name for a wrapper id: wrapper_<id>.txt
    std::string transcript_file_name(std::uint32_t wrapper_id);
    // Lines joined with '\n' plus a final '\n'.
    std::string render_transcript(const WrapperTranscript &t);

    struct ConformanceCheck
    {
        std::string file;
        bool matched = false;
        std::string detail; // first differing line when !matched
    };

    struct ConformanceReport
    {
        SingleRun run;
        std::vector<ConformanceCheck> checks;
        bool passed() const;
    };

    // Runs the scenario and compares each transcript with golden_dir. With
    // update set, the golden files are rewritten instead.
    ConformanceReport run_conformance(const std::filesystem::path &golden_dir, bool update = false);
}
