#include "hybridsim/conformance.hpp"

#include <fstream>
#include <sstream>

namespace hybridsim
{
    SimulationConfig conformance_scenario()
    {
        SimulationConfig c;
        c.num_entities = 200;
        c.engine.total_timesteps = 12;
        c.engine.master_seed = 7;
        c.hybrid.trigger.spawn_at = {4, 4};
        c.hybrid.trigger.transfer_count = 4;
        c.hybrid.alignment.fine_substeps = 3;
        c.hybrid.decision.mode = DecisionPolicy::Mode::FixedDuration;
        c.hybrid.decision.duration = 3;
        return c;
    }

    std::string transcript_file_name(std::uint32_t wrapper_id)
    {
        return "wrapper_" + std::to_string(wrapper_id) + ".txt";
    }

    std::string render_transcript(const WrapperTranscript &t)
    {
        std::string out;
        for (const auto &line : t.lines)
        {
            out += line;
            out += '\n';
        }
        return out;
    }

    bool ConformanceReport::passed() const
    {
        if (checks.empty())
        {
            return false;
        }
        for (const auto &c : checks)
        {
            if (!c.matched)
            {
                return false;
            }
        }
        return true;
    }

    ConformanceReport run_conformance(const std::filesystem::path &golden_dir, bool update)
    {
        ConformanceReport report;
        report.run = run_single(conformance_scenario());
        for (const auto &t : report.run.transcripts)
        {
            ConformanceCheck check;
            check.file = transcript_file_name(t.wrapper_id);
            const std::string actual = render_transcript(t);
            const std::filesystem::path path = golden_dir / check.file;
            if (update)
            {
                std::filesystem::create_directories(golden_dir);
                std::ofstream(path, std::ios::binary | std::ios::trunc) << actual;
                check.matched = true;
                report.checks.push_back(check);
                continue;
            }
            std::ifstream in(path, std::ios::binary);
            if (!in)
            {
                check.detail = "missing golden file " + path.string();
                report.checks.push_back(check);
                continue;
            }
            std::ostringstream ss;
            ss << in.rdbuf();
            const std::string expected = ss.str();
            check.matched = expected == actual;
            if (!check.matched)
            {
                std::istringstream a(actual);
                std::istringstream e(expected);
                std::string la;
                std::string le;
                for (int line = 1;; ++line)
                {
                    const bool ga = static_cast<bool>(std::getline(a, la));
                    const bool ge = static_cast<bool>(std::getline(e, le));
                    if (!ga && !ge)
                    {
                        check.detail = "trailing bytes differ";
                        break;
                    }
                    if (ga != ge || la != le)
                    {
                        check.detail = "line " + std::to_string(line) + ": expected '" + (ge ? le : "<eof>") +
                                       "', got '" + (ga ? la : "<eof>") + "'";
                        break;
                    }
                }
            }
            report.checks.push_back(check);
        }
        return report;
    }
}
