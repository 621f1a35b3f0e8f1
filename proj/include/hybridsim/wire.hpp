#pragma once

#include "hybridsim/territory.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace hybridsim
{
    // Level 0 <-> Level 1 wrapper protocol. One record per line:
    //
    //   KIND step=<int> <key>=<value> ...\n
    //
    // Keys are [a-z0-9_]+. Values are ASCII with space, '%', '=', control and
    // non-ASCII bytes percent-encoded as %XX (upper-case hex).
    enum class ControlKind : std::uint8_t
    {
        Init,
        Entity,
        Ready,
        Status,
        Continue,
        End,
        Result,
        Bye,
    };

    std::string_view to_string(ControlKind k) noexcept;
    std::optional<ControlKind> control_kind_from_string(std::string_view s) noexcept;

    class ProtocolError : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };

    std::string percent_encode(std::string_view raw);
    std::string percent_decode(std::string_view encoded);

    std::string format_double(double v);
    double parse_double(std::string_view s);
    std::int64_t parse_int(std::string_view s);
    std::uint64_t parse_uint(std::string_view s);

    class ControlMessage
    {
    public:
        ControlMessage() = default;
        ControlMessage(ControlKind kind, Timestep step) : kind_(kind), step_(step) {}

        ControlKind kind() const noexcept { return kind_; }
        Timestep step() const noexcept { return step_; }

        // Appends a field; keys keep insertion order on the wire.
        ControlMessage &set(std::string key, std::string value);
        ControlMessage &set(std::string key, std::int64_t value);
        ControlMessage &set(std::string key, std::uint64_t value);
        ControlMessage &set(std::string key, int value) { return set(std::move(key), static_cast<std::int64_t>(value)); }
        ControlMessage &set(std::string key, unsigned value) { return set(std::move(key), static_cast<std::uint64_t>(value)); }
        ControlMessage &set_double(std::string key, double value);

        bool has(std::string_view key) const noexcept;
        // Throw ProtocolError when the key is missing or malformed.
        const std::string &get(std::string_view key) const;
        std::int64_t get_int(std::string_view key) const;
        std::uint64_t get_uint(std::string_view key) const;
        double get_double(std::string_view key) const;

        const std::vector<std::pair<std::string, std::string>> &fields() const noexcept { return fields_; }

        // Without the trailing newline.
        std::string encode() const;
        static ControlMessage decode(std::string_view line);

        friend bool operator==(const ControlMessage &, const ControlMessage &) = default;

    private:
        ControlKind kind_ = ControlKind::Status;
        Timestep step_ = 0;
        std::vector<std::pair<std::string, std::string>> fields_;
    };

    // ENTITY record carrying the full Level 0 state of one entity. level1_draws
    // is the number of RNG draws Level 1 took from the entity's stream.
    ControlMessage encode_entity(const SimulatedEntity &e, Timestep step, std::optional<std::uint64_t> level1_draws = {});
    SimulatedEntity decode_entity(const ControlMessage &m);
}
