#include "hybridsim/wire.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>

namespace hybridsim
{
    namespace
    {
        constexpr std::array<std::string_view, 8> kind_names = {"INIT", "ENTITY", "READY", "STATUS",
                                                                "CONTINUE", "END", "RESULT", "BYE"};

        bool valid_key(std::string_view k) noexcept
        {
            return !k.empty() && std::all_of(k.begin(), k.end(), [](char c) {
                return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
            });
        }

        bool needs_escape(unsigned char c) noexcept
        {
            return c <= 0x20 || c >= 0x7F || c == '%' || c == '=';
        }

        int hex_value(char c) noexcept
        {
            if (c >= '0' && c <= '9')
            {
                return c - '0';
            }
            if (c >= 'A' && c <= 'F')
            {
                return c - 'A' + 10;
            }
            if (c >= 'a' && c <= 'f')
            {
                return c - 'a' + 10;
            }
            return -1;
        }
    }

    std::string_view to_string(ControlKind k) noexcept
    {
        return kind_names[static_cast<std::size_t>(k)];
    }

    std::optional<ControlKind> control_kind_from_string(std::string_view s) noexcept
    {
        for (std::size_t i = 0; i < kind_names.size(); ++i)
        {
            if (kind_names[i] == s)
            {
                return static_cast<ControlKind>(i);
            }
        }
        return std::nullopt;
    }

    std::string percent_encode(std::string_view raw)
    {
        static constexpr char hex[] = "0123456789ABCDEF";
        std::string out;
        out.reserve(raw.size());
        for (char ch : raw)
        {
            const auto c = static_cast<unsigned char>(ch);
            if (needs_escape(c))
            {
                out.push_back('%');
                out.push_back(hex[c >> 4]);
                out.push_back(hex[c & 0xF]);
            }
            else
            {
                out.push_back(ch);
            }
        }
        return out;
    }

    std::string percent_decode(std::string_view encoded)
    {
        std::string out;
        out.reserve(encoded.size());
        for (std::size_t i = 0; i < encoded.size(); ++i)
        {
            const char c = encoded[i];
            if (c != '%')
            {
                out.push_back(c);
                continue;
            }
            if (i + 2 >= encoded.size())
            {
                throw ProtocolError("truncated percent escape");
            }
            const int hi = hex_value(encoded[i + 1]);
            const int lo = hex_value(encoded[i + 2]);
            if (hi < 0 || lo < 0)
            {
                throw ProtocolError("bad percent escape");
            }
            out.push_back(static_cast<char>(hi * 16 + lo));
            i += 2;
        }
        return out;
    }

    std::string format_double(double v)
    {
        if (!std::isfinite(v))
        {
            throw std::invalid_argument("format_double: non-finite value");
        }
        char buf[64];
        auto r = std::to_chars(buf, buf + sizeof buf, v);
        return std::string(buf, r.ptr);
    }

    double parse_double(std::string_view s)
    {
        double v = 0.0;
        auto r = std::from_chars(s.data(), s.data() + s.size(), v);
        if (r.ec != std::errc{} || r.ptr != s.data() + s.size() || !std::isfinite(v))
        {
            throw ProtocolError("not a number: '" + std::string(s) + "'");
        }
        return v;
    }

    std::int64_t parse_int(std::string_view s)
    {
        std::int64_t v = 0;
        auto r = std::from_chars(s.data(), s.data() + s.size(), v);
        if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
        {
            throw ProtocolError("not an integer: '" + std::string(s) + "'");
        }
        return v;
    }

    std::uint64_t parse_uint(std::string_view s)
    {
        std::uint64_t v = 0;
        auto r = std::from_chars(s.data(), s.data() + s.size(), v);
        if (s.empty() || s.front() == '-' || r.ec != std::errc{} || r.ptr != s.data() + s.size())
        {
            throw ProtocolError("not an unsigned integer: '" + std::string(s) + "'");
        }
        return v;
    }

    ControlMessage &ControlMessage::set(std::string key, std::string value)
    {
        if (!valid_key(key) || key == "step")
        {
            throw std::invalid_argument("ControlMessage: invalid key '" + key + "'");
        }
        fields_.emplace_back(std::move(key), std::move(value));
        return *this;
    }

    ControlMessage &ControlMessage::set(std::string key, std::int64_t value)
    {
        return set(std::move(key), std::to_string(value));
    }

    ControlMessage &ControlMessage::set(std::string key, std::uint64_t value)
    {
        return set(std::move(key), std::to_string(value));
    }

    ControlMessage &ControlMessage::set_double(std::string key, double value)
    {
        return set(std::move(key), format_double(value));
    }

    bool ControlMessage::has(std::string_view key) const noexcept
    {
        return std::any_of(fields_.begin(), fields_.end(), [&](const auto &kv) { return kv.first == key; });
    }

    const std::string &ControlMessage::get(std::string_view key) const
    {
        for (const auto &kv : fields_)
        {
            if (kv.first == key)
            {
                return kv.second;
            }
        }
        throw ProtocolError(std::string(to_string(kind_)) + " record lacks key '" + std::string(key) + "'");
    }

    std::int64_t ControlMessage::get_int(std::string_view key) const { return parse_int(get(key)); }
    std::uint64_t ControlMessage::get_uint(std::string_view key) const { return parse_uint(get(key)); }
    double ControlMessage::get_double(std::string_view key) const { return parse_double(get(key)); }

    std::string ControlMessage::encode() const
    {
        std::string out(to_string(kind_));
        out += " step=";
        out += std::to_string(step_);
        for (const auto &[k, v] : fields_)
        {
            out.push_back(' ');
            out += k;
            out.push_back('=');
            out += percent_encode(v);
        }
        return out;
    }

    ControlMessage ControlMessage::decode(std::string_view line)
    {
        if (!line.empty() && line.back() == '\n')
        {
            line.remove_suffix(1);
        }
        std::vector<std::string_view> tokens;
        std::size_t pos = 0;
        while (pos <= line.size())
        {
            const std::size_t sp = line.find(' ', pos);
            const std::size_t end = sp == std::string_view::npos ? line.size() : sp;
            if (end == pos)
            {
                throw ProtocolError("empty token in record: '" + std::string(line) + "'");
            }
            tokens.push_back(line.substr(pos, end - pos));
            if (sp == std::string_view::npos)
            {
                break;
            }
            pos = sp + 1;
        }
        if (tokens.size() < 2)
        {
            throw ProtocolError("record needs a kind and a step: '" + std::string(line) + "'");
        }
        const auto kind = control_kind_from_string(tokens[0]);
        if (!kind)
        {
            throw ProtocolError("unknown record kind '" + std::string(tokens[0]) + "'");
        }
        if (tokens[1].substr(0, 5) != "step=")
        {
            throw ProtocolError("second token must be step=<int>");
        }
        ControlMessage m(*kind, parse_int(tokens[1].substr(5)));
        for (std::size_t i = 2; i < tokens.size(); ++i)
        {
            const std::size_t eq = tokens[i].find('=');
            if (eq == std::string_view::npos)
            {
                throw ProtocolError("token without '=': '" + std::string(tokens[i]) + "'");
            }
            const std::string_view key = tokens[i].substr(0, eq);
            if (!valid_key(key) || key == "step")
            {
                throw ProtocolError("invalid key '" + std::string(key) + "'");
            }
            m.fields_.emplace_back(std::string(key), percent_decode(tokens[i].substr(eq + 1)));
        }
        return m;
    }

    ControlMessage encode_entity(const SimulatedEntity &e, Timestep step, std::optional<std::uint64_t> level1_draws)
    {
        ControlMessage m(ControlKind::Entity, step);
        m.set("id", static_cast<std::uint64_t>(e.id));
        m.set("kind", std::string(to_string(e.kind)));
        m.set_double("x", e.position.x);
        m.set_double("y", e.position.y);
        if (e.rwp_target)
        {
            m.set_double("tx", e.rwp_target->x);
            m.set_double("ty", e.rwp_target->y);
        }
        m.set_double("speed", e.rwp_speed);
        m.set("rng_key", e.rng.key());
        m.set("rng_cursor", e.rng.cursor());
        m.set("relays", e.relays_this_step);
        m.set("seq", static_cast<std::uint64_t>(e.next_message_seq));
        m.set("cache_cap", static_cast<std::uint64_t>(e.dup_cache.capacity()));
        std::string cache;
        for (std::uint64_t id : e.dup_cache.entries())
        {
            if (!cache.empty())
            {
                cache.push_back(',');
            }
            cache += std::to_string(id);
        }
        m.set("cache", std::move(cache));
        if (level1_draws)
        {
            m.set("l1_draws", *level1_draws);
        }
        return m;
    }

    SimulatedEntity decode_entity(const ControlMessage &m)
    {
        if (m.kind() != ControlKind::Entity)
        {
            throw ProtocolError("expected ENTITY record, got " + std::string(to_string(m.kind())));
        }
        SimulatedEntity e;
        const std::uint64_t id = m.get_uint("id");
        if (id > 0xFFFFFFFFULL)
        {
            throw ProtocolError("entity id out of range");
        }
        e.id = static_cast<EntityId>(id);
        try
        {
            e.kind = entity_kind_from_string(m.get("kind"));
        }
        catch (const std::invalid_argument &ex)
        {
            throw ProtocolError(ex.what());
        }
        e.position = {m.get_double("x"), m.get_double("y")};
        if (m.has("tx") != m.has("ty"))
        {
            throw ProtocolError("ENTITY record has only one target coordinate");
        }
        if (m.has("tx"))
        {
            e.rwp_target = Vec2{m.get_double("tx"), m.get_double("ty")};
        }
        e.rwp_speed = m.get_double("speed");
        e.rng = RngStream(m.get_uint("rng_key"), m.get_uint("rng_cursor"));
        e.relays_this_step = static_cast<int>(m.get_int("relays"));
        e.next_message_seq = static_cast<std::uint32_t>(m.get_uint("seq"));
        const std::uint64_t cap = m.get_uint("cache_cap");
        std::vector<std::uint64_t> ids;
        const std::string &cache = m.get("cache");
        std::size_t pos = 0;
        while (pos < cache.size())
        {
            const std::size_t comma = std::min(cache.find(',', pos), cache.size());
            ids.push_back(parse_uint(std::string_view(cache).substr(pos, comma - pos)));
            pos = comma + 1;
        }
        try
        {
            e.dup_cache = LruIdCache::from_entries(cap, ids);
        }
        catch (const std::invalid_argument &ex)
        {
            throw ProtocolError(ex.what());
        }
        return e;
    }
}
