#pragma once

#include <cmath>

namespace hybridsim
{
    struct Vec2
    {
        double x = 0.0;
        double y = 0.0;

        friend constexpr bool operator==(const Vec2 &, const Vec2 &) = default;
    };

    // Wraps a coordinate into [0, side).
    inline double wrap_coordinate(double v, double side) noexcept
    {
        double r = std::fmod(v, side);
        if (r < 0.0)
        {
            r += side;
        }
        // fmod of a tiny negative value can round back up to side.
        return r >= side ? 0.0 : r;
    }

    inline Vec2 wrap_position(Vec2 p, double side) noexcept
    {
        return {wrap_coordinate(p.x, side), wrap_coordinate(p.y, side)};
    }

    // Signed shortest displacement from a to b along one wrapped axis, in [-side/2, side/2].
    inline double toroidal_delta(double a, double b, double side) noexcept
    {
        double d = wrap_coordinate(b, side) - wrap_coordinate(a, side);
        if (d > side / 2.0)
        {
            d -= side;
        }
        else if (d < -side / 2.0)
        {
            d += side;
        }
        return d;
    }

    inline double toroidal_distance(Vec2 a, Vec2 b, double side) noexcept
    {
        const double dx = std::abs(toroidal_delta(a.x, b.x, side));
        const double dy = std::abs(toroidal_delta(a.y, b.y, side));
        return std::sqrt(dx * dx + dy * dy);
    }

    inline double planar_distance(Vec2 a, Vec2 b) noexcept
    {
        return std::hypot(b.x - a.x, b.y - a.y);
    }
}
