#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace hybridsim
{
    // Fixed-capacity LRU set of message ids, most recently touched first.
    // Capacities are small (128), so a linear scan beats node-based maps and
    // keeps the state a flat, copyable, serializable vector.
    class LruIdCache
    {
    public:
        explicit LruIdCache(std::size_t capacity = 128) : capacity_(capacity)
        {
            if (capacity_ == 0)
            {
                throw std::invalid_argument("LruIdCache: capacity must be positive");
            }
            ids_.reserve(capacity_);
        }

        // Returns whether id was present; afterwards id is the most recent entry.
        bool touch(std::uint64_t id)
        {
            auto it = std::find(ids_.begin(), ids_.end(), id);
            if (it != ids_.end())
            {
                std::rotate(ids_.begin(), it, it + 1);
                return true;
            }
            if (ids_.size() == capacity_)
            {
                ids_.pop_back();
            }
            ids_.insert(ids_.begin(), id);
            return false;
        }

        bool contains(std::uint64_t id) const noexcept
        {
            return std::find(ids_.begin(), ids_.end(), id) != ids_.end();
        }

        std::size_t size() const noexcept { return ids_.size(); }
        std::size_t capacity() const noexcept { return capacity_; }

        // Most recent first.
        std::span<const std::uint64_t> entries() const noexcept { return ids_; }

        // Rebuilds from entries() output.
        static LruIdCache from_entries(std::size_t capacity, std::span<const std::uint64_t> most_recent_first)
        {
            if (most_recent_first.size() > capacity)
            {
                throw std::invalid_argument("LruIdCache: more entries than capacity");
            }
            LruIdCache c(capacity);
            c.ids_.assign(most_recent_first.begin(), most_recent_first.end());
            return c;
        }

        friend bool operator==(const LruIdCache &, const LruIdCache &) = default;

    private:
        std::size_t capacity_;
        std::vector<std::uint64_t> ids_;
    };
}
