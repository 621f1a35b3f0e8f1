#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace hybridsim
{
    class ConnectionError : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };

    struct Endpoint
    {
        std::string host = "127.0.0.1";
        std::uint16_t port = 0;

        // "host:port"
        static Endpoint parse(std::string_view text);
        std::string to_string() const;
    };

    // Owning stream-socket file descriptor carrying newline-delimited records.
    class LineChannel
    {
    public:
        LineChannel() = default;
        explicit LineChannel(int fd) noexcept : fd_(fd) {}
        ~LineChannel();
        LineChannel(LineChannel &&other) noexcept;
        LineChannel &operator=(LineChannel &&other) noexcept;
        LineChannel(const LineChannel &) = delete;
        LineChannel &operator=(const LineChannel &) = delete;

        bool is_open() const noexcept { return fd_ >= 0; }

        // line must not contain '\n'; the terminator is appended.
        void send_line(std::string_view line);

        // nullopt on orderly EOF. Throws ConnectionError on timeout or I/O failure.
        std::optional<std::string> read_line(std::chrono::milliseconds timeout);

        void close() noexcept;

        // Observes every line sent ('>') and received ('<').
        void set_tap(std::function<void(char direction, std::string_view line)> tap) { tap_ = std::move(tap); }

    private:
        int fd_ = -1;
        std::string buffer_;
        std::function<void(char, std::string_view)> tap_;
    };

    std::pair<LineChannel, LineChannel> make_channel_pair();

    LineChannel tcp_connect(const Endpoint &ep, std::chrono::milliseconds timeout);

    class TcpListener
    {
    public:
        // Port 0 picks an ephemeral port; see endpoint().
        explicit TcpListener(const Endpoint &ep);
        ~TcpListener();
        TcpListener(const TcpListener &) = delete;
        TcpListener &operator=(const TcpListener &) = delete;

        Endpoint endpoint() const { return bound_; }

        // nullopt on timeout or after shutdown().
        std::optional<LineChannel> accept(std::chrono::milliseconds timeout);

        void shutdown() noexcept;

    private:
        int fd_ = -1;
        Endpoint bound_;
    };
}
