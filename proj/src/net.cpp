#include "hybridsim/net.hpp"

#include <arpa/inet.h>
#include <cerrno>
#include <cstring>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <charconv>

namespace hybridsim
{
    namespace
    {
        [[noreturn]] void fail_errno(const std::string &what)
        {
            throw ConnectionError(what + ": " + std::strerror(errno));
        }

        int poll_one(int fd, short events, std::chrono::milliseconds timeout)
        {
            pollfd p{fd, events, 0};
            for (;;)
            {
                const int r = ::poll(&p, 1, static_cast<int>(timeout.count()));
                if (r < 0 && errno == EINTR)
                {
                    continue;
                }
                return r;
            }
        }

        sockaddr_in resolve(const Endpoint &ep)
        {
            sockaddr_in addr{};
            addr.sin_family = AF_INET;
            addr.sin_port = htons(ep.port);
            if (::inet_pton(AF_INET, ep.host.c_str(), &addr.sin_addr) == 1)
            {
                return addr;
            }
            addrinfo hints{};
            hints.ai_family = AF_INET;
            hints.ai_socktype = SOCK_STREAM;
            addrinfo *res = nullptr;
            if (::getaddrinfo(ep.host.c_str(), nullptr, &hints, &res) != 0 || !res)
            {
                throw ConnectionError("cannot resolve host '" + ep.host + "'");
            }
            addr.sin_addr = reinterpret_cast<sockaddr_in *>(res->ai_addr)->sin_addr;
            ::freeaddrinfo(res);
            return addr;
        }
    }

    Endpoint Endpoint::parse(std::string_view text)
    {
        const std::size_t colon = text.rfind(':');
        if (colon == std::string_view::npos || colon == 0 || colon + 1 == text.size())
        {
            throw std::invalid_argument("endpoint must be host:port, got '" + std::string(text) + "'");
        }
        unsigned port = 0;
        const std::string_view p = text.substr(colon + 1);
        auto r = std::from_chars(p.data(), p.data() + p.size(), port);
        if (r.ec != std::errc{} || r.ptr != p.data() + p.size() || port > 65535)
        {
            throw std::invalid_argument("bad port in endpoint '" + std::string(text) + "'");
        }
        return {std::string(text.substr(0, colon)), static_cast<std::uint16_t>(port)};
    }

    std::string Endpoint::to_string() const
    {
        return host + ":" + std::to_string(port);
    }

    LineChannel::~LineChannel()
    {
        close();
    }

    LineChannel::LineChannel(LineChannel &&other) noexcept
        : fd_(std::exchange(other.fd_, -1)), buffer_(std::move(other.buffer_)), tap_(std::move(other.tap_))
    {
    }

    LineChannel &LineChannel::operator=(LineChannel &&other) noexcept
    {
        if (this != &other)
        {
            close();
            fd_ = std::exchange(other.fd_, -1);
            buffer_ = std::move(other.buffer_);
            tap_ = std::move(other.tap_);
        }
        return *this;
    }

    void LineChannel::close() noexcept
    {
        if (fd_ >= 0)
        {
            ::close(fd_);
            fd_ = -1;
        }
    }

    void LineChannel::send_line(std::string_view line)
    {
        if (fd_ < 0)
        {
            throw ConnectionError("send on closed channel");
        }
        if (line.find('\n') != std::string_view::npos)
        {
            throw std::invalid_argument("send_line: embedded newline");
        }
        if (tap_)
        {
            tap_('>', line);
        }
        std::string framed(line);
        framed.push_back('\n');
        std::size_t off = 0;
        while (off < framed.size())
        {
            const ssize_t n = ::send(fd_, framed.data() + off, framed.size() - off, MSG_NOSIGNAL);
            if (n < 0)
            {
                if (errno == EINTR)
                {
                    continue;
                }
                fail_errno("send");
            }
            off += static_cast<std::size_t>(n);
        }
    }

    std::optional<std::string> LineChannel::read_line(std::chrono::milliseconds timeout)
    {
        if (fd_ < 0)
        {
            throw ConnectionError("read on closed channel");
        }
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        for (;;)
        {
            const std::size_t nl = buffer_.find('\n');
            if (nl != std::string::npos)
            {
                std::string line = buffer_.substr(0, nl);
                buffer_.erase(0, nl + 1);
                if (tap_)
                {
                    tap_('<', line);
                }
                return line;
            }
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0)
            {
                throw ConnectionError("read timeout");
            }
            const int r = poll_one(fd_, POLLIN, left);
            if (r < 0)
            {
                fail_errno("poll");
            }
            if (r == 0)
            {
                throw ConnectionError("read timeout");
            }
            char buf[4096];
            const ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
            if (n < 0)
            {
                if (errno == EINTR)
                {
                    continue;
                }
                fail_errno("recv");
            }
            if (n == 0)
            {
                if (!buffer_.empty())
                {
                    throw ConnectionError("connection closed mid-record");
                }
                return std::nullopt;
            }
            buffer_.append(buf, static_cast<std::size_t>(n));
        }
    }

    std::pair<LineChannel, LineChannel> make_channel_pair()
    {
        int fds[2];
        if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0)
        {
            fail_errno("socketpair");
        }
        return {LineChannel(fds[0]), LineChannel(fds[1])};
    }

    LineChannel tcp_connect(const Endpoint &ep, std::chrono::milliseconds timeout)
    {
        const sockaddr_in addr = resolve(ep);
        const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd < 0)
        {
            fail_errno("socket");
        }
        LineChannel ch(fd);
        const int flags = ::fcntl(fd, F_GETFL, 0);
        ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
        if (::connect(fd, reinterpret_cast<const sockaddr *>(&addr), sizeof addr) != 0)
        {
            if (errno != EINPROGRESS)
            {
                fail_errno("connect to " + ep.to_string());
            }
            if (poll_one(fd, POLLOUT, timeout) <= 0)
            {
                throw ConnectionError("connect to " + ep.to_string() + ": timeout");
            }
            int err = 0;
            socklen_t len = sizeof err;
            ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
            if (err != 0)
            {
                throw ConnectionError("connect to " + ep.to_string() + ": " + std::strerror(err));
            }
        }
        ::fcntl(fd, F_SETFL, flags);
        const int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        return ch;
    }

    TcpListener::TcpListener(const Endpoint &ep)
    {
        const sockaddr_in addr = resolve(ep);
        fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd_ < 0)
        {
            fail_errno("socket");
        }
        const int one = 1;
        ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        if (::bind(fd_, reinterpret_cast<const sockaddr *>(&addr), sizeof addr) != 0)
        {
            const int e = errno;
            ::close(fd_);
            errno = e;
            fail_errno("bind " + ep.to_string());
        }
        if (::listen(fd_, 16) != 0)
        {
            fail_errno("listen");
        }
        sockaddr_in actual{};
        socklen_t len = sizeof actual;
        ::getsockname(fd_, reinterpret_cast<sockaddr *>(&actual), &len);
        bound_ = {ep.host, ntohs(actual.sin_port)};
    }

    TcpListener::~TcpListener()
    {
        shutdown();
    }

    void TcpListener::shutdown() noexcept
    {
        if (fd_ >= 0)
        {
            ::shutdown(fd_, SHUT_RDWR);
            ::close(fd_);
            fd_ = -1;
        }
    }

    std::optional<LineChannel> TcpListener::accept(std::chrono::milliseconds timeout)
    {
        if (fd_ < 0)
        {
            return std::nullopt;
        }
        if (poll_one(fd_, POLLIN, timeout) <= 0)
        {
            return std::nullopt;
        }
        const int c = ::accept(fd_, nullptr, nullptr);
        if (c < 0)
        {
            return std::nullopt;
        }
        const int one = 1;
        ::setsockopt(c, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        return LineChannel(c);
    }
}
