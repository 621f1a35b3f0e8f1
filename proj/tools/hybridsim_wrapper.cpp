#include "hybridsim/level1.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <iostream>

int main(int argc, char **argv)
{
    CLI::App app{"Level 1 wrapper server: transport model then market, over the line protocol"};
    std::string listen = "127.0.0.1:7400";
    int timeout_ms = 30000;
    bool once = false;
    app.add_option("--listen", listen, "host:port to listen on (port 0 picks one)");
    app.add_option("--timeout-ms", timeout_ms, "Per-record read timeout");
    app.add_flag("--once", once, "Serve a single connection in the foreground, then exit");
    CLI11_PARSE(app, argc, argv);

    try
    {
        const hybridsim::Endpoint ep = hybridsim::Endpoint::parse(listen);
        const std::chrono::milliseconds timeout(timeout_ms);
        if (once)
        {
            hybridsim::TcpListener listener(ep);
            std::cout << "listening on " << listener.endpoint().to_string() << std::endl;
            for (;;)
            {
                if (auto ch = listener.accept(std::chrono::milliseconds(1000)))
                {
                    hybridsim::serve_wrapper_connection(*ch, timeout);
                    return 0;
                }
            }
        }

        sigset_t set;
        sigemptyset(&set);
        sigaddset(&set, SIGINT);
        sigaddset(&set, SIGTERM);
        pthread_sigmask(SIG_BLOCK, &set, nullptr);
        hybridsim::WrapperServer server(ep, timeout);
        std::cout << "listening on " << server.endpoint().to_string() << std::endl;
        int sig = 0;
        sigwait(&set, &sig);
        server.stop();
        for (const auto &e : server.session_errors())
        {
            std::cerr << "session error: " << e << "\n";
        }
        std::cout << "served " << server.sessions_completed() << " sessions\n";
        return 0;
    }
    catch (const std::exception &ex)
    {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
}
