#include "hybridsim/transport.hpp"

#include <doctest.h>

#include <random>
#include <stdexcept>

using namespace hybridsim;

TEST_CASE("empty cohort")
{
    TransportParams p;
    p.n_vehicles = 0;
    const TransportResult r = simulate_arrivals(p);
    CHECK(r.total_emissions == 0.0);
    CHECK(r.customers_entering == 0);
    CHECK(r.mean_parking_search == 0.0);
}

TEST_CASE("capacity caps customers")
{
    TransportParams p;
    p.n_vehicles = 10;
    p.parking_capacity = 3;
    CHECK(simulate_arrivals(p).customers_entering == 3);
    p.parking_capacity = 0;
    CHECK(simulate_arrivals(p).customers_entering == 0);
    p.parking_capacity = 50;
    CHECK(simulate_arrivals(p).customers_entering == 10);
}

TEST_CASE("scripted phases: cruise 10 at 2 g plus idle 5 at 1 g is 25 g")
{
    TransportParams p;
    p.n_vehicles = 1;
    p.cruise_rate = 2.0;
    p.idle_rate = 1.0;
    p.scripted_phases = {{10.0, 0.0, 5.0}};
    CHECK(simulate_arrivals(p).total_emissions == 25.0);

    p.scripted_phases.clear();
    CHECK_THROWS_AS((p.scripted_phases = {{1, 0, 0}, {1, 0, 0}}, simulate_arrivals(p)), std::invalid_argument);
}

TEST_CASE("determinism and monotonicity")
{
    std::mt19937_64 gen(17);
    for (int i = 0; i < 50; ++i)
    {
        TransportParams p;
        p.n_vehicles = gen() % 40;
        p.parking_capacity = gen() % 30;
        p.mean_search_time = (gen() % 100) / 10.0;
        p.seed = gen();
        const TransportResult r = simulate_arrivals(p);
        CHECK(simulate_arrivals(p) == r);
        CHECK(r.customers_entering <= std::min(p.n_vehicles, p.parking_capacity));

        TransportParams more = p;
        ++more.n_vehicles;
        CHECK(simulate_arrivals(more).total_emissions >= r.total_emissions);

        TransportParams roomier = p;
        ++roomier.parking_capacity;
        CHECK(simulate_arrivals(roomier).customers_entering >= r.customers_entering);
    }
}

TEST_CASE("parameter validation")
{
    TransportParams p;
    p.cruise_rate = -1;
    CHECK_THROWS_AS(simulate_arrivals(p), std::invalid_argument);
}

TEST_CASE("key=value codec")
{
    TransportParams p;
    p.n_vehicles = 7;
    p.parking_capacity = 4;
    p.mean_search_time = 3.25;
    p.seed = 99;
    const TransportParams back = parse_transport_params(format_transport_params(p));
    CHECK(back.n_vehicles == 7);
    CHECK(back.parking_capacity == 4);
    CHECK(back.mean_search_time == 3.25);
    CHECK(back.seed == 99);

    const TransportResult r = simulate_arrivals(p);
    CHECK(parse_transport_result(format_transport_result(r)) == r);
    CHECK_THROWS(parse_transport_params("bogus=1\n"));
    CHECK_THROWS(parse_transport_params("n_vehicles\n"));
}

TEST_CASE("external command adapter")
{
    TransportParams p;
    p.n_vehicles = 12;
    p.parking_capacity = 5;
    p.seed = 4;
    SUBCASE("native model behind the stdin/stdout contract")
    {
        const ExternalTransportCommand cmd(HYBRIDSIM_TRANSPORT_BIN);
        CHECK(cmd.run(p) == simulate_arrivals(p));
    }
    SUBCASE("a failing command is reported")
    {
        CHECK_THROWS(ExternalTransportCommand("cat >/dev/null; exit 3").run(p));
        CHECK_THROWS(ExternalTransportCommand("cat >/dev/null; echo nonsense").run(p));
    }
}
