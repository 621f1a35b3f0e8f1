// Native transport model behind the external-command contract: key=value
// parameters on stdin, key=value results on stdout.
#include "hybridsim/transport.hpp"

#include <iostream>
#include <iterator>
#include <string>

int main()
{
    try
    {
        const std::string input((std::istreambuf_iterator<char>(std::cin)), std::istreambuf_iterator<char>());
        const hybridsim::TransportParams params = hybridsim::parse_transport_params(input);
        std::cout << hybridsim::format_transport_result(hybridsim::simulate_arrivals(params));
        return 0;
    }
    catch (const std::exception &ex)
    {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
}
