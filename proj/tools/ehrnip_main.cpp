#include "ehrnip/cli.hpp"

#include <csignal>
#include <iostream>

int main(int argc, char** argv) {
    std::signal(SIGINT, [](int) { ehrnip::request_serve_shutdown(); });
    std::signal(SIGTERM, [](int) { ehrnip::request_serve_shutdown(); });
    return ehrnip::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
