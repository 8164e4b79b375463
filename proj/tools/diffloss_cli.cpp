#include <CLI11.hpp>

#include <cstdio>
#include <exception>

#include "diffloss/core/common.hpp"

int main(int argc, char** argv) {
    CLI::App app{"diffloss: restoration training with a frozen diffusion prior"};
    app.set_version_flag("--version", std::string(diffloss::kVersion));
    app.require_subcommand(1);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const diffloss::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return static_cast<int>(e.category());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
