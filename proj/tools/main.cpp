// draftedit CLI: train / decode / sweep / rl / check over a JSON run config.
#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "draftedit/harness.hpp"

int main(int argc, char ** argv) {
    CLI::App app{ "draft-and-edit block-diffusion toolkit" };
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    long long   seed     = -1;
    bool        has_seed = false;

    auto add_common = [&](CLI::App * sub) {
        sub->add_option("--config", config_path, "run config JSON")->required();
        sub->add_option("--seed", seed, "override the first seed")->each([&](const std::string &) {
            has_seed = true;
        });
        sub->add_option("--out", out_dir, "override the output directory");
    };

    const char * modes[] = { "train", "decode", "sweep", "rl", "check" };
    for (const char * mode : modes) {
        add_common(app.add_subcommand(mode));
    }

    CLI11_PARSE(app, argc, argv);

    try {
        draftedit::RunConfig cfg = draftedit::RunConfig::load(config_path);
        cfg.mode                 = app.get_subcommands().front()->get_name();
        if (has_seed) {
            cfg.seeds[0] = static_cast<uint64_t>(seed);
        }
        if (!out_dir.empty()) {
            cfg.paths.output_dir = out_dir;
        }
        return draftedit::run_command(cfg);
    } catch (const draftedit::MissingInputError & e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const draftedit::ConfigError & e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception & e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
