#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "eitdiff/core/binary_io.hpp"
#include "eitdiff/core/error.hpp"
#include "eitdiff/pipeline/commands.hpp"
#include "eitdiff/pipeline/config.hpp"

namespace {

enum Exit { ok = 0, failure = 1, config_error = 2, numerical_failure = 3 };

} // namespace

int main(int argc, char** argv) {
    using namespace eitdiff;
    CLI::App app{"eitdiff: EIT reconstruction with conditional diffusion and voltage consistency"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::optional<std::string> out;
    bool quiet = false;
    app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "global seed (overrides the config)");
    app.add_option("--out", out, "output directory (overrides the config)");
    app.add_option("--threads", threads, "worker threads (overrides the config)")->check(CLI::PositiveNumber);
    app.add_flag("--quiet", quiet, "no progress output");

    struct Command {
        const char* name;
        const char* help;
        nlohmann::json (*run)(const pipeline::RunConfig&, std::ostream&);
    };
    const Command commands[] = {
        {"mesh", "build the inversion mesh", pipeline::cmd_mesh},
        {"dataset", "generate the phantom/voltage/pre-image corpus", pipeline::cmd_dataset},
        {"train-score", "train the conditional noise-prediction network", pipeline::cmd_train_score},
        {"train-fvcn", "train the forward voltage constraint network", pipeline::cmd_train_fvcn},
        {"reconstruct", "sample reconstructions for the selected records", pipeline::cmd_reconstruct},
        {"evaluate", "metric tables and the noise sweep", pipeline::cmd_evaluate},
        {"bench", "per-stage timing", pipeline::cmd_bench},
    };
    for (const auto& c : commands) app.add_subcommand(c.name, c.help);
    app.add_subcommand("run", "mesh, dataset, both trainings, reconstruct and evaluate in order");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : config_error;
    }

    std::ostream& log = quiet ? pipeline::detail::null_log() : std::cerr;
    try {
        nlohmann::json doc = nlohmann::json::object();
        if (!config_path.empty()) {
            try {
                doc = io::read_json(config_path);
            } catch (const IoError& e) {
                throw ConfigError(e.what());
            }
        }
        pipeline::Overrides ov;
        ov.seed = seed;
        ov.threads = threads;
        if (out) ov.out = *out;
        const pipeline::RunConfig cfg = pipeline::apply_overrides(doc, ov);

        const std::string name = app.get_subcommands().front()->get_name();
        nlohmann::json result;
        if (name == "run") {
            for (const auto& c : commands)
                if (std::string(c.name) != "bench") result[c.name] = c.run(cfg, log);
        } else {
            for (const auto& c : commands)
                if (name == c.name) result = c.run(cfg, log);
        }
        std::cout << result.dump(2) << '\n';
        return ok;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return config_error;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return numerical_failure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return failure;
    }
}
