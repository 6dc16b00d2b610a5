// blobforge command-line front end. Every subcommand drives a SessionService
// with the same JSON commands the socket protocol carries.

#include "blobforge/core/error.hpp"
#include "blobforge/guidance/wire.hpp"
#include "blobforge/session/server.hpp"

#include <CLI11.hpp>
#include <fmt/core.h>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>

using namespace bf;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kGuidanceEnv = "BLOBFORGE_GUIDANCE_URL";

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir = ".";
    std::string input; ///< session checkpoint to start from
    bool verbose = false;
};

SessionConfig make_config(const Common& c) {
    SessionConfig cfg = c.config_path.empty() ? SessionConfig{} : load_session_config(c.config_path);
    if (c.seed) cfg.seed = *c.seed;
    cfg.validate();
    return cfg;
}

std::shared_ptr<GuidanceProvider> provider_from_env() {
    const char* url = std::getenv(kGuidanceEnv);
    if (!url || !*url) return nullptr;
    return std::make_shared<RemoteProvider>(url);
}

/// Runs commands against one session and writes its checkpoint and log.
class Runner {
public:
    explicit Runner(const Common& c) : common_(c), svc_(make_config(c), "cli") {
        if (auto p = provider_from_env()) svc_.set_provider(std::move(p));
        if (c.verbose)
            svc_.add_listener([](const json& m) { std::cerr << m.dump() << '\n'; });
        fs::create_directories(c.out_dir);
        if (!c.input.empty()) run({{"cmd", "load"}, {"path", c.input}});
    }

    /// Applies a command; job commands block until the job ends.
    CommandResult run(const json& cmd) {
        CommandResult r = svc_.submit(cmd);
        if (r.ok() && SessionService::is_job_command(cmd.value("cmd", std::string()))) r = svc_.wait_idle();
        if (!r.ok())
            throw CommandError(r.code, fmt::format("{} failed [{}]: {}", cmd.value("cmd", std::string("?")),
                                                   to_string(r.code), r.message));
        return r;
    }

    /// Writes <out>/session.bfs and <out>/commands.jsonl.
    void finish() {
        const fs::path out = common_.out_dir;
        svc_.with_session([&](Session& s) {
            s.save(out / "session.bfs");
            write_command_log(s.log(), out / "commands.jsonl");
            return 0;
        });
        std::cerr << fmt::format("wrote {} and {}\n", (out / "session.bfs").string(), (out / "commands.jsonl").string());
    }

    SessionService& service() { return svc_; }

private:
    Common common_;
    SessionService svc_;
};

void print(const CommandResult& r) { std::cout << r.data.dump() << '\n'; }

json read_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError(fmt::format("cannot open '{}'", path));
    try {
        return json::parse(f);
    } catch (const json::exception& e) {
        throw InvalidArgument(fmt::format("'{}': {}", path, e.what()));
    }
}

void add_common(CLI::App* app, Common& c, bool takes_input) {
    app->add_option("--config", c.config_path, "Session configuration (JSON)")->check(CLI::ExistingFile);
    app->add_option("--seed", c.seed, "Session seed (overrides the config)");
    app->add_option("-o,--out", c.out_dir, "Output directory");
    if (takes_input) app->add_option("-i,--in", c.input, "Session checkpoint to start from")->check(CLI::ExistingFile);
    app->add_flag("-v,--verbose", c.verbose, "Stream metrics and job status to stderr");
}

std::atomic<bool> g_stop{false};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"blobforge: interactive Gaussian splat editing and radiance field refinement"};
    app.require_subcommand(1);
    Common common;

    auto* init = app.add_subcommand("init", "Start a session from random blobs in a sphere");
    std::size_t count = 4096;
    double radius = 1.0;
    init->add_option("--count", count, "Number of blobs");
    init->add_option("--radius", radius, "Sphere radius");
    add_common(init, common, false);

    auto* import = app.add_subcommand("import", "Start a session from a splat PLY or a point cloud");
    std::string import_path;
    bool points = false;
    import->add_option("path", import_path, "PLY file")->required()->check(CLI::ExistingFile);
    import->add_flag("--points", points, "Treat the file as a coloured point cloud");
    add_common(import, common, false);

    auto* script = app.add_subcommand("edit-script", "Apply a JSON array of session commands");
    std::string script_path;
    script->add_option("script", script_path, "Command script")->required()->check(CLI::ExistingFile);
    add_common(script, common, true);

    auto* distill = app.add_subcommand("distill", "Distill the splat scene into a radiance field (stage II)");
    std::optional<int> steps, resolution, rays;
    distill->add_option("--steps", steps, "Optimisation steps");
    distill->add_option("--resolution", resolution, "Teacher render resolution");
    distill->add_option("--rays", rays, "Rays per camera per step");
    add_common(distill, common, true);

    auto* refine = app.add_subcommand("refine", "Refine a spherical region with a guidance prompt");
    std::vector<double> region;
    std::string prompt, overlay = "part";
    std::optional<int> refine_steps, refine_res;
    refine->add_option("--region", region, "cx cy cz radius")->expected(4)->required();
    refine->add_option("--prompt", prompt, "Text prompt")->required();
    refine->add_option("--id", overlay, "Overlay id");
    refine->add_option("--steps", refine_steps, "Refinement steps");
    refine->add_option("--resolution", refine_res, "Guidance view resolution");
    add_common(refine, common, true);

    auto* mesh = app.add_subcommand("mesh", "Extract a triangle mesh from a stage II session");
    std::optional<int> mesh_res;
    std::optional<double> iso;
    std::string mesh_path = "mesh.obj";
    mesh->add_option("--resolution", mesh_res, "Marching cubes grid resolution");
    mesh->add_option("--iso", iso, "Density iso level");
    mesh->add_option("--mesh", mesh_path, "Output file (.obj or .ply), relative to --out");
    add_common(mesh, common, true);

    auto* serve = app.add_subcommand("serve", "Serve sessions over a WebSocket");
    std::string host = "127.0.0.1";
    int port = 8765;
    serve->add_option("--host", host, "Bind address");
    serve->add_option("--port", port, "Port (0 picks one)");
    add_common(serve, common, false);

    auto* replay = app.add_subcommand("replay", "Rebuild a session from its command log");
    std::string log_path, verify_path;
    replay->add_option("log", log_path, "commands.jsonl")->required()->check(CLI::ExistingFile);
    replay->add_option("--verify", verify_path, "Checkpoint the replay must reproduce bit for bit")
        ->check(CLI::ExistingFile);
    add_common(replay, common, false);

    auto* config = app.add_subcommand("config", "Print the effective configuration and audited constants");
    add_common(config, common, false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (config->parsed()) {
            const SessionConfig cfg = make_config(common);
            std::cout << json{{"config", session_config_to_json(cfg)}, {"introspect", cfg.introspect()}}.dump(2) << '\n';
            return 0;
        }
        if (serve->parsed()) {
            SessionServer server(make_config(common), provider_from_env);
            const int bound = server.start(host, port);
            std::cerr << fmt::format("serving on ws://{}:{}\n", host, bound);
            std::signal(SIGINT, [](int) { g_stop = true; });
            std::signal(SIGTERM, [](int) { g_stop = true; });
            while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
            server.stop();
            return 0;
        }
        if (replay->parsed()) {
            const SessionConfig cfg = make_config(common);
            const Session s = Session::replay(cfg, read_command_log(log_path));
            fs::create_directories(common.out_dir);
            s.save(fs::path(common.out_dir) / "session.bfs");
            if (!verify_path.empty()) {
                std::ifstream f(verify_path, std::ios::binary);
                const std::string want((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
                const bool same = want == s.checkpoint();
                std::cout << (same ? "replay matches\n" : "replay DIFFERS\n");
                return same ? 0 : 1;
            }
            std::cout << fmt::format("replayed {} commands, generation {}\n", s.log().size(), s.generation());
            return 0;
        }

        Runner runner(common);
        if (init->parsed()) {
            print(runner.run({{"cmd", "init"}, {"count", count}, {"radius", radius}}));
        } else if (import->parsed()) {
            print(runner.run({{"cmd", "import"}, {"path", import_path}, {"kind", points ? "points" : "scene"}}));
        } else if (script->parsed()) {
            const json cmds = read_json_file(script_path);
            if (!cmds.is_array()) throw InvalidArgument("an edit script is a JSON array of commands");
            for (const auto& c : cmds) print(runner.run(c));
        } else if (distill->parsed()) {
            json c = {{"cmd", "transition_stage2"}};
            if (steps) c["steps"] = *steps;
            if (resolution) c["resolution"] = *resolution;
            if (rays) c["rays_per_camera"] = *rays;
            const CommandResult r = runner.run(c);
            print(r);
            if (r.data.value("status", "") == "warning") std::cerr << r.data.at("warning").get<std::string>() << '\n';
        } else if (refine->parsed()) {
            runner.run({{"cmd", "make_region"},
                        {"id", overlay},
                        {"center", {region[0], region[1], region[2]}},
                        {"radius", region[3]}});
            runner.run({{"cmd", "build_overlay"}, {"id", overlay}});
            json begin = {{"cmd", "refine_begin"}, {"overlay", overlay}, {"prompt", prompt}};
            if (refine_steps) begin["steps"] = *refine_steps;
            if (refine_res) begin["resolution"] = *refine_res;
            const CommandResult b = runner.run(begin);
            print(runner.run({{"cmd", "refine_run"}, {"steps", b.data.at("steps")}}));
            runner.run({{"cmd", "refine_end"}});
        } else if (mesh->parsed()) {
            json c = {{"cmd", "extract_mesh"}, {"path", (fs::path(common.out_dir) / mesh_path).string()}};
            if (mesh_res) c["resolution"] = *mesh_res;
            if (iso) c["iso"] = *iso;
            print(runner.run(c));
        }
        runner.finish();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
