#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "testing.hpp"

#include "support.hpp"

#include "tripro/config.hpp"
#include "tripro/events.hpp"

#include <cmath>
#include <cstdlib>
#include <sys/wait.h>

using namespace tripro;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
    int code = -1;
    std::string output;
};

Result tripro_cli(const std::string& args) {
    const auto log = support::scratch_root() / "cli.log";
    fs::create_directories(log.parent_path());
    const auto cmd = std::string(TRIPRO_CLI_PATH) + " " + args + " > '" + log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, support::slurp(log)};
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

/// A dataset written by the CLI plus a tiny untrained config pointing at it.
struct Fixture {
    fs::path root, data, config;
};

const Fixture& fixture() {
    static const Fixture f = [] {
        Fixture f;
        f.root = support::scratch("cli");
        f.data = f.root / "data";
        const auto r = tripro_cli("synth-data --out " + q(f.data) +
                                  " --identities 6 --tracklets 3 --frames 4 --height 32 --width 16 --seed 1");
        REQUIRE_MESSAGE(r.code == 0, r.output);
        auto cfg = support::tiny_experiment(f.data, f.root / "out");
        for (auto& s : cfg.stages) s.epochs = 0;
        cfg.stages[0].epochs = 1;
        cfg.eval_split = "held_in";
        f.config = f.root / "tiny.json";
        config::save_config(f.config, cfg);
        return f;
    }();
    return f;
}

} // namespace

TEST_CASE("synth-data refuses to overwrite without --force") {
    const auto& f = fixture();
    CHECK(fs::exists(f.data / "attributes.csv"));
    CHECK(fs::exists(f.data / "0001" / "000" / "events.evrd"));
    CHECK(tripro_cli("synth-data --out " + q(f.data) + " --identities 6 --tracklets 3 --frames 4 --height 32 --width 16")
              .code == 2);

    const auto copy = f.root / "again";
    fs::create_directories(copy);
    std::ofstream(copy / "keep.txt") << "x";
    CHECK(tripro_cli("synth-data --out " + q(copy) + " --identities 3 --tracklets 2 --frames 2 --height 32 --width 16")
              .code == 2);
    const auto forced = tripro_cli("synth-data --out " + q(copy) +
                                   " --identities 3 --tracklets 2 --frames 2 --height 32 --width 16 --force");
    CHECK_MESSAGE(forced.code == 0, forced.output);
    CHECK(fs::exists(copy / "keep.txt")); // only dataset entries are cleared
    CHECK(fs::exists(copy / "0003" / "001" / "rgb_00001.png"));
}

TEST_CASE("usage errors") {
    CHECK(tripro_cli("").code != 0);
    CHECK(tripro_cli("frobnicate").code != 0);
    CHECK(tripro_cli("synth-data").code != 0);
    const auto& f = fixture();
    const auto bad_key = tripro_cli("train -c " + q(f.config) + " --set prompts.nope=1");
    CHECK(bad_key.code == 2);
    CHECK(bad_key.output.find("unknown config key") != std::string::npos);
    const auto bad_axis = tripro_cli("ablate -c " + q(f.config) + " --axis dropout");
    CHECK(bad_axis.code == 2);
    CHECK(bad_axis.output.find("unknown ablation axis") != std::string::npos);
}

TEST_CASE("init-config writes a loadable default") {
    const auto path = support::scratch("init") / "c.json";
    REQUIRE(tripro_cli("init-config --out " + q(path)).code == 0);
    CHECK(config::to_json(config::load_config(path)) == config::to_json(config::default_config()));
}

TEST_CASE("train, eval and export an almost untrained model") {
    const auto& f = fixture();
    const auto out = f.root / "out";
    const auto trained = tripro_cli("train -c " + q(f.config));
    REQUIRE_MESSAGE(trained.code == 0, trained.output);
    const auto run = out / "runs" / "run";
    for (const auto* name : {"config.json", "manifest.json", "history.json", "metrics.json", "final/model.pt"})
        CHECK_MESSAGE(fs::exists(run / name), name);
    CHECK(fs::exists(run / "stage1" / "epoch1" / "state.json"));

    // the run directory is taken now
    CHECK(tripro_cli("train -c " + q(f.config)).code == 2);

    const auto ckpt = run / "final";
    const auto a = tripro_cli("eval --checkpoint " + q(ckpt) + " --report " + q(f.root / "eval_a.json"));
    REQUIRE_MESSAGE(a.code == 0, a.output);
    const auto b = tripro_cli("eval --checkpoint " + q(ckpt) + " --report " + q(f.root / "eval_b.json"));
    REQUIRE(b.code == 0);
    const auto text = support::slurp(f.root / "eval_a.json");
    CHECK(text == support::slurp(f.root / "eval_b.json"));
    const auto report = json::parse(text);
    for (const auto* key : {"mAP", "rank1", "rank5", "rank10"}) {
        CAPTURE(key);
        const double v = report.at(key).get<double>();
        CHECK(std::isfinite(v));
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    const auto exported = tripro_cli("export-ranklist --checkpoint " + q(ckpt) + " -o " + q(f.root / "ranks") + " --top 3");
    REQUIRE_MESSAGE(exported.code == 0, exported.output);
    CHECK(fs::exists(f.root / "ranks" / "index.csv"));
    CHECK(fs::exists(f.root / "ranks" / "export.json"));
    CHECK(!fs::exists(f.root / "ranks" / ".tripro.lock"));

    const auto resumed = tripro_cli("train -c " + q(f.config) + " --resume " + q(run / "stage1" / "epoch1"));
    CHECK_MESSAGE(resumed.code == 0, resumed.output);
}

TEST_CASE("a held lock stops a second run") {
    const auto& f = fixture();
    const auto out = support::scratch("locked");
    std::ofstream(out / ".tripro.lock") << "1234\n";
    const auto r = tripro_cli("train -c " + q(f.config) + " --output " + q(out));
    CHECK(r.code == 2);
    CHECK(r.output.find("locked") != std::string::npos);
    CHECK(!fs::exists(out / "runs"));
}

TEST_CASE("convert-events matches the dataset's own event file") {
    const auto& f = fixture();
    const auto dir = f.data / "0002" / "001";
    const auto out = support::scratch("convert") / "e.evrd";
    const auto r = tripro_cli("convert-events --frames " + q(dir) + " -o " + q(out) + " --threshold 0.2");
    REQUIRE_MESSAGE(r.code == 0, r.output);
    const auto converted = events::read_evrd(out);
    const auto shipped = events::read_evrd(dir / "events.evrd");
    CHECK(converted.width == 16);
    CHECK(converted.height == 32);
    CHECK(converted.events.size() == shipped.events.size());
    CHECK(support::slurp(out) == support::slurp(dir / "events.evrd"));
    CHECK(tripro_cli("convert-events --frames " + q(f.root / "nowhere") + " -o " + q(out)).code != 0);
}
