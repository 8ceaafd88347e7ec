#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "testing.hpp"

#include "support.hpp"

#include "tripro/config.hpp"
#include "tripro/errors.hpp"
#include "tripro/experiment.hpp"

using namespace tripro;
using nlohmann::json;

TEST_CASE("config json round trip") {
    auto c = config::default_config();
    c.name = "exp";
    c.seed = 3;
    c.model.prompts.cmp_length = 7;
    c.model.prompts.direction = model::Direction::Bidirectional;
    c.stages[2].epochs = 11;
    const auto j = config::to_json(c);
    const auto back = config::from_json(j);
    CHECK(config::to_json(back) == j);
    CHECK(config::config_hash(back) == config::config_hash(c));
    CHECK(config::config_hash(c).size() == 16);

    const auto dir = support::scratch("config");
    config::save_config(dir / "c.json", c);
    CHECK(config::to_json(config::load_config(dir / "c.json")) == j);

    auto other = c;
    other.model.prompts.cmp_length = 8;
    CHECK(config::config_hash(other) != config::config_hash(c));
}

TEST_CASE("missing keys keep defaults and unknown keys are rejected") {
    const auto partial = config::from_json(json::parse(R"({"name": "p", "prompts": {"cmp_length": 5}})"));
    CHECK(partial.name == "p");
    CHECK(partial.model.prompts.cmp_length == 5);
    CHECK(partial.model.prompts.cmp_depth == config::default_config().model.prompts.cmp_depth);
    CHECK(partial.stages.size() == 3);

    CHECK_THROWS_AS(config::from_json(json::parse(R"({"nmae": "typo"})")), ConfigError);
    CHECK_THROWS_AS(config::from_json(json::parse(R"({"prompts": {"cmp_lenght": 5}})")), ConfigError);
    CHECK_THROWS_AS(config::from_json(json::parse(R"({"prompts": {"cmp_length": "long"}})")), ConfigError);
    CHECK_THROWS_AS(config::from_json(json::parse(R"({"eval_split": "val"})")), ConfigError);
    CHECK_THROWS_AS(config::from_json(json::parse(R"({"prompts": {"projector": "mlp"}})")), ConfigError);
    CHECK_THROWS_AS(config::from_json(json::parse(R"({"stages": [{"stage": 4}]})")), ConfigError);
    CHECK_THROWS_AS(config::load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("set by dotted path") {
    auto c = config::default_config();
    config::set_by_path(c, "prompts.cmp_length", 40);
    CHECK(c.model.prompts.cmp_length == 40);
    config::set_by_path(c, "stages.2.lr", 1e-4);
    CHECK(c.stages[2].lr == doctest::Approx(1e-4));
    config::set_by_path(c, "encoder.image_height", 64);
    CHECK(c.model.encoder.image_height == 64);
    CHECK_THROWS_AS(config::set_by_path(c, "prompts.nope", 1), ConfigError);
    CHECK_THROWS_AS(config::set_by_path(c, "stages.9.lr", 1), ConfigError);
    CHECK_THROWS_AS(config::set_by_path(c, "stages.x.lr", 1), ConfigError);
    CHECK_THROWS_AS(config::set_by_path(c, "frames", 0), ConfigError);
}

TEST_CASE("ablation rows") {
    const auto base = config::default_config();
    const auto base_json = config::to_json(base);

    const auto lengths = experiment::ablation_rows(base, "cmp_length");
    REQUIRE(lengths.size() == 3);
    std::vector<int> seen;
    for (const auto& r : lengths) seen.push_back(r.config.model.prompts.cmp_length);
    CHECK((seen == std::vector<int>{10, 20, 40}));

    const auto projectors = experiment::ablation_rows(base, "projector");
    REQUIRE(projectors.size() == 3);
    CHECK(projectors[0].label == "fc");
    CHECK(projectors[1].label == "adapter");
    CHECK(projectors[2].label == "none");
    CHECK((projectors[2].config.model.prompts.projector == model::Projector::None));

    for (const auto& axis : experiment::ablation_axes()) {
        CAPTURE(axis);
        for (const auto& row : experiment::ablation_rows(base, axis)) {
            // each patch op touches the prompt settings only
            for (const auto& op : row.diff) CHECK(op.at("path").get<std::string>().rfind("/prompts/", 0) == 0);
            auto patched = base_json.patch(row.diff);
            auto expected = config::to_json(row.config);
            patched.erase("name");
            expected.erase("name");
            CHECK(patched == expected);
        }
    }

    const auto modules = experiment::ablation_rows(base, "modules");
    REQUIRE(modules.size() == 4);
    CHECK((!modules[0].config.model.prompts.use_pnap && !modules[0].config.model.prompts.use_cmp));
    CHECK((modules[3].config.model.prompts.use_pnap && modules[3].config.model.prompts.use_cmp));

    const auto depths = experiment::ablation_rows(base, "cmp_depth");
    REQUIRE(depths.size() == 3);
    CHECK(!depths[0].skipped);
    CHECK(!depths[1].skipped);
    CHECK(depths[2].skipped);
    CHECK(depths[2].reason.find("exceeds encoder depth") != std::string::npos);

    CHECK_THROWS_AS(experiment::ablation_rows(base, "dropout"), ConfigError);
}

TEST_CASE("ablation report") {
    auto rows = experiment::ablation_rows(config::default_config(), "cmp_depth");
    rows[0].per_seed = {eval::Metrics{}, eval::Metrics{}};
    rows[0].median_map = 0.5;
    rows[0].median_rank1 = 0.75;
    const auto path = support::scratch("report") / "r.json";
    experiment::write_ablation_report(path, "cmp_depth", rows, "abc");
    const auto j = json::parse(support::slurp(path));
    CHECK(j.at("axis") == "cmp_depth");
    CHECK(j.at("base_config_hash") == "abc");
    REQUIRE(j.at("rows").size() == 3);
    CHECK(j.at("rows")[0].at("median_mAP") == 0.5);
    CHECK(j.at("rows")[2].at("skipped") == true);
}

TEST_CASE("directory lock") {
    const auto dir = support::scratch("lock");
    {
        experiment::DirectoryLock a(dir);
        CHECK_THROWS_AS(experiment::DirectoryLock{dir}, ConfigError);
    }
    CHECK_NOTHROW(experiment::DirectoryLock{dir});
    CHECK(!experiment::non_empty_dir(dir));
    CHECK(!experiment::non_empty_dir(dir / "missing"));
}
