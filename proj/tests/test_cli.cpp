#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "vesselseg/cli.hpp"
#include "vesselseg/config.hpp"

using namespace vseg;
namespace fs = std::filesystem;

namespace {

int run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "vesselseg");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli::run(static_cast<int>(argv.size()), argv.data());
}

fs::path temp_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("vseg_cli_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("unknown subcommand and unknown flag exit with code 2") {
    CHECK(run_cli({"definitely-not-a-subcommand"}) == 2);
    CHECK(run_cli({"phantom", "--no-such-flag", "x", "--out", "/tmp/unused"}) == 2);
}

TEST_CASE("validation failure exits with code 1") {
    CHECK(run_cli({"evaluate", "--pred-dir", "/nonexistent", "--manifest", "/nonexistent.json",
                   "--out", "/tmp/r.json"}) == 1);
}

TEST_CASE("config files reject unknown keys") {
    auto dir = temp_dir("cfg");
    {
        std::ofstream f(dir / "bad.toml");
        f << "epochs = 2\nno_such_key = 5\n";
    }
    RunConfig rc;
    CHECK_THROWS_WITH_AS(rc.load_file((dir / "bad.toml").string()),
                         doctest::Contains("unknown config key"), std::runtime_error);
}

TEST_CASE("config file values override defaults and become user-provenance") {
    auto dir = temp_dir("cfg2");
    {
        std::ofstream f(dir / "train.toml");
        f << "# comment line\n"
          << "epochs = 2\n"
          << "variant = \"conv_unet\"\n"
          << "learning_rate = 0.01\n";
    }
    RunConfig rc;
    rc.load_file((dir / "train.toml").string());
    CHECK(rc.get("epochs") == "2");
    CHECK(rc.entries().at("epochs").provenance == Provenance::user);
    CHECK(rc.entries().at("lr_factor").provenance == Provenance::method_default);
    CHECK(rc.entries().at("window").provenance == Provenance::artifact_default);

    TrainerConfig t = rc.trainer();
    CHECK(t.epochs == 2);
    CHECK(t.learning_rate == 0.01);
}

TEST_CASE("provenance listing names the published defaults") {
    RunConfig rc;
    const std::string desc = rc.describe();
    CHECK(desc.find("epochs = 100  [method-default]") != std::string::npos);
    CHECK(desc.find("ema_base_decay = 0.999  [method-default]") != std::string::npos);
    CHECK(desc.find("[artifact-default]") != std::string::npos);
}

TEST_CASE("end-to-end pipeline: phantom, split, preprocess, train, predict, evaluate, report") {
    auto dir = temp_dir("pipeline");
    const std::string phantom_dir = (dir / "phantom").string();
    const std::string cache_dir = (dir / "cache").string();
    const std::string run_dir = (dir / "run").string();
    const std::string pred_dir = (dir / "pred").string();
    fs::create_directories(pred_dir);

    REQUIRE(run_cli({"phantom", "--n", "4", "--size", "32", "--seed", "3", "--out", phantom_dir}) ==
            0);
    REQUIRE(fs::exists(fs::path(phantom_dir) / "manifest.json"));
    REQUIRE(fs::exists(fs::path(phantom_dir) / "run.json"));

    REQUIRE(run_cli({"split", "--manifest", phantom_dir + "/manifest.json", "--out",
                     phantom_dir + "/split.json", "--ratios", "0.5,0.25,0.25", "--seed", "1"}) == 0);

    REQUIRE(run_cli({"preprocess", "--manifest", phantom_dir + "/split.json", "--patch", "8",
                     "--stride", "4", "--spacing", "0.35", "--out", cache_dir}) == 0);
    REQUIRE(fs::exists(fs::path(cache_dir) / "manifest.json"));

    REQUIRE(run_cli({"train", "--manifest", cache_dir + "/manifest.json", "--out", run_dir,
                     "--set", "epochs=1", "--set", "patch_size=8", "--set", "base_channels=4",
                     "--set", "depth=1", "--set", "steps_per_epoch=3", "--set", "seed=5"}) == 0);
    REQUIRE(fs::exists(fs::path(run_dir) / "best.ckpt"));
    REQUIRE(fs::exists(fs::path(run_dir) / "train_log.jsonl"));

    // run.json captures the resolved config with provenance tags.
    {
        nlohmann::json run_record = nlohmann::json::parse(slurp(fs::path(run_dir) / "run.json"));
        CHECK(run_record["version"].get<std::string>().find("vesselseg") == 0);
        CHECK(run_record["config"]["epochs"]["provenance"] == "user");
        CHECK(run_record["config"]["lr_factor"]["provenance"] == "method-default");
        CHECK(run_record["seed"] == 5);
    }

    // Predict every test-split case.
    DatasetManifest split = load_manifest(phantom_dir + "/split.json");
    DatasetManifest cache = load_manifest(cache_dir + "/manifest.json");
    for (const auto& id : split.splits.at("test")) {
        const CaseRecord& rec = cache.find_case(id);
        REQUIRE(run_cli({"predict", "--checkpoint", run_dir + "/best.ckpt", "--volume",
                         rec.volume_path, "--out", pred_dir + "/" + id + ".nii.gz"}) == 0);
    }

    const std::string report_path = (dir / "report.json").string();
    REQUIRE(run_cli({"evaluate", "--pred-dir", pred_dir, "--manifest",
                     cache_dir + "/manifest.json", "--out", report_path, "--name", "smoke"}) == 0);

    nlohmann::json report = nlohmann::json::parse(slurp(report_path));
    CHECK(report["cases"].size() == split.splits.at("test").size());
    CHECK(report["aggregate"].contains("surface_error"));
    CHECK(report["aggregate"].contains("fine_vessel_sensitivity"));

    const std::string table_path = (dir / "table.md").string();
    REQUIRE(run_cli({"report", "--in", report_path, "--format", "md", "--out", table_path}) == 0);
    const std::string table = slurp(table_path);
    CHECK(table.find("| Surface Error |") != std::string::npos);
    CHECK(table.find("| Sensitivity |") != std::string::npos);
    CHECK(table.find("±") != std::string::npos);
    CHECK(table.find("| smoke |") != std::string::npos);

    const std::string csv_path = (dir / "table.csv").string();
    REQUIRE(run_cli({"report", "--in", report_path, "--format", "csv", "--out", csv_path}) == 0);
    CHECK(slurp(csv_path).find("Surface Error") != std::string::npos);
}

TEST_CASE("report --provenance prints the hyperparameter table") {
    // Smoke only: the detailed string checks live in the RunConfig tests.
    CHECK(run_cli({"report", "--provenance"}) == 0);
}

TEST_CASE("split --folds writes k fold manifests") {
    auto dir = temp_dir("folds");
    const std::string phantom_dir = (dir / "phantom").string();
    REQUIRE(run_cli({"phantom", "--n", "5", "--size", "32", "--seed", "4", "--out", phantom_dir}) ==
            0);
    REQUIRE(run_cli({"split", "--manifest", phantom_dir + "/manifest.json", "--out",
                     (dir / "folds").string(), "--folds", "5"}) == 0);
    for (int f = 0; f < 5; ++f)
        CHECK(fs::exists(dir / "folds" / ("fold" + std::to_string(f) + ".json")));
}
