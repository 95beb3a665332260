#include "helpers.hpp"

#include "cli.hpp"
#include "marginlab/data.hpp"
#include "marginlab/serialize.hpp"

#include <doctest.h>
#include <json.hpp>

#include <fstream>
#include <sstream>

using namespace marginlab;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "marginlab");
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("cli: datagen, train, margins and bounds") {
    testing::TempDir dir("cli");
    const std::string out = dir.path.string();
    auto r = run_cli({"--out", out, "--seed", "5", "datagen", "--m", "80", "--test-m", "40", "--separation", "6"});
    REQUIRE(r.code == cli::kExitOk);
    const Dataset d = load_dataset(dir.path / "data.mlds");
    CHECK(d.size() == 80);

    // Reloaded file equals in-memory generation with the same seed.
    auto again = run_cli({"--out", out + "/again", "--seed", "5", "datagen", "--m", "80", "--separation", "6"});
    REQUIRE(again.code == 0);
    CHECK(file_fingerprint(dir.path / "again" / "data.mlds") == file_fingerprint(dir.path / "data.mlds"));
    auto other = run_cli({"--out", out + "/other", "--seed", "6", "datagen", "--m", "80", "--separation", "6"});
    CHECK(file_fingerprint(dir.path / "other" / "data.mlds") != file_fingerprint(dir.path / "data.mlds"));

    const std::string data = (dir.path / "data.mlds").string(), test = (dir.path / "data_test.mlds").string();
    r = run_cli({"--out", out + "/wd", "train", "--data", data, "--test", test, "--hidden", "8", "--epochs", "3",
                 "--reg", "wd", "--lambda", "1e-3"});
    REQUIRE(r.code == 0);
    r = run_cli({"--out", out + "/jac", "train", "--data", data, "--test", test, "--hidden", "8", "--epochs", "3",
                 "--reg", "jac", "--lambda", "1e-2"});
    REQUIRE(r.code == 0);
    CHECK(std::filesystem::exists(dir.path / "wd" / "history.csv"));
    CHECK(std::filesystem::exists(dir.path / "jac" / "history.csv"));

    const auto manifest = nlohmann::json::parse(slurp(dir.path / "jac" / "train_manifest.json"));
    CHECK(manifest["subcommand"] == "train");
    CHECK(manifest["dataset_fingerprints"][data] == file_fingerprint(data));

    const std::string model = (dir.path / "jac" / "model.json").string();

    r = run_cli({"--out", out + "/m", "margins", "--model", model, "--data", data, "--test", test, "--directions", "8"});
    REQUIRE(r.code == 0);
    const auto summary = nlohmann::json::parse(slurp(dir.path / "m" / "margins_summary.json"));
    CHECK(summary.contains("train"));
    CHECK(summary["test"].contains("max_jac_spec"));
    CHECK(summary["train"].contains("min_score"));

    r = run_cli({"--out", out + "/b", "bounds", "--model", model, "--data", data});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("rademacher") != std::string::npos);
    const auto table = nlohmann::json::parse(slurp(dir.path / "b" / "bounds.json"));
    CHECK(table.is_object());
}

TEST_CASE("cli: resume round-trips weights") {
    testing::TempDir dir("resume");
    const std::string out = dir.path.string();
    REQUIRE(run_cli({"--out", out, "datagen", "--m", "20"}).code == 0);
    const std::string data = out + "/data.mlds";
    REQUIRE(run_cli({"--out", out + "/a", "train", "--data", data, "--epochs", "1"}).code == 0);
    // A vanishing rate leaves every weight below half an ulp of change.
    REQUIRE(run_cli({"--out", out + "/b", "train", "--data", data, "--resume", out + "/a/model.json", "--epochs", "1",
                     "--lr", "1e-300", "--momentum", "0"})
                .code == 0);
    const Network a = load_network(out + "/a/model.json");
    const Network b = load_network(out + "/b/model.json");
    const auto pa = a.parameters();
    const auto pb = b.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(*pa[i].weight == *pb[i].weight);
}

TEST_CASE("cli: configuration errors") {
    auto r = run_cli({"margins", "--model", ""});
    CHECK(r.code == cli::kExitConfig);
    CHECK(r.err.find("--model") != std::string::npos);

    r = run_cli({"datagen", "--kind", "gmm", "--dim", "2", "--rank", "3"});
    CHECK(r.code == cli::kExitConfig);
    CHECK(r.err.find("--rank") != std::string::npos);

    CHECK(run_cli({"datagen", "--m", "abc"}).code == cli::kExitConfig);
    CHECK(run_cli({"frobnicate"}).code == cli::kExitConfig);
    CHECK(run_cli({"--help"}).code == cli::kExitOk);
}

TEST_CASE("cli: config file with flag override") {
    testing::TempDir dir("cfg");
    const auto cfg = dir.path / "run.ini";
    std::ofstream(cfg) << "[datagen]\nm=30\nclasses=3\ndim=3\n";
    const auto r = run_cli({"--config", cfg.string(), "--out", dir.path.string(), "datagen", "--m", "12"});
    REQUIRE(r.code == 0);
    const Dataset d = load_dataset(dir.path / "data.mlds");
    CHECK(d.size() == 12);
    CHECK(d.num_classes == 3);
}

TEST_CASE("cli: verify and fault injection") {
    testing::TempDir dir("verify");
    const std::string out = dir.path.string();
    auto r = run_cli({"--out", out, "verify", "--filter", "jacobian_fd", "--trials", "5"});
    CHECK(r.code == cli::kExitOk);
    CHECK(r.out.find("PASS jacobian_fd") != std::string::npos);
    r = run_cli({"--out", out, "verify", "--filter", "jacobian_fd", "--trials", "5", "--inject-fault", "jacobian"});
    CHECK(r.code == cli::kExitVerifyFailed);
    CHECK(r.out.find("FAIL jacobian_fd") != std::string::npos);
    CHECK(run_cli({"--out", out, "verify", "--filter", "nothing-matches"}).code == cli::kExitConfig);
}

TEST_CASE("cli: verify filter token for the average-Jacobian identity") {
    testing::TempDir dir("verify_alias");
    const auto r = run_cli({"--out", dir.path.string(), "verify", "--filter", "theorem3", "--trials", "3"});
    CHECK(r.code == cli::kExitOk);
    CHECK(r.out.find("PASS average_jacobian") != std::string::npos);
    CHECK(r.out.find("jacobian_fd") == std::string::npos);
}
