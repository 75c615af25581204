#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "doctest.h"
#include "dualvit/cli.hpp"
#include "dualvit/complexity.hpp"
#include "dualvit/data.hpp"

using namespace dualvit;
using nlohmann::json;

namespace {

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    std::ostringstream out, err;
    Run r;
    r.code = run_cli(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::filesystem::path temp_path(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "dualvit_test_cli";
    std::filesystem::create_directories(dir);
    return dir / name;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("describe") {
    auto r = run({"describe", "--preset", "S"});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("1      Dual   3      2      64        8    4    4      56x56  3136  64") != std::string::npos);
    CHECK(r.out.find("4      Merge  3      14     448       3    2    2      7x7    49    64") != std::string::npos);

    r = run({"describe", "--preset", "tiny", "--json"});
    CHECK(r.code == kExitOk);
    const auto j = json::parse(r.out);
    CHECK(j["stages"].size() == 4);
    CHECK(j["resolution"] == 32);
    CHECK(j["stages"][0]["tokens"] == 64);

    r = run({"describe", "--preset", "X"});
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("S, B, L, tiny") != std::string::npos);

    r = run({"describe", "--preset", "B", "--res", "256", "--json"});
    CHECK(json::parse(r.out)["stages"][3]["grid"] == json::array({8, 8}));
}

TEST_CASE("config files and overrides") {
    auto r = run({"describe", "--preset", "tiny", "m=2", "stages.1.heads=4", "--json"});
    REQUIRE(r.code == kExitOk);
    const auto j = json::parse(r.out);
    CHECK(j["m"] == 2);
    CHECK(j["stages"][1]["heads"] == 4);

    CHECK(run({"describe", "--preset", "tiny", "bogus=1"}).code == kExitUsage);
    CHECK(run({"describe", "--preset", "tiny", "stages.1.heads=5"}).code == kExitUsage);

    const auto cfg = temp_path("c.json");
    std::ofstream(cfg) << R"({"preset": "B", "m": 32})";
    r = run({"describe", "--config", cfg.string(), "--json"});
    REQUIRE(r.code == kExitOk);
    CHECK(json::parse(r.out)["m"] == 32);
    CHECK(run({"describe", "--config", temp_path("none.json").string()}).code == kExitUsage);
    CHECK(run({"describe", "--config", cfg.string(), "--preset", "S"}).code == kExitUsage);
}

TEST_CASE("count") {
    auto r = run({"count", "--preset", "tiny", "--res", "32", "--json"});
    REQUIRE(r.code == kExitOk);
    const auto j = json::parse(r.out);
    const auto lib = count_costs(preset_config("tiny"), AblationVariant::D, 32);
    CHECK(j["params"].get<std::uint64_t>() == lib.params);
    CHECK(j["macs"].get<std::uint64_t>() == lib.macs);
    CHECK(j["breakdown"].size() == lib.breakdown.size());

    r = run({"count", "--preset", "S", "--res", "224"});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("giga-MACs") != std::string::npos);
    CHECK(r.out.find("stage3.block5") != std::string::npos);

    r = run({"count", "--preset", "S", "--res", "225"});
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("225") != std::string::npos);
    CHECK(run({"count", "--preset", "S", "--variant", "E"}).code == kExitUsage);
}

TEST_CASE("gradcheck exit codes") {
    auto r = run({"gradcheck", "--block", "dual", "--tol", "1e-4"});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("PASS") != std::string::npos);

    r = run({"gradcheck", "--block", "merge", "--tol", "1e-13", "--json"});
    CHECK(r.code == kExitCheckFailed);
    const auto j = json::parse(r.out);
    CHECK_FALSE(j["passed"].get<bool>());
    CHECK(j["targets"][0]["failures"].size() > 0);

    CHECK(run({"gradcheck", "--block", "conv"}).code == kExitUsage);
}

TEST_CASE("ablate") {
    auto r = run({"ablate", "--preset", "tiny", "--json"});
    REQUIRE(r.code == kExitOk);
    const auto rows = json::parse(r.out)["variants"];
    REQUIRE(rows.size() == 4);
    const auto p = [&](int i) { return rows[i]["params"].get<std::uint64_t>(); };
    CHECK(p(1) < p(0));
    CHECK(p(0) < p(2));
    CHECK(p(2) == p(3));
    r = run({"ablate", "--preset", "tiny"});
    CHECK(r.out.find("no semantic feed-forward") != std::string::npos);
}

TEST_CASE("train, eval and synth") {
    const auto ckpt = temp_path("m.dvcp");
    const auto csv = temp_path("loss.csv");
    const std::vector<std::string> args{"train", "--preset", "tiny", "--steps", "12", "--batch", "8", "--out",
                                        ckpt.string(), "--csv", csv.string(), "--seed", "5", "--log-every", "0"};
    auto r = run(args);
    REQUIRE(r.code == kExitOk);
    const auto first = slurp(csv);
    CHECK(first.rfind("step,loss,lr\n0,", 0) == 0);
    CHECK(std::count(first.begin(), first.end(), '\n') == 13);
    REQUIRE(run(args).code == kExitOk);
    CHECK(slurp(csv) == first);

    r = run({"eval", "--checkpoint", ckpt.string(), "--json"});
    REQUIRE(r.code == kExitOk);
    const double acc = json::parse(r.out)["accuracy"];
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);

    const auto dvds = temp_path("d.dvds");
    REQUIRE(run({"synth", "--out", dvds.string()}).code == kExitOk);
    r = run({"eval", "--checkpoint", ckpt.string(), "--data", dvds.string(), "--json"});
    REQUIRE(r.code == kExitOk);
    CHECK(json::parse(r.out)["accuracy"].get<double>() == acc);

    CHECK(run({"eval", "--checkpoint", temp_path("missing.dvcp").string()}).code == kExitUsage);
    CHECK(run({"eval", "--checkpoint", ckpt.string(), "--data", temp_path("missing.dvds").string()}).code ==
          kExitUsage);
    // 16x16 images do not fit a 32x32 model
    REQUIRE(run({"synth", "--out", dvds.string(), "--res", "16"}).code == kExitOk);
    CHECK(run({"eval", "--checkpoint", ckpt.string(), "--data", dvds.string()}).code == kExitUsage);
}

TEST_CASE("usage errors") {
    CHECK(run({}).code == kExitUsage);
    CHECK(run({"frobnicate"}).code == kExitUsage);
    CHECK(run({"describe", "--nope"}).code == kExitUsage);
    CHECK(run({"eval"}).code == kExitUsage);
    const auto help = run({"--help"});
    CHECK(help.code == kExitOk);
    CHECK(help.out.find("gradcheck") != std::string::npos);
}
