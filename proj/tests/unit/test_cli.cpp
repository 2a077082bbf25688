#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fiberflow/cli.hpp"

using namespace fiberflow;
using namespace fiberflow::cli;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result invoke(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string tempPath(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("fiberflow_" + name)).string();
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("missing and unknown keys are named") {
    const auto missing = invoke({"semigroup", "--n", "10"});
    CHECK(missing.code == kExitUsage);
    CHECK(missing.err.find("t: required") != std::string::npos);

    const auto unknown = invoke({"semigroup", "--t", "1", "--width", "2"});
    CHECK(unknown.code == kExitUsage);
    CHECK(unknown.err.find("--width") != std::string::npos);

    const auto badValue = invoke({"semigroup", "--t", "one"});
    CHECK(badValue.code == kExitUsage);
    CHECK(badValue.err.find("t: expected a number") != std::string::npos);

    const auto badPotential = invoke({"semigroup", "--t", "1", "--potential", "harmonc(1)"});
    CHECK(badPotential.code == kExitUsage);
    CHECK(badPotential.err.rfind("fiberflow: potential:", 0) == 0);

    const auto badStep = invoke({"semigroup", "--t", "1", "--h", "0.5"});
    CHECK(badStep.code == kExitUsage);
    CHECK(badStep.err.find("h:") != std::string::npos);

    const std::string path = tempPath("unknown.cfg");
    std::ofstream(path) << "t = 1\nwidth = 2\n";
    const auto fromFile = invoke({"semigroup", "--config", path});
    CHECK(fromFile.code == kExitUsage);
    CHECK(fromFile.err.find("width: unknown key") != std::string::npos);
    std::filesystem::remove(path);
  }

  TEST_CASE("echoed configuration round-trips") {
    const RunConfig config = parseRunConfig({"semigroup", "--t", "0.50", "--n=1e3", "--manifold", "circle(r=2)",
                                             "--x", "[0.5]", "--seed", "12"});
    CHECK(config.command == "semigroup");
    CHECK(config.values.at("t") == "0.5");
    CHECK(config.values.at("n") == "1000");
    CHECK(config.values.at("h") == "0.001");
    CHECK(parseRunConfig(config.toArgs()) == config);

    const std::string path = tempPath("roundtrip.cfg");
    std::ofstream(path) << config.toConfigText();
    CHECK(parseRunConfig({"semigroup", "--config", path}) == config);
    // Flags override the file.
    const RunConfig overridden = parseRunConfig({"semigroup", "--config", path, "--t", "2"});
    CHECK(overridden.values.at("t") == "2");
    CHECK(overridden.values.at("manifold") == "circle(r=2)");
    std::filesystem::remove(path);

    const RunConfig nested = parseRunConfig({"validate", "appendix-c", "--trials", "3"});
    CHECK(nested.command == "validate appendix-c");
    CHECK(parseRunConfig(nested.toArgs()) == nested);
  }

  TEST_CASE("seed defaults to FIBERFLOW_SEED") {
    setenv("FIBERFLOW_SEED", "42", 1);
    CHECK(parseRunConfig({"semigroup", "--t", "1"}).values.at("seed") == "42");
    CHECK(parseRunConfig({"semigroup", "--t", "1", "--seed", "5"}).values.at("seed") == "5");
    setenv("FIBERFLOW_SEED", "abc", 1);
    CHECK_THROWS_WITH(parseRunConfig({"semigroup", "--t", "1"}), doctest::Contains("FIBERFLOW_SEED"));
    unsetenv("FIBERFLOW_SEED");
    CHECK(parseRunConfig({"semigroup", "--t", "1"}).values.at("seed") == "0");
  }

  TEST_CASE("result document and worker invariance") {
    const std::vector<std::string> base = {"semigroup", "--manifold", "euclidean(m=2)", "--potential", "harmonic(1)",
                                           "--section", "gaussian(s=1)", "--t", "0.5", "--h", "0.005",
                                           "--n", "1500", "--seed", "3"};
    auto with = [&](const std::string& workers) {
      auto args = base;
      args.push_back("--workers");
      args.push_back(workers);
      const auto r = invoke(args);
      REQUIRE(r.code == kExitOk);
      return nlohmann::json::parse(r.out);
    };
    const auto one = with("1");
    const auto four = with("4");
    CHECK(one["schema"] == 1);
    CHECK(one["command"] == "semigroup");
    CHECK(one["N"] == 1500);
    CHECK(one["seed"] == 3);
    CHECK(one["h"] == 0.005);
    CHECK(one["config"]["potential"] == "harmonic(1)");
    CHECK(one.contains("wallTimeMs"));
    CHECK(one["values"] == four["values"]);
    CHECK(one["stderrs"] == four["stderrs"]);
    CHECK(one["report"] == four["report"]);
    CHECK(one["aliveFraction"] == 1.0);
  }

  TEST_CASE("exit codes and formats") {
    const auto ok = invoke({"validate", "appendix-c", "--trials", "5", "--seed", "7"});
    CHECK(ok.code == kExitOk);
    CHECK(nlohmann::json::parse(ok.out)["report"]["totalViolations"] == 0);

    const auto fails = invoke({"kato-check", "--manifold", "euclidean(m=3)", "--potential", "power(1, 2)"});
    CHECK(fails.code == kExitViolated);
    CHECK(nlohmann::json::parse(fails.out)["report"]["kato"]["verdict"] == "failsDecay");

    const auto csv = invoke({"exit-time", "--r", "1", "--t", "0.5", "--h", "0.01", "--n", "200", "--format", "csv"});
    CHECK(csv.code == kExitOk);
    CHECK(csv.out.rfind("t,survival,stderr,reference,gridCorrectedReference\n", 0) == 0);

    const auto badFormat = invoke({"validate", "oracle", "--format", "xml"});
    CHECK(badFormat.code == kExitUsage);
    CHECK(badFormat.err.find("format:") != std::string::npos);

    const auto help = invoke({"--help"});
    CHECK(help.code == kExitOk);
    CHECK(help.out.find("ground-energy") != std::string::npos);

    const std::string path = tempPath("path.csv");
    const auto dump = invoke({"semigroup", "--t", "0.05", "--h", "0.01", "--n", "4", "--dump-path", path});
    CHECK(dump.code == kExitOk);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header.rfind("step,time,x0,alive", 0) == 0);
    std::filesystem::remove(path);
  }
}
