#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "addose/volumes.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = ADDOSE_CLI_PATH;

int run_cli(const std::string& args) {
  const std::string cmd = kCli + " " + args + " > /tmp/addose-cli-out.txt 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string last_output() {
  std::ifstream in("/tmp/addose-cli-out.txt");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  CHECK(run_cli("") == 2);
  CHECK(run_cli("--no-such-flag") == 2);
  CHECK(run_cli("phantom") == 2);            // --out-dir is required
  CHECK(run_cli("train --data-dir /tmp") == 2);  // --out and --seed required
  CHECK(run_cli("--help") == 0);
  CHECK(last_output().find("phantom") != std::string::npos);
}

TEST_CASE("missing inputs exit with code 3") {
  CHECK(run_cli("predict --case /tmp/addose-nope --vae /tmp/addose-nope "
                "--model /tmp/addose-nope --seed 1 --out /tmp/addose-out") == 3);
  CHECK(run_cli("train --stage vae --data-dir /tmp/addose-nope --seed 1 "
                "--out /tmp/addose-out") == 3);
  CHECK(run_cli("evaluate --pred-dir /tmp/addose-nope --ref-dir /tmp/addose-nope "
                "--out /tmp/addose-out") == 3);
}

TEST_CASE("phantom subcommand writes deterministic case containers") {
  const std::string d1 = "/tmp/addose-cli-ph1", d2 = "/tmp/addose-cli-ph2";
  fs::remove_all(d1);
  fs::remove_all(d2);
  CHECK(run_cli("phantom --site lung --count 2 --seed 7 --out-dir " + d1 +
                " --desk-scale") == 0);
  CHECK(run_cli("phantom --site lung --count 2 --seed 7 --out-dir " + d2 +
                " --desk-scale") == 0);

  std::vector<std::string> cases;
  for (const auto& e : fs::directory_iterator(d1))
    if (e.is_directory()) cases.push_back(e.path().filename().string());
  CHECK(cases.size() == 2);

  for (const auto& name : cases) {
    CHECK(fs::exists(fs::path(d1) / name / "manifest.json"));
    CHECK(fs::exists(fs::path(d1) / name / "ct.f32"));
    CHECK(fs::exists(fs::path(d1) / name / "dose.f32"));
    CHECK(read_bytes(fs::path(d1) / name / "dose.f32") ==
          read_bytes(fs::path(d2) / name / "dose.f32"));
    const addose::Case c = addose::load_case((fs::path(d1) / name).string());
    CHECK(c.ct.grid.shape == std::array<std::int64_t, 3>{32, 32, 32});
  }

  // Both site spellings are accepted.
  const std::string d3 = "/tmp/addose-cli-ph3";
  fs::remove_all(d3);
  CHECK(run_cli("phantom --site head_neck --count 1 --seed 0 --out-dir " + d3 +
                " --desk-scale") == 0);
  CHECK(run_cli("phantom --site mars --count 1 --seed 0 --out-dir " + d3) != 0);
  fs::remove_all(d1);
  fs::remove_all(d2);
  fs::remove_all(d3);
}

TEST_CASE("dvh and report subcommands run on a phantom case") {
  const std::string dir = "/tmp/addose-cli-ph4";
  fs::remove_all(dir);
  REQUIRE(run_cli("phantom --site lung --count 1 --seed 0 --out-dir " + dir +
                  " --desk-scale") == 0);
  std::string case_dir;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) case_dir = e.path().string();
  REQUIRE_FALSE(case_dir.empty());

  CHECK(run_cli("report --case " + case_dir) == 0);
  CHECK(last_output().find("compliance_rate") != std::string::npos);

  const std::string dvh_out = "/tmp/addose-cli-dvh";
  fs::remove_all(dvh_out);
  CHECK(run_cli("dvh --case " + case_dir + " --out " + dvh_out) == 0);
  CHECK(fs::exists(fs::path(dvh_out) / "dvh_PTV.csv"));
  CHECK(run_cli("dvh --case /tmp/addose-nope --out " + dvh_out) == 3);
  fs::remove_all(dvh_out);
  fs::remove_all(dir);
}

TEST_CASE("evaluate compares a prediction directory against references") {
  const std::string dir = "/tmp/addose-cli-ph5", out = "/tmp/addose-cli-eval";
  fs::remove_all(dir);
  fs::remove_all(out);
  REQUIRE(run_cli("phantom --site lung --count 2 --seed 3 --out-dir " + dir +
                  " --desk-scale") == 0);
  CHECK(run_cli("evaluate --pred-dir " + dir + " --ref-dir " + dir + " --out " +
                out) == 0);
  CHECK(fs::exists(fs::path(out) / "summary.tsv"));
  fs::remove_all(dir);
  fs::remove_all(out);
}

TEST_CASE("config files win over flags and reject unknown keys") {
  const std::string cfg = "/tmp/addose-cli-cfg.txt";
  {
    std::ofstream f(cfg);
    f << "not-a-kv-pair\n";
  }
  const std::string data = "/tmp/addose-cli-ph6";
  fs::remove_all(data);
  REQUIRE(run_cli("phantom --site lung --count 2 --seed 1 --out-dir " + data +
                  " --desk-scale") == 0);
  CHECK(run_cli("pretrain-vae --data-dir " + data + " --seed 1 --out /tmp/addose-x "
                "--config " + cfg) == 5);
  {
    std::ofstream f(cfg);
    f << "frobnicate=1\n";
  }
  CHECK(run_cli("pretrain-vae --data-dir " + data + " --seed 1 --out /tmp/addose-x "
                "--config " + cfg) == 5);
  CHECK(run_cli("pretrain-vae --data-dir " + data + " --seed 1 --out /tmp/addose-x "
                "--config /tmp/addose-no-such-config") == 3);
  fs::remove_all(data);
  fs::remove(cfg);
}
