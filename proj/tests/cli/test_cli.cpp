#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "evkit/io.hpp"
#include "evkit/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run
{
  int code = -1;
  std::string out;
  std::string err;
};

const fs::path& scratch()
{
  static const fs::path p = [] {
    fs::path d = fs::temp_directory_path() / "evkit_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return p;
}

std::string slurp(const fs::path& p)
{
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Run run(const std::string& args, const std::string& env = "")
{
  const fs::path out = scratch() / "stdout.txt", err = scratch() / "stderr.txt";
  const std::string cmd = "env -u EVKIT_SEED " + env + " '" + std::string(EVKIT_CLI_PATH) + "' " + args + " >'" +
                          out.string() + "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::string q(const fs::path& p)
{
  return "'" + p.string() + "'";
}

} // namespace

TEST_CASE("usage errors exit with 2")
{
  CHECK(run("").code == 2);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("voxelize").code == 2);
  CHECK(run("verify masking").code == 2); // no seed
  CHECK(run("verify physics --seed 1 --instances -3").code == 2);
  CHECK(run("--help").code == 0);
}

TEST_CASE("runtime errors exit with 1")
{
  CHECK(run("voxelize " + q(scratch() / "missing.evt")).code == 1);
  std::ofstream(scratch() / "junk.evt") << "not events";
  const Run r = run("voxelize " + q(scratch() / "junk.evt"));
  CHECK(r.code == 1);
  CHECK(r.err.find("EVT0") != std::string::npos);
}

TEST_CASE("seed from the environment")
{
  const Run r = run("verify masking", "EVKIT_SEED=3");
  CHECK(r.code == 0);
  CHECK(r.out.find("PASS") != std::string::npos);
}

TEST_CASE("verify gradients passes and prints a table")
{
  const Run r = run("verify gradients --seed 7 --instances 10");
  CHECK(r.code == 0);
  CHECK(r.out.find("FAIL") == std::string::npos);
  CHECK(r.err.find("\"seed\"") != std::string::npos); // effective config echo
}

TEST_CASE("voxelize an empty stream")
{
  evkit::EventStream s;
  s.width = 6;
  s.height = 4;
  s.t_end = 1000;
  evkit::write_evt(scratch() / "empty.evt", s);
  const Run r = run("voxelize " + q(scratch() / "empty.evt") + " --bins 5 --out " + q(scratch() / "v.json"));
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  CHECK(j["sum"] == 0.0);
  CHECK(j["nonzero_cells"] == 0);
  const json v = json::parse(slurp(scratch() / "v.json"));
  CHECK(v["data"].size() == 6 * 4 * 5);
}

TEST_CASE("image to events to variant")
{
  evkit::write_pgm(scratch() / "img.pgm", evkit::stripe_image(96, 96, 12, 0, true));
  Run r = run("synth --seed 2 --canvas 80 --crop 64 " + q(scratch() / "img.pgm") + " " + q(scratch() / "clip"));
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out)["frames"] == 12);
  r = run("simulate --seed 2 " + q(scratch() / "clip") + " " + q(scratch() / "s.evt"));
  REQUIRE(r.code == 0);
  const std::size_t events = json::parse(r.out)["events"].get<std::size_t>();
  CHECK(events > 0);
  r = run("variant --seed 2 --kind sparse " + q(scratch() / "s.evt") + " --out " + q(scratch() / "sp.evt"));
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out)["output_events"] == (4 * events + 4) / 5);
  CHECK(run("stats " + q(scratch() / "sp.evt")).code == 0);
  CHECK(run("variant --seed 2 --kind noise --noise-frac 0.5 " + q(scratch() / "s.evt") + " --out " +
            q(scratch() / "n.evt"))
          .code != 0);
}

TEST_CASE("gen-data builds ten records per image and is reproducible")
{
  const fs::path images = scratch() / "images";
  fs::create_directories(images);
  evkit::write_pgm(images / "one.pgm", evkit::stripe_image(96, 96, 10, 0.5, false));
  const std::string args = "gen-data --seed 5 --canvas 80 --crop 64 " + q(images) + " ";
  Run r = run(args + q(scratch() / "d1"));
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out)["records"] == 10);
  r = run(args + q(scratch() / "d2") + " --workers 3");
  REQUIRE(r.code == 0);
  CHECK(slurp(scratch() / "d1" / "manifest.json") == slurp(scratch() / "d2" / "manifest.json"));

  // A config file supplies defaults that flags override.
  std::ofstream(scratch() / "cfg.json") << R"({"bins": 3, "dvs": {"pos_thres": 0.25}})";
  r = run("--config " + q(scratch() / "cfg.json") + " " + args + q(scratch() / "d3") + " --bins 4");
  REQUIRE(r.code == 0);
  CHECK(r.err.find("\"bins\":4") != std::string::npos);
  CHECK(r.err.find("\"pos_thres\":0.25") != std::string::npos);

  std::ofstream(scratch() / "plan.toml") << "[model]\nembed_dim = 8\n[[stage]]\nstage = \"MM\"\nsteps = 3\n"
                                            "batch_size = 2\n[[stage]]\nstage = \"CL\"\nsteps = 2\nbatch_size = 2\n";
  r = run("train --seed 1 " + q(scratch() / "d1") + " --schedule " + q(scratch() / "plan.toml") + " --out " +
          q(scratch() / "run"));
  REQUIRE(r.code == 0);
  const json t = json::parse(r.out);
  CHECK(t["stages"].size() == 2);
  CHECK(t["stages"][0]["frozen_groups_unchanged"] == true);
  CHECK(fs::exists(scratch() / "run" / "loss.csv"));
  CHECK(fs::exists(scratch() / "run" / "stage1_CL.ckpt"));

  CHECK(run("gen-data --seed 5 " + q(scratch() / "nowhere") + " " + q(scratch() / "d4")).code != 0);
}
