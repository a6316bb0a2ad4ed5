#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "fedsde/cli/config.hpp"
#include "fedsde/cli/runner.hpp"

using namespace fedsde;
using namespace fedsde::cli;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kConfigs = FEDSDE_CONFIG_DIR;
const char* const kKinds[] = {"simulate_discrete", "simulate_sde", "analytic_quadratic", "check_normality",
                              "check_bounds"};

json load(const std::string& name) {
  std::ifstream in(kConfigs / (name + ".json"));
  return json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Scratch {
  fs::path root;
  explicit Scratch(const std::string& tag) {
    root = fs::temp_directory_path() / ("fedsde_cli_" + tag + "_" + std::to_string(std::rand()));
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Scratch() { fs::remove_all(root); }

  fs::path write(const std::string& name, const json& doc) const {
    const fs::path p = root / name;
    std::ofstream(p) << doc.dump(2);
    return p;
  }
};

int run_in_process(const fs::path& config, const fs::path& out_dir, std::string* err_text = nullptr) {
  std::ostringstream out, err;
  RunOptions opts;
  opts.out_dir = out_dir.string();
  const int code = run_command(config.string(), opts, out, err);
  if (err_text) *err_text = err.str();
  return code;
}

int run_tool(const std::string& args) {
  const std::string cmd = std::string("\"") + FEDSDE_TOOL + "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

bool contains(const std::vector<std::string>& diags, const std::string& needle) {
  for (const auto& d : diags) {
    if (d.find(needle) != std::string::npos) return true;
  }
  return false;
}

std::vector<std::string> check(const json& doc) {
  std::vector<std::string> diags;
  const auto cfg = parse_config(doc, diags);
  if (!diags.empty()) return diags;
  return validate(cfg);
}

}  // namespace

TEST_CASE("config round trip") {
  for (const char* kind : kKinds) {
    std::vector<std::string> diags;
    const auto cfg = parse_config(load(kind), diags);
    REQUIRE(diags.empty());
    std::vector<std::string> again_diags;
    const auto again = parse_config(to_json(cfg), again_diags);
    CHECK(again_diags.empty());
    CHECK(again == cfg);
    CHECK(config_hash(again) == config_hash(cfg));
    CHECK(config_hash(cfg).size() == 16);
  }
}

TEST_CASE("shipped configs validate") {
  for (const char* kind : kKinds) {
    CAPTURE(kind);
    CHECK(validate_file((kConfigs / (std::string(kind) + ".json")).string()).empty());
  }
}

TEST_CASE("validation diagnostics") {
  json doc = load("simulate_discrete");
  doc["fedavg"]["local_steps"] = 0;
  CHECK(contains(check(doc), "E must be ≥ 1"));

  doc = load("simulate_discrete");
  doc["problem"]["clients"][1]["noise_cov"] = json::array({json::array({-0.5})});
  const auto psd = check(doc);
  CHECK(contains(psd, "client 1 noise covariance is not PSD (eigenvalue -0.5"));

  doc = load("simulate_discrete");
  doc["problem"]["clients"][0]["weight"] = 0.7;
  CHECK(contains(check(doc), "client weights must sum to 1"));

  // Several problems are reported together.
  doc["fedavg"]["local_steps"] = 0;
  const auto both = check(doc);
  CHECK(contains(both, "client weights must sum to 1"));
  CHECK(contains(both, "E must be ≥ 1"));

  doc = load("simulate_discrete");
  doc["kind"] = "simulate-everything";
  CHECK(contains(check(doc), "unknown kind 'simulate-everything'"));

  doc = load("simulate_discrete");
  doc.erase("seed");
  CHECK(contains(check(doc), "seed is required"));

  doc = load("simulate_discrete");
  doc["fedavg"]["h"] = "fast";
  CHECK(contains(check(doc), "must be a number"));

  doc = load("simulate_discrete");
  doc["fedavg"]["client_schedule"] = json{{"kind", "cosine"}};
  CHECK(contains(check(doc), "unknown schedule 'cosine'"));
}

TEST_CASE("validate command") {
  Scratch dir("validate");
  std::ostringstream out, err;
  CHECK(validate_command((kConfigs / "simulate_discrete.json").string(), out, err) == exit_ok);

  json doc = load("simulate_discrete");
  doc["fedavg"]["local_steps"] = 0;
  const auto bad = dir.write("bad.json", doc);
  std::ostringstream out2, err2;
  CHECK(validate_command(bad.string(), out2, err2) == exit_invalid);
  CHECK((out2.str() + err2.str()).find("E must be ≥ 1") != std::string::npos);

  CHECK(validate_command((dir.root / "missing.json").string(), out2, err2) == exit_invalid);
  std::ofstream(dir.root / "broken.json") << "{ \"kind\": ";
  CHECK(validate_command((dir.root / "broken.json").string(), out2, err2) == exit_invalid);

  CHECK(run_tool("validate \"" + (kConfigs / "simulate_discrete.json").string() + "\"") == 0);
  CHECK(run_tool("validate \"" + bad.string() + "\"") == 2);
}

TEST_CASE("invalid config writes nothing") {
  Scratch dir("invalid");
  json doc = load("simulate_discrete");
  doc["problem"]["clients"][0]["weight"] = 0.7;
  const auto cfg = dir.write("bad.json", doc);
  const fs::path out = dir.root / "out";
  CHECK(run_in_process(cfg, out) == exit_invalid);
  CHECK((!fs::exists(out) || fs::is_empty(out)));
  CHECK(run_tool("run \"" + cfg.string() + "\" --out \"" + out.string() + "\"") == 2);
  CHECK((!fs::exists(out) || fs::is_empty(out)));
  CHECK(run_tool("frobnicate") == 2);
}

TEST_CASE("numerical abort") {
  Scratch dir("abort");
  json doc = load("simulate_discrete");
  doc["fedavg"]["client_schedule"] = json{{"kind", "constant"}, {"value", 50.0}};
  doc["fedavg"]["local_steps"] = 5;
  doc["fedavg"]["rounds"] = 2000;
  const auto cfg = dir.write("diverge.json", doc);
  const fs::path out = dir.root / "out";
  std::string err;
  CHECK(run_in_process(cfg, out, &err) == exit_numerical);
  CHECK(err.find("non-finite") != std::string::npos);
  CHECK((!fs::exists(out) || fs::is_empty(out)));
  CHECK(run_tool("run \"" + cfg.string() + "\" --out \"" + out.string() + "\"") == 3);
}

TEST_CASE("runs are deterministic and atomic") {
  Scratch dir("determinism");
  for (const char* kind : kKinds) {
    CAPTURE(kind);
    const fs::path cfg = kConfigs / (std::string(kind) + ".json");
    const fs::path a = dir.root / (std::string(kind) + "_a");
    const fs::path b = dir.root / (std::string(kind) + "_b");
    REQUIRE(run_in_process(cfg, a) == exit_ok);
    REQUIRE(run_tool("run \"" + cfg.string() + "\" --out \"" + b.string() + "\" --threads 3") == 0);

    json manifest_a = json::parse(slurp(a / "manifest.json"));
    json manifest_b = json::parse(slurp(b / "manifest.json"));
    CHECK(manifest_a["runtime_seconds"].is_number());
    manifest_a.erase("runtime_seconds");
    manifest_b.erase("runtime_seconds");
    CHECK(manifest_a == manifest_b);
    CHECK(manifest_a["version"] == kToolVersion);
    CHECK(manifest_a["seed"] == load(kind)["seed"]);

    std::size_t files = 0;
    for (const auto& entry : fs::directory_iterator(a)) {
      const auto name = entry.path().filename().string();
      CHECK(name.find(".tmp") == std::string::npos);
      if (name == "manifest.json") continue;
      ++files;
      CHECK(slurp(entry.path()) == slurp(b / name));
    }
    CHECK(files == manifest_a["files"].size());
    for (const auto& entry : fs::directory_iterator(b)) {
      CHECK(entry.path().filename().string().find(".tmp") == std::string::npos);
    }
  }
}

TEST_CASE("analytic curve output") {
  Scratch dir("analytic");
  const fs::path out = dir.root / "out";
  REQUIRE(run_in_process(kConfigs / "analytic_quadratic.json", out) == exit_ok);
  std::istringstream csv(slurp(out / "analytic.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "t,m_0,v_0_ode,v_0_paper_form");

  // p=(.5,.5), U=(1,3), a=(0,4), Sigma=0.01, E=2, eta=0.05, w0=2.
  const double A = 3.75, B = 2.2, eta = 0.05, w0 = 2.0;
  const double C4 = (0.5 * 1.95 * 0.0 + 0.5 * 5.55 * 4.0) / A;
  const json coef = json::parse(slurp(out / "coefficients.json"));
  CHECK(coef["A"].get<double>() == doctest::Approx(A).epsilon(1e-14));
  CHECK(coef["B"].get<double>() == doctest::Approx(B).epsilon(1e-14));
  CHECK(coef["C4"].get<double>() == doctest::Approx(C4).epsilon(1e-14));

  int rows = 0;
  while (std::getline(csv, line)) {
    double t, m, v_ode, v_paper;
    char c;
    std::istringstream row(line);
    row >> t >> c >> m >> c >> v_ode >> c >> v_paper;
    CHECK(m == doctest::Approx(C4 + (w0 - C4) * std::exp(-A * t)).epsilon(1e-13));
    CHECK(v_ode == doctest::Approx(eta * B * B / (2 * A) * (1 - std::exp(-2 * A * t))).epsilon(1e-13));
    CHECK(v_paper == doctest::Approx(eta * B * B / (2 * A) * (1 - std::exp(-A * t))).epsilon(1e-13));
    ++rows;
  }
  CHECK(rows == 5);
}

TEST_CASE("floats carry 17 significant digits") {
  CHECK(json_text(json(0.1)) == "0.10000000000000001\n");
  CHECK(json_text(json(2.0)) == "2\n");
  CHECK(json_text(json{{"x", 1.0 / 3.0}}).find("0.33333333333333331") != std::string::npos);
}
