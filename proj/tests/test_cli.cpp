#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct CliResult {
    int exit_code;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch_dir() {
    static int counter = 0;
    const fs::path dir = fs::temp_directory_path() / ("reftfl_cli_" + std::to_string(++counter));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

CliResult run_cli(const std::string& args) {
    const fs::path dir = scratch_dir();
    const fs::path out = dir / "stdout.txt";
    const fs::path err = dir / "stderr.txt";
    const std::string command =
        std::string(REFTFL_CLI_PATH) + " " + args + " > " + out.string() + " 2> " + err.string();
    const int raw = std::system(command.c_str());
    return CliResult{WEXITSTATUS(raw), slurp(out), slurp(err)};
}

fs::path write_file(const std::string& name, const std::string& content) {
    const fs::path path = scratch_dir() / name;
    std::ofstream out(path);
    out << content;
    return path;
}

const char* kMinimalConfig = R"({
  "clients": 3,
  "rounds": 2,
  "data": {"design": "DT", "num_tasks": 3, "examples_per_client": 60},
  "backbone": {"num_layers": 2, "hidden_dim": 8, "seq_len": 6, "vocab": 8},
  "schedule": {"rank": 2},
  "optimizer": {"epochs": 1},
  "seed": 5
})";

}  // namespace

TEST_CASE("run: missing config exits 1 and names the path") {
    const CliResult result = run_cli("run --config /nonexistent/cfg.json --out /tmp/reftfl_x");
    CHECK(result.exit_code == 1);
    CHECK(result.err.find("/nonexistent/cfg.json") != std::string::npos);
}

TEST_CASE("run: minimal config writes the three artifacts") {
    const fs::path cfg = write_file("cfg.json", kMinimalConfig);
    const fs::path out = scratch_dir();
    const CliResult result = run_cli("run --config " + cfg.string() + " --out " + out.string());
    REQUIRE(result.exit_code == 0);

    const std::string rounds = slurp(out / "rounds.jsonl");
    int lines = 0;
    for (char c : rounds) {
        if (c == '\n') ++lines;
    }
    CHECK(lines == 2);
    CHECK(fs::exists(out / "summary.csv"));
    const std::string echo = slurp(out / "config_resolved.json");
    CHECK(echo.find("\"seed\": 5") != std::string::npos);
}

TEST_CASE("run: same seed twice gives byte-identical outputs") {
    const fs::path cfg = write_file("cfg.json", kMinimalConfig);
    const fs::path out1 = scratch_dir();
    const fs::path out2 = scratch_dir();
    REQUIRE(run_cli("run --config " + cfg.string() + " --out " + out1.string() + " --seed 77").exit_code == 0);
    REQUIRE(run_cli("run --config " + cfg.string() + " --out " + out2.string() + " --seed 77").exit_code == 0);
    CHECK(slurp(out1 / "rounds.jsonl") == slurp(out2 / "rounds.jsonl"));
    CHECK(slurp(out1 / "summary.csv") == slurp(out2 / "summary.csv"));
    CHECK(slurp(out1 / "config_resolved.json") == slurp(out2 / "config_resolved.json"));
}

TEST_CASE("run: the config echo reproduces the run byte for byte") {
    const fs::path cfg = write_file("cfg.json", kMinimalConfig);
    const fs::path out1 = scratch_dir();
    REQUIRE(run_cli("run --config " + cfg.string() + " --out " + out1.string() + " --seed 31").exit_code == 0);
    const fs::path out2 = scratch_dir();
    REQUIRE(run_cli("run --config " + (out1 / "config_resolved.json").string() + " --out " +
                    out2.string())
                .exit_code == 0);
    CHECK(slurp(out1 / "rounds.jsonl") == slurp(out2 / "rounds.jsonl"));
    CHECK(slurp(out1 / "summary.csv") == slurp(out2 / "summary.csv"));
}

TEST_CASE("run: rounds override changes the line count") {
    const fs::path cfg = write_file("cfg.json", kMinimalConfig);
    const fs::path out = scratch_dir();
    REQUIRE(run_cli("run --config " + cfg.string() + " --out " + out.string() + " --rounds 1").exit_code == 0);
    const std::string rounds = slurp(out / "rounds.jsonl");
    int lines = 0;
    for (char c : rounds) {
        if (c == '\n') ++lines;
    }
    CHECK(lines == 1);
}

TEST_CASE("run: invalid config exits 1 with the field name") {
    const fs::path cfg = write_file("bad.json", R"({"rounds": 0})");
    const CliResult result = run_cli("run --config " + cfg.string() + " --out /tmp/reftfl_y");
    CHECK(result.exit_code == 1);
    CHECK(result.err.find("rounds") != std::string::npos);
}

TEST_CASE("gradcheck passes by default and fails under fault injection") {
    const CliResult pass = run_cli("gradcheck");
    CHECK(pass.exit_code == 0);
    CHECK(pass.out.find("gradcheck PASS") != std::string::npos);

    const CliResult fail = run_cli("gradcheck --inject-sign-flip");
    CHECK(fail.exit_code == 2);
    CHECK(fail.out.find("gradcheck FAIL") != std::string::npos);

    const CliResult guard = run_cli("gradcheck --d 1000");
    CHECK(guard.exit_code == 1);
}

TEST_CASE("agg-demo: square corners, echo, outliers and parse errors") {
    const fs::path corners = write_file("corners.txt", "0 0\n0 1\n1 0\n1 1\n");
    const CliResult center = run_cli("agg-demo --points " + corners.string() + " --method geomedian");
    REQUIRE(center.exit_code == 0);
    CHECK(center.out.find("geomedian 0.5 0.5") != std::string::npos);
    CHECK(center.out.find("trace") != std::string::npos);

    const fs::path single = write_file("single.txt", "3.5 -1.25 0.75\n");
    const CliResult echo = run_cli("agg-demo --points " + single.string() + " --method geomedian");
    CHECK(echo.out.find("geomedian 3.5 -1.25 0.75") != std::string::npos);

    const fs::path ragged = write_file("ragged.txt", "1 2\n3 4 5\n");
    const CliResult bad = run_cli("agg-demo --points " + ragged.string() + " --method mean");
    CHECK(bad.exit_code == 1);
    CHECK(bad.err.find("line 2") != std::string::npos);

    // outlier: the median stays in the unit ball, the mean leaves it
    std::string outlier_rows;
    outlier_rows += "0.1 0.0\n-0.1 0.1\n0.0 -0.1\n0.05 0.05\n1000000 0\n";
    const fs::path outliers = write_file("outliers.txt", outlier_rows);
    const CliResult med = run_cli("agg-demo --points " + outliers.string() + " --method geomedian");
    REQUIRE(med.exit_code == 0);
    std::stringstream ss(med.out);
    std::string tag;
    double x = 0.0, y = 0.0;
    ss >> tag >> x >> y;
    CHECK(std::abs(x) < 1.0);
    CHECK(std::abs(y) < 1.0);
    const CliResult mean = run_cli("agg-demo --points " + outliers.string() + " --method mean");
    std::stringstream ms(mean.out);
    ms >> tag >> x >> y;
    CHECK(std::abs(x) > 1.0);

    const fs::path abm_pts = write_file("abm.txt", "0 0\n2 2\n");
    const CliResult abm = run_cli("agg-demo --points " + abm_pts.string() + " --method abm");
    CHECK(abm.out.find("abm[0] 2 2") != std::string::npos);
    CHECK(abm.out.find("abm[1] 0 0") != std::string::npos);
}

TEST_CASE("report renders csv and markdown from rounds.jsonl") {
    const fs::path cfg = write_file("cfg.json", kMinimalConfig);
    const fs::path out = scratch_dir();
    REQUIRE(run_cli("run --config " + cfg.string() + " --out " + out.string()).exit_code == 0);

    const CliResult csv = run_cli("report --in " + (out / "rounds.jsonl").string() + " --format csv");
    REQUIRE(csv.exit_code == 0);
    CHECK(csv.out.find("client,final_accuracy") != std::string::npos);
    CHECK(csv.out.find("mean,") != std::string::npos);

    const CliResult md = run_cli("report --in " + (out / "rounds.jsonl").string() + " --format md");
    REQUIRE(md.exit_code == 0);
    CHECK(md.out.find("| client |") != std::string::npos);

    const CliResult missing = run_cli("report --in /nonexistent.jsonl --format csv");
    CHECK(missing.exit_code == 1);
}
