#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "freek/cli.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

struct Run {
  int code;
  std::string out, err;
  json doc() const { return json::parse(out); }
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "fkfree");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = freek::cli::dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch() {
  auto d = fs::temp_directory_path() / "freek_cli_test";
  fs::create_directories(d);
  return d;
}

void write(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

TEST(Cli, NcCount) {
  auto r = run({"nc", "--n", "4", "--count"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.doc()["result"]["count"], 14);
  auto t = run({"--format", "text", "nc", "--n", "4", "--count"});
  EXPECT_NE(t.out.find("count  14"), std::string::npos);
}

TEST(Cli, NcMoebiusAndKreweras) {
  auto r = run({"nc", "--n", "3", "--moebius", "--kreweras"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto res = r.doc()["result"];
  EXPECT_EQ(res["partitions"].size(), 5u);
  EXPECT_EQ(res["kreweras"].size(), 5u);
  // mu(0, 1) on NC(3) is +2; the lattice lists the top first.
  const auto& parts = res["partitions"];
  std::size_t top = 0, bottom = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i] == "{{1,2,3}}") top = i;
    if (parts[i] == "{{1},{2},{3}}") bottom = i;
  }
  EXPECT_EQ(res["moebius"][bottom][top], 2);
}

TEST(Cli, WeingartenRationals) {
  auto r = run({"wg", "--k", "2", "--dim", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto e = r.doc()["result"]["entries"];
  EXPECT_EQ(freek::parse_rational(e[0][0]), freek::parse_rational("3/24"));
  EXPECT_EQ(freek::parse_rational(e[0][1]), freek::parse_rational("-1/24"));
  EXPECT_EQ(e[1][1], e[0][0]);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run({"wg", "--k", "3", "--dim", "2"}).code, 2);
  EXPECT_EQ(run({"distance", "--dim", "2", "--k", "3"}).code, 2);
  auto bad = run({"nc", "--n", "4", "--bogus"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("Usage"), std::string::npos);
  EXPECT_EQ(run({"nc"}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"perm", "--perm", "1,1,2"}).code, 1);
  EXPECT_EQ(run({"cumulants", "--sequence", "0,1", "--matrix", "x.fkm"}).code, 1);
  EXPECT_EQ(run({"--format", "xml", "nc", "--n", "3"}).code, 1);
  EXPECT_EQ(run({"--version"}).code, 0);
}

TEST(Cli, DocumentEmbedsConfigAndVersion) {
  auto d = run({"--seed", "7", "perm", "--perm", "2,3,1"}).doc();
  EXPECT_EQ(d["version"], freek::kVersion);
  EXPECT_EQ(d["command"], "perm");
  EXPECT_EQ(d["config"]["seed"], 7);
  EXPECT_EQ(d["config"]["perm"], "2,3,1");
  EXPECT_EQ(d["config"]["geodesic"], false);
  EXPECT_EQ(d["result"]["noncrossing"]["embeds"], true);
}

TEST(Cli, OtocCenteredA) {
  // <A> = 0: <A B A B> = <A^2> <B>^2.
  auto r = run({"otoc", "--k", "2", "--a-moments", "0,1.5", "--b-moments", "0.5,2", "--dim", "9"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto res = r.doc()["result"];
  EXPECT_NEAR(res["free"][0].get<double>(), 1.5 * 0.25, 1e-14);
  EXPECT_NEAR(res["channel_asymptotic"][0].get<double>(), 1.5 * 0.25, 1e-14);
  EXPECT_EQ(res["expansion"].size(), 2u);
}

TEST(Cli, CumulantsSemicircle) {
  auto r = run({"cumulants", "--sequence", "0,1,0,2,0,5"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto k = r.doc()["result"]["cumulants"];
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(k[i][0].get<double>(), i == 1 ? 1.0 : 0.0, 1e-12);
}

TEST(Cli, ChannelFromMatrixFileMatchesDenseTwirl) {
  const auto dir = scratch();
  Eigen::MatrixXcd a = Eigen::MatrixXcd::Zero(3, 3);
  a(0, 0) = 1.0, a(1, 1) = -0.5, a(0, 2) = {0.2, 0.1}, a(2, 0) = {0.2, -0.1};
  write(dir / "a.json", freek::matrix_to_json(a).dump());
  write(dir / "ops.json", R"({"operators": {"a": "a.json"}})");
  auto r = run({"channel", "--ops", (dir / "ops.json").string(), "--args", "a,a"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto co = r.doc()["result"]["coefficients"];
  freek::ChannelCoefficients c;
  c.k = 2, c.D = 3;
  c.perms = freek::all_permutations(2);
  for (const auto& x : co) c.coeffs.emplace_back(x["value"][0].get<double>(), x["value"][1].get<double>());
  const Eigen::MatrixXcd want = freek::haar_channel_dense(freek::kron(a, a), 2, 3);
  EXPECT_LE((freek::reconstruct(c) - want).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(run({"channel", "--ops", (dir / "ops.json").string(), "--args", "a,a", "--k", "3"}).code, 1);
}

TEST(Cli, SameSeedSameBytes) {
  const std::vector<std::string> args{"--seed", "11", "haar-test", "--dim", "4", "--k", "2", "--samples", "300"};
  auto a = run(args), b = run(args);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  auto c = run({"--seed", "12", "haar-test", "--dim", "4", "--k", "2", "--samples", "300"});
  EXPECT_NE(a.doc()["result"]["kappa"]["estimate"], c.doc()["result"]["kappa"]["estimate"]);
  auto e1 = run({"--seed", "3", "eth", "cumulant", "--dim", "32", "--times", "0:1:3"});
  auto e2 = run({"--seed", "3", "eth", "cumulant", "--dim", "32", "--times", "0:1:3", "--threads", "2"});
  ASSERT_EQ(e1.code, 0) << e1.err;
  EXPECT_EQ(e1.doc()["result"], e2.doc()["result"]);
}

TEST(Cli, ConfigFileOverriddenByFlags) {
  const auto dir = scratch();
  write(dir / "run.cfg", "seed = 5\n[wg]\nk = 2\ndim = 4\n");
  auto r = run({"--config", (dir / "run.cfg").string(), "wg"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.doc()["config"]["seed"], 5);
  EXPECT_EQ(r.doc()["result"]["dim"], 4);
  auto o = run({"--config", (dir / "run.cfg").string(), "wg", "--dim", "6"});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(o.doc()["result"]["dim"], 6);
}

TEST(Cli, CsvScanAndOutputFile) {
  const auto dir = scratch();
  const auto path = (dir / "scan.csv").string();
  auto r = run({"--format", "csv", "--output", path, "eth", "cumulant", "--dim", "24", "--times", "0,0.5,1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(r.out.empty());
  std::ifstream f(path);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(f, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 6u);
  EXPECT_EQ(lines[0].rfind("# freek", 0), 0u);
  EXPECT_EQ(lines[2], "t,real,imag,std_error");
  EXPECT_EQ(lines[3].rfind("0.0,1.0", 0), 0u);  // kappa_4 of +-1 observables at t = 0
}

TEST(Cli, DesignCheckRecords) {
  auto r = run({"design-check", "--ensemble", "clifford", "--k", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto res = r.doc()["result"];
  EXPECT_TRUE(res["passed"].get<bool>());
  for (const char* key : {"estimate", "std_error", "n_samples", "seed"}) EXPECT_TRUE(res.contains(key));
  auto p = run({"design-check", "--ensemble", "pauli", "--k", "2"}).doc()["result"];
  EXPECT_FALSE(p["passed"].get<bool>());
}

TEST(Cli, EthModelFileRoundTrip) {
  const auto dir = scratch();
  const auto h = (dir / "h.fkm").string();
  auto b = run({"--seed", "2", "eth", "build", "--dim", "20", "--save-hamiltonian", h});
  ASSERT_EQ(b.code, 0) << b.err;
  auto x = run({"--seed", "2", "eth", "appendixb", "--dim", "20"});
  auto y = run({"eth", "appendixb", "--model", "file", "--hamiltonian", h});
  ASSERT_EQ(y.code, 0) << y.err;
  EXPECT_NEAR(x.doc()["result"]["gap"][0].get<double>(), y.doc()["result"]["gap"][0].get<double>(), 1e-10);
  EXPECT_EQ(run({"eth", "cumulant", "--dim", "20", "--a", "nope"}).code, 1);
  EXPECT_EQ(run({"eth", "build", "--dim", "5000"}).code, 1);
}

}  // namespace
