#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "freek/eth.hpp"
#include "freek/weingarten.hpp"

namespace freek::cli {

using nlohmann::json;

// Everything a run can be configured with. Each subcommand binds the fields
// it uses; the emitted document records the resolved values.
struct RunConfig {
  std::string output, format = "json";
  std::uint64_t seed = 1;
  int threads = 1;

  int n = 0;
  bool count = false, moebius = false, kreweras = false;

  std::string perm, beta;
  bool geodesic = false;

  int k = 2, channel_k = 0;
  int dim = 0;
  bool asymptotic = false;

  std::string sequence, matrix, ops, args;
  int order = 4;
  std::string mode = "exact";
  std::string a_moments, b_moments, a_matrix, b_matrix;

  std::string ensemble = "haar", hamiltonian, t_max = "inf";
  std::vector<std::string> unitaries;
  double eps_res = -1;
  std::string op_a = "sign_split", op_b = "sign_alternating";
  std::size_t samples = 2000;
  int batches = 20;
  double tol = kDefaultTol;
  int probes = 8;

  std::string model = "goe";
  int model_dim = 256;
  int L = 10;
  double J = 1.0, hx = -1.05, hz = 0.5;
  std::vector<std::string> observables;
  int cap = kDefaultModelCap;
  double inv_temp = 0.0;
  std::string save_hamiltonian;
  std::string times = "0", quantity = "cumulant";
  std::string windows = "inf";
  double panel = 0.5;
  bool factorization = false;
  double threshold = 0.05;
  std::string grid = "0:4:41";
  std::string window = "inf";
  bool delta = false;
  std::string lambdas = "0,1";
  double coupling = -1, exponent = 0.5;
  std::string perturbation;
};

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<json>> rows;
};

struct Result {
  json data = json::object();
  std::optional<Table> table;
};

// ---------------------------------------------------------------- parsing helpers

inline json cjson(Complex z) { return json::array({z.real(), z.imag()}); }

inline json record(const Estimate& e) {
  return {{"estimate", cjson(e.value)}, {"std_error", e.std_error}, {"n_samples", e.n_samples}, {"seed", e.seed}};
}

inline std::vector<std::string> split(const std::string& s, const std::string& seps = ", ") {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (seps.find(c) != std::string::npos) {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline double to_double(const std::string& s) {
  if (s == "inf" || s == "infinity") return std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  require(used == s.size() && !s.empty(), "not a number: '" + s + "'");
  return v;
}

inline int to_int(const std::string& s) {
  const double v = to_double(s);
  require(std::isfinite(v) && v == std::floor(v), "not an integer: '" + s + "'");
  return static_cast<int>(v);
}

inline std::vector<double> number_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& t : split(s)) out.push_back(to_double(t));
  require(!out.empty(), "empty number list");
  return out;
}

// "a:b:n" is n evenly spaced points from a to b; otherwise a comma list.
inline std::vector<double> time_grid(const std::string& s) {
  auto parts = split(s, ":");
  if (parts.size() == 1) return number_list(s);
  require(parts.size() == 3, "grid must be 'start:stop:count' or a list");
  const double a = to_double(parts[0]), b = to_double(parts[1]);
  const int n = to_int(parts[2]);
  require(n >= 1 && std::isfinite(a) && std::isfinite(b), "malformed grid '" + s + "'");
  std::vector<double> g(n);
  for (int i = 0; i < n; ++i) g[i] = n == 1 ? a : a + (b - a) * i / (n - 1);
  return g;
}

inline json time_json(double t) { return std::isinf(t) ? json("inf") : json(t); }

// Operators are named by single characters; a word is a string of names and
// an argument list is comma separated, e.g. "ab,a,b".
struct OperatorSet {
  std::vector<char> names;
  std::vector<Mat> mats;  // empty when given by moments
  int dim = 0;
  ExpectationFunctional phi = table_functional({});

  int index(char c) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == c) return static_cast<int>(i);
    throw ValidationError(std::string("unknown operator '") + c + "'");
  }
  Word word(const std::string& s) const {
    Word w;
    for (char c : s) w.push_back({index(c), 0.0});
    return w;
  }
  Args args(const std::string& s) const {
    Args a;
    for (const auto& t : split(s)) a.push_back(word(t));
    require(!a.empty(), "empty argument list");
    return a;
  }
};

inline json read_json_file(const std::string& path) {
  std::ifstream f(path);
  require(bool(f), "cannot open " + path);
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

inline Complex complex_from_json(const json& v) {
  if (v.is_array()) {
    require(v.size() == 2 && v[0].is_number() && v[1].is_number(), "complex values are [re, im]");
    return {v[0].get<double>(), v[1].get<double>()};
  }
  if (v.is_string()) return static_cast<double>(parse_rational(v.get<std::string>()));
  require(v.is_number(), "moment values must be numbers, [re, im] pairs or \"p/q\" strings");
  return v.get<double>();
}

// {"operators": {"a": "a.fkm" | <matrix>, ...}} or
// {"moments": {"a": 0, "aa": 1, ...}, "cyclic": true}.
inline OperatorSet load_operator_set(const std::string& path) {
  const json j = read_json_file(path);
  require(j.is_object(), "operator file must hold a JSON object");
  require(j.contains("operators") != j.contains("moments"), "operator file needs exactly one of operators / moments");
  OperatorSet s;
  if (j.contains("operators")) {
    const auto dir = std::filesystem::path(path).parent_path();
    for (const auto& [name, v] : j.at("operators").items()) {
      require(name.size() == 1, "operator names are single characters, got '" + name + "'");
      s.names.push_back(name[0]);
      s.mats.push_back(v.is_string() ? load_matrix((dir / v.get<std::string>()).string()) : matrix_from_json(v));
      require(s.mats.back().rows() == s.mats.back().cols(), "operator '" + name + "' is not square");
      require(s.mats.back().rows() == s.mats.front().rows(), "operators differ in dimension");
    }
    require(!s.names.empty(), "no operators given");
    s.dim = static_cast<int>(s.mats.front().rows());
    s.phi = trace_functional(s.mats);
  } else {
    std::map<Word, Complex> table;
    for (const auto& [w, _] : j.at("moments").items())
      for (char c : w)
        if (std::find(s.names.begin(), s.names.end(), c) == s.names.end()) s.names.push_back(c);
    std::sort(s.names.begin(), s.names.end());
    for (const auto& [w, v] : j.at("moments").items()) table[s.word(w)] = complex_from_json(v);
    s.dim = j.value("dim", 0);
    s.phi = table_functional(std::move(table), j.value("cyclic", true));
  }
  return s;
}

inline std::vector<Complex> complex_list(const std::string& s) {
  std::vector<Complex> out;
  for (double x : number_list(s)) out.emplace_back(x, 0.0);
  return out;
}

// Builtin name or matrix file.
inline Mat named_operator(const std::string& spec, int D) {
  if (spec == "sign_split" || spec == "sign_alternating") {
    require(D >= 1, "builtin operator '" + spec + "' needs --dim");
    return spec == "sign_split" ? sign_split(D) : sign_alternating(D);
  }
  return load_matrix(spec);
}

// ---------------------------------------------------------------- handlers

inline Result run_nc(const RunConfig& c) {
  require(c.n >= 1 && c.n <= kDefaultEnumerationLimit, "--n must be in 1.." + std::to_string(kDefaultEnumerationLimit));
  const auto& lat = nc_lattice(c.n);
  Result r;
  r.data["n"] = c.n;
  r.data["count"] = lat.size();
  if (c.count) return r;
  Table t;
  t.columns = {"index", "partition", "blocks"};
  if (c.kreweras) t.columns.push_back("kreweras");
  json parts = json::array(), pairs = json::array();
  for (std::size_t i = 0; i < lat.size(); ++i) {
    const auto& p = lat[i];
    parts.push_back(p.str());
    std::vector<json> row{i + 1, p.str(), p.block_count()};
    if (c.kreweras) {
      const auto kp = kreweras(p).str();
      pairs.push_back({p.str(), kp});
      row.push_back(kp);
    }
    t.rows.push_back(std::move(row));
  }
  r.data["partitions"] = parts;
  if (c.kreweras) r.data["kreweras"] = pairs;
  if (c.moebius) {
    require(c.n <= 7, "Moebius table limited to n <= 7");
    json m = json::array();
    for (std::size_t i = 0; i < lat.size(); ++i) {
      json row = json::array();
      for (std::size_t j = 0; j < lat.size(); ++j)
        row.push_back(lat[i].refines(lat[j]) ? lat.moebius(lat[i], lat[j]) : 0);
      m.push_back(row);
    }
    r.data["moebius"] = m;
  }
  r.table = std::move(t);
  return r;
}

inline Permutation parse_permutation(const std::string& s) {
  std::vector<int> w;
  for (const auto& t : split(s)) w.push_back(to_int(t));
  require(!w.empty(), "empty permutation");
  return Permutation::one_line(w);
}

inline json cycles_json(const Permutation& p) {
  json out = json::array();
  for (const auto& cyc : p.cycles()) {
    json c = json::array();
    for (int x : cyc) c.push_back(x + 1);
    out.push_back(c);
  }
  return out;
}

inline Result run_perm(const RunConfig& c) {
  const Permutation a = parse_permutation(c.perm);
  std::optional<Permutation> b;
  if (!c.beta.empty()) {
    b = parse_permutation(c.beta);
    require(b->size() == a.size(), "--beta and --perm differ in size");
  }
  if (c.geodesic) require(a.size() <= 7, "geodesic set limited to k <= 7");
  Result r;
  r.data["permutation"] = a.str();
  r.data["one_line"] = a.one_line();
  r.data["inverse"] = a.inverse().one_line();
  r.data["cycles"] = cycles_json(a);
  r.data["cycle_type"] = cycle_type(a);
  r.data["num_cycles"] = a.num_cycles();
  r.data["length"] = a.length();
  const auto nc = permutation_to_nc(a);
  r.data["noncrossing"] = {{"embeds", bool(nc)}};
  if (nc)
    r.data["noncrossing"]["partition"] = nc.partition->str();
  else
    r.data["noncrossing"]["reason"] = nc.reason;
  if (c.geodesic) {
    json g = json::array();
    Table t{{"beta", "length", "moebius"}, {}};
    for (const auto& x : geodesic_set(a)) {
      const auto mu = permutation_moebius(x, a);
      g.push_back({{"beta", x.str()}, {"length", x.length()}, {"moebius", mu}});
      t.rows.push_back({x.str(), x.length(), mu});
    }
    r.data["geodesic"] = g;
    r.table = std::move(t);
  }
  if (b) {
    const bool on = on_geodesic(*b, a);
    r.data["beta"] = {{"permutation", b->str()}, {"on_geodesic", on}};
    if (on) r.data["beta"]["moebius"] = permutation_moebius(*b, a);
  }
  return r;
}

inline Result run_wg(const RunConfig& c) {
  require(c.k >= 1 && c.k <= 6, "--k must be in 1..6");
  require(c.dim >= 1, "--dim must be positive");
  const auto& t = cached_weingarten(c.k, c.dim);
  Result r;
  r.data["k"] = c.k;
  r.data["dim"] = c.dim;
  json perms = json::array(), entries = json::array();
  for (const auto& p : t.perms) perms.push_back(p.str());
  Table tab{{"alpha", "beta", "value"}, {}};
  if (c.asymptotic) tab.columns.push_back("asymptotic");
  for (std::size_t i = 0; i < t.perms.size(); ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < t.perms.size(); ++j) {
      row.push_back(rational_str(t.wg[i][j]));
      std::vector<json> line{t.perms[i].str(), t.perms[j].str(), rational_str(t.wg[i][j])};
      if (c.asymptotic) line.push_back(rational_str(weingarten_asymptotic(t.perms[i], t.perms[j], c.dim)));
      tab.rows.push_back(std::move(line));
    }
    entries.push_back(row);
  }
  r.data["permutations"] = perms;
  r.data["entries"] = entries;
  // Wg depends on alpha^{-1} beta only through its cycle type.
  json classes = json::array();
  std::map<std::vector<int>, std::string> seen;
  for (std::size_t j = 0; j < t.perms.size(); ++j) {
    auto ct = cycle_type(t.perms[j]);
    if (seen.emplace(ct, rational_str(t.wg[0][j])).second)
      classes.push_back({{"cycle_type", ct}, {"value", rational_str(t.wg[0][j])}});
  }
  r.data["classes"] = classes;
  r.table = std::move(tab);
  return r;
}

inline Result run_cumulants(const RunConfig& c) {
  const int given = !c.sequence.empty() + !c.matrix.empty() + !c.ops.empty();
  require(given == 1, "give exactly one of --sequence, --matrix, --ops");
  Result r;
  Table t;
  if (!c.ops.empty()) {
    require(!c.args.empty(), "--ops needs --args");
    const auto set = load_operator_set(c.ops);
    const Args args = set.args(c.args);
    require(args.size() <= 12, "at most 12 arguments");
    const auto ks = cumulants_from_moments(args, set.phi);
    t.columns = {"subset", "real", "imag"};
    json rows = json::array();
    for (unsigned m = 1; m < (1u << args.size()); ++m) {
      std::string sub;
      for (std::size_t i = 0; i < args.size(); ++i)
        if (m >> i & 1u) sub += (sub.empty() ? "" : " ") + std::to_string(i + 1);
      rows.push_back({{"subset", sub}, {"kappa", cjson(ks.of(m))}});
      t.rows.push_back({sub, ks.of(m).real(), ks.of(m).imag()});
    }
    r.data["args"] = c.args;
    r.data["kappa"] = cjson(ks.top());
    r.data["table"] = rows;
  } else {
    std::vector<Complex> m;
    if (!c.sequence.empty()) {
      m = complex_list(c.sequence);
    } else {
      require(c.order >= 1 && c.order <= 24, "--order must be in 1..24");
      const Mat x = load_matrix(c.matrix);
      require(x.rows() == x.cols(), "matrix is not square");
      Mat p = Mat::Identity(x.rows(), x.cols());
      for (int i = 0; i < c.order; ++i) {
        p = p * x;
        m.push_back(p.trace() / static_cast<double>(x.rows()));
      }
    }
    const auto k = cumulants_from_moment_sequence(m);
    t.columns = {"n", "moment", "kappa_real", "kappa_imag"};
    json ms = json::array(), ks = json::array();
    for (std::size_t i = 0; i < k.size(); ++i) {
      ms.push_back(cjson(m[i]));
      ks.push_back(cjson(k[i]));
      t.rows.push_back({i + 1, m[i].real(), k[i].real(), k[i].imag()});
    }
    r.data["moments"] = ms;
    r.data["cumulants"] = ks;
  }
  r.table = std::move(t);
  return r;
}

inline Result run_channel(const RunConfig& c) {
  require(c.mode == "exact" || c.mode == "asymptotic", "--mode must be exact or asymptotic");
  require(!c.ops.empty() && !c.args.empty(), "channel needs --ops and --args");
  const auto set = load_operator_set(c.ops);
  const Args args = set.args(c.args);
  const int k = static_cast<int>(args.size());
  if (c.channel_k != 0) require(c.channel_k == k, "--k does not match the number of --args");
  require(k <= 6, "channel order limited to k <= 6");
  int D = c.dim ? c.dim : set.dim;
  require(D >= 1, "--dim is required for moment-table operators");
  if (!set.mats.empty()) require(D == set.dim, "--dim differs from the operator dimension");
  const auto coeff = c.mode == "exact" ? channel_exact(args, set.phi, D) : channel_asymptotic(args, set.phi, D);
  Result r;
  r.data["k"] = k;
  r.data["dim"] = D;
  r.data["mode"] = mode_name(coeff.mode);
  json co = json::array();
  Table t{{"alpha", "real", "imag"}, {}};
  for (std::size_t i = 0; i < coeff.perms.size(); ++i) {
    co.push_back({{"alpha", coeff.perms[i].str()}, {"value", cjson(coeff.coeffs[i])}});
    t.rows.push_back({coeff.perms[i].str(), coeff.coeffs[i].real(), coeff.coeffs[i].imag()});
  }
  r.data["coefficients"] = co;
  r.table = std::move(t);
  return r;
}

struct SingleOperator {
  ExpectationFunctional phi = table_functional({});
  int dim = 0;
};

inline SingleOperator single_operator(const std::string& moments, const std::string& matrix, const char* which) {
  require(moments.empty() != matrix.empty(),
          std::string("give exactly one of --") + which + "-moments, --" + which + "-matrix");
  SingleOperator s;
  if (!moments.empty()) {
    s.phi = moment_sequence_functional(complex_list(moments));
  } else {
    Mat m = load_matrix(matrix);
    require(m.rows() == m.cols(), "matrix is not square");
    s.dim = static_cast<int>(m.rows());
    s.phi = trace_functional({m});
  }
  return s;
}

inline Result run_otoc(const RunConfig& c) {
  require(c.k >= 1 && c.k <= 6, "--k must be in 1..6");
  const auto a = single_operator(c.a_moments, c.a_matrix, "a");
  const auto b = single_operator(c.b_moments, c.b_matrix, "b");
  int D = c.dim;
  for (int d : {a.dim, b.dim})
    if (d) {
      require(D == 0 || D == d, "operator dimensions disagree with --dim");
      D = d;
    }
  const Args aa(c.k, word({0})), bb(c.k, word({0}));
  Result r;
  r.data["k"] = c.k;
  r.data["free"] = cjson(otoc_free(aa, a.phi, bb, b.phi));
  json terms = json::array();
  for (const auto& t : otoc_terms(c.k)) terms.push_back(t.str());
  r.data["expansion"] = terms;
  if (D) {
    r.data["dim"] = D;
    r.data["channel_exact"] = cjson(otoc_channel(channel_exact(aa, a.phi, D), bb, b.phi));
    r.data["channel_asymptotic"] = cjson(otoc_channel(channel_asymptotic(aa, a.phi, D), bb, b.phi));
  }
  return r;
}

inline Ensemble make_ensemble(const RunConfig& c, double t_max) {
  if (c.ensemble == "haar") {
    require(c.dim >= 1, "Haar ensemble needs --dim");
    return Ensemble::haar(c.dim);
  }
  if (c.ensemble == "pauli") return Ensemble::discrete(pauli_group_1q());
  if (c.ensemble == "clifford") return Ensemble::discrete(clifford_group_1q());
  if (c.ensemble == "discrete") {
    require(!c.unitaries.empty(), "discrete ensemble needs --unitaries");
    std::vector<Mat> us;
    for (const auto& p : c.unitaries) us.push_back(load_matrix(p));
    return Ensemble::discrete(std::move(us));
  }
  if (c.ensemble == "hamiltonian") {
    Mat h;
    if (c.hamiltonian == "goe") {
      require(c.dim >= 1, "GOE Hamiltonian needs --dim");
      Rng rng = substream(c.seed, 0);
      h = goe_hamiltonian(c.dim, rng);
    } else {
      require(!c.hamiltonian.empty(), "Hamiltonian ensemble needs --hamiltonian (file or 'goe')");
      h = load_matrix(c.hamiltonian);
    }
    return Ensemble::hamiltonian(h, t_max, c.eps_res);
  }
  throw ValidationError("unknown ensemble '" + c.ensemble + "'");
}

inline std::size_t ensemble_size(const Ensemble& e) { return e.elements().size(); }

inline Result run_haar_test(const RunConfig& c) {
  require(c.k >= 1 && c.k <= 5, "--k must be in 1..5");
  require(c.samples >= 1, "--samples must be positive");
  require(c.batches >= 2, "--batches must be at least 2");
  const auto tmax = number_list(c.t_max);
  if (c.ensemble != "hamiltonian") require(tmax.size() == 1, "several --t-max values only for the Hamiltonian ensemble");
  Result r;
  Table t{{"t", "real", "imag", "std_error"}, {}};
  json scan = json::array();
  std::optional<Complex> free_value;
  for (double tm : tmax) {
    const Ensemble e = make_ensemble(c, tm);
    const Mat A = named_operator(c.op_a, e.dim()), B = named_operator(c.op_b, e.dim());
    require(A.rows() == e.dim() && B.rows() == e.dim(), "operators do not match the ensemble dimension");
    if (!free_value) {
      const auto phi = trace_functional({A, B});
      const Args aa(c.k, word({0})), bb(c.k, word({1}));
      free_value = mixed_moment_free(aa, phi, bb, phi);
      r.data["ensemble"] = e.name();
      r.data["dim"] = e.dim();
      r.data["k"] = c.k;
      r.data["free_otoc"] = cjson(*free_value);
    }
    const auto res = k_freeness_test(e, A, B, c.k, c.samples, c.seed, c.batches, c.threads);
    json entry = {{"kappa", record(res.kappa)}, {"otoc", record(res.otoc)}};
    if (e.kind() == Ensemble::Kind::Hamiltonian) entry["t_max"] = time_json(tm);
    scan.push_back(entry);
    t.rows.push_back({time_json(tm), res.kappa.value.real(), res.kappa.value.imag(), res.kappa.std_error});
  }
  if (c.ensemble != "hamiltonian") {
    r.data["kappa"] = scan[0]["kappa"];
    r.data["otoc"] = scan[0]["otoc"];
  } else {
    r.data["scan"] = scan;
    r.table = std::move(t);
  }
  return r;
}

inline double single_t_max(const RunConfig& c) {
  const auto v = number_list(c.t_max);
  require(v.size() == 1, "--t-max takes one value here");
  return v[0];
}

inline Result run_design_check(const RunConfig& c) {
  require(c.k >= 1 && c.k <= 6, "--k must be in 1..6");
  const Ensemble e = make_ensemble(c, single_t_max(c));
  const auto rep = design_check(e, c.k, c.tol, c.seed, c.probes);
  Result r;
  r.data = {{"estimate", rep.deviation}, {"std_error", 0.0},        {"n_samples", ensemble_size(e)},
            {"seed", c.seed},           {"passed", rep.passed},     {"method", rep.method},
            {"tol", c.tol},             {"ensemble", e.name()},     {"k", c.k},
            {"dim", e.dim()}};
  return r;
}

inline Result run_distance(const RunConfig& c) {
  require(c.k >= 1 && c.k <= 6, "--k must be in 1..6");
  const Ensemble e = make_ensemble(c, single_t_max(c));
  Result r;
  r.data = {{"estimate", channel_distance(e, c.k)},
            {"std_error", 0.0},
            {"n_samples", ensemble_size(e)},
            {"seed", c.seed},
            {"ensemble", e.name()},
            {"k", c.k},
            {"dim", e.dim()}};
  if (e.kind() == Ensemble::Kind::Hamiltonian) r.data["generic_infinite_time"] = hamiltonian_distance_generic(e.dim(), c.k);
  return r;
}

// ---------------------------------------------------------------- eth

inline SpectralModel make_model(const RunConfig& c) {
  SpectralModel m;
  if (c.model == "goe") {
    m = goe_model(c.model_dim, c.seed, c.cap);
  } else if (c.model == "ising") {
    m = ising_model(IsingParams{c.L, c.J, c.hx, c.hz}, c.cap);
  } else if (c.model == "file") {
    require(!c.hamiltonian.empty(), "--model file needs --hamiltonian");
    m = build_model(load_matrix(c.hamiltonian), {}, {{"model", "file"}, {"path", c.hamiltonian}}, c.cap);
  } else {
    throw ValidationError("unknown model '" + c.model + "'");
  }
  for (const auto& spec : c.observables) {
    const auto eq = spec.find('=');
    require(eq != std::string::npos && eq > 0, "--observable takes name=path");
    m.add_observable(spec.substr(0, eq), load_matrix(spec.substr(eq + 1)));
  }
  return m;
}

inline json model_summary(const SpectralModel& m, const ThermalState& s) {
  json obs = json::array();
  for (const auto& [name, _] : m.observables) obs.push_back(name);
  return {{"provenance", m.provenance}, {"D", m.D},     {"width", m.width()},
          {"observables", obs},         {"beta", s.beta}, {"d_eff", s.d_eff()}};
}

inline Result run_eth_build(const RunConfig& c) {
  const auto m = make_model(c);
  const auto s = thermal_state(m, c.inv_temp);
  Result r;
  r.data["model"] = model_summary(m, s);
  r.data["mean_gap_ratio"] = m.D >= 3 ? json(mean_gap_ratio(m.energies)) : json(nullptr);
  const auto res = resonance_report(m, c.eps_res >= 0 ? c.eps_res : default_eps_res(m), 100000, c.seed);
  r.data["resonances"] = {{"eps", res.eps},
                          {"degenerate_pairs", res.degenerate_pairs},
                          {"sampled", res.sampled},
                          {"near_resonant", res.near_resonant}};
  if (!c.save_hamiltonian.empty()) {
    const Mat h = m.basis * m.energies.cast<Complex>().asDiagonal() * m.basis.adjoint();
    if (c.save_hamiltonian.ends_with(".json")) {
      std::ofstream f(c.save_hamiltonian);
      require(bool(f), "cannot open " + c.save_hamiltonian);
      f << matrix_to_json(h).dump() << "\n";
    } else {
      save_matrix_binary(h, c.save_hamiltonian);
    }
    r.data["saved"] = c.save_hamiltonian;
  }
  Table t{{"index", "energy", "weight"}, {}};
  for (int i = 0; i < m.D; ++i) t.rows.push_back({i, m.energies(i), s.weights(i)});
  r.table = std::move(t);
  return r;
}

inline Result run_eth_cumulant(const RunConfig& c) {
  require(c.k >= 1 && c.k <= 6, "--k must be in 1..6");
  require(c.quantity == "cumulant" || c.quantity == "moment" || c.quantity == "distinct",
          "--quantity must be cumulant, moment or distinct");
  if (c.quantity == "distinct") require(c.k <= 3, "distinct-index sums need k <= 3");
  const auto grid = time_grid(c.times);
  const auto m = make_model(c);
  const auto s = thermal_state(m, c.inv_temp);
  m.obs(c.op_a), m.obs(c.op_b);
  std::vector<Complex> v(grid.size());
  detail::parallel_for(grid.size(), c.threads, [&](std::size_t i) {
    const double t = grid[i];
    if (c.quantity == "cumulant")
      v[i] = thermal_free_cumulant(m, s, {c.op_a, c.op_b}, otoc_args(c.k, t));
    else if (c.quantity == "moment")
      v[i] = thermal_word_moment(m, s, {c.op_a, c.op_b}, detail::otoc_word(c.k, t));
    else
      v[i] = distinct_index_cumulant(m, s, c.op_a, c.op_b, c.k, t);
  });
  Result r;
  r.data["model"] = model_summary(m, s);
  r.data["quantity"] = c.quantity;
  Table t{{"t", "real", "imag", "std_error"}, {}};
  json vals = json::array();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    vals.push_back({{"t", grid[i]}, {"value", cjson(v[i])}});
    t.rows.push_back({grid[i], v[i].real(), v[i].imag(), 0.0});
  }
  r.data["values"] = vals;
  r.table = std::move(t);
  return r;
}

inline Result run_eth_timeavg(const RunConfig& c) {
  require(c.k >= 1 && c.k <= 4, "--k must be in 1..4");
  const auto windows = number_list(c.windows);
  const auto m = make_model(c);
  const auto s = thermal_state(m, c.inv_temp);
  const auto v = averaged_otoc_cumulant(m, s, c.op_a, c.op_b, c.k, windows, c.panel, c.threads);
  Result r;
  r.data["model"] = model_summary(m, s);
  Table t{{"t", "real", "imag", "std_error"}, {}};
  json vals = json::array();
  for (std::size_t i = 0; i < windows.size(); ++i) {
    vals.push_back({{"window", time_json(windows[i])}, {"value", cjson(v[i])}});
    t.rows.push_back({time_json(windows[i]), v[i].real(), v[i].imag(), 0.0});
  }
  r.data["values"] = vals;
  if (c.factorization) {
    const auto f = otoc_long_time_factorization(m, s, c.op_a, c.op_b, c.k);
    r.data["factorization"] = {{"lhs", cjson(f.lhs)}, {"rhs", cjson(f.rhs)}, {"residual", cjson(f.residual)}};
  }
  r.table = std::move(t);
  return r;
}

inline Result run_eth_freetime(const RunConfig& c) {
  require(c.k >= 1 && c.k <= 6, "--k must be in 1..6");
  auto grid = time_grid(c.grid);
  const auto m = make_model(c);
  const auto s = thermal_state(m, c.inv_temp);
  const auto f = free_k_time(m, s, c.op_a, c.op_b, c.k, c.threshold, grid, c.threads);
  Result r;
  r.data["model"] = model_summary(m, s);
  r.data["k"] = c.k;
  r.data["threshold"] = f.threshold;
  r.data["time"] = f.time ? json(*f.time) : json(nullptr);
  Table t{{"t", "real", "imag", "std_error"}, {}};
  for (std::size_t i = 0; i < f.grid.size(); ++i) t.rows.push_back({f.grid[i], f.kappa[i].real(), f.kappa[i].imag(), 0.0});
  r.table = std::move(t);
  return r;
}

inline Result run_eth_appendixb(const RunConfig& c) {
  const TimeWindow win{to_double(c.window)};
  const auto m = make_model(c);
  const auto s = thermal_state(m, c.inv_temp);
  const auto ab = appendix_b_factorization(m, s, c.op_a, c.op_b, win, c.panel, c.threads);
  Result r;
  r.data["model"] = model_summary(m, s);
  r.data["window"] = time_json(win.t_max);
  r.data["joint"] = cjson(ab.joint);
  r.data["product"] = cjson(ab.product);
  r.data["gap"] = cjson(ab.gap);
  r.data["crossing"] = cjson(ab.crossing);
  if (c.delta) {
    const auto d = appendix_b_delta_check(m, s, c.op_a, c.op_b, c.eps_res >= 0 ? c.eps_res : default_eps_res(m));
    r.data["delta_check"] = {{"quadruples", d.quadruples},
                             {"mismatches", d.mismatches},
                             {"joint_kernel", cjson(d.joint_kernel)},
                             {"joint_delta", cjson(d.joint_delta)}};
  }
  return r;
}

inline Result run_eth_deutsch(const RunConfig& c) {
  const auto m = make_model(c);
  const Mat h = m.basis * m.energies.cast<Complex>().asDiagonal() * m.basis.adjoint();
  const Mat A = m.basis * m.obs(c.op_a) * m.basis.adjoint();
  DeutschSpec spec;
  spec.lambdas = number_list(c.lambdas);
  spec.beta = c.inv_temp;
  spec.a = c.exponent;
  spec.c = c.coupling >= 0 ? c.coupling : std::pow(static_cast<double>(m.D), -c.exponent);
  if (c.perturbation.empty()) {
    Rng rng = substream(c.seed, 1);
    spec.perturbation = std::sqrt(static_cast<double>(m.D)) * goe_hamiltonian(m.D, rng);
  } else {
    spec.perturbation = load_matrix(c.perturbation);
  }
  const auto rep = deutsch_ensemble(h, A, spec);
  Result r;
  r.data["model"] = model_summary(m, thermal_state(m, c.inv_temp));
  r.data["observable"] = c.op_a;
  r.data["c"] = spec.c;
  r.data["lambdas"] = rep.lambdas;
  r.data["bandwidth"] = rep.bandwidth;
  r.data["max_stochastic_error"] = rep.max_stochastic_error;
  r.data["d_eff"] = rep.d_eff;
  Table t{{"i", "j", "real", "imag"}, {}};
  json pairs = json::array();
  for (const auto& p : rep.pairs) {
    pairs.push_back({{"i", p.i}, {"j", p.j}, {"kappa4", cjson(p.kappa4)}});
    t.rows.push_back({p.i, p.j, p.kappa4.real(), p.kappa4.imag()});
  }
  r.data["pairs"] = pairs;
  r.table = std::move(t);
  return r;
}

// ---------------------------------------------------------------- emission

inline std::string cell(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

inline void flatten(const json& v, const std::string& prefix, std::vector<std::pair<std::string, std::string>>& out) {
  if (v.is_object() && !v.empty()) {
    for (const auto& [k, x] : v.items()) flatten(x, prefix.empty() ? k : prefix + "." + k, out);
  } else {
    out.emplace_back(prefix, cell(v));
  }
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return q + "\"";
}

inline std::string render(const json& doc, const Result& r, const std::string& format) {
  std::ostringstream os;
  if (format == "json") {
    os << doc.dump(2) << "\n";
    return os.str();
  }
  os << "# freek " << kVersion << " " << doc.at("command").get<std::string>() << "\n";
  os << "# config " << doc.at("config").dump() << "\n";
  if (format == "csv") {
    if (r.table) {
      for (std::size_t i = 0; i < r.table->columns.size(); ++i) os << (i ? "," : "") << r.table->columns[i];
      os << "\n";
      for (const auto& row : r.table->rows) {
        for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << csv_field(cell(row[i]));
        os << "\n";
      }
    } else {
      std::vector<std::pair<std::string, std::string>> kv;
      flatten(r.data, "", kv);
      os << "key,value\n";
      for (const auto& [k, v] : kv) os << csv_field(k) << "," << csv_field(v) << "\n";
    }
    return os.str();
  }
  // text: scalar fields, then the table aligned
  std::vector<std::pair<std::string, std::string>> kv;
  json scalars = json::object();
  for (const auto& [k, v] : r.data.items())
    if (!r.table || !v.is_array() || v.empty() || v[0].is_primitive()) scalars[k] = v;
  flatten(scalars, "", kv);
  std::size_t w = 0;
  for (const auto& [k, _] : kv) w = std::max(w, k.size());
  for (const auto& [k, v] : kv) os << k << std::string(w - k.size() + 2, ' ') << v << "\n";
  if (r.table) {
    std::vector<std::size_t> width(r.table->columns.size());
    std::vector<std::vector<std::string>> cells;
    cells.push_back(r.table->columns);
    for (const auto& row : r.table->rows) {
      std::vector<std::string> line;
      for (const auto& v : row) line.push_back(cell(v));
      cells.push_back(std::move(line));
    }
    for (const auto& line : cells)
      for (std::size_t i = 0; i < line.size() && i < width.size(); ++i) width[i] = std::max(width[i], line[i].size());
    os << "\n";
    for (const auto& line : cells) {
      for (std::size_t i = 0; i < line.size(); ++i)
        os << line[i] << (i + 1 < line.size() ? std::string(width[i] - line[i].size() + 2, ' ') : "");
      os << "\n";
    }
  }
  return os.str();
}

// Numbers stay numbers; everything else is kept as the string given.
inline json typed_value(const std::string& v) {
  if (v.empty()) return v;
  const json j = json::parse(v, nullptr, false);
  return !j.is_discarded() && j.is_number() ? j : json(v);
}

inline json resolved_options(const CLI::App* app) {
  json out = json::object();
  for (const CLI::Option* o : app->get_options()) {
    const std::string name = o->get_single_name();
    if (name.empty() || name == "help" || name == "config" || name == "version") continue;
    if (o->get_expected_max() == 0) {
      out[name] = o->count() > 0;
    } else if (o->count() > 0) {
      const auto& res = o->results();
      if (res.size() == 1) {
        out[name] = typed_value(res[0]);
      } else {
        out[name] = json::array();
        for (const auto& x : res) out[name].push_back(typed_value(x));
      }
    } else if (o->get_items_expected_max() > 1) {
      out[name] = json::array();
    } else {
      out[name] = typed_value(o->get_default_str());
    }
  }
  return out;
}

// ---------------------------------------------------------------- dispatch

inline void add_ensemble_options(CLI::App* s, RunConfig& c) {
  s->add_option("--ensemble", c.ensemble, "haar | pauli | clifford | discrete | hamiltonian")
      ->check(CLI::IsMember({"haar", "pauli", "clifford", "discrete", "hamiltonian"}));
  s->add_option("--dim", c.dim, "Hilbert-space dimension D");
  s->add_option("--unitaries", c.unitaries, "matrix files of a discrete ensemble");
  s->add_option("--hamiltonian", c.hamiltonian, "matrix file, or 'goe' for a GOE draw of size --dim");
  s->add_option("--t-max", c.t_max, "time window length (inf = infinite-time average)");
  s->add_option("--eps-res", c.eps_res, "resonance tolerance (negative: automatic)");
}

inline void add_model_options(CLI::App* s, RunConfig& c) {
  s->add_option("--model", c.model, "goe | ising | file")->check(CLI::IsMember({"goe", "ising", "file"}));
  s->add_option("--dim", c.model_dim, "GOE dimension");
  s->add_option("--L", c.L, "Ising chain length");
  s->add_option("--J", c.J, "Ising coupling");
  s->add_option("--hx", c.hx, "transverse field");
  s->add_option("--hz", c.hz, "longitudinal field");
  s->add_option("--hamiltonian", c.hamiltonian, "matrix file for --model file");
  s->add_option("--observable", c.observables, "extra observable name=path (computational basis)");
  s->add_option("--cap", c.cap, "largest dimension diagonalised");
  s->add_option("--beta", c.inv_temp, "inverse temperature");
}

inline void add_pair_options(CLI::App* s, RunConfig& c) {
  s->add_option("--a", c.op_a, "observable evolved in time");
  s->add_option("--b", c.op_b, "observable held fixed");
}

// Returns the process exit code: 0 success, 1 invalid input, 2 numerical
// regime not supported.
inline int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig c;
  CLI::App app{"Free-probability toolkit: non-crossing partitions, Weingarten calculus, k-fold channels and ETH dynamics",
               "fkfree"};
  app.option_defaults()->always_capture_default();
  app.fallthrough();
  app.set_config("--config", "", "key = value file; [section] per subcommand; flags override");
  app.add_option("--output", c.output, "write the result document to this file");
  app.add_option("--format", c.format, "json | csv | text")->check(CLI::IsMember({"json", "csv", "text"}));
  app.add_option("--seed", c.seed, "random seed");
  app.add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  std::map<const CLI::App*, std::function<Result()>> handlers;
  auto leaf = [&](CLI::App* parent, const std::string& name, const std::string& desc, Result (*fn)(const RunConfig&)) {
    CLI::App* s = parent->add_subcommand(name, desc);
    handlers[s] = [fn, &c] { return fn(c); };
    return s;
  };

  auto* nc = leaf(&app, "nc", "non-crossing partitions, Moebius table, Kreweras pairs", run_nc);
  nc->add_option("--n", c.n, "ground-set size")->required();
  nc->add_flag("--count", c.count, "print only |NC(n)|");
  nc->add_flag("--moebius", c.moebius, "include the Moebius table");
  nc->add_flag("--kreweras", c.kreweras, "include Kreweras complements");

  auto* perm = leaf(&app, "perm", "cycle structure, geodesics and NC embedding of a permutation", run_perm);
  perm->add_option("--perm", c.perm, "one-line notation, 1-based, e.g. '2,3,1'")->required();
  perm->add_option("--beta", c.beta, "second permutation tested against the geodesic");
  perm->add_flag("--geodesic", c.geodesic, "list the geodesic set with Moebius values");

  auto* wg = leaf(&app, "wg", "exact Weingarten table", run_wg);
  wg->add_option("--k", c.k, "order")->required();
  wg->add_option("--dim", c.dim, "dimension D")->required();
  wg->add_flag("--asymptotic", c.asymptotic, "add leading-order values to the table");

  auto* cum = leaf(&app, "cumulants", "free cumulants from moments or matrices", run_cumulants);
  cum->add_option("--sequence", c.sequence, "single-variable moments m1,m2,...");
  cum->add_option("--matrix", c.matrix, "matrix file; moments under the normalised trace");
  cum->add_option("--order", c.order, "highest moment taken from --matrix");
  cum->add_option("--ops", c.ops, "operator file (matrices or a moment table)");
  cum->add_option("--args", c.args, "cumulant arguments, e.g. 'a,b,a,b'");

  auto* ch = leaf(&app, "channel", "k-fold Haar channel coefficients", run_channel);
  ch->add_option("--ops", c.ops, "operator file")->required();
  ch->add_option("--args", c.args, "channel arguments A_1..A_k, e.g. 'a,a'")->required();
  ch->add_option("--k", c.channel_k, "order (checked against --args)");
  ch->add_option("--dim", c.dim, "dimension D (defaults to the matrix size)");
  ch->add_option("--mode", c.mode, "exact | asymptotic")->check(CLI::IsMember({"exact", "asymptotic"}));

  auto* ot = leaf(&app, "otoc", "<A^U B ... A^U B> by the free formula and by channel contraction", run_otoc);
  ot->add_option("--k", c.k, "number of A-B pairs")->required();
  ot->add_option("--dim", c.dim, "dimension for the channel paths");
  ot->add_option("--a-moments", c.a_moments, "moments <A>,<A^2>,...");
  ot->add_option("--b-moments", c.b_moments, "moments <B>,<B^2>,...");
  ot->add_option("--a-matrix", c.a_matrix, "matrix file for A");
  ot->add_option("--b-matrix", c.b_matrix, "matrix file for B");

  auto* ht = leaf(&app, "haar-test", "Monte Carlo k-freeness test", run_haar_test);
  add_ensemble_options(ht, c);
  add_pair_options(ht, c);
  ht->add_option("--k", c.k, "order");
  ht->add_option("--samples", c.samples, "number of unitaries drawn");
  ht->add_option("--batches", c.batches, "batches for the error bar");

  auto* dc = leaf(&app, "design-check", "compare an ensemble's k-fold channel with Haar", run_design_check);
  add_ensemble_options(dc, c);
  dc->add_option("--k", c.k, "order");
  dc->add_option("--tol", c.tol, "pass tolerance");
  dc->add_option("--probes", c.probes, "random product probes when D^k > 64");

  auto* di = leaf(&app, "distance", "Frobenius distance of k-fold superoperators", run_distance);
  add_ensemble_options(di, c);
  di->add_option("--k", c.k, "order");

  auto* eth = app.add_subcommand("eth", "Hamiltonian dynamics and ETH observables");
  eth->require_subcommand(1);

  auto* eb = leaf(eth, "build", "diagonalise a model and report its spectrum", run_eth_build);
  add_model_options(eb, c);
  eb->add_option("--eps-res", c.eps_res, "resonance tolerance (negative: automatic)");
  eb->add_option("--save-hamiltonian", c.save_hamiltonian, "write H (binary, or JSON for *.json)");

  auto* ec = leaf(eth, "cumulant", "thermal kappa_2k(A(t), B, ...) over a time grid", run_eth_cumulant);
  add_model_options(ec, c);
  add_pair_options(ec, c);
  ec->add_option("--k", c.k, "order");
  ec->add_option("--times", c.times, "times, list or start:stop:count");
  ec->add_option("--quantity", c.quantity, "cumulant | moment | distinct")
      ->check(CLI::IsMember({"cumulant", "moment", "distinct"}));

  auto* et = leaf(eth, "timeavg", "time-averaged OTOC cumulant over windows [0, T]", run_eth_timeavg);
  add_model_options(et, c);
  add_pair_options(et, c);
  et->add_option("--k", c.k, "order");
  et->add_option("--windows", c.windows, "window lengths; 'inf' is the infinite-time average");
  et->add_option("--panel", c.panel, "quadrature panel width");
  et->add_flag("--factorization", c.factorization, "add the long-time OTOC factorisation");

  auto* ef = leaf(eth, "freetime", "free-k time on a grid", run_eth_freetime);
  add_model_options(ef, c);
  add_pair_options(ef, c);
  ef->add_option("--k", c.k, "order");
  ef->add_option("--threshold", c.threshold, "relative threshold");
  ef->add_option("--grid", c.grid, "time grid, list or start:stop:count");

  auto* ea = leaf(eth, "appendixb", "time-averaged <A(t)B>^2 against its factorised form", run_eth_appendixb);
  add_model_options(ea, c);
  add_pair_options(ea, c);
  ea->add_option("--window", c.window, "window length or inf");
  ea->add_option("--panel", c.panel, "quadrature panel width");
  ea->add_flag("--delta", c.delta, "enumerate all index quadruples (small D)");
  ea->add_option("--eps-res", c.eps_res, "resonance tolerance (negative: automatic)");

  auto* ed = leaf(eth, "deutsch", "perturbed eigenbases and cross cumulants", run_eth_deutsch);
  add_model_options(ed, c);
  ed->add_option("--a", c.op_a, "observable");
  ed->add_option("--lambdas", c.lambdas, "coupling multipliers");
  ed->add_option("--c", c.coupling, "strength (negative: D^-exponent)");
  ed->add_option("--exponent", c.exponent, "scale exponent a in c ~ D^-a");
  ed->add_option("--perturbation", c.perturbation, "matrix file for H' (default: GOE draw)");

  const CLI::App* sel = &app;
  auto deepest = [&] {
    const CLI::App* a = &app;
    for (;;) {
      auto subs = a->get_subcommands();
      if (subs.empty()) return a;
      a = subs.front();
    }
  };
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return 0;
    }
    sel = deepest();
    err << "error: " << e.what() << "\n\n" << sel->help();
    return 1;
  }
  sel = deepest();

  std::string command;
  json config = json::object();
  for (const CLI::App* a = &app;;) {
    if (a != &app) command += (command.empty() ? "" : " ") + a->get_name();
    const json opts = resolved_options(a);
    for (const auto& [k, v] : opts.items()) config[k] = v;
    auto subs = a->get_subcommands();
    if (subs.empty()) break;
    a = subs.front();
  }

  try {
    auto it = handlers.find(sel);
    require(it != handlers.end(), "incomplete command");
    const Result r = it->second();
    json doc = {{"version", kVersion}, {"command", command}, {"config", config}, {"result", r.data}};
    const std::string text = render(doc, r, c.format);
    if (c.output.empty()) {
      out << text;
    } else {
      std::ofstream f(c.output, std::ios::binary);
      require(bool(f), "cannot open " + c.output + " for writing");
      f << text;
    }
    return 0;
  } catch (const RegimeError& e) {
    err << "regime error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace freek::cli
