#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "mimofb/evaluation.hpp"
#include "mimofb/experiment.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mimofb;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  SystemConfig config;
  Dataset train, test;
  EvalAssets assets;

  Fixture() {
    const auto ds = filter_by_snr(generate_paired_dataset(config, 240, 31), -10.0, 20.0);
    const auto parts = split_dataset(ds, 120, 0, 32);
    train = parts.train;
    test = parts.test;
    for (auto src : {CodebookSource::kDownlink, CodebookSource::kUplink}) {
      const auto learned = learn_codebook(train, link_of(src), 2, LloydOptions{}, PgdOptions{});
      assets.codebooks[codebook_key(src, 2)] = learned.codebook;
    }
    assets.codebooks[codebook_key(CodebookSource::kDownlink, 0, true)] = all_train_data_codebook(train);
    for (int n_p : {2, 8}) {
      EncoderArchitecture arch;
      arch.n_rx = config.n_rx;
      arch.n_p = n_p;
      arch.classes = 4;
      arch.dense_tail = {16};
      EncoderModel m(arch);
      m.initialize(static_cast<std::uint64_t>(n_p));
      assets.encoders[encoder_key(CodebookSource::kDownlink, 2, n_p)] = m;
    }
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

std::string run_ini(const std::string& stages) {
  return "[run]\nseed = 5\nstages = " + stages +
         "\n[data]\ncount = 200\nn_train = 80\nn_val = 30\n"
         "[codebook]\nbits = 2\nlinks = ul dl\n"
         "[encoder]\nbits = 2\npilots = 2 8\nbudget = 2\n"
         "[search]\nepochs = 2\npatience = 1\ndense_tail = 16\nkernels_max = 6\n"
         "[evaluate]\nstrategies = uniform-power wf-true cb-true-csi:dl:2 cb-ls:dl:2 cb-omp:dl:2 "
         "dnn:dl:2 all-train-cb:dl\n"
         "sweep_strategies = uniform-power cb-ls:dl:2 cb-omp:dl:2 dnn:dl:2\n"
         "sweep_pilots = 2 8\nomp_s_max = 6\n";
}

std::vector<std::pair<std::string, std::string>> dir_contents(const fs::path& dir) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : fs::directory_iterator(dir)) out.emplace_back(e.path().filename().string(), testing::slurp(e.path()));
  std::sort(out.begin(), out.end());
  return out;
}

int run_cli(const std::string& args, const fs::path& err) {
  const std::string cmd = std::string(MIMOFB_CLI_PATH) + " " + args + " > /dev/null 2> " + err.string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("boxplot statistics on a known sample") {
  const auto s = boxplot_stats({5, 1, 4, 2, 3});
  CHECK(s.median == 3.0);
  CHECK(s.q1 == 2.0);
  CHECK(s.q3 == 4.0);
  CHECK(s.whisker_lo == 1.0);
  CHECK(s.whisker_hi == 5.0);
  CHECK(s.mean == 3.0);
  const auto o = boxplot_stats({1, 2, 3, 4, 5, 100});
  CHECK(o.whisker_hi == 5.0);
  CHECK(boxplot_stats({7.5}).whisker_lo == 7.5);
  CHECK_THROWS_AS(boxplot_stats({}), SizeError);
}

TEST_CASE("boxplot statistics match a brute-force oracle") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    const int n = 1 + t % 40;
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = g(rng) * (rng() % 10 == 0 ? 8.0 : 1.0);
    if (t % 7 == 0) v.push_back(v.front());  // ties
    const auto s = boxplot_stats(v);
    const auto o = oracle::boxplot(v);
    CHECK(s.q1 == doctest::Approx(o.q1).epsilon(1e-12));
    CHECK(s.q3 == doctest::Approx(o.q3).epsilon(1e-12));
    CHECK(s.median == doctest::Approx(o.median).epsilon(1e-12));
    CHECK(s.whisker_lo == o.lo);
    CHECK(s.whisker_hi == o.hi);
    CHECK(s.mean == doctest::Approx(o.mean));
  }
}

TEST_CASE("strategy names") {
  for (const char* text : {"uniform-power", "wf-true", "uni-eigsp-true", "cb-true-csi:dl:3", "cb-ls:ul:6",
                           "cb-omp:dl:3", "wf-ls", "wf-omp", "dnn:dl:3", "all-train-cb:ul"})
    CHECK(parse_strategy(text).name() == text);
  for (const char* bad : {"", "foo", "cb-ls", "uniform-power:dl", "cb-ls:dl:x", "cb-ls:dl:3:4", "dnn:xl:3"})
    CHECK_THROWS_AS(parse_strategy(bad), ConfigError);
  CHECK(codebook_key(CodebookSource::kDownlink, 3) == "dl_m3");
  CHECK(codebook_key(CodebookSource::kUplink, 3, true) == "ul_all");
  CHECK(encoder_key(CodebookSource::kDownlink, 3, 2) == "dl_m3_np2");
  CHECK(parse_strategy("wf-omp").needs_pilots());
  CHECK_FALSE(parse_strategy("all-train-cb:dl").needs_pilots());
}

TEST_CASE("strategies agree with a direct computation") {
  const auto& f = fixture();
  SystemConfig c = f.config;
  EvalSettings st;
  st.seed = 3;
  st.omp_s_max = 6;
  const auto& cb = f.assets.codebooks.at("dl_m2");
  const auto& all = f.assets.codebooks.at("dl_all");
  const auto dict = build_dictionary(c.n_rx, c.n_tx, st.oversampling);
  auto eval = [&](const std::string& s, int n_p) {
    SystemConfig cc = c;
    cc.n_p = n_p;
    return evaluate_strategy(parse_strategy(s), f.test, f.assets, cc, st);
  };
  const auto uni = eval("uniform-power", 8), wf = eval("wf-true", 8), eig = eval("uni-eigsp-true", 8);
  const auto cbt = eval("cb-true-csi:dl:2", 8), cbl = eval("cb-ls:dl:2", 8), cbo = eval("cb-omp:dl:2", 2);
  const auto wfl = eval("wf-ls", 8), wfo = eval("wf-omp", 2), dnn = eval("dnn:dl:2", 2), at = eval("all-train-cb:dl", 8);
  const auto& enc = f.assets.encoders.at("dl_m2_np2");
  REQUIRE(uni.size() == f.test.size());
  for (std::size_t i = 0; i < f.test.size(); ++i) {
    const CMatrix& h = f.test.samples[i].h_dl;
    const double s2 = c.sigma_n2;
    const auto obs8 = observe(h, pilot_matrix(c.n_tx, 8, c.rho), s2, st.seed, i);
    const auto obs2 = observe(h, pilot_matrix(c.n_tx, 2, c.rho), s2, st.seed, i);
    CHECK(uni[i] == doctest::Approx(spectral_efficiency(h, uniform_power_cov(c), s2)).epsilon(1e-12));
    CHECK(wf[i] == doctest::Approx(spectral_efficiency(h, waterfilling_cov(h, c.rho, s2), s2)).epsilon(1e-12));
    CHECK(eig[i] == doctest::Approx(spectral_efficiency(h, uniform_eigenspace_cov(h, c.rho), s2)).epsilon(1e-12));
    CHECK(cbt[i] == doctest::Approx(select_best(h, cb, s2).se).epsilon(1e-12));
    CHECK(at[i] == doctest::Approx(select_best(h, all, s2).se).epsilon(1e-12));
    const auto ls = ls_estimate(obs8);
    CHECK(cbl[i] == doctest::Approx(spectral_efficiency(h, cb.entries[select_index(ls, cb, s2)], s2)).epsilon(1e-12));
    CHECK(wfl[i] == doctest::Approx(spectral_efficiency(h, waterfilling_cov(ls, c.rho, s2), s2)).epsilon(1e-12));
    const auto g = genie_omp(obs2, dict, h, 6);
    CHECK(cbo[i] == doctest::Approx(spectral_efficiency(h, cb.entries[select_index(g.h, cb, s2)], s2)).epsilon(1e-12));
    CHECK(wfo[i] == doctest::Approx(spectral_efficiency(h, waterfilling_cov(g.h, c.rho, s2), s2)).epsilon(1e-12));
    CHECK(dnn[i] == doctest::Approx(spectral_efficiency(h, cb.entries[predict_index(enc, obs2.y)], s2)).epsilon(1e-12));
    for (double v : {uni[i], eig[i], cbt[i], cbl[i], cbo[i], wfl[i], wfo[i], dnn[i], at[i]}) CHECK(wf[i] >= v - 1e-9);
    for (double v : {cbl[i], cbo[i], dnn[i]}) CHECK(cbt[i] >= v - 1e-12);
  }
}

TEST_CASE("evaluation errors name what is missing") {
  const auto& f = fixture();
  SystemConfig c = f.config;
  try {
    evaluate_strategy(parse_strategy("cb-true-csi:dl:5"), f.test, f.assets, c, EvalSettings{});
    FAIL("expected a missing-codebook error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("dl_m5") != std::string::npos);
  }
  c.n_p = 4;
  CHECK_THROWS_AS(evaluate_strategy(parse_strategy("cb-ls:dl:2"), f.test, f.assets, c, EvalSettings{}), RankError);
  CHECK_THROWS_AS(evaluate_strategy(parse_strategy("dnn:dl:2"), f.test, f.assets, c, EvalSettings{}), ConfigError);
}

TEST_CASE("evaluation does not depend on the thread count") {
  const auto& f = fixture();
  EvalSettings st;
  SystemConfig c = f.config;
  c.n_p = 2;
  const int threads = omp_get_max_threads();
  omp_set_num_threads(1);
  const auto a = evaluate_strategy(parse_strategy("cb-omp:dl:2"), f.test, f.assets, c, st);
  omp_set_num_threads(4);
  const auto b = evaluate_strategy(parse_strategy("cb-omp:dl:2"), f.test, f.assets, c, st);
  omp_set_num_threads(threads);
  CHECK(a == b);
}

TEST_CASE("pilot sweep") {
  const auto& f = fixture();
  EvalSettings st;
  st.omp_s_max = 6;
  const std::vector<StrategySpec> specs{parse_strategy("uniform-power"), parse_strategy("cb-ls:dl:2"),
                                        parse_strategy("dnn:dl:2")};
  const auto t = pilot_sweep(specs, f.test, f.assets, {2, 8}, f.config, st);
  REQUIRE(t.rows.size() == 3);
  CHECK(t.rows[0].second[0] == t.rows[0].second[1]);
  CHECK_FALSE(t.rows[1].second[0].has_value());
  REQUIRE(t.rows[1].second[1].has_value());
  SystemConfig c = f.config;
  c.n_p = 2;
  const auto v = evaluate_strategy(specs[2], f.test, f.assets, c, st);
  double sum = 0.0;
  for (double x : v) sum += x;
  CHECK(*t.rows[2].second[0] == doctest::Approx(sum / static_cast<double>(v.size())).epsilon(1e-14));
  CHECK_THROWS_AS(pilot_sweep(specs, f.test, f.assets, {9}, f.config, st), ConfigError);

  const auto dir = testing::fresh_dir("sweep");
  write_sweep_csv(dir / "s.csv", t);
  const auto text = testing::slurp(dir / "s.csv");
  CHECK(text.rfind("strategy,np2,np8\n", 0) == 0);
  CHECK(text.find("\ncb-ls:dl:2,,") != std::string::npos);
  EvalReport r;
  r.sweep = t;
  CHECK(format_report(r).find("n_p=8") != std::string::npos);
}

TEST_CASE("configuration parsing") {
  const auto c = parse_experiment_config(run_ini("generate filter split"));
  CHECK(c.seed == 5);
  CHECK(c.count == 200);
  CHECK(c.codebook_bits == std::vector<int>{2});
  CHECK(c.encoder_pilots == std::vector<int>{2, 8});
  CHECK(c.stages.size() == 3);
  CHECK(c.stage_seed(Stage::kGenerate) == 5);
  CHECK(c.stage_seed(Stage::kSplit) == 6);
  CHECK(c.strategies.size() == 7);
  const auto d = parse_experiment_config("");
  CHECK(d.stages == all_stages());
  CHECK(d.system.n_tx == 8);
  CHECK_THROWS_AS(parse_experiment_config("[data]\nbogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("[nosuch]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("[data]\ncount = many\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("[run]\nstages = generate bake\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("[evaluate]\nstrategies = cb-ls\n"), ConfigError);
  CHECK(parse_experiment_config("[data]\nseed = 99\n").stage_seed(Stage::kGenerate) == 99);
  for (Stage s : all_stages()) CHECK(stage_from_string(to_string(s)) == s);
}

TEST_CASE("pipeline runs end to end, reproducibly, and stage by stage") {
  const auto a = testing::fresh_dir("run_a");
  const auto b = testing::fresh_dir("run_b");
  const auto cfg = parse_experiment_config(run_ini("generate filter split codebooks label train evaluate sweep"));
  const auto ra = run_experiment(cfg, a);
  CHECK(ra.executed.size() == 8);
  CHECK(ra.report.strategies.size() == 7);
  REQUIRE(ra.report.sweep.has_value());
  for (const char* name : {"dataset.cmx1", "filtered.cmx1", "train.cmx1", "val.cmx1", "test.cmx1", "cb_dl_m2.cbk1",
                           "cb_ul_m2.cbk1", "cb_dl_all.cbk1", "enc_dl_m2_np2.enc1", "enc_dl_m2_np8.enc1",
                           "fig2_box.csv", "fig3_sweep.csv", "report.txt"})
    CHECK_MESSAGE(fs::exists(a / name), name);

  const int threads = omp_get_max_threads();
  omp_set_num_threads(3);
  run_experiment(cfg, b);
  omp_set_num_threads(threads);
  CHECK(dir_contents(a) == dir_contents(b));

  // Evaluation alone, reading earlier artifacts from another directory.
  const auto c_dir = testing::fresh_dir("run_eval_only");
  auto eval_only = parse_experiment_config(run_ini("evaluate"));
  eval_only.inputs["test"] = a / "test.cmx1";
  eval_only.inputs["codebook.dl_m2"] = a / "cb_dl_m2.cbk1";
  eval_only.inputs["codebook.dl_all"] = a / "cb_dl_all.cbk1";
  eval_only.inputs["encoder.dl_m2_np8"] = a / "enc_dl_m2_np8.enc1";
  eval_only.inputs["encoder.dl_m2_np2"] = a / "enc_dl_m2_np2.enc1";
  const auto rc = run_experiment(eval_only, c_dir);
  CHECK(rc.executed == std::vector<Stage>{Stage::kEvaluate});
  CHECK(testing::slurp(c_dir / "fig2_box.csv") == testing::slurp(a / "fig2_box.csv"));

  // A stage with nothing to read fails and says which stage and which file.
  const auto empty = testing::fresh_dir("run_empty");
  try {
    run_experiment(parse_experiment_config(run_ini("evaluate")), empty);
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    CHECK(e.stage() == Stage::kEvaluate);
    const std::string msg = e.what();
    CHECK(msg.rfind("stage evaluate: ", 0) == 0);
    CHECK(msg.find(empty.string()) != std::string::npos);
  }
}

TEST_CASE("command line exit codes name the failing stage") {
  const auto dir = testing::fresh_dir("cli");
  {
    std::ofstream os(dir / "eval.ini");
    os << run_ini("evaluate");
  }
  const auto err = dir / "stderr.txt";
  const int code = run_cli("evaluate --config " + (dir / "eval.ini").string() + " --out " + (dir / "out").string(), err);
  CHECK(code == 10 + static_cast<int>(Stage::kEvaluate));
  CHECK(testing::slurp(err).find("stage evaluate") != std::string::npos);

  {
    std::ofstream os(dir / "bad.ini");
    os << "[data]\nbogus = 1\n";
  }
  CHECK(run_cli("run --config " + (dir / "bad.ini").string() + " --out " + (dir / "out2").string(), err) == 2);
  CHECK(testing::slurp(err).find("stage config") != std::string::npos);

  CHECK(run_cli("gen-data --config " + (dir / "eval.ini").string() + " --seed 9 --out " + (dir / "gen").string(), err) == 0);
  CHECK(fs::exists(dir / "gen" / "train.cmx1"));
  CHECK(run_cli("no-such-command", err) != 0);
}
