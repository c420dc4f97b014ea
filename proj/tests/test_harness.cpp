#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <string>

#include "vrtdc/harness.hpp"

using namespace vrtdc;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vrtdc_harness_" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig cycle2_config(const fs::path& out) {
  return parse_config_text(R"({
    "instance": {"type": "cycle2"},
    "sampling": "iid",
    "algorithms": [
      {"name": "TD", "alpha": 0.1, "steps": 400},
      {"name": "TDC", "alpha": 0.1, "beta": 0.05, "steps": 400},
      {"name": "VRTD", "alpha": 0.1, "M": 16, "epochs": 5},
      {"name": "VRTDC", "alpha": 0.1, "beta": 0.05, "M": 16, "epochs": 5}
    ],
    "repetitions": 5, "seed": 3, "record_every": 8, "output_dir": ")" +
                           out.string() + R"("})");
}

std::map<std::string, std::string> csv_files(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.path().extension() == ".csv") out[fs::relative(e.path(), root).string()] = read_text_file(e.path());
  return out;
}

}  // namespace

TEST(Config, MinimalDefaults) {
  const auto cfg = parse_config_text(R"({"instance": {"type": "cycle2"}})");
  EXPECT_EQ(cfg.repetitions, 1u);
  EXPECT_EQ(cfg.seed, 0u);
  EXPECT_EQ(cfg.record_every, 10u);
  EXPECT_EQ(cfg.effective_grid_step(), 10u);
  EXPECT_EQ(cfg.sampling, Setting::Markov);
  EXPECT_EQ(cfg.n_mc, 500u);
  EXPECT_EQ(cfg.threads, 1u);
  EXPECT_EQ(cfg.output_dir, fs::path("out"));
  EXPECT_FALSE(cfg.epsilon.has_value());
  EXPECT_EQ(cfg.coefficients.c_alpha, 1.0);
  EXPECT_TRUE(cfg.algorithms.empty());
}

TEST(Config, ZeroRepetitionsRejected) {
  EXPECT_THROW(parse_config_text(R"({"instance": {"type": "cycle2"}, "repetitions": 0})"), ValidationError);
}

TEST(Config, AllViolationsListed) {
  try {
    parse_config_text(R"({"instance": {"type": "garnet", "branching": 99, "gamma": 1.5}, "repetitions": 0,
                          "algorithms": [{"name": "SGD"}, {"name": "TDC", "alpha": 0.1}]})");
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    for (const char* frag : {"branching", "gamma", "repetitions", "algorithms[0].name", "algorithms[1].beta",
                             "algorithms[1].steps"})
      EXPECT_NE(msg.find(frag), std::string::npos) << frag << " missing from:\n" << msg;
  }
}

TEST(Config, UnknownKeysRejected) {
  EXPECT_THROW(parse_config_text(R"({"instance": {"type": "cycle2"}, "extra": 1})"), ParseError);
  EXPECT_THROW(parse_config_text(R"({"instance": {"type": "cycle2", "colour": 1}})"), ParseError);
  EXPECT_THROW(parse_config_text(R"({"instance": {"type": "cycle2"}, "algorithms": [{"name": "TD", "lr": 1}]})"),
               ParseError);
}

TEST(Config, SyntaxErrorNamesLine) {
  try {
    parse_config_text("{\n\"instance\": {\"type\": \"cycle2\"},\n\"seed\": ,\n}");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Config, TypeErrorsNameKey) {
  try {
    parse_config_text(R"({"instance": {"type": "cycle2"}, "repetitions": "many"})");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("repetitions"), std::string::npos);
  }
}

TEST(Config, LargeGarnetSetup) {
  const auto cfg = parse_config(fs::path(VRTDC_SOURCE_DIR) / "configs" / "garnet_large.json");
  EXPECT_EQ(cfg.instance.type, "garnet");
  EXPECT_EQ(cfg.instance.garnet.n_states, 500u);
  EXPECT_EQ(cfg.instance.garnet.n_actions, 20u);
  EXPECT_EQ(cfg.instance.garnet.branching, 50u);
  EXPECT_EQ(cfg.instance.garnet.dim, 15u);
  const auto& v = cfg.algorithms.at(1);
  EXPECT_EQ(v.name, "VRTDC");
  EXPECT_EQ(*v.alpha, 0.1);
  EXPECT_EQ(*v.beta, 0.02);
  EXPECT_EQ(*v.M, 3000u);
}

TEST(Config, ShippedConfigsAreValid) {
  for (const auto& e : fs::directory_iterator(fs::path(VRTDC_SOURCE_DIR) / "configs"))
    EXPECT_NO_THROW(parse_config(e.path())) << e.path();
}

TEST(Config, EpsilonScheduleFillsParameters) {
  const auto cfg = parse_config_text(R"({"instance": {"type": "cycle2"}, "sampling": "iid", "epsilon": 1e-5,
                                         "algorithms": [{"name": "VRTDC"}]})");
  const auto p = resolve_params(cfg, cfg.algorithms[0], {1, 1}, 0);
  EXPECT_EQ(p.algo, Algo::VRTDC_IID);
  EXPECT_NEAR(p.alpha, 1e-3, 1e-15);
  EXPECT_NEAR(p.beta, 1e-2, 1e-15);
  EXPECT_EQ(p.M, 1000u);
  EXPECT_EQ(p.epochs, 12u);
}

TEST(ModelFile, LosslessRoundTrip) {
  const auto dir = scratch("model");
  auto cfg = parse_config_text(R"({"instance": {"type": "garnet", "n_states": 12, "n_actions": 3, "branching": 4,
                                   "dim": 4, "seed": 99}})");
  cfg.output_dir = dir;
  const auto path = cmd_gen(cfg);
  const auto original = build_instance(cfg);
  const auto loaded = load_instance(path);
  EXPECT_EQ(loaded.model.kernel(), original.model.kernel());
  EXPECT_EQ(loaded.model.reward(), original.model.reward());
  EXPECT_EQ(loaded.model.gamma(), original.model.gamma());
  EXPECT_EQ(loaded.model.r_max(), original.model.r_max());
  EXPECT_EQ(loaded.model.provenance(), original.model.provenance());
  EXPECT_EQ(loaded.features.matrix().data(), original.features.matrix().data());
  EXPECT_EQ(loaded.target.probs().data(), original.target.probs().data());
  EXPECT_EQ(loaded.behavior.probs().data(), original.behavior.probs().data());
  EXPECT_EQ(instance_hash(loaded), instance_hash(original));

  // A config pointing at the file builds the same instance.
  auto from_file = parse_config_text(R"({"instance": {"type": "file", "path": ")" + path.string() + R"("}})");
  EXPECT_EQ(instance_hash(build_instance(from_file)), instance_hash(original));
}

TEST(ModelFile, RejectsMalformed) {
  EXPECT_THROW(instance_from_json(Json::parse(R"({"n_states": 1})")), ParseError);
  EXPECT_THROW(instance_from_json(Json::parse(R"({"n_states": 1, "n_actions": 1, "gamma": 0.5, "features": [[1.0]],
                                                  "kernel": [[[1.0]]], "reward": [[[0.0]]], "mood": 1})")),
               ParseError);
  EXPECT_THROW(instance_from_json(Json::parse(R"({"n_states": 1, "n_actions": 1, "gamma": 0.5, "features": [[1.0]],
                                                  "kernel": [[[0.5]]], "reward": [[[0.0]]]})")),
               InvalidParams);
  EXPECT_THROW(load_instance("/nonexistent/model.json"), IoError);
}

TEST(ModelFile, MissingFileIsValidationError) {
  EXPECT_THROW(parse_config_text(R"({"instance": {"type": "file", "path": "/nonexistent/m.json"}})"),
               ValidationError);
}

TEST(Csv, FullPrecisionAndLayout) {
  RunTrace t;
  t.points = {{0, 0.1, 1.0 / 3.0}, {10, 2.5e-17, 0.0}};
  EXPECT_EQ(trace_csv(t),
            "pg_count,conv_error,tracking_error_sq\n"
            "0,0.10000000000000001,0.33333333333333331\n"
            "10,2.4999999999999999e-17,0\n");
  Envelope env{{0, 5}, {1, 2}, {3, 4}, {5, 6}};
  EXPECT_EQ(envelope_csv(env), "pg_count,p5,p50,p95\n0,1,3,5\n5,2,4,6\n");
}

TEST(ParallelFor, CoversEveryIndexAndRethrows) {
  std::vector<int> hit(37, 0);
  parallel_for(hit.size(), 4, [&](std::size_t i) { hit[i] += 1; });
  for (int h : hit) EXPECT_EQ(h, 1);
  EXPECT_THROW(parallel_for(10, 3,
                            [](std::size_t i) {
                              if (i == 6) throw InvalidParams("boom");
                            }),
               InvalidParams);
}

TEST(Run, WritesTracesEnvelopesAndManifest) {
  const auto dir = scratch("run") / "nested" / "deeper";
  const auto cfg = cycle2_config(dir);
  const auto sum = cmd_run(cfg);
  ASSERT_EQ(sum.reps.size(), 5u);
  for (const char* label : {"TD", "TDC", "VRTD", "VRTDC"}) {
    for (const char* metric : {"conv_error", "tracking_error_sq"})
      EXPECT_TRUE(fs::exists(dir / (std::string("envelope_") + label + "_" + metric + ".csv"))) << label;
    for (int rep = 0; rep < 5; ++rep)
      EXPECT_TRUE(fs::exists(dir / "traces" / (std::string(label) + "_rep" + std::to_string(rep) + ".csv")));
  }
  const auto env = read_text_file(dir / "envelope_VRTDC_conv_error.csv");
  EXPECT_EQ(env.rfind("pg_count,p5,p50,p95\n", 0), 0u);
  const Json m = Json::parse(read_text_file(dir / "manifest.json"));
  EXPECT_EQ(m["instance"]["hash"].get<std::string>(), hex64(instance_hash(build_instance(cfg))));
  EXPECT_EQ(m["repetitions"].get<int>(), 5);
  EXPECT_TRUE(m.contains("wall_time_sec"));
  const auto& reps = m["algorithms"][3]["reps"];
  ASSERT_EQ(reps.size(), 5u);
  EXPECT_EQ(reps[2]["seed"].get<std::uint64_t>(), derive_seed(3, 2));
  EXPECT_TRUE(reps[2]["error"].is_null());
  EXPECT_EQ(m["algorithms"][3]["params"]["M"].get<int>(), 16);
}

TEST(Run, ByteIdenticalAcrossRunsAndThreads) {
  const auto a = scratch("det_a"), b = scratch("det_b"), c = scratch("det_c");
  auto cfg = cycle2_config(a);
  cmd_run(cfg);
  cfg.output_dir = b;
  cmd_run(cfg);
  cfg.output_dir = c;
  cfg.threads = 4;
  cmd_run(cfg);
  const auto fa = csv_files(a), fb = csv_files(b), fc = csv_files(c);
  ASSERT_EQ(fa.size(), 4u * 5u + 8u);
  EXPECT_EQ(fa, fb);
  EXPECT_EQ(fa, fc);
}

TEST(Run, SeedChangesOutputs) {
  const auto a = scratch("seed_a"), b = scratch("seed_b");
  auto cfg = cycle2_config(a);
  cmd_run(cfg);
  cfg.output_dir = b;
  cfg.seed = 4;
  cmd_run(cfg);
  EXPECT_NE(csv_files(a), csv_files(b));
}

TEST(Run, UnwritableOutputIsIoError) {
  const auto dir = scratch("blocked");
  fs::create_directories(dir);
  write_text_file(dir / "file", "x");
  EXPECT_THROW(cmd_run(cycle2_config(dir / "file" / "sub")), IoError);
}

TEST(Run, MarkovSamplingSharesTheStream) {
  const auto dir = scratch("markov");
  auto cfg = parse_config_text(R"({"instance": {"type": "garnet", "n_states": 10, "n_actions": 2, "branching": 3,
                                   "dim": 3, "seed": 5}, "sampling": "markov",
                                   "algorithms": [{"name": "TDC", "alpha": 0.05, "beta": 0.02, "steps": 200},
                                                  {"name": "VRTDC", "alpha": 0.05, "beta": 0.02, "M": 50, "epochs": 4}],
                                   "repetitions": 2, "record_every": 50})");
  cfg.output_dir = dir;
  const auto sum = cmd_run(cfg);
  for (const auto& r : sum.reps) {
    EXPECT_EQ(r.errors[0], "");
    EXPECT_EQ(r.errors[1], "");
    EXPECT_EQ(r.traces[1].total_pg_count, 6u * 50u * 4u);
    EXPECT_EQ(r.traces[0].total_pg_count, 400u);
  }
}

TEST(Conditions, Cycle2SearchPassesBothSettings) {
  const auto dir = scratch("cond");
  auto cfg = parse_config(fs::path(VRTDC_SOURCE_DIR) / "configs" / "cycle2_conditions.json");
  cfg.output_dir = dir;
  const auto sum = cmd_conditions(cfg);
  ASSERT_EQ(sum.outcomes.size(), 2u);
  for (const auto& o : sum.outcomes) {
    EXPECT_EQ(o.mode, "search");
    EXPECT_TRUE(o.found);
    EXPECT_TRUE(o.report.overall);
    ASSERT_TRUE(o.epsilon.has_value());
    EXPECT_GE(*o.epsilon, 1e-8);
    EXPECT_LE(*o.epsilon, 1e-1);
  }
  const Json doc = Json::parse(read_text_file(sum.path));
  for (const char* key : {"G_VR", "H_VR", "inputs", "mixing", "settings"}) EXPECT_TRUE(doc.contains(key)) << key;
  for (const char* k : {"K1", "K2", "C1", "C2", "C3", "C4"}) EXPECT_TRUE(doc["settings"]["iid"]["constants"].contains(k));
  for (const char* k : {"K1", "K2", "K3", "K4", "K5", "C1", "C2"})
    EXPECT_TRUE(doc["settings"]["markov"]["constants"].contains(k));
  const auto& rep = doc["settings"]["iid"]["report"];
  for (const char* k : {"D", "E", "F", "max_DEF", "conditions", "overall"}) EXPECT_TRUE(rep.contains(k)) << k;
  EXPECT_LT(rep["max_DEF"].get<double>(), 1.0);
  EXPECT_NEAR(doc["inputs"]["lambda_A_hat"].get<double>(), 0.25, 1e-12);
}

TEST(Conditions, ExplicitInfeasibleAlphaListsViolations) {
  const auto dir = scratch("cond_bad");
  auto cfg = parse_config_text(R"({"instance": {"type": "cycle2"},
                                   "conditions": {"settings": ["iid"], "alpha": 1.0, "beta": 0.1, "M": 100}})");
  cfg.output_dir = dir;
  const auto sum = cmd_conditions(cfg);
  ASSERT_EQ(sum.outcomes.size(), 1u);
  EXPECT_FALSE(sum.outcomes[0].report.overall);
  const Json doc = Json::parse(read_text_file(sum.path));
  const auto& rep = doc["settings"]["iid"]["report"];
  EXPECT_FALSE(rep["overall"].get<bool>());
  const auto viol = rep["violations"].get<std::vector<std::string>>();
  EXPECT_NE(std::find(viol.begin(), viol.end(), "iid.1"), viol.end());
  for (const auto& c : rep["conditions"]) {
    EXPECT_TRUE(c.contains("lhs"));
    EXPECT_TRUE(c.contains("rhs"));
    const bool listed = std::find(viol.begin(), viol.end(), c["id"].get<std::string>()) != viol.end();
    EXPECT_EQ(listed, !c["pass"].get<bool>());
  }
}

TEST(Conditions, ZeroKappaOverrideMatchesIID) {
  const auto dir = scratch("cond_k0");
  auto cfg = parse_config_text(R"({"instance": {"type": "cycle2"},
                                   "conditions": {"kappa": 0, "rho": 0.5, "alpha": 1e-4, "beta": 1e-2, "M": 1000}})");
  cfg.output_dir = dir;
  cmd_conditions(cfg);
  const Json doc = Json::parse(read_text_file(dir / "conditions.json"));
  EXPECT_EQ(doc["settings"]["markov"]["constants"]["K1"].get<double>(),
            doc["settings"]["iid"]["constants"]["K1"].get<double>());
  EXPECT_FALSE(doc.contains("mixing_fit"));
}

TEST(Variance, DeterministicInstanceHasZeroVariance) {
  const auto dir = scratch("var0");
  fs::create_directories(dir);
  const InstanceBundle one{MDPModel(1, 1, 0.5, {1.0}, {1.0}, "single"), FeatureMap(Matrix(1, 1, 1.0)),
                           Policy(Matrix(1, 1, 1.0)), Policy(Matrix(1, 1, 1.0))};
  save_instance(one, dir / "one.json");
  auto cfg = parse_config_text(R"({"instance": {"type": "file", "path": ")" + (dir / "one.json").string() + R"("},
                                   "algorithms": [{"name": "TDC", "alpha": 0.1, "beta": 0.1, "steps": 50},
                                                  {"name": "VRTDC", "alpha": 0.1, "beta": 0.1, "M": 10, "epochs": 2}],
                                   "repetitions": 2, "record_every": 10, "n_mc": 20})");
  cfg.output_dir = dir / "out";
  const auto sum = cmd_variance(cfg);
  std::size_t points = 0;
  for (const auto& rep : sum.reps)
    for (const auto& algo : rep)
      for (const auto& p : algo) {
        EXPECT_EQ(p.var_theta, 0.0);
        EXPECT_EQ(p.var_w, 0.0);
        ++points;
      }
  EXPECT_GT(points, 0u);
  EXPECT_TRUE(fs::exists(cfg.output_dir / "variance_TDC.csv"));
  EXPECT_TRUE(fs::exists(cfg.output_dir / "variance_VRTDC.csv"));
  EXPECT_EQ(read_text_file(cfg.output_dir / "variance_TDC.csv").rfind("pg_count,var_theta_update,var_w_update\n", 0),
            0u);
}

TEST(Variance, RequiresBothAlgorithms) {
  auto cfg = parse_config_text(R"({"instance": {"type": "cycle2"},
                                   "algorithms": [{"name": "TDC", "alpha": 0.1, "beta": 0.1, "steps": 50}]})");
  cfg.output_dir = scratch("var_missing");
  EXPECT_THROW(cmd_variance(cfg), ValidationError);
}

TEST(Variance, ParallelMatchesSerial) {
  auto cfg = cycle2_config(scratch("var_s"));
  const auto s = cmd_variance(cfg);
  cfg.output_dir = scratch("var_p");
  cfg.threads = 3;
  const auto p = cmd_variance(cfg);
  ASSERT_EQ(s.reps.size(), p.reps.size());
  for (std::size_t r = 0; r < s.reps.size(); ++r)
    for (std::size_t k = 0; k < 2; ++k) {
      ASSERT_EQ(s.reps[r][k].size(), p.reps[r][k].size());
      for (std::size_t i = 0; i < s.reps[r][k].size(); ++i) {
        EXPECT_EQ(s.reps[r][k][i].var_theta, p.reps[r][k][i].var_theta);
        EXPECT_EQ(s.reps[r][k][i].var_w, p.reps[r][k][i].var_w);
      }
    }
}
