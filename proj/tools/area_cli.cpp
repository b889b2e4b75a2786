// Command-line front end: gen | train | eval | verify | ablate.
//
// Exit codes: 0 success, 1 internal error, 2 usage error, 3 data error,
// 4 verification failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "area/area.hpp"
#include "verify_suites.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

enum Exit : int { kOk = 0, kInternal = 1, kUsage = 2, kData = 3, kVerify = 4 };

struct Common {
  std::string config_path;
  std::map<std::string, std::string> overrides;
  std::vector<std::string> order;  // keys in declaration order
};

void add_config_flags(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "flat `key = value` config file");
  for (const auto& [key, _] : area::Config::fields()) {
    const std::string k(key);
    c.order.push_back(k);
    app->add_option("--" + k, c.overrides[k], "config field " + k);
  }
}

area::Config resolve_config(const Common& c) {
  area::Config cfg = c.config_path.empty() ? area::Config{} : area::Config::load(c.config_path);
  for (const auto& k : c.order) {
    const auto& v = c.overrides.at(k);
    if (!v.empty()) cfg.set(k, v);
  }
  cfg.validate();
  return cfg;
}

std::string run_id(const std::string& command, const area::Config& cfg) {
  return command + "-" + area::hex_digest(cfg.digest()).substr(0, 8);
}

struct Data {
  area::TaskStream train, test;
  area::PromptTable prompts;
};

Data load_data_dir(const std::string& dir) {
  Data d;
  d.train = area::load_dataset((fs::path(dir) / "train.area").string());
  d.test = area::load_dataset((fs::path(dir) / "test.area").string());
  d.prompts = area::load_prompts((fs::path(dir) / "prompts.area").string());
  return d;
}

void check_width(const area::TaskStream& s, const std::string& name, std::size_t d_in) {
  for (const auto& t : s.tasks)
    for (const auto& x : t.samples)
      if (x.features.size() != d_in) {
        throw area::DataError(name + " has " + std::to_string(x.features.size()) + " features per sample, config d_in is " +
                              std::to_string(d_in) + " (pass the config used for gen)");
      }
}

Data data_for(const std::string& dir, const area::Config& cfg) {
  if (!dir.empty()) {
    Data d = load_data_dir(dir);
    check_width(d.train, "train.area", cfg.d_in);
    check_width(d.test, "test.area", cfg.d_in);
    return d;
  }
  auto s = area::gen_synthetic(cfg);
  return {std::move(s.train), std::move(s.test), std::move(s.prompts)};
}

void print_line(const ordered_json& j) { std::cout << j.dump() << std::endl; }

int cmd_gen(const Common& c, const std::string& out_dir) {
  const area::Config cfg = resolve_config(c);
  const auto data = area::gen_synthetic(cfg);
  fs::create_directories(out_dir);
  area::save_dataset((fs::path(out_dir) / "train.area").string(), data.train);
  area::save_dataset((fs::path(out_dir) / "test.area").string(), data.test);
  area::save_prompts((fs::path(out_dir) / "prompts.area").string(), data.prompts, data.train);
  print_line({{"command", "gen"},
              {"out_dir", out_dir},
              {"tasks", data.train.size()},
              {"train_samples", data.train.num_samples()},
              {"test_samples", data.test.num_samples()},
              {"split", data.train.split_descriptor()},
              {"config_digest", area::hex_digest(cfg.digest())}});
  return kOk;
}

int cmd_train(const Common& c, const std::string& data_dir, const std::string& state_path,
              const std::string& results) {
  const area::Config cfg = resolve_config(c);
  const Data d = data_for(data_dir, cfg);
  const area::TrainingRun run = area::run_training(d.train, d.prompts, d.test, cfg);
  const area::MetricsReport rep = area::metrics_from_run(run);
  if (!state_path.empty()) area::save_state(state_path, run.state);
  area::ResultsLog log(results, run_id("train", cfg), cfg);
  log.append(0, "frechet_mean_iterative", cfg.mean_kind() == area::MeanMode::Iterative ? 1.0 : 0.0);
  area::log_run(log, run, rep);
  log.flush();
  print_line({{"command", "train"},
              {"stages", run.stages.size()},
              {"average_accuracy", rep.average},
              {"last_accuracy", rep.last},
              {"state_digest", area::hex_digest(run.state.digest())},
              {"config_digest", area::hex_digest(cfg.digest())}});
  return kOk;
}

int cmd_eval(const std::string& state_path, const std::string& data_dir, const std::string& results) {
  const area::ContinualState state = area::load_state(state_path);
  const area::TaskStream test = area::load_dataset((fs::path(data_dir) / "test.area").string());
  check_width(test, "test.area", state.config.d_in);
  const area::MetricsReport rep = area::evaluate_metrics(state, test);
  area::ResultsLog log(results, run_id("eval", state.config), state.config);
  for (std::size_t b = 0; b < rep.stage_accuracy.size(); ++b) log.append(b + 1, "accuracy", rep.stage_accuracy[b]);
  log.append(rep.stage_accuracy.size(), "average_accuracy", rep.average);
  log.append(rep.stage_accuracy.size(), "last_accuracy", rep.last);
  log.flush();
  print_line({{"command", "eval"},
              {"stages", rep.stage_accuracy.size()},
              {"average_accuracy", rep.average},
              {"last_accuracy", rep.last},
              {"state_digest", area::hex_digest(state.digest())},
              {"config_digest", area::hex_digest(state.config.digest())}});
  return kOk;
}

int cmd_verify(const Common& c) {
  const area::Config cfg = resolve_config(c);
  const auto suites = area::verify::run_all(cfg.seed);
  ordered_json j{{"command", "verify"}};
  std::size_t passed = 0, total = 0;
  ordered_json per = ordered_json::object();
  for (const auto& s : suites) {
    std::cerr << (s.ok() ? "pass " : "FAIL ") << s.name << " " << s.passed << "/" << s.total << " worst=" << s.worst
              << "\n";
    per[s.name] = {{"passed", s.passed}, {"total", s.total}, {"worst", s.worst}};
    passed += s.passed;
    total += s.total;
  }
  j["passed"] = passed;
  j["total"] = total;
  j["suites"] = per;
  print_line(j);
  return passed == total ? kOk : kVerify;
}

int cmd_ablate(const Common& c, const std::string& data_dir, const std::vector<std::string>& names,
               const std::string& results) {
  const area::Config cfg = resolve_config(c);
  std::set<area::Variant> variants;
  for (const auto& n : names) variants.insert(area::parse_variant(n));
  if (variants.empty()) {
    variants = {area::Variant::Full, area::Variant::Pca, area::Variant::SimOnly, area::Variant::SingleTask,
                area::Variant::Cosine};
  }
  const Data d = data_for(data_dir, cfg);
  const auto reports = area::run_ablation(d.train, d.prompts, d.test, cfg, variants);
  area::ResultsLog log(results, run_id("ablate", cfg), cfg);
  ordered_json j{{"command", "ablate"}};
  for (const auto& [v, rep] : reports) {
    const std::string n = area::to_string(v);
    log.append(rep.stage_accuracy.size(), n + "/average_accuracy", rep.average);
    log.append(rep.stage_accuracy.size(), n + "/last_accuracy", rep.last);
    j[n] = {{"average_accuracy", rep.average}, {"last_accuracy", rep.last}};
  }
  log.flush();
  j["config_digest"] = area::hex_digest(cfg.digest());
  print_line(j);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class-incremental learning with hyperspherical attribute anchors and transport routing"};
  app.require_subcommand(1);

  Common gen_c, train_c, verify_c, ablate_c;
  std::string out_dir = ".", data_dir, state_path, results, eval_state, eval_data, eval_results, abl_data,
              abl_results;
  std::vector<std::string> variants;

  auto* gen = app.add_subcommand("gen", "write synthetic train/test/prompt datasets");
  add_config_flags(gen, gen_c);
  gen->add_option("--out-dir", out_dir, "output directory");

  auto* train = app.add_subcommand("train", "learn every task in order and save the state");
  add_config_flags(train, train_c);
  train->add_option("--data-dir", data_dir, "directory with train.area, test.area, prompts.area");
  train->add_option("--state", state_path, "state file to write");
  train->add_option("--results", results, "results log to append to");

  auto* eval = app.add_subcommand("eval", "evaluate a saved state on a test split");
  eval->add_option("--state", eval_state, "state file")->required();
  eval->add_option("--data-dir", eval_data, "directory with test.area")->required();
  eval->add_option("--results", eval_results, "results log to append to");

  auto* verify = app.add_subcommand("verify", "run the numerical self-checks");
  add_config_flags(verify, verify_c);

  auto* ablate = app.add_subcommand("ablate", "compare anchor and routing variants");
  add_config_flags(ablate, ablate_c);
  ablate->add_option("--data-dir", abl_data, "dataset directory (synthetic data when omitted)");
  ablate->add_option("--variants", variants, "subset of full, pca, sim_only, single_task, cosine");
  ablate->add_option("--results", abl_results, "results log to append to");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen(gen_c, out_dir);
    if (train->parsed()) return cmd_train(train_c, data_dir, state_path, results);
    if (eval->parsed()) return cmd_eval(eval_state, eval_data, eval_results);
    if (verify->parsed()) return cmd_verify(verify_c);
    if (ablate->parsed()) return cmd_ablate(ablate_c, abl_data, variants, abl_results);
  } catch (const area::ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const area::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kUsage;
}
