// Command-line front end: dataset generation, training, evaluation, single-
// sample summarization, ablation sweeps, and gradient verification. Every
// failure exits nonzero with a machine-readable JSON object on stderr:
//   {"error": {"type": "<kind>", "message": "<detail>"}}

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cssgr/checkpoint.hpp"
#include "cssgr/harness.hpp"

namespace {

using nlohmann::json;

void emit_error(const std::string& type, const std::string& message) {
  json j;
  j["error"] = {{"type", type}, {"message", message}};
  std::cerr << j.dump() << "\n";
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) cssgr::fail("io", "cannot open for writing: " + path);
  out << text;
  if (!out) cssgr::fail("io", "write failed: " + path);
}

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t comma = text.find(',', pos);
    if (comma == std::string::npos) comma = text.size();
    const std::string item = text.substr(pos, comma - pos);
    try {
      seeds.push_back(std::stoull(item));
    } catch (const std::exception&) {
      cssgr::fail("config", "--seeds expects comma-separated integers, got '" + item + "'");
    }
    pos = comma + 1;
  }
  if (seeds.empty()) cssgr::fail("config", "--seeds must name at least one seed");
  return seeds;
}

int run(int argc, char** argv) {
  CLI::App app{"Cross-modal graph summarizer: training and evaluation tools"};
  app.require_subcommand(1);

  std::string config_path;
  bool seed_given = false;
  std::uint64_t seed_override = 0;
  auto add_common = [&](CLI::App* cmd, bool config_required = true) {
    cmd->add_option("--config", config_path, "run configuration JSON")
        ->required(config_required);
    cmd->add_option("--seed", seed_override, "override the config seed")
        ->each([&](const std::string&) { seed_given = true; });
  };
  auto load_config = [&]() {
    cssgr::RunConfig cfg = cssgr::RunConfig::load(config_path);
    if (seed_given) cfg.seed = seed_override;
    return cfg;
  };

  // --- gen-data ---
  CLI::App* gen = app.add_subcommand("gen-data", "generate train/eval JSONL datasets");
  add_common(gen);
  std::string out_train, out_eval;
  gen->add_option("--out-train", out_train, "training JSONL path");
  gen->add_option("--out-eval", out_eval, "held-out JSONL path");
  gen->callback([&] {
    cssgr::RunConfig cfg = load_config();
    if (out_train.empty()) out_train = cfg.train_path;
    if (out_eval.empty()) out_eval = cfg.eval_path;
    cssgr::Rng rng(cfg.seed);
    // One stream: the training split draws first, the held-out split
    // continues it, so the two never overlap.
    const std::vector<cssgr::Sample> train =
        cssgr::generate_dataset(cfg.generator, cfg.generator.num_train, rng);
    const std::vector<cssgr::Sample> eval =
        cssgr::generate_dataset(cfg.generator, cfg.generator.num_eval, rng);
    cssgr::save_jsonl(train, out_train);
    cssgr::save_jsonl(eval, out_eval);
    std::cout << "wrote " << train.size() << " samples to " << out_train << "\n"
              << "wrote " << eval.size() << " samples to " << out_eval << "\n";
  });

  // --- train ---
  CLI::App* train_cmd = app.add_subcommand("train", "train a model and save a checkpoint");
  add_common(train_cmd);
  std::string ckpt_out = "model.ckpt.json";
  std::string metrics_out;
  std::string train_data, eval_data;
  train_cmd->add_option("--out", ckpt_out, "checkpoint output path");
  train_cmd->add_option("--metrics", metrics_out, "metrics JSON output path");
  train_cmd->add_option("--data", train_data, "training JSONL (defaults to config train_path)");
  train_cmd->add_option("--eval-data", eval_data, "held-out JSONL (defaults to config eval_path)");
  train_cmd->callback([&] {
    cssgr::RunConfig cfg = load_config();
    if (!train_data.empty()) cfg.train_path = train_data;
    if (!eval_data.empty()) cfg.eval_path = eval_data;
    Timer timer;
    cssgr::TrainResult result = cssgr::train(cfg);
    cssgr::save_checkpoint(ckpt_out, result.model, cfg, &result.optimizer);
    const std::string metrics_text = result.report.to_json().dump(2) + "\n";
    if (!metrics_out.empty()) write_text(metrics_out, metrics_text);
    for (const cssgr::EpochStats& e : result.report.epochs) {
      std::printf("epoch %zu  lr %.3g  train loss %.6f\n", e.epoch, e.learning_rate,
                  e.train_loss);
    }
    std::cout << metrics_text;
    std::printf("wall clock: %.2f s (not part of the metrics file)\n", timer.seconds());
    std::cout << "checkpoint: " << ckpt_out << "\n";
  });

  // --- evaluate ---
  CLI::App* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint on a dataset");
  std::string ckpt_in, data_path;
  eval_cmd->add_option("--checkpoint", ckpt_in, "checkpoint path")->required();
  eval_cmd->add_option("--data", data_path, "JSONL dataset (defaults to config eval_path)");
  eval_cmd->add_option("--metrics", metrics_out, "metrics JSON output path");
  eval_cmd->callback([&] {
    cssgr::LoadedCheckpoint loaded = cssgr::load_checkpoint(ckpt_in);
    const std::string path = data_path.empty() ? loaded.config.eval_path : data_path;
    cssgr::MetricsReport report =
        cssgr::evaluate_model(loaded.model, cssgr::load_jsonl(path));
    report.config_hash = loaded.config.hash();
    report.seed = loaded.config.seed;
    const std::string text = report.to_json().dump(2) + "\n";
    if (!metrics_out.empty()) write_text(metrics_out, text);
    std::cout << text;
  });

  // --- summarize ---
  CLI::App* sum_cmd = app.add_subcommand("summarize", "greedy-decode samples from a dataset");
  std::size_t limit = 0;
  sum_cmd->add_option("--checkpoint", ckpt_in, "checkpoint path")->required();
  sum_cmd->add_option("--data", data_path, "JSONL dataset")->required();
  sum_cmd->add_option("--limit", limit, "decode only the first N samples (0 = all)");
  sum_cmd->callback([&] {
    cssgr::LoadedCheckpoint loaded = cssgr::load_checkpoint(ckpt_in);
    const std::vector<cssgr::Sample> samples = cssgr::load_jsonl(data_path);
    std::size_t count = limit == 0 ? samples.size() : std::min(limit, samples.size());
    for (std::size_t i = 0; i < count; ++i) {
      json j;
      j["sample_id"] = samples[i].sample_id;
      j["predicted"] = loaded.model.predict(samples[i]);
      j["reference"] = samples[i].summary;
      std::cout << j.dump() << "\n";
    }
  });

  // --- ablate ---
  CLI::App* abl_cmd = app.add_subcommand(
      "ablate", "train every variant across seeds, one fresh dataset per seed");
  add_common(abl_cmd);
  std::string seeds_text = "0,1,2,3,4";
  std::string csv_out = "ablation.csv";
  abl_cmd->add_option("--seeds", seeds_text, "comma-separated seeds (default 0,1,2,3,4)");
  abl_cmd->add_option("--out", csv_out, "CSV output path");
  abl_cmd->callback([&] {
    const cssgr::RunConfig cfg = load_config();
    const std::vector<std::uint64_t> seeds = parse_seeds(seeds_text);
    Timer timer;
    cssgr::AblationResult result = cssgr::ablate_on(
        cfg, seeds,
        [&](const std::string& variant, std::uint64_t seed, const cssgr::MetricsReport& rep) {
          std::printf("%-18s seed %llu: rouge-l f1 %.4f  exact %.4f  (%.1f s)\n",
                      variant.c_str(), static_cast<unsigned long long>(seed), rep.rougel_f1,
                      rep.exact_match, timer.seconds());
        });
    const std::string csv = cssgr::ablation_csv(result);
    write_text(csv_out, csv);
    std::cout << csv << "wrote " << csv_out << "\n";
  });

  // --- gradcheck ---
  CLI::App* grad_cmd = app.add_subcommand("gradcheck",
                                          "compare tape gradients against finite differences");
  double tolerance = 1e-5;
  grad_cmd->add_option("--tolerance", tolerance, "max relative error (default 1e-5)");
  add_common(grad_cmd);
  grad_cmd->callback([&] {
    cssgr::GradcheckReport report = cssgr::run_gradcheck(load_config(), tolerance);
    for (const auto& [group, worst] : report.group_worst)
      std::printf("group %-10s worst relative error %.3e\n", group.c_str(), worst);
    std::printf("probe seed %llu (%d draw%s)\n",
                static_cast<unsigned long long>(report.used_seed), report.attempts,
                report.attempts == 1 ? "" : "s");
    for (const std::string& f : report.failures) std::cout << "  " << f << "\n";
    std::printf("%s: worst %.3e vs tolerance %.0e\n", report.pass ? "PASS" : "FAIL",
                report.worst, report.tolerance);
    if (!report.pass) cssgr::fail("numeric", "gradient check failed");
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    emit_error("usage", e.what());
    return e.get_exit_code();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const cssgr::Error& e) {
    emit_error(e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    emit_error("internal", e.what());
    return 1;
  }
}
