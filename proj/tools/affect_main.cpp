// affect: synthetic facial-affect pipeline driver.
//
// Commands: synth | pretrain | finetune | evaluate | compare | postprocess |
// gradcheck. Every command resolves its parameters from defaults, then an
// optional --config JSON file, then explicit flags, and writes the resolved
// set to <out>/run_config.json so any run can be replayed bit-exactly.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "affect/checkpoint.hpp"
#include "affect/dataset.hpp"
#include "affect/gradcheck.hpp"
#include "affect/models.hpp"
#include "affect/objectives.hpp"
#include "affect/ops.hpp"
#include "affect/postprocess.hpp"
#include "affect/threading.hpp"
#include "affect/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace affect;

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path.string());
  return json::parse(in);
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

void reject_unknown_keys(const json& j, const std::vector<std::string>& allowed, const std::string& context) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw contract_error("unknown key '" + key + "' in " + context + " config");
  }
}

// Output directory policy: refuse to clobber non-empty directories unless
// --force was given.
void prepare_out_dir(const fs::path& out, bool force) {
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!force) throw std::runtime_error("output directory " + out.string() + " is not empty (use --force)");
    fs::remove_all(out);
  }
  fs::create_directories(out);
}

void write_run_config(const fs::path& out, const std::string& command, const json& params) {
  write_json_file(out / "run_config.json", json{{"command", command}, {"params", params}});
}

// Pulls "params" back out of a stored run_config.json, or accepts a raw
// parameter object directly.
json load_params_config(const fs::path& path, const std::string& command) {
  json j = read_json_file(path);
  if (j.contains("command")) {
    if (j.at("command").get<std::string>() != command)
      throw contract_error("config file was recorded for command '" + j.at("command").get<std::string>() +
                           "', not '" + command + "'");
    return j.at("params");
  }
  return j;
}

models::ModelConfig model_from_preset(const std::string& preset, models::HeadKind head) {
  if (preset == "desk") return models::ModelConfig::desk(head);
  if (preset == "paper") return models::ModelConfig::paper(head);
  throw contract_error("unknown model preset: " + preset + " (expected desk | paper)");
}

train::HyperParams hyperparams_for_preset(const std::string& preset) {
  return preset == "desk" ? train::HyperParams::desk() : train::HyperParams{};
}

int resolve_threads(int flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("AFFECT_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

std::string fmt3(double v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

void print_count_table(const std::string& title, const std::array<std::int64_t, 8>& train,
                       const std::array<std::int64_t, 8>* val) {
  std::cout << title << "\n";
  std::cout << (val ? "Emotion     | Training Frames | Validation Frames\n"
                    : "Emotion     | Frames\n");
  std::int64_t ttotal = 0, vtotal = 0;
  for (int e = 0; e < data::kEmotionCount; ++e) {
    char line[96];
    if (val) {
      std::snprintf(line, sizeof(line), "%-11s | %15lld | %17lld\n", data::emotion_name(e),
                    static_cast<long long>(train[static_cast<size_t>(e)]),
                    static_cast<long long>((*val)[static_cast<size_t>(e)]));
      vtotal += (*val)[static_cast<size_t>(e)];
    } else {
      std::snprintf(line, sizeof(line), "%-11s | %6lld\n", data::emotion_name(e),
                    static_cast<long long>(train[static_cast<size_t>(e)]));
    }
    ttotal += train[static_cast<size_t>(e)];
    std::cout << line;
  }
  std::cout << "Total Count | " << ttotal;
  if (val) std::cout << " | " << vtotal;
  std::cout << "\n\n";
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  data::SynthConfig cfg;
};

int cmd_synth(CLI::App* app, const std::string& config_path, const std::string& preset, std::uint64_t seed,
              const std::string& out, bool force) {
  SynthArgs args;
  if (preset == "categorical-desk") args.cfg = data::SynthConfig::categorical_desk();
  else if (preset == "dimensional-desk") args.cfg = data::SynthConfig::dimensional_desk();
  else if (!preset.empty()) throw contract_error("unknown preset: " + preset);

  if (!config_path.empty()) {
    json j = load_params_config(config_path, "synth");
    reject_unknown_keys(j,
                        {"kind", "subjects", "videos_per_subject", "frames_per_video", "resolution", "channels",
                         "frame_period", "mixture", "annotator_fidelity", "raters", "rater_noise",
                         "rater_max_lag", "frame_noise", "seed"},
                        "synth");
    json merged = json(args.cfg);
    merged.update(j);
    args.cfg = merged.get<data::SynthConfig>();
  }
  auto flag_set = [&](const std::string& name) { return app->count(name) > 0; };
  if (flag_set("--seed")) args.cfg.seed = seed;
  if (flag_set("--kind")) args.cfg.kind = app->get_option("--kind")->as<std::string>();
  if (flag_set("--subjects")) args.cfg.subjects = app->get_option("--subjects")->as<int>();
  if (flag_set("--videos-per-subject"))
    args.cfg.videos_per_subject = app->get_option("--videos-per-subject")->as<int>();
  if (flag_set("--frames")) args.cfg.frames_per_video = app->get_option("--frames")->as<int>();
  if (flag_set("--resolution")) args.cfg.resolution = app->get_option("--resolution")->as<int>();
  if (flag_set("--channels")) args.cfg.channels = app->get_option("--channels")->as<int>();

  prepare_out_dir(out, force);
  data::synth_generate_to(out, args.cfg);
  write_run_config(out, "synth", json(args.cfg));

  const data::Dataset ds = data::load_dataset(out);
  std::cout << "wrote " << ds.videos.size() << " " << ds.kind << " videos ("
            << ds.videos.front().frame_count() << " frames each) to " << out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// shared trainer argument handling

struct TrainArgs {
  std::string data;
  std::string model_preset = "desk";
  models::ModelConfig model = models::ModelConfig::desk(models::HeadKind::categorical);
  train::HyperParams hp = train::HyperParams::desk();
  std::string init = "random";
};

void merge_train_config(TrainArgs& args, const json& j, models::HeadKind head, const std::string& context) {
  reject_unknown_keys(j, {"data", "model_preset", "model", "hyperparams", "init"}, context);
  if (j.contains("data")) args.data = j.at("data").get<std::string>();
  if (j.contains("model_preset")) {
    args.model_preset = j.at("model_preset").get<std::string>();
    args.model = model_from_preset(args.model_preset, head);
    args.hp = hyperparams_for_preset(args.model_preset);
  }
  if (j.contains("model")) args.model = j.at("model").get<models::ModelConfig>();
  if (j.contains("hyperparams")) args.hp = j.at("hyperparams").get<train::HyperParams>();
  if (j.contains("init")) args.init = j.at("init").get<std::string>();
  args.model.head = head;
}

void apply_train_flags(TrainArgs& args, CLI::App* app, models::HeadKind head) {
  auto flag_set = [&](const std::string& name) { return app->count(name) > 0; };
  if (flag_set("--model")) {
    args.model_preset = app->get_option("--model")->as<std::string>();
    args.model = model_from_preset(args.model_preset, head);
    args.hp = hyperparams_for_preset(args.model_preset);
  }
  if (flag_set("--data")) args.data = app->get_option("--data")->as<std::string>();
  if (flag_set("--init")) args.init = app->get_option("--init")->as<std::string>();
  if (flag_set("--seed")) args.hp.seed = app->get_option("--seed")->as<std::uint64_t>();
  if (flag_set("--lr")) args.hp.learning_rate = app->get_option("--lr")->as<double>();
  if (flag_set("--batch-size")) args.hp.batch_size = app->get_option("--batch-size")->as<int>();
  if (flag_set("--sequence-length"))
    args.hp.sequence_length = app->get_option("--sequence-length")->as<int>();
  if (flag_set("--max-epochs")) args.hp.max_epochs = app->get_option("--max-epochs")->as<int>();
  if (flag_set("--patience")) args.hp.patience = app->get_option("--patience")->as<int>();
  if (flag_set("--train-fraction")) args.hp.train_fraction = app->get_option("--train-fraction")->as<double>();
  if (flag_set("--oversample-multiplier"))
    args.hp.oversample_multiplier = app->get_option("--oversample-multiplier")->as<double>();
  if (flag_set("--no-augment")) args.hp.augmentation = false;
  if (flag_set("--gold-mode"))
    args.hp.gold_mode = app->get_option("--gold-mode")->as<std::string>() == "agreement"
                            ? data::GoldMode::agreement_weighted
                            : data::GoldMode::mean;
  if (head == models::HeadKind::dimensional) args.hp.augmentation = false;
  args.model.head = head;
}

json train_args_json(const TrainArgs& args) {
  return json{{"data", args.data},
              {"model_preset", args.model_preset},
              {"model", args.model},
              {"hyperparams", args.hp},
              {"init", args.init}};
}

// ---------------------------------------------------------------------------
// pretrain / finetune / evaluate / compare / postprocess

int cmd_pretrain(CLI::App* app, const std::string& config_path, const std::string& out, bool force) {
  TrainArgs args;
  args.hp = train::HyperParams::desk();
  if (!config_path.empty()) merge_train_config(args, load_params_config(config_path, "pretrain"),
                                               models::HeadKind::categorical, "pretrain");
  apply_train_flags(args, app, models::HeadKind::categorical);
  if (args.data.empty()) throw contract_error("pretrain: --data is required");

  prepare_out_dir(out, force);
  write_run_config(out, "pretrain", train_args_json(args));

  const data::Dataset ds = data::load_dataset(args.data);
  auto result = train::pretrain_categorical(ds, args.hp, args.model,
                                            models::InitStrategy::parse(args.init), out);

  print_count_table("Per-emotion training frames before oversampling", result.train_counts_before, nullptr);
  std::array<std::int64_t, 8> after = result.oversampling.after_counts;
  print_count_table("Per-emotion frames after oversampling", after, &result.val_counts);
  for (int e : result.oversampling.unsatisfied)
    std::cout << "warning: no eligible windows for rare emotion '" << data::emotion_name(e) << "'\n";

  json report = result.report.to_json();
  report["class_weights"] = result.class_weights.weights;
  write_json_file(fs::path(out) / "report.json", report);
  std::cout << "best epoch " << result.report.best_epoch << " (balanced accuracy "
            << fmt3(result.report.best_val_metric) << "), stopped by " << result.report.stop_reason << "\n"
            << "checkpoint: " << result.checkpoint_dir.string() << "\n";
  return 0;
}

int cmd_finetune(CLI::App* app, const std::string& config_path, const std::string& out, bool force,
                 bool no_postprocess) {
  TrainArgs args;
  args.hp = train::HyperParams::desk();
  args.hp.augmentation = false;
  if (!config_path.empty()) merge_train_config(args, load_params_config(config_path, "finetune"),
                                               models::HeadKind::dimensional, "finetune");
  apply_train_flags(args, app, models::HeadKind::dimensional);
  if (args.data.empty()) throw contract_error("finetune: --data is required");

  prepare_out_dir(out, force);
  json params = train_args_json(args);
  params["postprocess"] = !no_postprocess;
  write_run_config(out, "finetune", params);

  const data::Dataset ds = data::load_dataset(args.data);
  auto result = train::finetune_dimensional(ds, args.hp, args.model,
                                            models::InitStrategy::parse(args.init), out, !no_postprocess);

  write_json_file(fs::path(out) / "report.json", result.report.to_json());
  std::cout << "best epoch " << result.report.best_epoch << " (validation CCC "
            << fmt3(result.report.best_val_metric) << "), stopped by " << result.report.stop_reason << "\n";
  if (result.chain) {
    std::cout << "post-processing: arousal CCC " << fmt3(result.chain->arousal.raw_ccc) << " -> "
              << fmt3(result.chain->arousal.final_ccc) << ", valence CCC "
              << fmt3(result.chain->valence.raw_ccc) << " -> " << fmt3(result.chain->valence.final_ccc)
              << "\n";
  }
  std::cout << "checkpoint: " << result.checkpoint_dir.string() << "\n";
  return 0;
}

int cmd_evaluate(CLI::App* app, const std::string& config_path, const std::string& out, bool force) {
  std::string ckpt, dataset_path, partition = "val", chain_path;
  int sequence_length = 0;
  if (!config_path.empty()) {
    json j = load_params_config(config_path, "evaluate");
    reject_unknown_keys(j, {"checkpoint", "data", "partition", "chain", "sequence_length"}, "evaluate");
    ckpt = j.value("checkpoint", "");
    dataset_path = j.value("data", "");
    partition = j.value("partition", "val");
    chain_path = j.value("chain", "");
    sequence_length = j.value("sequence_length", 0);
  }
  auto flag_set = [&](const std::string& name) { return app->count(name) > 0; };
  if (flag_set("--ckpt")) ckpt = app->get_option("--ckpt")->as<std::string>();
  if (flag_set("--data")) dataset_path = app->get_option("--data")->as<std::string>();
  if (flag_set("--partition")) partition = app->get_option("--partition")->as<std::string>();
  if (flag_set("--chain")) chain_path = app->get_option("--chain")->as<std::string>();
  if (flag_set("--sequence-length")) sequence_length = app->get_option("--sequence-length")->as<int>();
  if (ckpt.empty() || dataset_path.empty()) throw contract_error("evaluate: --ckpt and --data are required");

  const data::Dataset ds = data::load_dataset(dataset_path);
  auto loaded = load_checkpoint(ckpt);
  train::HyperParams hp;
  if (loaded.training.contains("hyperparams")) hp = loaded.training.at("hyperparams").get<train::HyperParams>();
  if (sequence_length > 0) hp.sequence_length = sequence_length;

  std::vector<int> videos;
  if (partition == "all") {
    videos.resize(ds.videos.size());
    for (size_t i = 0; i < videos.size(); ++i) videos[i] = static_cast<int>(i);
  } else {
    auto split = data::subject_split(ds.videos, hp.train_fraction, hp.seed);
    videos = partition == "train" ? split.train_videos : split.val_videos;
  }

  std::optional<post::ChainConfig> chain;
  if (!chain_path.empty()) chain = post::load_chain(chain_path);
  else if (fs::exists(fs::path(ckpt) / "chain.json")) chain = post::load_chain(fs::path(ckpt) / "chain.json");

  auto metrics = train::evaluate(loaded.params, loaded.config, ds, videos, hp, chain ? &*chain : nullptr);

  json jm{{"partition", partition},
          {"arousal", {{"raw_ccc", metrics.arousal_raw}, {"post_ccc", metrics.arousal_post}}},
          {"valence", {{"raw_ccc", metrics.valence_raw}, {"post_ccc", metrics.valence_post}}}};
  std::cout << "Dimension | raw CCC | post CCC\n";
  std::cout << "arousal   | " << fmt3(metrics.arousal_raw) << "   | " << fmt3(metrics.arousal_post) << "\n";
  std::cout << "valence   | " << fmt3(metrics.valence_raw) << "   | " << fmt3(metrics.valence_post) << "\n";

  if (!out.empty()) {
    prepare_out_dir(out, force);
    write_run_config(out, "evaluate",
                     json{{"checkpoint", ckpt},
                          {"data", dataset_path},
                          {"partition", partition},
                          {"chain", chain_path},
                          {"sequence_length", sequence_length}});
    write_json_file(fs::path(out) / "metrics.json", jm);
  }
  return 0;
}

int cmd_compare(CLI::App* app, const std::string& config_path, const std::string& out, bool force) {
  TrainArgs args;
  std::vector<std::string> strategies;
  std::string test_data;
  if (!config_path.empty()) {
    json j = load_params_config(config_path, "compare");
    reject_unknown_keys(j, {"data", "model_preset", "model", "hyperparams", "init", "strategies", "test_data"},
                        "compare");
    json train_part = j;
    train_part.erase("strategies");
    if (train_part.contains("test_data")) train_part.erase("test_data");
    merge_train_config(args, train_part, models::HeadKind::dimensional, "compare");
    if (j.contains("strategies")) strategies = j.at("strategies").get<std::vector<std::string>>();
    test_data = j.value("test_data", "");
  }
  apply_train_flags(args, app, models::HeadKind::dimensional);
  auto flag_set = [&](const std::string& name) { return app->count(name) > 0; };
  if (flag_set("--strategy")) strategies = app->get_option("--strategy")->as<std::vector<std::string>>();
  if (flag_set("--test-data")) test_data = app->get_option("--test-data")->as<std::string>();
  if (args.data.empty()) throw contract_error("compare: --data is required");
  if (strategies.size() < 2) throw contract_error("compare: need at least two --strategy entries");

  prepare_out_dir(out, force);
  json params = train_args_json(args);
  params["strategies"] = strategies;
  params["test_data"] = test_data;
  write_run_config(out, "compare", params);

  const data::Dataset ds = data::load_dataset(args.data);
  std::optional<data::Dataset> test_ds;
  if (!test_data.empty()) test_ds = data::load_dataset(test_data);

  std::vector<models::InitStrategy> inits;
  for (const auto& s : strategies) inits.push_back(models::InitStrategy::parse(s));
  auto rows = train::compare_initialisations(ds, args.hp, args.model, inits, out,
                                             test_ds ? &*test_ds : nullptr);

  const std::string table = train::comparison_table(rows);
  std::cout << table;
  json jr = json::array();
  for (const auto& r : rows) {
    json row{{"strategy", r.strategy},
             {"val_arousal", r.val_arousal},
             {"val_valence", r.val_valence},
             {"epochs_to_best", r.epochs_to_best},
             {"best_val_metric", r.best_val_metric}};
    if (r.test_arousal) row["test_arousal"] = *r.test_arousal;
    if (r.test_valence) row["test_valence"] = *r.test_valence;
    jr.push_back(row);
  }
  write_json_file(fs::path(out) / "comparison.json", jr);
  std::ofstream(fs::path(out) / "comparison.txt") << table;
  return 0;
}

int cmd_postprocess(CLI::App* app, const std::string& config_path, const std::string& out, bool force) {
  std::string ckpt, dataset_path;
  if (!config_path.empty()) {
    json j = load_params_config(config_path, "postprocess");
    reject_unknown_keys(j, {"checkpoint", "data"}, "postprocess");
    ckpt = j.value("checkpoint", "");
    dataset_path = j.value("data", "");
  }
  auto flag_set = [&](const std::string& name) { return app->count(name) > 0; };
  if (flag_set("--ckpt")) ckpt = app->get_option("--ckpt")->as<std::string>();
  if (flag_set("--data")) dataset_path = app->get_option("--data")->as<std::string>();
  if (ckpt.empty() || dataset_path.empty())
    throw contract_error("postprocess: --ckpt and --data are required");

  prepare_out_dir(out, force);
  write_run_config(out, "postprocess", json{{"checkpoint", ckpt}, {"data", dataset_path}});

  const data::Dataset ds = data::load_dataset(dataset_path);
  auto loaded = load_checkpoint(ckpt);
  train::HyperParams hp;
  if (loaded.training.contains("hyperparams")) hp = loaded.training.at("hyperparams").get<train::HyperParams>();

  auto split = data::subject_split(ds.videos, hp.train_fraction, hp.seed);

  // search on validation predictions, report before/after
  auto raw = train::evaluate(loaded.params, loaded.config, ds, split.val_videos, hp, nullptr);
  post::ChainConfig chain = train::search_chain_for(loaded.params, loaded.config, ds, split.val_videos, hp);
  auto fixed = train::evaluate(loaded.params, loaded.config, ds, split.val_videos, hp, &chain);

  post::save_chain(fs::path(out) / "chain.json", chain);
  write_json_file(fs::path(out) / "metrics.json",
                  json{{"arousal", {{"raw_ccc", raw.arousal_raw}, {"post_ccc", fixed.arousal_post}}},
                       {"valence", {{"raw_ccc", raw.valence_raw}, {"post_ccc", fixed.valence_post}}}});
  std::cout << "arousal CCC " << fmt3(raw.arousal_raw) << " -> " << fmt3(fixed.arousal_post) << "\n"
            << "valence CCC " << fmt3(raw.valence_raw) << " -> " << fmt3(fixed.valence_post) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

int cmd_gradcheck(const std::string& out, int seeds, double tolerance, const std::string& inject_fault) {
  auto checks = gradient_suite(seeds);
  // test hook: a deliberately wrong derivative must be caught
  for (auto& c : checks)
    if (c.op == inject_fault) c.max_rel_err += 1.0;

  bool ok = true;
  json report = json::array();
  std::cout << "Operation            | max rel err | tolerance | status\n";
  for (const auto& c : checks) {
    const bool pass = c.max_rel_err < tolerance;
    ok = ok && pass;
    char line[128];
    std::snprintf(line, sizeof(line), "%-20s | %.3e  | %.1e   | %s\n", c.op.c_str(), c.max_rel_err,
                  tolerance, pass ? "pass" : "FAIL");
    std::cout << line;
    report.push_back({{"op", c.op}, {"max_rel_err", c.max_rel_err}, {"pass", pass}});
  }
  if (!out.empty()) {
    fs::create_directories(out);
    write_run_config(out, "gradcheck",
                     json{{"seeds", seeds}, {"tolerance", tolerance}, {"inject_fault", inject_fault}});
    write_json_file(fs::path(out) / "gradcheck.json", report);
  }
  if (!ok) {
    for (const auto& c : checks)
      if (c.max_rel_err >= tolerance) std::cerr << "gradcheck failed for op: " << c.op << "\n";
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic facial-affect pipeline"};
  app.require_subcommand(1);

  std::string config_path, out, preset, partition, chain_file, inject_fault;
  std::uint64_t seed = 0;
  bool force = false, no_postprocess = false;
  int threads = 0, gc_seeds = 20;
  double gc_tolerance = 1e-4;

  auto add_common = [&](CLI::App* sub, bool needs_out) {
    sub->add_option("--config", config_path, "JSON config (or a stored run_config.json)");
    sub->add_option("--threads", threads, "worker threads (env AFFECT_THREADS)");
    auto* o = sub->add_option("--out", out, "output directory");
    if (needs_out) o->required();
    sub->add_flag("--force", force, "overwrite a non-empty output directory");
    return sub;
  };
  auto add_train_flags = [&](CLI::App* sub) {
    sub->add_option("--data", "dataset directory");
    sub->add_option("--init", "random | imagenet:<ckpt> | pretrained:<ckpt>");
    sub->add_option("--model", "model preset: desk | paper");
    sub->add_option("--seed", "training seed")->type_name("UINT");
    sub->add_option("--lr", "learning rate");
    sub->add_option("--batch-size", "windows per batch");
    sub->add_option("--sequence-length", "frames per window");
    sub->add_option("--max-epochs", "epoch cap");
    sub->add_option("--patience", "early-stopping patience");
    sub->add_option("--train-fraction", "subject fraction for training");
    sub->add_option("--gold-mode", "mean | agreement");
  };

  auto* synth = add_common(app.add_subcommand("synth", "generate a synthetic dataset"), true);
  synth->add_option("--preset", preset, "categorical-desk | dimensional-desk");
  synth->add_option("--seed", seed, "generator seed");
  synth->add_option("--kind", "categorical | dimensional");
  synth->add_option("--subjects", "number of subjects");
  synth->add_option("--videos-per-subject", "videos per subject");
  synth->add_option("--frames", "frames per video");
  synth->add_option("--resolution", "square frame size");
  synth->add_option("--channels", "image channels");

  auto* pretrain = add_common(app.add_subcommand("pretrain", "categorical pretraining"), true);
  add_train_flags(pretrain);
  pretrain->add_option("--oversample-multiplier", "rare-emotion frame target multiplier");
  pretrain->add_flag("--no-augment", "disable crop/colour augmentation");

  auto* finetune = add_common(app.add_subcommand("finetune", "dimensional fine-tuning"), true);
  add_train_flags(finetune);
  finetune->add_flag("--no-postprocess", no_postprocess, "skip the validation chain search");

  auto* evaluate = add_common(app.add_subcommand("evaluate", "evaluate a checkpoint"), false);
  evaluate->add_option("--ckpt", "checkpoint directory");
  evaluate->add_option("--data", "dataset directory");
  evaluate->add_option("--partition", partition, "train | val | all");
  evaluate->add_option("--chain", chain_file, "frozen post-processing chain file");
  evaluate->add_option("--sequence-length", "override the stored window length");

  auto* compare = add_common(app.add_subcommand("compare", "compare initialisation strategies"), true);
  add_train_flags(compare);
  compare->add_option("--strategy", "init strategy token (repeatable)")->take_all();
  compare->add_option("--test-data", "held-out dataset for the test columns");

  auto* postprocess = add_common(app.add_subcommand("postprocess", "search a chain on validation data"), true);
  postprocess->add_option("--ckpt", "checkpoint directory");
  postprocess->add_option("--data", "dataset directory");

  auto* gradcheck_cmd = add_common(app.add_subcommand("gradcheck", "finite-difference gradient suite"), false);
  gradcheck_cmd->add_option("--seeds", gc_seeds, "random seeds per op");
  gradcheck_cmd->add_option("--tolerance", gc_tolerance, "max relative error");
  gradcheck_cmd->add_option("--inject-fault", inject_fault, "perturb one op's gradient (test hook)")
      ->group("");  // hidden

  CLI11_PARSE(app, argc, argv);

  try {
    set_num_threads(resolve_threads(threads));
    if (synth->parsed()) return cmd_synth(synth, config_path, preset, seed, out, force);
    if (pretrain->parsed()) return cmd_pretrain(pretrain, config_path, out, force);
    if (finetune->parsed()) return cmd_finetune(finetune, config_path, out, force, no_postprocess);
    if (evaluate->parsed()) return cmd_evaluate(evaluate, config_path, out, force);
    if (compare->parsed()) return cmd_compare(compare, config_path, out, force);
    if (postprocess->parsed()) return cmd_postprocess(postprocess, config_path, out, force);
    if (gradcheck_cmd->parsed()) return cmd_gradcheck(out, gc_seeds, gc_tolerance, inject_fault);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
