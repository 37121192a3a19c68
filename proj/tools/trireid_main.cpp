#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "trireid/config.hpp"
#include "trireid/errors.hpp"
#include "trireid/eval.hpp"
#include "trireid/manifest.hpp"
#include "trireid/selftest.hpp"
#include "trireid/synth.hpp"
#include "trireid/trainer.hpp"

namespace fs = std::filesystem;
using namespace trireid;

namespace {

std::string default_out() {
  const char* env = std::getenv("TRIREID_OUT");
  return env != nullptr && *env != '\0' ? env : "out";
}

Config make_config(const std::string& path,
                   const std::vector<std::string>& sets) {
  Config cfg = path.empty() ? Config{} : load_config(path);
  for (const auto& kv : sets) apply_override(cfg, kv);
  validate_config(cfg);
  return cfg;
}

// Accepts either the dataset root or the manifest file itself.
Manifest open_data(const std::string& data) {
  fs::path p(data);
  if (fs::is_directory(p)) p /= "manifest.txt";
  Manifest m = load_manifest(p.string());
  auto problems = validate_manifest(m, /*check_files=*/false);
  if (!problems.empty())
    throw DataError("manifest '" + p.string() + "': " + problems.front());
  return m;
}

// `train` leaves a pointer to its dataset so a bare `eval` can find it.
std::string data_or_recorded(const std::string& data,
                             const std::string& out_dir) {
  if (!data.empty()) return data;
  std::ifstream in(fs::path(out_dir) / "data_root.txt");
  std::string line;
  if (in && std::getline(in, line) && !line.empty()) return line;
  throw DataError("no --data given and '" + out_dir +
                  "/data_root.txt' is missing");
}

Split resolve_split(const std::string& name, const Manifest& m) {
  if (name == "train") return Split::Train;
  if (name == "test") return Split::Test;
  if (name != "auto")
    throw ConfigError("unknown split '" + name + "'");
  for (const auto& t : m.tracklets)
    if (t.split == Split::Test) return Split::Test;
  return Split::Train;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
}

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir = default_out();

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path,
                    "Config file with key = value lines");
    cmd->add_option("--set", sets,
                    "Override one config key, e.g. --set epochs=40")
        ->type_name("KEY=VALUE");
    cmd->add_option("--out", out_dir,
                    "Output directory (default $TRIREID_OUT or ./out)");
  }
};

int run(int argc, char** argv) {
  CLI::App app{"Three-stream training and evaluation toolkit for "
               "cross-platform, cross-modality video person "
               "re-identification"};
  app.require_subcommand(1);
  app.footer("Config keys:\n" + config_help());

  // gen-data
  auto* gen = app.add_subcommand(
      "gen-data", "Render a synthetic dataset with a manifest");
  SynthSpec spec;
  int gen_seed = 42;
  std::string gen_out;
  gen->add_option("--ids", spec.num_identities, "Training identities")
      ->capture_default_str();
  gen->add_option("--test-ids", spec.num_test_identities,
                  "Held-out identities")
      ->capture_default_str();
  gen->add_option("--distractors", spec.num_distractors,
                  "Gallery-only distractor identities")
      ->capture_default_str();
  gen->add_option("--tracklets", spec.tracklets_per_cell,
                  "Tracklets per (identity, platform, modality) cell")
      ->capture_default_str();
  gen->add_option("--frames", spec.frames_per_tracklet,
                  "Frames per tracklet")
      ->capture_default_str();
  gen->add_option("--height", spec.image_height, "Frame height")
      ->capture_default_str();
  gen->add_option("--width", spec.image_width, "Frame width")
      ->capture_default_str();
  gen->add_option("--seed", gen_seed, "Generation seed")
      ->capture_default_str();
  gen->add_option("--out", gen_out, "Dataset root directory")->required();
  gen->callback([&] {
    Rng rng(static_cast<uint64_t>(gen_seed));
    Manifest m = generate_synthetic(spec, gen_out, rng);
    for (Split s : {Split::Train, Split::Test, Split::Distractor}) {
      SplitSummary sum = summarize(m, s);
      std::printf("%-10s %4d identities %5d tracklets %7lld frames\n",
                  to_string(s), sum.identities, sum.tracklets,
                  static_cast<long long>(sum.frames));
    }
    std::printf("wrote %s/manifest.txt\n", gen_out.c_str());
  });

  // train
  auto* tr = app.add_subcommand("train", "Train a model on a dataset");
  CommonOpts tr_opts;
  tr_opts.attach(tr);
  std::string tr_data, tr_resume;
  tr->add_option("--data", tr_data, "Dataset root or manifest file")
      ->required();
  tr->add_option("--resume", tr_resume,
                 "Checkpoint to continue from (epoch boundary)");
  tr->callback([&] {
    Config cfg = make_config(tr_opts.config_path, tr_opts.sets);
    Manifest m = open_data(tr_data);
    TrainOutcome out = train(cfg, m, tr_opts.out_dir, tr_resume);
    write_text(fs::path(tr_opts.out_dir) / "data_root.txt",
               fs::absolute(tr_data).string() + "\n");
    std::printf("trained %lld steps, total %.6f -> %.6f\n",
                static_cast<long long>(out.steps), out.first_total,
                out.last_total);
    std::printf("checkpoint %s\nlog %s\n", out.checkpoint_path.c_str(),
                out.log_path.c_str());
  });

  // eval
  auto* ev = app.add_subcommand(
      "eval", "Rank a trained model over the retrieval protocols");
  CommonOpts ev_opts;
  ev_opts.attach(ev);
  std::string ev_data, ev_ckpt, ev_split = "auto";
  bool ev_no_distractors = false;
  ev->add_option("--data", ev_data,
                 "Dataset root (default: recorded by train)");
  ev->add_option("--checkpoint", ev_ckpt,
                 "Checkpoint file (default <out>/checkpoint_final.bin)");
  ev->add_option("--split", ev_split, "Protocol split: auto, train, test")
      ->capture_default_str();
  ev->add_flag("--no-distractors", ev_no_distractors,
               "Drop gallery-only distractor tracklets");
  ev->callback([&] {
    const std::string ckpt =
        ev_ckpt.empty()
            ? (fs::path(ev_opts.out_dir) / "checkpoint_final.bin").string()
            : ev_ckpt;
    Checkpoint ck = load_checkpoint(ckpt);
    Manifest m = open_data(data_or_recorded(ev_data, ev_opts.out_dir));
    const Split split = resolve_split(ev_split, m);

    FrameCache cache;
    TrackletEncoder enc = make_encoder(*ck.model, m, cache);
    std::vector<EvalRow> rows =
        evaluate(m, default_protocols(!ev_no_distractors), enc,
                 ck.cfg.camera_filter, split);

    fs::create_directories(ev_opts.out_dir);
    const fs::path table = fs::path(ev_opts.out_dir) / "results.tsv";
    write_text(table, render_results_table(rows));
    std::printf("%s", render_results_text(rows).c_str());
    std::printf("wrote %s\n", table.string().c_str());
  });

  // ablate
  auto* ab = app.add_subcommand(
      "ablate", "Train and rank every stream subset on one protocol");
  CommonOpts ab_opts;
  ab_opts.attach(ab);
  std::string ab_data, ab_platforms = "G2G", ab_direction = "V2I",
              ab_split = "auto";
  bool ab_no_distractors = false;
  ab->add_option("--data", ab_data, "Dataset root or manifest file")
      ->required();
  ab->add_option("--protocol", ab_platforms,
                 "Query/gallery platforms: A2A, A2G, G2A or G2G")
      ->capture_default_str();
  ab->add_option("--direction", ab_direction, "Modality direction: V2I "
                                              "or I2V")
      ->capture_default_str();
  ab->add_option("--split", ab_split, "Protocol split: auto, train, test")
      ->capture_default_str();
  ab->add_flag("--no-distractors", ab_no_distractors,
               "Drop gallery-only distractor tracklets");
  ab->callback([&] {
    Config cfg = make_config(ab_opts.config_path, ab_opts.sets);
    Manifest m = open_data(ab_data);

    auto plat = [&](char c) {
      if (c == 'A') return Platform::Aerial;
      if (c == 'G') return Platform::Ground;
      throw ConfigError("unknown protocol '" + ab_platforms + "'");
    };
    if (ab_platforms.size() != 3 || ab_platforms[1] != '2')
      throw ConfigError("unknown protocol '" + ab_platforms + "'");
    if (ab_direction != "V2I" && ab_direction != "I2V")
      throw ConfigError("unknown direction '" + ab_direction + "'");
    ProtocolSpec spec;
    spec.query_platform = plat(ab_platforms[0]);
    spec.gallery_platform = plat(ab_platforms[2]);
    spec.direction = direction_from(ab_direction);
    spec.include_distractors = !ab_no_distractors;

    const Split split = resolve_split(ab_split, m);
    std::vector<AblationRow> rows =
        ablate(cfg, m, ab_opts.out_dir, spec, split);
    const std::string table = render_ablation_table(rows);
    const fs::path path = fs::path(ab_opts.out_dir) / "ablation.tsv";
    write_text(path, table);
    std::printf("%s", table.c_str());
    std::printf("wrote %s\n", path.string().c_str());
  });

  // selftest
  auto* st = app.add_subcommand(
      "selftest", "Check the losses and metrics against built-in oracles");
  bool st_failed = false;
  st->callback([&] { st_failed = !run_selftest(); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  return st_failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
