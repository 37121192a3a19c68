#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "trireid/adam.hpp"
#include "trireid/config.hpp"
#include "trireid/eval.hpp"
#include "trireid/manifest.hpp"
#include "trireid/model.hpp"

namespace trireid {

/// A training state restored from disk. `epoch` is the next epoch to run
/// and `step` the number of optimizer steps already taken.
struct Checkpoint {
  Config cfg;
  int epoch = 0;
  int64_t step = 0;
  std::unique_ptr<Model> model;
  std::string adam_state;  // exactly what Adam::save wrote
  std::string data_rng;
  std::string model_rng;
};

/// Binary snapshot: magic, config text and hash, identity vocabulary,
/// counters, parameters in registration order, optimizer moments, both
/// generator states, and the view-memory snapshot.
void save_checkpoint(const std::string& path, const Model& model,
                     const Adam& adam, const Rng& data_rng,
                     const Rng& model_rng, int epoch, int64_t step);

/// Throws DataError on a missing file, bad magic, truncation, or a
/// parameter layout that does not match the stored config.
Checkpoint load_checkpoint(const std::string& path);

/// Per-step learning rate: lr_init at step 0, cosine-annealed to 0 on the
/// final step of the schedule.
double schedule_lr(int64_t step, int64_t total_steps, double lr_init);

/// Explicit config value, or one pass over the train split per epoch.
int derive_steps_per_epoch(const Config& cfg, const Manifest& m);

struct TrainOutcome {
  std::string checkpoint_path;
  std::string log_path;
  int64_t steps = 0;
  double first_total = 0.0;
  double last_total = 0.0;
};

/// Runs the configured schedule, or the remainder of it when resume_from
/// names an epoch-boundary checkpoint. Writes train_log.jsonl (one record
/// per step), checkpoint_init.bin before the first step, periodic
/// checkpoint_epochN.bin files, and checkpoint_final.bin, all under
/// out_dir. Aborts with DivergenceError on a non-finite loss term.
TrainOutcome train(const Config& cfg, const Manifest& manifest,
                   const std::string& out_dir,
                   const std::string& resume_from = "");

/// Mean fused feature over uniform-stride clips of one tracklet. The
/// model, manifest, and cache must outlive the returned function.
TrackletEncoder make_encoder(const Model& model, const Manifest& m,
                             FrameCache& cache);

/// "St13" style tag listing the enabled streams.
std::string ablation_label(const StreamMask& mask);

struct AblationRow {
  StreamMask mask;
  EvalRow eval;
};

/// Trains and evaluates every non-empty stream subset in the fixed order
/// St1, St2, St3, St12, St13, St23, St123, reusing one data seed so rows
/// differ only by architecture. Each subset trains under out_dir/<label>.
std::vector<AblationRow> ablate(const Config& cfg, const Manifest& m,
                                const std::string& out_dir,
                                const ProtocolSpec& spec, Split eval_split);

/// Tab-separated table: streams, R1, R5, R10, R20, mAP.
std::string render_ablation_table(const std::vector<AblationRow>& rows);

}  // namespace trireid
