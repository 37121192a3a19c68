#include "trireid/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "trireid/fusion.hpp"
#include "trireid/sampler.hpp"

namespace trireid {

namespace {

constexpr char kMagic[8] = {'T', 'R', 'C', 'K', 'P', 'T', '0', '1'};

void put_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
template <typename T>
void put(std::ostream& os, T v) {
  put_bytes(os, &v, sizeof v);
}
void put_string(std::ostream& os, const std::string& s) {
  put<uint64_t>(os, s.size());
  put_bytes(os, s.data(), s.size());
}
void put_doubles(std::ostream& os, const std::vector<double>& v) {
  put_bytes(os, v.data(), v.size() * sizeof(double));
}

void take_bytes(std::istream& is, void* p, size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!is) throw DataError("checkpoint truncated");
}
template <typename T>
T take(std::istream& is) {
  T v;
  take_bytes(is, &v, sizeof v);
  return v;
}
std::string take_string(std::istream& is) {
  const uint64_t n = take<uint64_t>(is);
  if (n > (1u << 30)) throw DataError("checkpoint field length implausible");
  std::string s(static_cast<size_t>(n), '\0');
  take_bytes(is, s.data(), s.size());
  return s;
}
void take_doubles(std::istream& is, std::vector<double>& v) {
  take_bytes(is, v.data(), v.size() * sizeof(double));
}

void write_memory(std::ostream& os, const Model& model) {
  put<uint8_t>(os, model.has_memory() ? 1 : 0);
  if (!model.has_memory()) return;
  const ViewMemory& mem = model.memory();
  const int m = mem.size();
  const int d = m > 0 ? mem.base.dim(1) : 0;
  put<int32_t>(os, m);
  put<int32_t>(os, d);
  for (int i = 0; i < m; ++i) {
    put<int32_t>(os, mem.keys[(size_t)i].id);
    put<uint8_t>(os, mem.keys[(size_t)i].platform == Platform::Aerial ? 0 : 1);
    put<int32_t>(os, mem.counts[(size_t)i]);
  }
  put_doubles(os, mem.base.data);
  put_doubles(os, mem.prompts.data);
  put_doubles(os, mem.updated.data);
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model,
                     const Adam& adam, const Rng& data_rng,
                     const Rng& model_rng, int epoch, int64_t step) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write checkpoint '" + path + "'");
  put_bytes(os, kMagic, sizeof kMagic);

  const std::string cfg_text = serialize_config(model.config());
  put_string(os, cfg_text);
  put<uint64_t>(os, config_hash(model.config()));

  const auto& vocab = model.identity_vocab();
  put<int32_t>(os, static_cast<int32_t>(vocab.size()));
  for (int id : vocab) put<int32_t>(os, id);

  put<int32_t>(os, epoch);
  put<int64_t>(os, step);

  const auto& entries = model.params().entries();
  put<uint64_t>(os, entries.size());
  for (const auto& [name, var] : entries) {
    put_string(os, name);
    put<uint32_t>(os, static_cast<uint32_t>(var->value.ndim()));
    for (int dim : var->value.shape) put<int32_t>(os, dim);
    put_doubles(os, var->value.data);
  }

  std::ostringstream adam_blob;
  adam.save(adam_blob);
  put_string(os, adam_blob.str());

  put_string(os, data_rng.serialize());
  put_string(os, model_rng.serialize());

  write_memory(os, model);
  if (!os) throw DataError("checkpoint write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint '" + path + "'");
  char magic[8];
  take_bytes(is, magic, sizeof magic);
  if (!std::equal(magic, magic + 8, kMagic))
    throw DataError("'" + path + "' is not a checkpoint file");

  Checkpoint ck;
  const std::string cfg_text = take_string(is);
  ck.cfg = parse_config_text(cfg_text);
  const uint64_t hash = take<uint64_t>(is);
  if (hash != config_hash(ck.cfg))
    throw DataError("checkpoint config hash mismatch in '" + path + "'");

  const int32_t vocab_n = take<int32_t>(is);
  std::vector<int> vocab;
  for (int32_t i = 0; i < vocab_n; ++i) vocab.push_back(take<int32_t>(is));

  ck.epoch = take<int32_t>(is);
  ck.step = take<int64_t>(is);

  Rng scratch(0);
  ck.model = std::make_unique<Model>(ck.cfg, vocab, scratch);

  const auto& entries = ck.model->params().entries();
  const uint64_t count = take<uint64_t>(is);
  if (count != entries.size())
    throw DataError("checkpoint parameter count does not match the config");
  for (const auto& [name, var] : entries) {
    if (take_string(is) != name)
      throw DataError("checkpoint parameter order mismatch at '" + name +
                      "'");
    const uint32_t ndim = take<uint32_t>(is);
    std::vector<int> shape;
    for (uint32_t k = 0; k < ndim; ++k) shape.push_back(take<int32_t>(is));
    if (shape != var->value.shape)
      throw DataError("checkpoint shape mismatch at '" + name + "'");
    take_doubles(is, var->value.data);
  }

  ck.adam_state = take_string(is);
  ck.data_rng = take_string(is);
  ck.model_rng = take_string(is);

  if (take<uint8_t>(is) == 1) {
    ViewMemory mem;
    const int m = take<int32_t>(is);
    const int d = take<int32_t>(is);
    for (int i = 0; i < m; ++i) {
      MemKey k;
      k.id = take<int32_t>(is);
      k.platform =
          take<uint8_t>(is) == 0 ? Platform::Aerial : Platform::Ground;
      mem.keys.push_back(k);
      mem.counts.push_back(take<int32_t>(is));
    }
    mem.base = Tensor({m, d});
    mem.prompts = Tensor({m, d});
    mem.updated = Tensor({m, d});
    take_doubles(is, mem.base.data);
    take_doubles(is, mem.prompts.data);
    take_doubles(is, mem.updated.data);
    ck.model->set_memory(std::move(mem));
  }
  return ck;
}

double schedule_lr(int64_t step, int64_t total_steps, double lr_init) {
  const int64_t den = std::max<int64_t>(total_steps - 1, 1);
  return cosine_lr(static_cast<int>(std::min(step, den)),
                   static_cast<int>(den), lr_init);
}

int derive_steps_per_epoch(const Config& cfg, const Manifest& m) {
  if (cfg.steps_per_epoch > 0) return cfg.steps_per_epoch;
  const SplitSummary s = summarize(m, Split::Train);
  const int batch = cfg.num_identities_per_batch * cfg.tracklets_per_identity;
  return std::max(1, s.tracklets / batch);
}

namespace {

std::string log_line(int64_t step, int epoch, double lr,
                     const LossReport& rep) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "{\"step\":%lld,\"epoch\":%d,\"lr\":%.17g,\"l_id\":%.17g,"
                "\"l_tri\":%.17g,\"l_sa\":%.17g,\"l_cr\":%.17g,"
                "\"l_v2m\":%.17g,\"total\":%.17g}\n",
                static_cast<long long>(step), epoch, lr, rep.l_id, rep.l_tri,
                rep.l_sa, rep.l_cr, rep.l_v2m, rep.total);
  return buf;
}

void check_finite(const LossReport& rep, int64_t step) {
  const std::pair<const char*, double> terms[] = {
      {"l_id", rep.l_id},   {"l_tri", rep.l_tri}, {"l_sa", rep.l_sa},
      {"l_cr", rep.l_cr},   {"l_v2m", rep.l_v2m}, {"total", rep.total},
  };
  for (const auto& [name, v] : terms)
    if (!std::isfinite(v))
      throw DivergenceError(static_cast<int>(step), name);
}

}  // namespace

TrainOutcome train(const Config& cfg, const Manifest& manifest,
                   const std::string& out_dir,
                   const std::string& resume_from) {
  validate_config(cfg);
  std::filesystem::create_directories(out_dir);

  const std::vector<int> vocab = train_identity_vocab(manifest);
  if (vocab.empty()) throw DataError("train: manifest has no train split");

  Rng root(static_cast<uint64_t>(cfg.seed));
  Rng init_rng = root.child(0);
  Rng data_rng = root.child(1);
  Rng model_rng = root.child(2);

  std::unique_ptr<Model> model;
  std::unique_ptr<Adam> adam;
  int epoch = 0;
  int64_t step = 0;
  const bool resuming = !resume_from.empty();
  if (resuming) {
    Checkpoint ck = load_checkpoint(resume_from);
    if (!(ck.cfg == cfg))
      throw ConfigError("resume: checkpoint was written with a different "
                        "config");
    if (ck.model->identity_vocab() != vocab)
      throw DataError("resume: manifest identities differ from checkpoint");
    model = std::move(ck.model);
    adam = std::make_unique<Adam>(model->params(), cfg.adam_beta1,
                                  cfg.adam_beta2, cfg.adam_eps,
                                  cfg.weight_decay);
    std::istringstream blob(ck.adam_state);
    adam->load(blob);
    data_rng = Rng::deserialize(ck.data_rng);
    model_rng = Rng::deserialize(ck.model_rng);
    epoch = ck.epoch;
    step = ck.step;
  } else {
    model = std::make_unique<Model>(cfg, vocab, init_rng);
    adam = std::make_unique<Adam>(model->params(), cfg.adam_beta1,
                                  cfg.adam_beta2, cfg.adam_eps,
                                  cfg.weight_decay);
  }

  const int spe = derive_steps_per_epoch(cfg, manifest);
  const int64_t total_steps = static_cast<int64_t>(spe) * cfg.epochs;

  TrainOutcome out;
  out.log_path = out_dir + "/train_log.jsonl";
  std::ofstream log(out.log_path, resuming ? std::ios::app : std::ios::trunc);
  if (!log) throw DataError("cannot write training log '" + out.log_path +
                            "'");

  if (!resuming)
    save_checkpoint(out_dir + "/checkpoint_init.bin", *model, *adam,
                    data_rng, model_rng, 0, 0);

  FrameCache cache;
  BatchSampler sampler(manifest, cfg);
  bool first_seen = false;

  for (; epoch < cfg.epochs; ++epoch) {
    model->rebuild_memory(manifest, cache);
    for (int s = 0; s < spe; ++s, ++step) {
      ClipBatch batch = sampler.next(data_rng, cache);
      Model::Forward fw = model->forward_train(batch, model_rng);
      LossReport rep;
      Var total = total_loss(fw.terms, cfg, &rep);
      check_finite(rep, step);

      model->params().zero_grads();
      backward(total);
      const double lr = schedule_lr(step, total_steps, cfg.lr_init);
      adam->step(lr, cfg.grad_clip_norm);

      log << log_line(step, epoch, lr, rep);
      if (!first_seen) {
        out.first_total = rep.total;
        first_seen = true;
      }
      out.last_total = rep.total;
    }
    const int done = epoch + 1;
    if (cfg.checkpoint_every_epochs > 0 && done < cfg.epochs &&
        done % cfg.checkpoint_every_epochs == 0)
      save_checkpoint(out_dir + "/checkpoint_epoch" + std::to_string(done) +
                          ".bin",
                      *model, *adam, data_rng, model_rng, done, step);
  }

  out.checkpoint_path = out_dir + "/checkpoint_final.bin";
  save_checkpoint(out.checkpoint_path, *model, *adam, data_rng, model_rng,
                  cfg.epochs, step);
  out.steps = step;
  log.flush();
  return out;
}

TrackletEncoder make_encoder(const Model& model, const Manifest& m,
                             FrameCache& cache) {
  return [&model, &m, &cache](const Tracklet& t) {
    const Config& cfg = model.config();
    const int len = static_cast<int>(t.frames.size());
    const int T = cfg.frames_per_clip;

    std::vector<std::vector<int>> clips;
    if (len <= T) {
      clips.push_back(clip_indices(len, T));
    } else {
      for (int s : clip_starts(len, T)) {
        std::vector<int> idx(static_cast<size_t>(T));
        for (int k = 0; k < T; ++k) idx[(size_t)k] = s + k;
        clips.push_back(std::move(idx));
      }
    }

    Tensor acc({model.feature_dim()});
    for (const auto& idx : clips) {
      Tensor clip = load_clip(m, t, idx, cfg.image_height, cfg.image_width,
                              cache);
      Tensor f = model.encode_clip(clip, T, t.modality);
      for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += f[i];
    }
    for (auto& v : acc.data) v /= static_cast<double>(clips.size());
    return acc;
  };
}

std::string ablation_label(const StreamMask& mask) {
  std::string out = "St";
  if (mask.st1) out += '1';
  if (mask.st2) out += '2';
  if (mask.st3) out += '3';
  return out;
}

std::vector<AblationRow> ablate(const Config& cfg, const Manifest& m,
                                const std::string& out_dir,
                                const ProtocolSpec& spec, Split eval_split) {
  static const StreamMask kOrder[] = {
      {true, false, false}, {false, true, false}, {false, false, true},
      {true, true, false},  {true, false, true},  {false, true, true},
      {true, true, true},
  };

  std::vector<AblationRow> rows;
  for (const StreamMask& mask : kOrder) {
    Config sub = cfg;
    sub.stream_mask = mask;
    const std::string sub_dir = out_dir + "/" + ablation_label(mask);
    TrainOutcome t = train(sub, m, sub_dir);

    Checkpoint ck = load_checkpoint(t.checkpoint_path);
    FrameCache cache;
    TrackletEncoder enc = make_encoder(*ck.model, m, cache);
    std::vector<EvalRow> eval_rows =
        evaluate(m, {spec}, enc, sub.camera_filter, eval_split);
    rows.push_back({mask, eval_rows[0]});
  }
  return rows;
}

std::string render_ablation_table(const std::vector<AblationRow>& rows) {
  std::string out = "streams\tR1\tR5\tR10\tR20\tmAP\n";
  for (const AblationRow& r : rows) {
    out += ablation_label(r.mask);
    for (int k : {1, 5, 10, 20}) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "\t%.6f", cmc_at(r.eval.result, k));
      out += buf;
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "\t%.6f\n", r.eval.result.map);
    out += buf;
  }
  return out;
}

}  // namespace trireid
