#include "mrtts/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mrtts/errors.hpp"
#include "mrtts/util.hpp"
#include "mrtts/wav.hpp"

namespace mrtts {

using namespace ad;

std::string architecture_name(Architecture a) {
  switch (a) {
    case Architecture::Tacotron2: return "tacotron2";
    case Architecture::TpseGst: return "tpse_gst";
    case Architecture::UMrtts: return "u_mrtts";
    case Architecture::CMrtts: return "c_mrtts";
  }
  return "?";
}

Architecture architecture_from_name(const std::string& name) {
  if (name == "tacotron2") return Architecture::Tacotron2;
  if (name == "tpse_gst") return Architecture::TpseGst;
  if (name == "u_mrtts") return Architecture::UMrtts;
  if (name == "c_mrtts") return Architecture::CMrtts;
  throw ConfigMismatchError("unknown architecture: " + name);
}

void SystemConfig::validate() const {
  if (steps < 1) throw PreconditionError("steps must be >= 1");
  if (batch_size < 1) throw PreconditionError("batch_size must be >= 1");
  if (learning_rate <= 0.0) throw PreconditionError("learning_rate must be > 0");
  switch (architecture) {
    case Architecture::Tacotron2:
      if (use_attention || use_mse || use_mi || n_references != 0)
        throw ConfigMismatchError(system_id + ": the plain backbone takes no style flags");
      break;
    case Architecture::TpseGst:
      if (use_attention || n_references != 0)
        throw ConfigMismatchError(system_id + ": text-predicted style takes no references");
      if (!use_mse && !use_mi)
        throw ConfigMismatchError(system_id + ": text-predicted style needs a constraint term");
      break;
    case Architecture::UMrtts:
      if (use_mse || use_mi)
        throw ConfigMismatchError(system_id + ": unconstrained variant cannot set mse/mi");
      if (n_references < 1) throw ConfigMismatchError(system_id + ": needs n_references >= 1");
      break;
    case Architecture::CMrtts:
      if (!use_mse && !use_mi)
        throw ConfigMismatchError(system_id + ": constrained variant needs mse and/or mi");
      if (n_references < 1) throw ConfigMismatchError(system_id + ": needs n_references >= 1");
      break;
  }
  if (use_mi && batch_size < 2)
    throw ConfigMismatchError(system_id + ": the MI term needs batch_size >= 2");
}

const std::vector<std::string>& SystemConfig::known_ids() {
  static const std::vector<std::string> ids = {"B1", "B2", "B3", "B4", "P1", "P2", "P3",
                                               "P4", "P5", "P6", "P7", "P8", "P9", "P10"};
  return ids;
}

SystemConfig SystemConfig::named(const std::string& id) {
  SystemConfig c;
  c.system_id = id;
  auto tpse = [&](bool mse, bool mi) {
    c.architecture = Architecture::TpseGst;
    c.use_mse = mse;
    c.use_mi = mi;
  };
  auto mrtts = [&](bool constrained, bool attention, bool mse, bool mi, int n) {
    c.architecture = constrained ? Architecture::CMrtts : Architecture::UMrtts;
    c.use_attention = attention;
    c.use_mse = mse;
    c.use_mi = mi;
    c.n_references = n;
  };
  if (id == "B1") c.architecture = Architecture::Tacotron2;
  else if (id == "B2") tpse(true, false);
  else if (id == "B3") tpse(false, true);
  else if (id == "B4") tpse(true, true);
  else if (id == "P1") mrtts(false, false, false, false, 3);
  else if (id == "P2") mrtts(false, true, false, false, 1);
  else if (id == "P3") mrtts(false, true, false, false, 3);
  else if (id == "P4") mrtts(true, false, true, false, 3);
  else if (id == "P5") mrtts(true, false, false, true, 3);
  else if (id == "P6") mrtts(true, false, true, true, 3);
  else if (id == "P7") mrtts(true, true, true, false, 3);
  else if (id == "P8") mrtts(true, true, false, true, 3);
  else if (id == "P9") mrtts(true, true, true, true, 1);
  else if (id == "P10") mrtts(true, true, true, true, 3);
  else throw ConfigMismatchError("unknown system id: " + id);
  c.validate();
  return c;
}

LossBreakdown LossBreakdown::make(double l_mel, double mse_term, double mi_term,
                                  double l_mi_estimator, double stop_loss) {
  LossBreakdown b;
  b.l_mel = l_mel;
  b.mse_term = mse_term;
  b.mi_term = mi_term;
  b.l_s = mse_term - mi_term;
  b.l_total = l_mel + b.l_s;
  b.l_mi_estimator = l_mi_estimator;
  b.stop_loss = stop_loss;
  return b;
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

void wr_bytes(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void wr_pod(std::ostream& out, T v) {
  wr_bytes(out, &v, sizeof(T));
}

template <typename T>
T rd_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("truncated checkpoint");
  return v;
}

constexpr char kCkptMagic[8] = {'M', 'R', 'T', 'T', 'S', 'C', 'K', '1'};

}  // namespace

const Matrix* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, _, m] : tensors)
    if (n == name) return &m;
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  wr_bytes(out, kCkptMagic, 8);
  wr_pod<std::uint32_t>(out, 1);
  wr_pod<std::uint64_t>(out, ckpt.config_hash);
  wr_pod<std::int64_t>(out, ckpt.step);
  wr_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, is_buffer, m] : ckpt.tensors) {
    wr_pod<std::uint8_t>(out, is_buffer ? 1 : 0);
    wr_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    wr_bytes(out, name.data(), name.size());
    wr_pod<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
    wr_pod<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) wr_pod<double>(out, m(r, c));
  }
  wr_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.loss_tail.size()));
  for (double v : ckpt.loss_tail) wr_pod<double>(out, v);
  if (!out) throw IoError("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError(path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw DataError("not a checkpoint file: " + path.string());
  if (rd_pod<std::uint32_t>(in) != 1) throw DataError("unsupported checkpoint version");
  Checkpoint ckpt;
  ckpt.config_hash = rd_pod<std::uint64_t>(in);
  ckpt.step = rd_pod<std::int64_t>(in);
  auto n_tensors = rd_pod<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    bool is_buffer = rd_pod<std::uint8_t>(in) != 0;
    auto name_len = rd_pod<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    auto rows = rd_pod<std::uint32_t>(in);
    auto cols = rd_pod<std::uint32_t>(in);
    Matrix m(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = rd_pod<double>(in);
    ckpt.tensors.emplace_back(std::move(name), is_buffer, std::move(m));
  }
  auto tail = rd_pod<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < tail; ++i) ckpt.loss_tail.push_back(rd_pod<double>(in));
  return ckpt;
}

// ---------------------------------------------------------------------------
// model bundle

namespace {

struct SystemModels {
  CharVocab vocab;
  AcousticModel acoustic;
  std::optional<StyleEncoder> style;
  std::optional<MultiRefAttention> attention;

  SystemModels(const PipelineConfig& pc, const SystemConfig& sc, bool with_style)
      : vocab(pc.charset),
        acoustic(
            [&] {
              AcousticConfig ac = pc.acoustic;
              ac.n_mels = pc.features.n_mels;
              ac.style_dim = pc.style.output_dim;
              ac.conditioning = sc.architecture == Architecture::Tacotron2
                                    ? ConditioningMode::None
                                    : ConditioningMode::ConcatBroadcast;
              ac.seed = derive_seed(sc.seed, "acoustic");
              return ac;
            }(),
            CharVocab(pc.charset)) {
    if (with_style) {
      StyleEncoderConfig stc = pc.style;
      stc.n_mels = pc.features.n_mels;
      stc.seed = derive_seed(sc.seed, "style");
      style.emplace(stc);
    }
    if (sc.use_attention) {
      MultiRefAttentionConfig mac = pc.attention;
      mac.style_dim = pc.style.output_dim;
      mac.seed = derive_seed(sc.seed, "attention");
      attention.emplace(mac);
    }
  }

  std::vector<nn::ParamStore*> trainable_stores() {
    std::vector<nn::ParamStore*> out{&acoustic.params()};
    if (style) out.push_back(&style->params());
    if (attention) out.push_back(&attention->params());
    return out;
  }
};

bool architecture_uses_style_encoder(Architecture a) {
  return a == Architecture::UMrtts || a == Architecture::CMrtts;
}

void collect_store(Checkpoint& ckpt, const std::string& prefix, nn::ParamStore& store) {
  for (const auto& [name, p] : store.params())
    ckpt.tensors.emplace_back(prefix + name, false, p->value);
  for (auto& [name, m] : store.buffers()) ckpt.tensors.emplace_back(prefix + name, true, *m);
}

void restore_store(const Checkpoint& ckpt, const std::string& prefix, nn::ParamStore& store) {
  for (const auto& [name, p] : store.params()) {
    const Matrix* m = ckpt.find(prefix + name);
    if (!m) throw ConfigMismatchError("checkpoint is missing tensor " + prefix + name);
    if (m->rows() != p->value.rows() || m->cols() != p->value.cols())
      throw ConfigMismatchError("checkpoint tensor shape differs: " + prefix + name);
    p->value = *m;
  }
  for (auto& [name, buf] : store.buffers()) {
    const Matrix* m = ckpt.find(prefix + name);
    if (!m) throw ConfigMismatchError("checkpoint is missing buffer " + prefix + name);
    *buf = *m;
  }
}

Checkpoint snapshot_models(SystemModels& models, std::uint64_t config_hash, long step,
                           const std::vector<double>& loss_tail) {
  Checkpoint ckpt;
  ckpt.config_hash = config_hash;
  ckpt.step = step;
  ckpt.loss_tail = loss_tail;
  collect_store(ckpt, "acoustic.", models.acoustic.params());
  if (models.style) collect_store(ckpt, "style.", models.style->params());
  if (models.attention) collect_store(ckpt, "mra.", models.attention->params());
  return ckpt;
}

void restore_models(const Checkpoint& ckpt, SystemModels& models) {
  restore_store(ckpt, "acoustic.", models.acoustic.params());
  if (models.style) restore_store(ckpt, "style.", models.style->params());
  if (models.attention) restore_store(ckpt, "mra.", models.attention->params());
}

// Rebuilds the pretrained style encoder from a stage-one checkpoint and
// freezes it.
FrozenStyleEncoder frozen_from_checkpoint(const Checkpoint& ckpt, const PipelineConfig& pc) {
  StyleEncoderConfig stc = pc.style;
  stc.n_mels = pc.features.n_mels;
  StyleEncoder encoder(stc);
  restore_store(ckpt, "style.", encoder.params());
  return FrozenStyleEncoder(encoder);
}

class Batcher {
 public:
  Batcher(std::size_t n, int batch, std::uint64_t seed)
      : n_(n), batch_(std::min<std::size_t>(static_cast<std::size_t>(batch), n)), rng_(seed) {
    reshuffle();
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    out.reserve(batch_);
    while (out.size() < batch_) {
      if (pos_ == order_.size()) reshuffle();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    order_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
    for (std::size_t i = n_ - 1; i > 0; --i) {
      std::uniform_int_distribution<std::size_t> dist(0, i);
      std::swap(order_[i], order_[dist(rng_)]);
    }
    pos_ = 0;
  }

  std::size_t n_, batch_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

Matrix clipped_mel(const MelSpectrogram& mel, int max_frames) {
  if (max_frames > 0 && mel.frames.rows() > max_frames) return mel.frames.topRows(max_frames);
  return mel.frames;
}

enum class TrainKind { Pretrain, System };

TrainResult run_training(const Manifest& manifest, const SelectionIndex* selection,
                         const Checkpoint* pretrained, const PipelineConfig& pc,
                         const SystemConfig& sc, TrainKind kind, const StepSink& sink) {
  if (kind == TrainKind::System) {
    sc.validate();
  } else {
    // stage one is not a row of the system matrix; only the numeric knobs apply
    if (sc.steps < 1 || sc.batch_size < 1 || sc.learning_rate <= 0.0)
      throw PreconditionError("pretraining needs steps >= 1, batch_size >= 1, lr > 0");
  }
  if (manifest.entries.empty()) throw DataError("empty manifest");
  for (const auto& u : manifest.entries)
    if (!u.mel) throw DataError("mel not extracted for utterance " + u.id);

  const bool is_system = kind == TrainKind::System;
  const bool uses_refs = is_system && architecture_uses_style_encoder(sc.architecture);
  if (uses_refs) {
    if (!selection) throw ConfigMismatchError(sc.system_id + " needs a selection index");
    for (const auto& u : manifest.entries) {
      auto it = selection->find(u.id);
      if (it == selection->end() || static_cast<int>(it->second.references.size()) <
                                        sc.n_references)
        throw ConfigMismatchError("selection index does not cover utterance " + u.id);
    }
  }
  if (is_system && (sc.use_mse || sc.use_mi) && !pretrained)
    throw ConfigMismatchError(sc.system_id + " needs the pretrained style checkpoint");

  const bool with_style = kind == TrainKind::Pretrain || uses_refs;
  SystemModels models(pc, sc, with_style);
  if (is_system && sc.init_style_from_pretrained && models.style && pretrained) {
    StyleEncoderConfig stc = pc.style;
    stc.n_mels = pc.features.n_mels;
    StyleEncoder seed_encoder(stc);
    restore_store(*pretrained, "style.", seed_encoder.params());
    models.style->params().copy_values_from(seed_encoder.params());
  }

  // frozen target-embedding source; also enables pure MI measurement when a
  // pretrained encoder is supplied to an unconstrained system
  std::optional<FrozenStyleEncoder> frozen;
  const bool has_style_pathway = is_system && sc.architecture != Architecture::Tacotron2;
  if (is_system && pretrained && has_style_pathway)
    frozen.emplace(frozen_from_checkpoint(*pretrained, pc));

  std::optional<MIEstimator> estimator;
  if (frozen) {
    MITrainingConfig mic = pc.mi;
    mic.input_dim = pc.style.output_dim;
    mic.seed = derive_seed(sc.seed, "mi-estimator");
    estimator.emplace(mic);
  }

  nn::Adam adam(sc.learning_rate, 0.9, 0.999, 1e-8, sc.grad_clip);
  Batcher batcher(manifest.entries.size(), sc.batch_size, derive_seed(sc.seed, "batches"));
  auto trainable = models.trainable_stores();

  const std::uint64_t config_hash = experiment_config_kv(pc, sc).hash();
  TrainResult result;
  std::vector<double> loss_tail;

  for (int step = 1; step <= sc.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    auto batch = batcher.next();
    const auto b = static_cast<Eigen::Index>(batch.size());

    Var mel_loss_sum, stop_loss_sum;
    std::vector<Var> predicted_styles;
    Matrix target_styles(b, pc.style.output_dim);
    Matrix attn_sum;
    bool have_targets = false;

    for (Eigen::Index bi = 0; bi < b; ++bi) {
      const Utterance& utt = manifest.entries[batch[static_cast<std::size_t>(bi)]];
      Var enc = models.acoustic.encode_text(models.vocab.encode(utt.text), true);

      Var style_embedding;  // 1 x style_dim when the pathway exists
      if (kind == TrainKind::Pretrain) {
        style_embedding = models.style->encode(utt.mel->frames, true);
      } else {
        switch (sc.architecture) {
          case Architecture::Tacotron2: break;
          case Architecture::TpseGst:
            style_embedding = models.acoustic.predict_style_from_text(enc);
            break;
          case Architecture::UMrtts:
          case Architecture::CMrtts: {
            const ReferenceSet& refs = selection->at(utt.id);
            std::vector<Var> ref_embeddings;
            for (int r = 0; r < sc.n_references; ++r) {
              const auto& ref_id = refs.references[static_cast<std::size_t>(r)].first;
              const Utterance* ref = manifest.find(ref_id);
              if (!ref || !ref->mel) throw DataError("reference mel missing: " + ref_id);
              Matrix ref_mel = clipped_mel(*ref->mel, sc.max_ref_frames);
              ref_embeddings.push_back(models.style->encode(ref_mel, true));
            }
            Var stacked = concat_rows(ref_embeddings);
            if (sc.use_attention) {
              AttentionTrace trace;
              style_embedding = models.attention->aggregate(stacked, &trace);
              if (attn_sum.size() == 0) attn_sum = Matrix::Zero(1, sc.n_references);
              attn_sum += trace.weights;
            } else {
              style_embedding = aggregate_mean(stacked);
            }
            break;
          }
        }
      }

      Var memory = style_embedding ? models.acoustic.condition(enc, style_embedding) : enc;
      DecodeLosses losses = models.acoustic.decode_teacher_forced(memory, utt.mel->frames);
      mel_loss_sum = mel_loss_sum ? add(mel_loss_sum, losses.mel_loss) : losses.mel_loss;
      stop_loss_sum = stop_loss_sum ? add(stop_loss_sum, losses.stop_loss) : losses.stop_loss;

      if (style_embedding && frozen) {
        predicted_styles.push_back(style_embedding);
        target_styles.row(bi) = frozen->encode(utt.mel->frames).row(0);
        have_targets = true;
      }
    }

    Var l_mel = mul_scalar(mel_loss_sum, 1.0 / static_cast<double>(b));
    Var l_stop = mul_scalar(stop_loss_sum, 1.0 / static_cast<double>(b));

    double l_mi_estimator = 0.0;
    ConstraintFlags flags{sc.use_mse, sc.use_mi};
    StyleConstraintResult constraint;
    if (have_targets) {
      Var predicted_batch = concat_rows(predicted_styles);
      // the estimator trains on detached values, then scores the live batch
      if (predicted_styles.size() >= 2)
        l_mi_estimator = estimator->update(predicted_batch->value, target_styles);
      constraint = style_constraint_loss(predicted_batch, target_styles,
                                         estimator ? &*estimator : nullptr, flags);
    } else {
      constraint.loss = constant(Matrix::Zero(1, 1));
    }

    Var objective = add(add(l_mel, constraint.loss), l_stop);
    if (!std::isfinite(objective->scalar())) throw DivergenceDetectedError(step);
    backward(objective);
    adam.step(trainable);

    TrainStepRecord rec;
    rec.step = step;
    rec.loss = LossBreakdown::make(l_mel->scalar(), constraint.mse_term, constraint.mi_term,
                                   l_mi_estimator, l_stop->scalar());
    if (attn_sum.size() != 0) {
      rec.attention_weights.resize(static_cast<std::size_t>(sc.n_references));
      for (int r = 0; r < sc.n_references; ++r)
        rec.attention_weights[static_cast<std::size_t>(r)] =
            attn_sum(0, r) / static_cast<double>(b);
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    loss_tail.push_back(rec.loss.l_total);
    if (loss_tail.size() > 50) loss_tail.erase(loss_tail.begin());
    if (sink) sink(rec);
    result.records.push_back(std::move(rec));
  }

  result.checkpoint = snapshot_models(models, config_hash, sc.steps, loss_tail);
  return result;
}

}  // namespace

TrainResult pretrain_style_system(const Manifest& manifest, const PipelineConfig& pc,
                                  const SystemConfig& sc, const StepSink& sink) {
  return run_training(manifest, nullptr, nullptr, pc, sc, TrainKind::Pretrain, sink);
}

TrainResult train_system(const Manifest& manifest, const SelectionIndex* selection,
                         const Checkpoint* pretrained, const PipelineConfig& pc,
                         const SystemConfig& sc, const StepSink& sink) {
  return run_training(manifest, selection, pretrained, pc, sc, TrainKind::System, sink);
}

FrozenStyleEncoder frozen_style_from_checkpoint(const Checkpoint& ckpt,
                                                const PipelineConfig& pc) {
  return frozen_from_checkpoint(ckpt, pc);
}

struct SystemRuntime::Impl {
  SystemConfig sc;
  SystemModels models;
  Impl(const Checkpoint& ckpt, const PipelineConfig& pc, const SystemConfig& sc_)
      : sc(sc_), models(pc, sc_, architecture_uses_style_encoder(sc_.architecture)) {
    restore_models(ckpt, models);
  }
};

SystemRuntime::SystemRuntime(const Checkpoint& ckpt, const PipelineConfig& pc,
                             const SystemConfig& sc)
    : impl_(std::make_unique<Impl>(ckpt, pc, sc)) {}
SystemRuntime::SystemRuntime(SystemRuntime&&) noexcept = default;
SystemRuntime::~SystemRuntime() = default;

Matrix SystemRuntime::predicted_style(const Manifest& manifest, const Utterance& utt,
                                      const SelectionIndex* selection) const {
  auto& models = impl_->models;
  const SystemConfig& sc = impl_->sc;
  if (sc.architecture == Architecture::Tacotron2)
    throw ConfigMismatchError("the plain backbone has no style pathway");

  Var enc = models.acoustic.encode_text(models.vocab.encode(utt.text), false);
  if (sc.architecture == Architecture::TpseGst)
    return models.acoustic.predict_style_from_text(enc)->value;

  if (!selection) throw ConfigMismatchError("reference-based system needs a selection index");
  const ReferenceSet& refs = selection->at(utt.id);
  if (static_cast<int>(refs.references.size()) < sc.n_references)
    throw ConfigMismatchError("selection index row too short for " + utt.id);
  std::vector<Var> embeddings;
  for (int r = 0; r < sc.n_references; ++r) {
    const Utterance* ref = manifest.find(refs.references[static_cast<std::size_t>(r)].first);
    if (!ref || !ref->mel) throw DataError("reference mel missing for " + utt.id);
    embeddings.push_back(
        models.style->encode(clipped_mel(*ref->mel, sc.max_ref_frames), false));
  }
  Var stacked = concat_rows(embeddings);
  Var e = sc.use_attention ? models.attention->aggregate(stacked) : aggregate_mean(stacked);
  return e->value;
}

// ---------------------------------------------------------------------------
// synthesis

namespace {

void save_alignment(const std::filesystem::path& path, const Matrix& alignment) {
  std::ostringstream ss;
  ss << "MRTTS-ALIGN 1\n";
  ss << "rows=" << alignment.rows() << " cols=" << alignment.cols() << "\n";
  for (Eigen::Index r = 0; r < alignment.rows(); ++r) {
    for (Eigen::Index c = 0; c < alignment.cols(); ++c) {
      if (c) ss << ' ';
      ss << format_double(alignment(r, c));
    }
    ss << '\n';
  }
  write_file(path, ss.str());
}

}  // namespace

SynthesisArtifacts synthesize(const std::string& text, const Checkpoint& ckpt,
                              const Manifest& manifest, const EmbeddingCache* cache,
                              const PipelineConfig& pc, const SystemConfig& sc,
                              const std::filesystem::path& out_dir, std::uint64_t seed) {
  sc.validate();
  const std::string normalized = normalize_text(text, pc.charset);
  if (normalized.empty()) throw EmptyTextError(text);

  const bool uses_refs = architecture_uses_style_encoder(sc.architecture);
  SystemModels models(pc, sc, uses_refs);
  restore_models(ckpt, models);

  SynthesisArtifacts artifacts;
  Var enc = models.acoustic.encode_text(models.vocab.encode(normalized), false);
  Var style_embedding;
  if (sc.architecture == Architecture::TpseGst) {
    style_embedding = models.acoustic.predict_style_from_text(enc);
  } else if (uses_refs) {
    if (!cache) throw ConfigMismatchError("reference selection needs the embedding cache");
    auto embedder = make_embedder(cache->embedder_name);
    Vector query = sentence_embedding(embedder->token_hidden_states(normalized), normalized);

    SelectionConfig sel;
    sel.n_references = sc.n_references;
    std::set<std::string> exclude;
    for (const auto& u : manifest.entries)
      if (u.text == normalized) exclude.insert(u.id);  // the text's own recording never leads
    ReferenceSet refs = select_references_for_vector(query, *cache, sel, exclude);
    artifacts.references = refs.references;

    std::vector<Var> ref_embeddings;
    for (const auto& [ref_id, _] : refs.references) {
      const Utterance* ref = manifest.find(ref_id);
      if (!ref || !ref->mel) throw DataError("reference mel missing: " + ref_id);
      Matrix ref_mel = clipped_mel(*ref->mel, sc.max_ref_frames);
      ref_embeddings.push_back(models.style->encode(ref_mel, false));
    }
    Var stacked = concat_rows(ref_embeddings);
    style_embedding =
        sc.use_attention ? models.attention->aggregate(stacked) : aggregate_mean(stacked);
  }

  Var memory = style_embedding ? models.acoustic.condition(enc, style_embedding) : enc;
  artifacts.result = models.acoustic.decode_free_running(memory);

  MelSpectrogram mel;
  mel.frames = artifacts.result.mel;
  mel.sample_rate = pc.features.sample_rate;
  mel.hop_length = pc.features.hop_length;
  mel.n_fft = pc.features.n_fft;

  char stem[64];
  std::snprintf(stem, sizeof(stem), "sample_%016llx",
                static_cast<unsigned long long>(
                    fnv1a64(normalized + "#" + std::to_string(seed))));
  std::filesystem::create_directories(out_dir);
  artifacts.mel_path = out_dir / (std::string(stem) + ".mel");
  artifacts.alignment_path = out_dir / (std::string(stem) + ".align");
  artifacts.wav_path = out_dir / (std::string(stem) + ".wav");

  save_mel(artifacts.mel_path, mel);
  save_alignment(artifacts.alignment_path, artifacts.result.alignment);
  auto wav = invert_mel(mel, pc.griffin_lim_iters, pc.features, derive_seed(seed, "glim"));
  write_wav(artifacts.wav_path, wav, pc.features.sample_rate);
  return artifacts;
}

// ---------------------------------------------------------------------------
// logs and config files

std::string format_records_log(const std::vector<TrainStepRecord>& records) {
  std::ostringstream ss;
  ss << "# step|l_mel|mse_term|mi_term|l_s|l_total|l_mi_estimator|stop_loss|attn\n";
  for (const auto& r : records) {
    ss << r.step << '|' << format_double(r.loss.l_mel) << '|' << format_double(r.loss.mse_term)
       << '|' << format_double(r.loss.mi_term) << '|' << format_double(r.loss.l_s) << '|'
       << format_double(r.loss.l_total) << '|' << format_double(r.loss.l_mi_estimator) << '|'
       << format_double(r.loss.stop_loss) << '|';
    if (r.attention_weights.empty()) {
      ss << '-';
    } else {
      for (std::size_t i = 0; i < r.attention_weights.size(); ++i) {
        if (i) ss << ',';
        ss << format_double(r.attention_weights[i]);
      }
    }
    ss << '\n';
  }
  return ss.str();
}

std::vector<TrainStepRecord> parse_records_log(const std::filesystem::path& path) {
  std::vector<TrainStepRecord> records;
  std::size_t lineno = 0;
  for (const auto& line : read_lines(path)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto fields = split(line, '|');
    if (fields.size() != 9) throw MalformedRecordError(path.string(), lineno, "bad record row");
    TrainStepRecord r;
    r.step = std::stol(fields[0]);
    r.loss.l_mel = parse_double(fields[1]);
    r.loss.mse_term = parse_double(fields[2]);
    r.loss.mi_term = parse_double(fields[3]);
    r.loss.l_s = parse_double(fields[4]);
    r.loss.l_total = parse_double(fields[5]);
    r.loss.l_mi_estimator = parse_double(fields[6]);
    r.loss.stop_loss = parse_double(fields[7]);
    if (fields[8] != "-")
      for (const auto& w : split(fields[8], ',')) r.attention_weights.push_back(parse_double(w));
    records.push_back(std::move(r));
  }
  return records;
}

std::string format_mi_trajectory(const std::vector<TrainStepRecord>& records) {
  std::ostringstream ss;
  for (const auto& r : records)
    ss << r.step << '|' << format_double(r.loss.l_mi_estimator) << '|'
       << format_double(r.loss.mi_term) << '\n';
  return ss.str();
}

KeyValueFile experiment_config_kv(const PipelineConfig& pc, const SystemConfig& sc) {
  KeyValueFile kv;
  kv.set("system", sc.system_id);
  kv.set("architecture", architecture_name(sc.architecture));
  kv.set("use_attention", sc.use_attention ? "1" : "0");
  kv.set("use_mse", sc.use_mse ? "1" : "0");
  kv.set("use_mi", sc.use_mi ? "1" : "0");
  kv.set("n_references", std::to_string(sc.n_references));
  kv.set("seed", std::to_string(sc.seed));
  kv.set("steps", std::to_string(sc.steps));
  kv.set("batch_size", std::to_string(sc.batch_size));
  kv.set("learning_rate", format_double(sc.learning_rate));
  kv.set("grad_clip", format_double(sc.grad_clip));
  kv.set("init_style_from_pretrained", sc.init_style_from_pretrained ? "1" : "0");
  kv.set("max_ref_frames", std::to_string(sc.max_ref_frames));

  kv.set("features.sample_rate", std::to_string(pc.features.sample_rate));
  kv.set("features.n_fft", std::to_string(pc.features.n_fft));
  kv.set("features.hop_length", std::to_string(pc.features.hop_length));
  kv.set("features.win_length", std::to_string(pc.features.win_length));
  kv.set("features.n_mels", std::to_string(pc.features.n_mels));
  kv.set("features.fmin", format_double(pc.features.fmin));
  kv.set("features.fmax", format_double(pc.features.fmax));
  kv.set("features.clip_floor", format_double(pc.features.clip_floor));

  kv.set("style.gru_hidden", std::to_string(pc.style.gru_hidden));
  kv.set("style.n_tokens", std::to_string(pc.style.n_tokens));
  kv.set("style.n_heads", std::to_string(pc.style.n_heads));
  kv.set("style.output_dim", std::to_string(pc.style.output_dim));

  kv.set("acoustic.char_embed_dim", std::to_string(pc.acoustic.char_embed_dim));
  kv.set("acoustic.encoder_dim", std::to_string(pc.acoustic.encoder_dim));
  kv.set("acoustic.decoder_dim", std::to_string(pc.acoustic.decoder_dim));
  kv.set("acoustic.attention_dim", std::to_string(pc.acoustic.attention_dim));
  kv.set("acoustic.prev_frame_dim", std::to_string(pc.acoustic.prev_frame_dim));
  kv.set("acoustic.reduction_factor", std::to_string(pc.acoustic.reduction_factor));
  kv.set("acoustic.max_decoder_steps", std::to_string(pc.acoustic.max_decoder_steps));

  kv.set("attention.query_dim", std::to_string(pc.attention.query_dim));
  kv.set("attention.key_dim", std::to_string(pc.attention.key_dim));
  kv.set("attention.value_dim", std::to_string(pc.attention.value_dim));
  kv.set("attention.pre_score_tanh", pc.attention.pre_score_tanh ? "1" : "0");

  kv.set("mi.hidden0", std::to_string(pc.mi.hidden.size() > 0 ? pc.mi.hidden[0] : 0));
  kv.set("mi.hidden1", std::to_string(pc.mi.hidden.size() > 1 ? pc.mi.hidden[1] : 0));
  kv.set("mi.learning_rate", format_double(pc.mi.learning_rate));
  kv.set("mi.inner_steps", std::to_string(pc.mi.inner_steps));
  kv.set("mi.use_adam", pc.mi.use_adam ? "1" : "0");

  kv.set("charset", pc.charset);
  kv.set("griffin_lim_iters", std::to_string(pc.griffin_lim_iters));
  return kv;
}

PipelineConfig pipeline_config_from_kv(const KeyValueFile& kv) {
  PipelineConfig pc;
  pc.features.sample_rate = static_cast<int>(kv.get_int("features.sample_rate", 22050));
  pc.features.n_fft = static_cast<int>(kv.get_int("features.n_fft", 1024));
  pc.features.hop_length = static_cast<int>(kv.get_int("features.hop_length", 256));
  pc.features.win_length = static_cast<int>(kv.get_int("features.win_length", 1024));
  pc.features.n_mels = static_cast<int>(kv.get_int("features.n_mels", 80));
  pc.features.fmin = kv.get_double("features.fmin", 0.0);
  pc.features.fmax = kv.get_double("features.fmax", 0.0);
  pc.features.clip_floor = kv.get_double("features.clip_floor", 1e-5);

  pc.style.gru_hidden = kv.get_int("style.gru_hidden", 128);
  pc.style.n_tokens = kv.get_int("style.n_tokens", 10);
  pc.style.n_heads = static_cast<int>(kv.get_int("style.n_heads", 4));
  pc.style.output_dim = kv.get_int("style.output_dim", 256);

  pc.acoustic.char_embed_dim = kv.get_int("acoustic.char_embed_dim", 64);
  pc.acoustic.encoder_dim = kv.get_int("acoustic.encoder_dim", 128);
  pc.acoustic.decoder_dim = kv.get_int("acoustic.decoder_dim", 256);
  pc.acoustic.attention_dim = kv.get_int("acoustic.attention_dim", 128);
  pc.acoustic.prev_frame_dim = kv.get_int("acoustic.prev_frame_dim", 64);
  pc.acoustic.reduction_factor = static_cast<int>(kv.get_int("acoustic.reduction_factor", 2));
  pc.acoustic.max_decoder_steps = static_cast<int>(kv.get_int("acoustic.max_decoder_steps", 200));

  pc.attention.query_dim = kv.get_int("attention.query_dim", 256);
  pc.attention.key_dim = kv.get_int("attention.key_dim", 256);
  pc.attention.value_dim = kv.get_int("attention.value_dim", 256);
  pc.attention.pre_score_tanh = kv.get_bool("attention.pre_score_tanh", false);

  pc.mi.hidden = {kv.get_int("mi.hidden0", 256), kv.get_int("mi.hidden1", 256)};
  pc.mi.learning_rate = kv.get_double("mi.learning_rate", 5e-4);
  pc.mi.inner_steps = static_cast<int>(kv.get_int("mi.inner_steps", 1));
  pc.mi.use_adam = kv.get_bool("mi.use_adam", true);

  pc.charset = kv.get("charset", kDefaultCharset);
  pc.griffin_lim_iters = static_cast<int>(kv.get_int("griffin_lim_iters", 32));
  return pc;
}

SystemConfig system_config_from_kv(const KeyValueFile& kv) {
  SystemConfig sc;
  const std::string id = kv.get("system", "custom");
  if (id != "custom" && id != "pretrain") sc = SystemConfig::named(id);
  sc.system_id = id;
  if (kv.has("architecture")) sc.architecture = architecture_from_name(kv.get("architecture"));
  sc.use_attention = kv.get_bool("use_attention", sc.use_attention);
  sc.use_mse = kv.get_bool("use_mse", sc.use_mse);
  sc.use_mi = kv.get_bool("use_mi", sc.use_mi);
  sc.n_references = static_cast<int>(kv.get_int("n_references", sc.n_references));
  sc.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long>(sc.seed)));
  sc.steps = static_cast<int>(kv.get_int("steps", sc.steps));
  sc.batch_size = static_cast<int>(kv.get_int("batch_size", sc.batch_size));
  sc.learning_rate = kv.get_double("learning_rate", sc.learning_rate);
  sc.grad_clip = kv.get_double("grad_clip", sc.grad_clip);
  sc.init_style_from_pretrained =
      kv.get_bool("init_style_from_pretrained", sc.init_style_from_pretrained);
  sc.max_ref_frames = static_cast<int>(kv.get_int("max_ref_frames", sc.max_ref_frames));
  return sc;
}

}  // namespace mrtts
