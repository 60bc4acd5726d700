#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mrtts/acoustic.hpp"
#include "mrtts/corpus.hpp"
#include "mrtts/mi.hpp"
#include "mrtts/multiref_attention.hpp"
#include "mrtts/semantics.hpp"
#include "mrtts/style_encoder.hpp"
#include "mrtts/util.hpp"

namespace mrtts {

enum class Architecture { Tacotron2, TpseGst, UMrtts, CMrtts };

std::string architecture_name(Architecture a);
Architecture architecture_from_name(const std::string& name);

// One row of the system matrix: which architecture, whether reference
// aggregation uses attention or the mean, which constraint terms are active,
// and how many references are drawn per target.
struct SystemConfig {
  std::string system_id = "custom";
  Architecture architecture = Architecture::CMrtts;
  bool use_attention = false;
  bool use_mse = false;
  bool use_mi = false;
  int n_references = 0;  // 0 when the architecture takes no references

  std::uint64_t seed = 1234;
  int steps = 300;
  int batch_size = 8;
  double learning_rate = 1e-3;
  double grad_clip = 1.0;
  bool init_style_from_pretrained = false;
  int max_ref_frames = 400;

  void validate() const;
  static SystemConfig named(const std::string& id);
  static const std::vector<std::string>& known_ids();
};

// Shared sub-module configuration for one experiment.
struct PipelineConfig {
  FeatureConfig features;
  StyleEncoderConfig style;
  AcousticConfig acoustic;
  MultiRefAttentionConfig attention;
  MITrainingConfig mi;
  std::string charset = kDefaultCharset;
  int griffin_lim_iters = 32;
};

struct LossBreakdown {
  double l_mel = 0.0;
  double mse_term = 0.0;
  double mi_term = 0.0;
  double l_s = 0.0;     // always mse_term - mi_term
  double l_total = 0.0; // always l_mel + l_s
  double l_mi_estimator = 0.0;
  double stop_loss = 0.0;  // optimized alongside, reported outside l_mel

  static LossBreakdown make(double l_mel, double mse_term, double mi_term,
                            double l_mi_estimator, double stop_loss);
};

struct TrainStepRecord {
  long step = 0;
  LossBreakdown loss;
  std::vector<double> attention_weights;  // batch-mean weight per reference slot
  double seconds = 0.0;                   // wall time; never serialized
};

struct Checkpoint {
  std::uint64_t config_hash = 0;
  long step = 0;
  // (name, is_buffer, tensor); names carry a module prefix like "style."
  std::vector<std::tuple<std::string, bool, Matrix>> tensors;
  std::vector<double> loss_tail;

  const Matrix* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<TrainStepRecord> records;
};

using StepSink = std::function<void(const TrainStepRecord&)>;

// Stage one: single-reference style-token training (the target's own audio is
// the reference). The resulting style encoder is the source of frozen target
// embeddings for constrained systems.
TrainResult pretrain_style_system(const Manifest& manifest, const PipelineConfig& pc,
                                  const SystemConfig& sc, const StepSink& sink = {});

// Stage two: one system of the matrix. `selection` is required for the
// multi-reference architectures, `pretrained` whenever a constraint term (or
// MI measurement) needs the frozen encoder.
TrainResult train_system(const Manifest& manifest, const SelectionIndex* selection,
                         const Checkpoint* pretrained, const PipelineConfig& pc,
                         const SystemConfig& sc, const StepSink& sink = {});

struct SynthesisArtifacts {
  SynthesisResult result;
  std::vector<std::pair<std::string, double>> references;  // empty for text-only systems
  std::filesystem::path mel_path, alignment_path, wav_path;
};

// Inference: embed the text, pick references from the training pool (never an
// utterance with identical text when exclusion is on), aggregate, decode
// free-running, invert to a waveform, and write the artifacts.
SynthesisArtifacts synthesize(const std::string& text, const Checkpoint& ckpt,
                              const Manifest& manifest, const EmbeddingCache* cache,
                              const PipelineConfig& pc, const SystemConfig& sc,
                              const std::filesystem::path& out_dir, std::uint64_t seed);

// Restores the stage-one style encoder from a checkpoint and freezes it.
FrozenStyleEncoder frozen_style_from_checkpoint(const Checkpoint& ckpt, const PipelineConfig& pc);

// A trained system rebuilt from its checkpoint for eval-mode queries.
class SystemRuntime {
 public:
  SystemRuntime(const Checkpoint& ckpt, const PipelineConfig& pc, const SystemConfig& sc);
  SystemRuntime(SystemRuntime&&) noexcept;
  ~SystemRuntime();

  // Predicted style embedding E (1 x style_dim) for one manifest utterance.
  // Reference-based architectures draw from the selection index.
  Matrix predicted_style(const Manifest& manifest, const Utterance& utt,
                         const SelectionIndex* selection) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// records.log / mi_trajectory.log serialization (deterministic: wall time is
// omitted so reruns with equal seeds produce byte-identical files)
std::string format_records_log(const std::vector<TrainStepRecord>& records);
std::vector<TrainStepRecord> parse_records_log(const std::filesystem::path& path);
std::string format_mi_trajectory(const std::vector<TrainStepRecord>& records);

// Canonical serialization of every tunable, hashed into run provenance.
KeyValueFile experiment_config_kv(const PipelineConfig& pc, const SystemConfig& sc);
PipelineConfig pipeline_config_from_kv(const KeyValueFile& kv);
SystemConfig system_config_from_kv(const KeyValueFile& kv);

}  // namespace mrtts
