#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mrtts/pipeline.hpp"

namespace mrtts {

struct WerCounts {
  long substitutions = 0;
  long deletions = 0;
  long insertions = 0;
  long ref_words = 0;
  double wer = 0.0;
};

// Minimal-edit-distance alignment with unit costs over whitespace tokens.
// Equal-cost paths resolve deterministically: substitution is preferred over
// a deletion+insertion pair, then deletion over insertion.
WerCounts wer(const std::vector<std::string>& reference, const std::vector<std::string>& hypothesis);
WerCounts wer(const std::string& reference, const std::string& hypothesis);

// Transcription backends. The mock returns its configured transcript map
// (echoing the reference when no map entry exists and echo mode is on); the
// http adapter posts WAV bytes to ASR_ENDPOINT with ASR_TOKEN auth.
class AsrAdapter {
 public:
  virtual ~AsrAdapter() = default;
  virtual std::string transcribe(const std::filesystem::path& wav,
                                 const std::string& utterance_id) = 0;
};

class MockAsrAdapter : public AsrAdapter {
 public:
  explicit MockAsrAdapter(std::map<std::string, std::string> transcript_by_id = {},
                          bool echo_reference = true);
  void set_reference(const std::string& id, const std::string& text);
  std::string transcribe(const std::filesystem::path& wav, const std::string& id) override;

 private:
  std::map<std::string, std::string> transcripts_;
  std::map<std::string, std::string> references_;
  bool echo_;
};

class HttpAsrAdapter : public AsrAdapter {
 public:
  // Falls back to the ASR_ENDPOINT / ASR_TOKEN environment variables.
  explicit HttpAsrAdapter(std::string endpoint = "", std::string token = "",
                          int timeout_seconds = 30);
  std::string transcribe(const std::filesystem::path& wav, const std::string& id) override;

 private:
  std::string endpoint_, token_;
  int timeout_seconds_;
};

struct EvalSample {
  std::string id;
  std::filesystem::path wav;
  std::string reference_text;
};

struct WerReport {
  struct Row {
    std::string id;
    WerCounts counts;
  };
  std::vector<Row> rows;
  std::vector<std::string> failed_ids;  // excluded from the aggregate
  WerCounts aggregate;                  // pooled (sums over rows), never a mean of rates
};

WerReport evaluate_content_quality(const std::vector<EvalSample>& samples, AsrAdapter& asr,
                                   const std::string& charset = kDefaultCharset);

std::string format_wer_report(const WerReport& report);

// Fig-3-style comparison: per-run estimated-MI series from mi_trajectory.log,
// tail-window means over the last fraction of steps, and the resulting order.
struct MiTrajectory {
  std::filesystem::path run_dir;
  std::vector<long> steps;
  std::vector<double> estimated_mi;  // the measurement estimator's value
  std::vector<double> mi_term;       // the loss contribution (0 when gated off)
  double tail_mean = 0.0;
};

struct MiComparison {
  std::vector<MiTrajectory> runs;
  std::vector<std::size_t> order;  // run indices, highest tail mean first
};

MiTrajectory load_mi_trajectory(const std::filesystem::path& run_dir, double tail_fraction = 0.2);
MiComparison compare_mi_trajectories(const std::vector<std::filesystem::path>& run_dirs,
                                     double tail_fraction = 0.2);

// Per-utterance distance between the system's predicted style embedding and
// the frozen encoder's target embedding.
struct EmbeddingDistanceRow {
  std::string id;
  double l2 = 0.0;
  double cosine = 0.0;
};

struct EmbeddingDistanceReport {
  std::vector<EmbeddingDistanceRow> rows;
  double mean_l2 = 0.0;
  double mean_cosine = 0.0;
};

EmbeddingDistanceReport embedding_distance_report(const Checkpoint& ckpt,
                                                  const Checkpoint& pretrained,
                                                  const Manifest& manifest,
                                                  const SelectionIndex* selection,
                                                  const PipelineConfig& pc,
                                                  const SystemConfig& sc);

}  // namespace mrtts
