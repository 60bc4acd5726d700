#include "mrtts/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <sstream>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "mrtts/errors.hpp"
#include "mrtts/util.hpp"

namespace mrtts {

WerCounts wer(const std::vector<std::string>& reference,
              const std::vector<std::string>& hypothesis) {
  if (reference.empty()) throw PreconditionError("WER reference must be non-empty");
  const std::size_t n = reference.size(), m = hypothesis.size();

  // dp over prefix lengths; backtrace prefers substitution, then deletion
  std::vector<std::vector<long>> dp(n + 1, std::vector<long>(m + 1, 0));
  for (std::size_t i = 0; i <= n; ++i) dp[i][0] = static_cast<long>(i);
  for (std::size_t j = 0; j <= m; ++j) dp[0][j] = static_cast<long>(j);
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j) {
      const long sub = dp[i - 1][j - 1] + (reference[i - 1] == hypothesis[j - 1] ? 0 : 1);
      const long del = dp[i - 1][j] + 1;
      const long ins = dp[i][j - 1] + 1;
      dp[i][j] = std::min({sub, del, ins});
    }

  WerCounts c;
  c.ref_words = static_cast<long>(n);
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool match = reference[i - 1] == hypothesis[j - 1];
      const long sub = dp[i - 1][j - 1] + (match ? 0 : 1);
      if (dp[i][j] == sub) {
        if (!match) ++c.substitutions;
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && dp[i][j] == dp[i - 1][j] + 1) {
      ++c.deletions;
      --i;
      continue;
    }
    ++c.insertions;
    --j;
  }
  c.wer = static_cast<double>(c.substitutions + c.deletions + c.insertions) /
          static_cast<double>(c.ref_words);
  return c;
}

WerCounts wer(const std::string& reference, const std::string& hypothesis) {
  return wer(split_words(reference), split_words(hypothesis));
}

MockAsrAdapter::MockAsrAdapter(std::map<std::string, std::string> transcript_by_id,
                               bool echo_reference)
    : transcripts_(std::move(transcript_by_id)), echo_(echo_reference) {}

void MockAsrAdapter::set_reference(const std::string& id, const std::string& text) {
  references_[id] = text;
}

std::string MockAsrAdapter::transcribe(const std::filesystem::path&, const std::string& id) {
  auto it = transcripts_.find(id);
  if (it != transcripts_.end()) return it->second;
  if (echo_) {
    auto ref = references_.find(id);
    if (ref != references_.end()) return ref->second;
  }
  throw AsrFailureError(id);
}

HttpAsrAdapter::HttpAsrAdapter(std::string endpoint, std::string token, int timeout_seconds)
    : endpoint_(std::move(endpoint)), token_(std::move(token)),
      timeout_seconds_(timeout_seconds) {
  if (endpoint_.empty()) {
    const char* env = std::getenv("ASR_ENDPOINT");
    if (env) endpoint_ = env;
  }
  if (token_.empty()) {
    const char* env = std::getenv("ASR_TOKEN");
    if (env) token_ = env;
  }
  if (endpoint_.empty())
    throw ConfigMismatchError("no ASR endpoint (flag or ASR_ENDPOINT environment variable)");
}

std::string HttpAsrAdapter::transcribe(const std::filesystem::path& wav, const std::string& id) {
  const std::string prefix = "http://";
  if (endpoint_.rfind(prefix, 0) != 0)
    throw ConfigMismatchError("ASR endpoint must be http:// (got " + endpoint_ + ")");
  auto path_pos = endpoint_.find('/', prefix.size());
  const std::string host = endpoint_.substr(0, path_pos);
  const std::string path = path_pos == std::string::npos ? "/" : endpoint_.substr(path_pos);

  std::string body;
  try {
    body = read_file(wav);
  } catch (const Error&) {
    throw AsrFailureError(id + " (cannot read " + wav.string() + ")");
  }

  httplib::Client client(host);
  client.set_connection_timeout(timeout_seconds_);
  client.set_read_timeout(timeout_seconds_);
  httplib::Headers headers;
  if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
  auto res = client.Post(path, headers, body, "audio/wav");
  if (!res || res->status != 200) throw AsrFailureError(id);

  // accept {"text": "..."} or a raw transcript body
  std::string transcript = res->body;
  try {
    auto parsed = nlohmann::json::parse(res->body);
    if (parsed.contains("text")) transcript = parsed["text"].get<std::string>();
  } catch (const nlohmann::json::exception&) {
  }
  if (trim(transcript).empty()) throw AsrFailureError(id);
  return transcript;
}

WerReport evaluate_content_quality(const std::vector<EvalSample>& samples, AsrAdapter& asr,
                                   const std::string& charset) {
  WerReport report;
  long s = 0, d = 0, ins = 0, ref_words = 0;
  for (const auto& sample : samples) {
    std::string hyp;
    try {
      hyp = asr.transcribe(sample.wav, sample.id);
    } catch (const AsrFailureError&) {
      report.failed_ids.push_back(sample.id);
      continue;
    }
    const std::string ref_norm = normalize_text(sample.reference_text, charset);
    const std::string hyp_norm = normalize_text(hyp, charset);
    WerReport::Row row;
    row.id = sample.id;
    row.counts = wer(split_words(ref_norm), split_words(hyp_norm));
    s += row.counts.substitutions;
    d += row.counts.deletions;
    ins += row.counts.insertions;
    ref_words += row.counts.ref_words;
    report.rows.push_back(std::move(row));
  }
  report.aggregate.substitutions = s;
  report.aggregate.deletions = d;
  report.aggregate.insertions = ins;
  report.aggregate.ref_words = ref_words;
  report.aggregate.wer =
      ref_words > 0 ? static_cast<double>(s + d + ins) / static_cast<double>(ref_words) : 0.0;
  return report;
}

std::string format_wer_report(const WerReport& report) {
  std::ostringstream ss;
  ss << "# id|S|D|I|ref_words|wer\n";
  for (const auto& row : report.rows)
    ss << row.id << '|' << row.counts.substitutions << '|' << row.counts.deletions << '|'
       << row.counts.insertions << '|' << row.counts.ref_words << '|'
       << format_double(row.counts.wer) << '\n';
  for (const auto& id : report.failed_ids) ss << id << "|ASR_FAILURE\n";
  ss << "aggregate|" << report.aggregate.substitutions << '|' << report.aggregate.deletions << '|'
     << report.aggregate.insertions << '|' << report.aggregate.ref_words << '|'
     << format_double(report.aggregate.wer);
  if (!report.failed_ids.empty()) ss << "|excluded=" << report.failed_ids.size();
  ss << '\n';
  return ss.str();
}

MiTrajectory load_mi_trajectory(const std::filesystem::path& run_dir, double tail_fraction) {
  const auto path = run_dir / "mi_trajectory.log";
  if (!std::filesystem::exists(path)) throw MissingLogError(path.string());
  MiTrajectory t;
  t.run_dir = run_dir;
  std::size_t lineno = 0;
  for (const auto& line : read_lines(path)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto fields = split(line, '|');
    if (fields.size() != 3)
      throw MissingLogError(path.string() + ":" + std::to_string(lineno) + " malformed row");
    const double est = parse_double(fields[1]);
    const double term = parse_double(fields[2]);
    if (!std::isfinite(est) || !std::isfinite(term))
      throw MissingLogError(path.string() + ":" + std::to_string(lineno) + " non-finite value");
    t.steps.push_back(std::stol(fields[0]));
    t.estimated_mi.push_back(est);
    t.mi_term.push_back(term);
  }
  if (t.steps.empty()) throw MissingLogError(path.string() + " has no rows");

  const auto n = t.estimated_mi.size();
  auto tail = static_cast<std::size_t>(std::ceil(tail_fraction * static_cast<double>(n)));
  tail = std::max<std::size_t>(1, std::min(tail, n));
  t.tail_mean = std::accumulate(t.estimated_mi.end() - static_cast<long>(tail),
                                t.estimated_mi.end(), 0.0) /
                static_cast<double>(tail);
  return t;
}

MiComparison compare_mi_trajectories(const std::vector<std::filesystem::path>& run_dirs,
                                     double tail_fraction) {
  MiComparison cmp;
  for (const auto& dir : run_dirs) cmp.runs.push_back(load_mi_trajectory(dir, tail_fraction));
  cmp.order.resize(cmp.runs.size());
  std::iota(cmp.order.begin(), cmp.order.end(), 0);
  std::stable_sort(cmp.order.begin(), cmp.order.end(), [&](std::size_t a, std::size_t b) {
    return cmp.runs[a].tail_mean > cmp.runs[b].tail_mean;
  });
  return cmp;
}

EmbeddingDistanceReport embedding_distance_report(const Checkpoint& ckpt,
                                                  const Checkpoint& pretrained,
                                                  const Manifest& manifest,
                                                  const SelectionIndex* selection,
                                                  const PipelineConfig& pc,
                                                  const SystemConfig& sc) {
  SystemRuntime runtime(ckpt, pc, sc);
  FrozenStyleEncoder frozen = frozen_style_from_checkpoint(pretrained, pc);

  EmbeddingDistanceReport report;
  double sum_l2 = 0.0, sum_cos = 0.0;
  for (const auto& utt : manifest.entries) {
    if (!utt.mel) throw DataError("mel not extracted for utterance " + utt.id);
    Matrix e = runtime.predicted_style(manifest, utt, selection);
    Matrix e_prime = frozen.encode(utt.mel->frames);
    EmbeddingDistanceRow row;
    row.id = utt.id;
    row.l2 = (e - e_prime).norm();
    row.cosine = cosine_similarity(e.row(0).transpose(), e_prime.row(0).transpose());
    sum_l2 += row.l2;
    sum_cos += row.cosine;
    report.rows.push_back(std::move(row));
  }
  const auto n = static_cast<double>(report.rows.size());
  report.mean_l2 = sum_l2 / n;
  report.mean_cosine = sum_cos / n;
  return report;
}

}  // namespace mrtts
