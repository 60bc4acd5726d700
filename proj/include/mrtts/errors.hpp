#pragma once

#include <stdexcept>
#include <string>

namespace mrtts {

// Base class for every error raised by the library. The CLI maps these to
// exit code 2 (validation) or 3 (runtime) depending on the subtype.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Validation-type errors: bad inputs, bad files, violated preconditions.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Runtime-type errors: something went wrong while computing.
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

class MissingFileError : public ValidationError {
 public:
  explicit MissingFileError(const std::string& path)
      : ValidationError("missing file: " + path) {}
};

class MalformedRecordError : public ValidationError {
 public:
  MalformedRecordError(const std::string& path, std::size_t line, const std::string& why)
      : ValidationError(path + ":" + std::to_string(line) + ": malformed record: " + why) {}
};

class DuplicateIdError : public ValidationError {
 public:
  explicit DuplicateIdError(const std::string& id)
      : ValidationError("duplicate utterance id: " + id) {}
};

class EmptyAudioError : public ValidationError {
 public:
  EmptyAudioError() : ValidationError("empty audio buffer") {}
};

class SampleRateMismatchError : public ValidationError {
 public:
  SampleRateMismatchError(int got, int want)
      : ValidationError("sample rate mismatch: got " + std::to_string(got) +
                        ", config expects " + std::to_string(want)) {}
};

class IoError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

class EmbedderFailureError : public RuntimeFailure {
 public:
  explicit EmbedderFailureError(const std::string& what)
      : RuntimeFailure("embedder failure: " + what) {}
};

class EmptyTextError : public ValidationError {
 public:
  explicit EmptyTextError(const std::string& text)
      : ValidationError("no usable tokens in text: \"" + text + "\"") {}
};

class DimensionMismatchError : public ValidationError {
 public:
  explicit DimensionMismatchError(const std::string& what)
      : ValidationError("dimension mismatch: " + what) {}
};

class ZeroVectorError : public ValidationError {
 public:
  ZeroVectorError() : ValidationError("cosine similarity of a zero-norm vector") {}
};

class UnknownIdError : public ValidationError {
 public:
  explicit UnknownIdError(const std::string& id)
      : ValidationError("unknown utterance id: " + id) {}
};

class PoolTooSmallError : public ValidationError {
 public:
  PoolTooSmallError(std::size_t pool, std::size_t wanted)
      : ValidationError("candidate pool of " + std::to_string(pool) +
                        " cannot supply " + std::to_string(wanted) + " references") {}
};

class ShapeMismatchError : public ValidationError {
 public:
  explicit ShapeMismatchError(const std::string& what)
      : ValidationError("shape mismatch: " + what) {}
};

class NonFiniteError : public RuntimeFailure {
 public:
  explicit NonFiniteError(const std::string& where)
      : RuntimeFailure("non-finite value in " + where) {}
};

class BatchTooSmallError : public ValidationError {
 public:
  explicit BatchTooSmallError(std::size_t got)
      : ValidationError("batch of " + std::to_string(got) + " is too small (need >= 2)") {}
};

class VocabularyError : public ValidationError {
 public:
  explicit VocabularyError(const std::string& what)
      : ValidationError("vocabulary error: " + what) {}
};

class DataError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DivergenceDetectedError : public RuntimeFailure {
 public:
  explicit DivergenceDetectedError(std::size_t step)
      : RuntimeFailure("training diverged (non-finite loss) at step " + std::to_string(step)) {}
};

class ConfigMismatchError : public ValidationError {
 public:
  explicit ConfigMismatchError(const std::string& what)
      : ValidationError("config mismatch: " + what) {}
};

class AsrFailureError : public RuntimeFailure {
 public:
  explicit AsrFailureError(const std::string& id)
      : RuntimeFailure("ASR transcription failed for: " + id) {}
};

class MissingLogError : public ValidationError {
 public:
  explicit MissingLogError(const std::string& what)
      : ValidationError("missing or corrupt log: " + what) {}
};

class PreconditionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

}  // namespace mrtts
