#pragma once

#include <stdexcept>
#include <string>

namespace ufo {

// Error categories; the numeric values are the C API status codes.
enum class ErrorCode : int {
  kShape = 1,
  kConfig = 2,
  kDomain = 3,
  kIndex = 4,
  kUsage = 5,
  kIo = 6,
  kData = 7,
  kManifest = 8,
  kGeneration = 9,
  kNumeric = 10,
  kInternal = 99,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

#define UFO_DEFINE_ERROR(Name, Code, Prefix)                               \
  class Name : public Error {                                              \
   public:                                                                 \
    explicit Name(const std::string& what) : Error(Code, Prefix + what) {} \
  };

UFO_DEFINE_ERROR(ShapeError, ErrorCode::kShape, std::string("shape error: "))
UFO_DEFINE_ERROR(ConfigError, ErrorCode::kConfig, std::string("config error: "))
UFO_DEFINE_ERROR(DomainError, ErrorCode::kDomain, std::string("domain error: "))
UFO_DEFINE_ERROR(IndexError, ErrorCode::kIndex, std::string("index error: "))
UFO_DEFINE_ERROR(UsageError, ErrorCode::kUsage, std::string("usage error: "))
UFO_DEFINE_ERROR(IoError, ErrorCode::kIo, std::string("I/O error: "))
UFO_DEFINE_ERROR(DataError, ErrorCode::kData, std::string("data error: "))
UFO_DEFINE_ERROR(ManifestError, ErrorCode::kManifest, std::string("manifest error: "))
UFO_DEFINE_ERROR(GenerationError, ErrorCode::kGeneration, std::string("generation error: "))
UFO_DEFINE_ERROR(NumericError, ErrorCode::kNumeric, std::string("numeric error: "))

#undef UFO_DEFINE_ERROR

}  // namespace ufo
