#pragma once

#include <stdexcept>
#include <string>

namespace vigicaps {

// Error categories map to CLI exit codes: Usage=2, Io=3, Domain=4.
enum class ErrorKind { Usage, Io, Domain };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

#define VIGICAPS_DEFINE_ERROR(Name, Kind)                                    \
  class Name final : public Error {                                          \
   public:                                                                   \
    explicit Name(const std::string& what) : Error(Kind, #Name ": " + what) {} \
  };

VIGICAPS_DEFINE_ERROR(ZeroTotalDuration, ErrorKind::Domain)
VIGICAPS_DEFINE_ERROR(InvalidConfig, ErrorKind::Domain)
VIGICAPS_DEFINE_ERROR(FormatError, ErrorKind::Io)
VIGICAPS_DEFINE_ERROR(ChannelMismatch, ErrorKind::Io)
VIGICAPS_DEFINE_ERROR(IoError, ErrorKind::Io)
VIGICAPS_DEFINE_ERROR(NonIntegerDecimation, ErrorKind::Domain)
VIGICAPS_DEFINE_ERROR(WrongSampleRate, ErrorKind::Domain)
VIGICAPS_DEFINE_ERROR(TooShort, ErrorKind::Domain)
VIGICAPS_DEFINE_ERROR(DimensionMismatch, ErrorKind::Domain)
VIGICAPS_DEFINE_ERROR(ShapeMismatch, ErrorKind::Domain)
VIGICAPS_DEFINE_ERROR(DoubleBackward, ErrorKind::Domain)
VIGICAPS_DEFINE_ERROR(NonScalarOutput, ErrorKind::Domain)
VIGICAPS_DEFINE_ERROR(EmptyBatch, ErrorKind::Domain)
VIGICAPS_DEFINE_ERROR(ZeroVariance, ErrorKind::Domain)
VIGICAPS_DEFINE_ERROR(TooFewSamples, ErrorKind::Domain)
VIGICAPS_DEFINE_ERROR(TooFewParticipants, ErrorKind::Domain)
VIGICAPS_DEFINE_ERROR(DegenerateGroups, ErrorKind::Domain)

#undef VIGICAPS_DEFINE_ERROR

}  // namespace vigicaps
