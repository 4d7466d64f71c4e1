#pragma once

#include <stdexcept>
#include <string>

namespace tonguesync {

// Categories map onto CLI exit codes: validation-like errors exit 2,
// data errors exit 3, numeric failures exit 4.
enum class ErrorKind {
  kFormat,
  kValidation,
  kIo,
  kShape,
  kRange,
  kEmptyData,
  kTruncation,
  kNumeric,
  kCapacity,
  kPrecondition,
  kConflict,
  kLimit,
  kSequence,
  kUnsyncable,
  kNotFound,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define TONGUESYNC_DEFINE_ERROR(Name, Kind)                                  \
  class Name : public Error {                                                \
   public:                                                                   \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  }

TONGUESYNC_DEFINE_ERROR(FormatError, kFormat);
TONGUESYNC_DEFINE_ERROR(ValidationError, kValidation);
TONGUESYNC_DEFINE_ERROR(IoError, kIo);
TONGUESYNC_DEFINE_ERROR(ShapeError, kShape);
TONGUESYNC_DEFINE_ERROR(RangeError, kRange);
TONGUESYNC_DEFINE_ERROR(EmptyDataError, kEmptyData);
TONGUESYNC_DEFINE_ERROR(NumericError, kNumeric);
TONGUESYNC_DEFINE_ERROR(CapacityError, kCapacity);
TONGUESYNC_DEFINE_ERROR(PreconditionError, kPrecondition);
TONGUESYNC_DEFINE_ERROR(ConflictError, kConflict);
TONGUESYNC_DEFINE_ERROR(LimitError, kLimit);
TONGUESYNC_DEFINE_ERROR(SequenceError, kSequence);
TONGUESYNC_DEFINE_ERROR(UnsyncableError, kUnsyncable);
TONGUESYNC_DEFINE_ERROR(NotFoundError, kNotFound);

#undef TONGUESYNC_DEFINE_ERROR

/// Raised by parse_ult when the buffer is not a whole number of frames.
class TruncationError : public Error {
 public:
  TruncationError(const std::string& what, std::size_t remainder)
      : Error(ErrorKind::kTruncation, what), remainder_(remainder) {}
  std::size_t remainder() const noexcept { return remainder_; }

 private:
  std::size_t remainder_;
};

}  // namespace tonguesync
