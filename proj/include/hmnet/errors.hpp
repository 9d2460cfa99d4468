#pragma once

#include <stdexcept>
#include <string>

namespace hmnet {

// Error categories map onto CLI exit codes: config/usage -> 1, data -> 2,
// numeric/runtime -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

#define HMNET_DEFINE_ERROR(Name, Base)                        \
  class Name : public Base {                                  \
   public:                                                    \
    explicit Name(const std::string& what) : Base(#Name ": " + what) {} \
  };

// tensor-core / nn-blocks
HMNET_DEFINE_ERROR(ShapeMismatch, NumericError)
HMNET_DEFINE_ERROR(AllMasked, NumericError)
HMNET_DEFINE_ERROR(NotScalar, NumericError)
HMNET_DEFINE_ERROR(OddDimension, NumericError)
HMNET_DEFINE_ERROR(EmptyStack, NumericError)
HMNET_DEFINE_ERROR(ZeroLength, NumericError)

// hmnet-model
HMNET_DEFINE_ERROR(IdOutOfRange, DataError)
HMNET_DEFINE_ERROR(EmptyTurn, DataError)
HMNET_DEFINE_ERROR(TurnTooLong, DataError)
HMNET_DEFINE_ERROR(EmptyMeeting, DataError)
HMNET_DEFINE_ERROR(TooManyTurns, DataError)
HMNET_DEFINE_ERROR(UnknownRole, DataError)
HMNET_DEFINE_ERROR(EmptyPrefix, DataError)
HMNET_DEFINE_ERROR(PrefixTooLong, DataError)
HMNET_DEFINE_ERROR(TargetTooShort, DataError)

// data-pipeline
HMNET_DEFINE_ERROR(EmptyCorpus, DataError)
HMNET_DEFINE_ERROR(SchemaError, DataError)
HMNET_DEFINE_ERROR(EmptyArticle, DataError)

// training
HMNET_DEFINE_ERROR(NonFiniteGradient, NumericError)
HMNET_DEFINE_ERROR(EmptyBatch, DataError)
HMNET_DEFINE_ERROR(VersionMismatch, DataError)
HMNET_DEFINE_ERROR(CorruptCheckpoint, DataError)
HMNET_DEFINE_ERROR(IoError, DataError)

// decoding / evaluation
HMNET_DEFINE_ERROR(EmptyHypothesis, NumericError)
HMNET_DEFINE_ERROR(TooShort, DataError)
HMNET_DEFINE_ERROR(EmptyTranscript, DataError)
HMNET_DEFINE_ERROR(EmptyPool, DataError)

// cli
HMNET_DEFINE_ERROR(ConfigParseError, ConfigError)
HMNET_DEFINE_ERROR(ValidationError, ConfigError)

#undef HMNET_DEFINE_ERROR

}  // namespace hmnet
