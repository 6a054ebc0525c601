#pragma once

#include <stdexcept>
#include <string>

namespace advaudio {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define ADVAUDIO_ERROR(Name)              \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  }

// audio-core
ADVAUDIO_ERROR(FormatError);
ADVAUDIO_ERROR(UnsupportedFormat);
ADVAUDIO_ERROR(IoError);
ADVAUDIO_ERROR(RateMismatch);
ADVAUDIO_ERROR(BandError);

// phoneme-bank
ADVAUDIO_ERROR(SilentInput);
ADVAUDIO_ERROR(EmptyCorpus);

// oracle
ADVAUDIO_ERROR(TrainError);
ADVAUDIO_ERROR(OracleUnavailable);
ADVAUDIO_ERROR(AuthError);
ADVAUDIO_ERROR(RequestError);

// attack-engine
ADVAUDIO_ERROR(BadCarrier);
ADVAUDIO_ERROR(InitFailed);
ADVAUDIO_ERROR(BudgetExhausted);

// shared
ADVAUDIO_ERROR(ArgumentError);
ADVAUDIO_ERROR(ConfigError);

#undef ADVAUDIO_ERROR

}  // namespace advaudio
