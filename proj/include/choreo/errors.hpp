#pragma once

#include <stdexcept>
#include <string>

namespace choreo {

// Base for everything thrown on purpose by the library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define CHOREO_DEFINE_ERROR(Name)                                  \
  struct Name : Error {                                            \
    explicit Name(const std::string& msg) : Error(msg) {}          \
  }

// motion core
CHOREO_DEFINE_ERROR(DegenerateRotation);
CHOREO_DEFINE_ERROR(NotARotation);
CHOREO_DEFINE_ERROR(SequenceTooShort);
CHOREO_DEFINE_ERROR(BadShape);
CHOREO_DEFINE_ERROR(BadSkeleton);

// synth data
CHOREO_DEFINE_ERROR(BadDuration);
CHOREO_DEFINE_ERROR(IoFailure);

// diffusion
CHOREO_DEFINE_ERROR(BadSteps);
CHOREO_DEFINE_ERROR(ShapeMismatch);
CHOREO_DEFINE_ERROR(BadStep);
CHOREO_DEFINE_ERROR(BadStepPair);
CHOREO_DEFINE_ERROR(MissingEncoder);
CHOREO_DEFINE_ERROR(UntrainedModel);

// model
CHOREO_DEFINE_ERROR(TooManyDancers);
CHOREO_DEFINE_ERROR(TooFewDancers);
CHOREO_DEFINE_ERROR(BadConfig);

// contrastive
CHOREO_DEFINE_ERROR(InsufficientDonors);

// trainer / checkpoints
CHOREO_DEFINE_ERROR(NonFiniteLoss);
CHOREO_DEFINE_ERROR(VersionMismatch);
CHOREO_DEFINE_ERROR(CorruptCheckpoint);

// longform
CHOREO_DEFINE_ERROR(AudioTooShort);

// metrics
CHOREO_DEFINE_ERROR(BadMatrix);
CHOREO_DEFINE_ERROR(TooFewSamples);
CHOREO_DEFINE_ERROR(NumericalFailure);
CHOREO_DEFINE_ERROR(NoBeats);

#undef CHOREO_DEFINE_ERROR

}  // namespace choreo
