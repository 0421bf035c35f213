#pragma once

#include <stdexcept>
#include <string>

namespace planesynth {

// Base for every error raised by the library. Callers that only care about
// "something in planesynth failed" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define PLANESYNTH_DEFINE_ERROR(Name)              \
  class Name : public Error {                      \
   public:                                         \
    using Error::Error;                            \
  }

PLANESYNTH_DEFINE_ERROR(NonPositiveDepth);
PLANESYNTH_DEFINE_ERROR(DegenerateHomography);
PLANESYNTH_DEFINE_ERROR(DimensionMismatch);
PLANESYNTH_DEFINE_ERROR(EmptyMask);
PLANESYNTH_DEFINE_ERROR(InvalidRange);
PLANESYNTH_DEFINE_ERROR(InvalidArgument);
PLANESYNTH_DEFINE_ERROR(BlockOutOfBounds);
PLANESYNTH_DEFINE_ERROR(TapeReuse);
PLANESYNTH_DEFINE_ERROR(NonFiniteGradient);
PLANESYNTH_DEFINE_ERROR(NonFiniteUpdate);
PLANESYNTH_DEFINE_ERROR(Diverged);
PLANESYNTH_DEFINE_ERROR(CameraInsideGeometry);
PLANESYNTH_DEFINE_ERROR(IoError);

#undef PLANESYNTH_DEFINE_ERROR

}  // namespace planesynth
