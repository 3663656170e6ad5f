#pragma once

#include <stdexcept>
#include <string>

namespace sphereloss {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ZeroVectorError : Error { using Error::Error; };
struct DimensionMismatchError : Error { using Error::Error; };
struct ShapeMismatchError : Error { using Error::Error; };
struct LabelOutOfRangeError : Error { using Error::Error; };
struct NonFiniteInputError : Error { using Error::Error; };
struct UnsupportedRoleError : Error { using Error::Error; };
struct ConfigInvalidError : Error { using Error::Error; };
struct InsufficientSamplesError : Error { using Error::Error; };
struct EmptyFoldError : Error { using Error::Error; };
struct NoNegativesError : Error { using Error::Error; };
struct MissingGalleryIdentityError : Error { using Error::Error; };
struct StaleCacheError : Error { using Error::Error; };
struct ShapeInferenceError : Error { using Error::Error; };
struct ConfigParseError : Error { using Error::Error; };
struct NoRunsFoundError : Error { using Error::Error; };
struct DuplicateRunError : Error { using Error::Error; };

}  // namespace sphereloss
