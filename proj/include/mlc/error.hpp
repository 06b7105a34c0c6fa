#pragma once

#include <stdexcept>
#include <string>

namespace mlc {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// tensor / graph
struct ShapeMismatch : Error { using Error::Error; };
struct UnsupportedOp : Error { using Error::Error; };
struct NonFinite : Error { using Error::Error; };
struct NotScalar : Error { using Error::Error; };
struct DetachedGraph : Error { using Error::Error; };

// model construction
struct GroupOverflow : Error { using Error::Error; };
struct IndivisibleSpatialDims : Error { using Error::Error; };

// loss / metrics
struct NonBinaryTarget : Error { using Error::Error; };
struct EmptyInput : Error { using Error::Error; };
struct NoPositives : Error { using Error::Error; };

// optimizer / schedule
struct OutOfRange : Error { using Error::Error; };
struct NonFiniteGrad : Error { using Error::Error; };

// data and file formats; everything below maps to the CLI's "data" exit code
struct DataError : Error { using Error::Error; };
struct BadMagic : DataError { using DataError::DataError; };
struct TruncatedFile : DataError { using DataError::DataError; };
struct DimOverflow : DataError { using DataError::DataError; };
struct UnknownLabel : DataError { using DataError::DataError; };
struct MissingImage : DataError { using DataError::DataError; };
struct DuplicateAcrossSplits : DataError { using DataError::DataError; };
struct InvalidSpec : DataError { using DataError::DataError; };
struct EmptyDataset : DataError { using DataError::DataError; };

// orchestration
struct ConfigError : Error { using Error::Error; };
struct CheckpointError : Error { using Error::Error; };
struct Divergence : Error { using Error::Error; };

}  // namespace mlc
