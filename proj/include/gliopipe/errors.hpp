#pragma once

#include <stdexcept>
#include <string>

namespace gliopipe {

// Common base so callers can catch anything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// --- DICOM ingest ---
struct MissingMagic : Error { using Error::Error; };
struct UnsupportedTransferSyntax : Error { using Error::Error; };
struct TruncatedElement : Error { using Error::Error; };
struct InconsistentGeometry : Error { using Error::Error; };

// --- volume / transform math ---
struct DegenerateIntensities : Error { using Error::Error; };
struct ModeLabelMismatch : Error { using Error::Error; };
struct SingularTransform : Error { using Error::Error; };
struct InvalidLabel : Error { using Error::Error; };

// --- radiomics ---
struct EmptyMask : Error { using Error::Error; };
struct DegenerateMatrix : Error { using Error::Error; };

// --- evaluation ---
struct GridMismatch : Error { using Error::Error; };
struct EmptyMatrix : Error { using Error::Error; };
struct DegenerateSample : Error { using Error::Error; };

// --- pipeline / cli ---
struct AdapterFailure : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct EmptySession : Error { using Error::Error; };

// File-format problems (NIfTI, affine text, manifest JSON).
struct FormatError : Error { using Error::Error; };

}  // namespace gliopipe
