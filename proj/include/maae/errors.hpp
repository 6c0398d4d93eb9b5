#pragma once

#include <stdexcept>
#include <string>

namespace maae {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

#define MAAE_DEFINE_ERROR(Name)                                                \
    struct Name : Error {                                                      \
        using Error::Error;                                                    \
    }

// tensor engine
MAAE_DEFINE_ERROR(ShapeMismatch);
MAAE_DEFINE_ERROR(RankError);
MAAE_DEFINE_ERROR(EmptyOutput);
MAAE_DEFINE_ERROR(NotScalar);
MAAE_DEFINE_ERROR(DetachedTensor);

// backbone / dataset
MAAE_DEFINE_ERROR(BadDims);
MAAE_DEFINE_ERROR(LayoutError);
MAAE_DEFINE_ERROR(MissingMask);
MAAE_DEFINE_ERROR(EmptyDataset);

// file formats
MAAE_DEFINE_ERROR(BadMagic);
MAAE_DEFINE_ERROR(VersionMismatch);
MAAE_DEFINE_ERROR(TruncatedFile);
MAAE_DEFINE_ERROR(ChecksumMismatch);
MAAE_DEFINE_ERROR(IoError);

// scoring
MAAE_DEFINE_ERROR(DegenerateLabels);
MAAE_DEFINE_ERROR(EmptyMap);

// training / config
MAAE_DEFINE_ERROR(ConfigError);
MAAE_DEFINE_ERROR(ConfigMismatch);
MAAE_DEFINE_ERROR(CheckpointMismatch);
MAAE_DEFINE_ERROR(NonFiniteLoss);

#undef MAAE_DEFINE_ERROR

} // namespace maae
