#pragma once

#include <stdexcept>
#include <string>

namespace sdc {

/// Invalid experiment configuration: bad flags, malformed config files,
/// hyperparameters outside their domain.
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Unreadable or corrupt external data: datasets, checkpoints.
struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace sdc
