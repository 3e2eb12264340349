#pragma once

#include <stdexcept>
#include <string>

namespace vps {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or missing dataset files (rgb.txt/depth.txt, images, trajectories).
struct DatasetError : Error {
    using Error::Error;
};

// Thrown by track_frame when fewer than the minimum number of depth points
// land inside the populated volume.
struct TrackingLost : Error {
    using Error::Error;
};

// Non-finite energy or parameters during optimization.
struct NumericalError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

} // namespace vps
