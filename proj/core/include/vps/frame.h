#pragma once

#include "vps/geometry.h"
#include "vps/image.h"
#include "vps/shading.h"

namespace vps {

struct Frame {
    double timestamp = 0.0;
    ColorImage color;
    DepthImage depth;
    Pose pose;
    bool has_pose = false;
    LightState light;
};

} // namespace vps
