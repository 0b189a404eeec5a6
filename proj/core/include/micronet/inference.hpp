#pragma once

#include "micronet/image.hpp"
#include "micronet/network.hpp"
#include "micronet/postprocess.hpp"

namespace micronet::inference {

/// Main-output probabilities (2 x H x W) for an image of any size: mirror-pads to
/// whole crop tiles, runs each tile in eval mode, stitches, and crops back.
Image predict_probabilities(nn::Network& net, const Image& image);

/// predict_probabilities -> binarize -> clean.
InstanceMask segment(nn::Network& net, const Image& image, const postprocess::PostprocessParams& params);

}  // namespace micronet::inference
