#include "micronet/inference.hpp"

#include <algorithm>

#include "micronet/preprocess.hpp"

namespace micronet::inference {

Image predict_probabilities(nn::Network& net, const Image& image) {
  const int crop = net.graph().crop;
  ImageSample sample;
  sample.channels = image;
  const std::vector<preprocess::Patch> tiles = preprocess::tile_patches(sample, crop);
  Image out(2, image.height, image.width);
  for (const auto& tile : tiles) {
    const Image p = nn::infer(net, tile.image)[0];
    const int rows = std::min(crop, image.height - tile.top);
    const int cols = std::min(crop, image.width - tile.left);
    for (int c = 0; c < 2; ++c)
      for (int y = 0; y < rows; ++y)
        std::copy_n(p.plane(c) + static_cast<std::size_t>(y) * crop, cols, &out.at(c, tile.top + y, tile.left));
  }
  return out;
}

InstanceMask segment(nn::Network& net, const Image& image, const postprocess::PostprocessParams& params) {
  return postprocess::clean(postprocess::binarize(predict_probabilities(net, image)), params);
}

}  // namespace micronet::inference
