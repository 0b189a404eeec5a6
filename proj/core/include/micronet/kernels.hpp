#pragma once

// Single-image compute kernels behind the graph executor. All buffers are
// channel-major (C, H, W). Backward routines accumulate into their outputs.

#include <cstdint>
#include <vector>

namespace micronet::nn::kernels {

struct ConvGeometry {
  int in_channels = 0;
  int in_height = 0;
  int in_width = 0;
  int out_channels = 0;
  int kernel = 1;
  int pad = 0;
  int out_height() const { return in_height + 2 * pad - kernel + 1; }
  int out_width() const { return in_width + 2 * pad - kernel + 1; }
};

/// weight: (Co, Ci, k, k); bias: Co.
void conv_forward(const ConvGeometry& g, const double* in, const double* weight, const double* bias, double* out,
                  std::vector<double>& scratch);
void conv_backward(const ConvGeometry& g, const double* in, const double* weight, const double* dout, double* din,
                   double* dweight, double* dbias, std::vector<double>& scratch);

struct DeconvGeometry {
  int in_channels = 0;
  int in_height = 0;
  int in_width = 0;
  int out_channels = 0;
  int kernel = 2;
  int stride = 2;
  int out_height() const { return (in_height - 1) * stride + kernel; }
  int out_width() const { return (in_width - 1) * stride + kernel; }
};

/// Transposed convolution without padding. weight: (Ci, Co, k, k); bias: Co.
void deconv_forward(const DeconvGeometry& g, const double* in, const double* weight, const double* bias, double* out,
                    std::vector<double>& scratch);
void deconv_backward(const DeconvGeometry& g, const double* in, const double* weight, const double* dout,
                     double* din, double* dweight, double* dbias, std::vector<double>& scratch);

/// 2x2 max-pooling with floor semantics; `argmax` receives the flat (c, y, x) input
/// index of each output. Ties keep the first element in raster order.
void maxpool2_forward(int channels, int h, int w, const double* in, double* out, std::int32_t* argmax);
void maxpool2_backward(int channels, int out_h, int out_w, const std::int32_t* argmax, const double* dout,
                       double* din);

/// Dense (dst x src) bicubic interpolation matrix, half-pixel centres, a = -0.75,
/// border taps clamped to the edge.
std::vector<double> bicubic_matrix(int src, int dst);

/// out_c = Ry * in_c * Rx^T for every channel.
void resize_forward(int channels, int h, int w, int th, int tw, const std::vector<double>& ry,
                    const std::vector<double>& rx, const double* in, double* out);
void resize_backward(int channels, int h, int w, int th, int tw, const std::vector<double>& ry,
                     const std::vector<double>& rx, const double* dout, double* din);

}  // namespace micronet::nn::kernels
