#include "micronet/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>

namespace micronet::nn::kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

// Column buffers are chunked to stay cache-resident (256 KiB of doubles).
constexpr std::size_t kScratchBudget = std::size_t{1} << 15;

int rows_per_chunk(std::size_t rows_of_cols, int row_width, int total_rows) {
  const std::size_t per_row = std::max<std::size_t>(1, rows_of_cols * static_cast<std::size_t>(row_width));
  const auto r = static_cast<int>(std::max<std::size_t>(1, kScratchBudget / per_row));
  return std::min(r, total_rows);
}

// Gathers the (Ci*k*k) x (rows*Wo) patch matrix for output rows [r0, r0+rows).
void im2col(const ConvGeometry& g, const double* in, int r0, int rows, double* cols) {
  const int wo = g.out_width();
  const std::size_t ncols = static_cast<std::size_t>(rows) * wo;
  const std::size_t plane = static_cast<std::size_t>(g.in_height) * g.in_width;
  for (int ci = 0; ci < g.in_channels; ++ci) {
    const double* src = in + ci * plane;
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        double* dst = cols + ((static_cast<std::size_t>(ci) * g.kernel + ky) * g.kernel + kx) * ncols;
        for (int r = 0; r < rows; ++r) {
          const int iy = r0 + r + ky - g.pad;
          double* drow = dst + static_cast<std::size_t>(r) * wo;
          if (iy < 0 || iy >= g.in_height) {
            std::fill(drow, drow + wo, 0.0);
            continue;
          }
          const double* srow = src + static_cast<std::size_t>(iy) * g.in_width;
          const int x_lo = std::max(0, g.pad - kx);
          const int x_hi = std::min(wo, g.in_width + g.pad - kx);
          std::fill(drow, drow + x_lo, 0.0);
          if (x_hi > x_lo) std::memcpy(drow + x_lo, srow + x_lo + kx - g.pad, sizeof(double) * (x_hi - x_lo));
          std::fill(drow + std::max(x_hi, x_lo), drow + wo, 0.0);
        }
      }
    }
  }
}

}  // namespace

namespace {

// out (+)= W * im2col(in) + bias, row-chunked.
void conv_apply(const ConvGeometry& g, const double* in, const double* weight, const double* bias, double* out,
                bool accumulate, std::vector<double>& scratch) {
  const int ho = g.out_height();
  const int wo = g.out_width();
  const std::size_t k = static_cast<std::size_t>(g.in_channels) * g.kernel * g.kernel;
  const std::size_t out_plane = static_cast<std::size_t>(ho) * wo;
  Eigen::Map<const RowMat> w(weight, g.out_channels, static_cast<Eigen::Index>(k));
  const int chunk = rows_per_chunk(k, wo, ho);
  for (int r0 = 0; r0 < ho; r0 += chunk) {
    const int rows = std::min(chunk, ho - r0);
    const auto ncols = static_cast<Eigen::Index>(rows) * wo;
    scratch.resize(k * static_cast<std::size_t>(ncols));
    im2col(g, in, r0, rows, scratch.data());
    Eigen::Map<const RowMat> cols(scratch.data(), static_cast<Eigen::Index>(k), ncols);
    StridedMap o(out + static_cast<std::size_t>(r0) * wo, g.out_channels, ncols,
                 Eigen::OuterStride<>(static_cast<Eigen::Index>(out_plane)));
    if (accumulate) {
      o.noalias() += w * cols;
    } else {
      o.noalias() = w * cols;
    }
    if (bias != nullptr) o.colwise() += Eigen::Map<const Eigen::VectorXd>(bias, g.out_channels);
  }
}

}  // namespace

void conv_forward(const ConvGeometry& g, const double* in, const double* weight, const double* bias, double* out,
                  std::vector<double>& scratch) {
  conv_apply(g, in, weight, bias, out, false, scratch);
}

void conv_backward(const ConvGeometry& g, const double* in, const double* weight, const double* dout, double* din,
                   double* dweight, double* dbias, std::vector<double>& scratch) {
  const int ho = g.out_height();
  const int wo = g.out_width();
  const std::size_t k = static_cast<std::size_t>(g.in_channels) * g.kernel * g.kernel;
  const std::size_t out_plane = static_cast<std::size_t>(ho) * wo;
  Eigen::Map<RowMat> dw(dweight, g.out_channels, static_cast<Eigen::Index>(k));
  for (int co = 0; co < g.out_channels; ++co) {
    const double* d = dout + co * out_plane;
    double acc = 0.0;
    for (std::size_t p = 0; p < out_plane; ++p) acc += d[p];
    dbias[co] += acc;
  }
  const int chunk = rows_per_chunk(k, wo, ho);
  for (int r0 = 0; r0 < ho; r0 += chunk) {
    const int rows = std::min(chunk, ho - r0);
    const auto ncols = static_cast<Eigen::Index>(rows) * wo;
    scratch.resize(k * static_cast<std::size_t>(ncols));
    im2col(g, in, r0, rows, scratch.data());
    Eigen::Map<const RowMat> cols(scratch.data(), static_cast<Eigen::Index>(k), ncols);
    ConstStridedMap d(dout + static_cast<std::size_t>(r0) * wo, g.out_channels, ncols,
                      Eigen::OuterStride<>(static_cast<Eigen::Index>(out_plane)));
    dw.noalias() += d * cols.transpose();
  }
  if (din == nullptr) return;
  // The input gradient is a convolution of dout with the spatially flipped,
  // channel-transposed kernel and complementary padding.
  const int kk = g.kernel;
  std::vector<double> flipped(static_cast<std::size_t>(g.in_channels) * g.out_channels * kk * kk);
  for (int co = 0; co < g.out_channels; ++co)
    for (int ci = 0; ci < g.in_channels; ++ci)
      for (int ky = 0; ky < kk; ++ky)
        for (int kx = 0; kx < kk; ++kx)
          flipped[((static_cast<std::size_t>(ci) * g.out_channels + co) * kk + (kk - 1 - ky)) * kk + (kk - 1 - kx)] =
              weight[((static_cast<std::size_t>(co) * g.in_channels + ci) * kk + ky) * kk + kx];
  ConvGeometry back;
  back.in_channels = g.out_channels;
  back.in_height = ho;
  back.in_width = wo;
  back.out_channels = g.in_channels;
  back.kernel = kk;
  back.pad = kk - 1 - g.pad;
  conv_apply(back, dout, flipped.data(), nullptr, din, true, scratch);
}

void deconv_forward(const DeconvGeometry& g, const double* in, const double* weight, const double* bias, double* out,
                    std::vector<double>& scratch) {
  const int ho = g.out_height();
  const int wo = g.out_width();
  const int k = g.kernel;
  const int s = g.stride;
  const std::size_t kk = static_cast<std::size_t>(g.out_channels) * k * k;
  const std::size_t in_plane = static_cast<std::size_t>(g.in_height) * g.in_width;
  const std::size_t out_plane = static_cast<std::size_t>(ho) * wo;
  std::fill(out, out + out_plane * g.out_channels, 0.0);
  Eigen::Map<const RowMat> w(weight, g.in_channels, static_cast<Eigen::Index>(kk));
  const int chunk = rows_per_chunk(kk, g.in_width, g.in_height);
  for (int r0 = 0; r0 < g.in_height; r0 += chunk) {
    const int rows = std::min(chunk, g.in_height - r0);
    const auto ncols = static_cast<Eigen::Index>(rows) * g.in_width;
    scratch.resize(kk * static_cast<std::size_t>(ncols));
    ConstStridedMap x(in + static_cast<std::size_t>(r0) * g.in_width, g.in_channels, ncols,
                      Eigen::OuterStride<>(static_cast<Eigen::Index>(in_plane)));
    Eigen::Map<RowMat> cols(scratch.data(), static_cast<Eigen::Index>(kk), ncols);
    cols.noalias() = w.transpose() * x;
    for (int co = 0; co < g.out_channels; ++co) {
      double* oplane = out + co * out_plane;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const double* src = scratch.data() + ((static_cast<std::size_t>(co) * k + ky) * k + kx) * ncols;
          for (int r = 0; r < rows; ++r) {
            double* orow = oplane + static_cast<std::size_t>((r0 + r) * s + ky) * wo + kx;
            const double* srow = src + static_cast<std::size_t>(r) * g.in_width;
            for (int x0 = 0; x0 < g.in_width; ++x0) orow[x0 * s] += srow[x0];
          }
        }
      }
    }
  }
  for (int co = 0; co < g.out_channels; ++co) {
    double* oplane = out + co * out_plane;
    for (std::size_t p = 0; p < out_plane; ++p) oplane[p] += bias[co];
  }
}

void deconv_backward(const DeconvGeometry& g, const double* in, const double* weight, const double* dout,
                     double* din, double* dweight, double* dbias, std::vector<double>& scratch) {
  const int ho = g.out_height();
  const int wo = g.out_width();
  const int k = g.kernel;
  const int s = g.stride;
  const std::size_t kk = static_cast<std::size_t>(g.out_channels) * k * k;
  const std::size_t in_plane = static_cast<std::size_t>(g.in_height) * g.in_width;
  const std::size_t out_plane = static_cast<std::size_t>(ho) * wo;
  Eigen::Map<const RowMat> w(weight, g.in_channels, static_cast<Eigen::Index>(kk));
  Eigen::Map<RowMat> dw(dweight, g.in_channels, static_cast<Eigen::Index>(kk));
  for (int co = 0; co < g.out_channels; ++co) {
    const double* dplane = dout + co * out_plane;
    double acc = 0.0;
    for (std::size_t p = 0; p < out_plane; ++p) acc += dplane[p];
    dbias[co] += acc;
  }
  const int chunk = rows_per_chunk(kk, g.in_width, g.in_height);
  for (int r0 = 0; r0 < g.in_height; r0 += chunk) {
    const int rows = std::min(chunk, g.in_height - r0);
    const auto ncols = static_cast<Eigen::Index>(rows) * g.in_width;
    scratch.resize(kk * static_cast<std::size_t>(ncols));
    for (int co = 0; co < g.out_channels; ++co) {
      const double* dplane = dout + co * out_plane;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          double* dst = scratch.data() + ((static_cast<std::size_t>(co) * k + ky) * k + kx) * ncols;
          for (int r = 0; r < rows; ++r) {
            const double* drow = dplane + static_cast<std::size_t>((r0 + r) * s + ky) * wo + kx;
            double* crow = dst + static_cast<std::size_t>(r) * g.in_width;
            for (int x0 = 0; x0 < g.in_width; ++x0) crow[x0] = drow[x0 * s];
          }
        }
      }
    }
    Eigen::Map<const RowMat> dcols(scratch.data(), static_cast<Eigen::Index>(kk), ncols);
    ConstStridedMap x(in + static_cast<std::size_t>(r0) * g.in_width, g.in_channels, ncols,
                      Eigen::OuterStride<>(static_cast<Eigen::Index>(in_plane)));
    dw.noalias() += x * dcols.transpose();
    if (din != nullptr) {
      StridedMap dx(din + static_cast<std::size_t>(r0) * g.in_width, g.in_channels, ncols,
                    Eigen::OuterStride<>(static_cast<Eigen::Index>(in_plane)));
      dx.noalias() += w * dcols;
    }
  }
}

void maxpool2_forward(int channels, int h, int w, const double* in, double* out, std::int32_t* argmax) {
  const int oh = h / 2;
  const int ow = w / 2;
  const std::size_t in_plane = static_cast<std::size_t>(h) * w;
  const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
  for (int c = 0; c < channels; ++c) {
    const double* src = in + c * in_plane;
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        std::int32_t best = (2 * y) * w + 2 * x;
        const std::int32_t cand[3] = {best + 1, best + w, best + w + 1};
        for (auto q : cand)
          if (src[q] > src[best]) best = q;
        const std::size_t o = c * out_plane + static_cast<std::size_t>(y) * ow + x;
        out[o] = src[best];
        argmax[o] = static_cast<std::int32_t>(c * in_plane) + best;
      }
    }
  }
}

void maxpool2_backward(int channels, int out_h, int out_w, const std::int32_t* argmax, const double* dout,
                       double* din) {
  const std::size_t total = static_cast<std::size_t>(channels) * out_h * out_w;
  for (std::size_t o = 0; o < total; ++o) din[argmax[o]] += dout[o];
}

namespace {

double cubic_weight(double t) {
  constexpr double a = -0.75;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

}  // namespace

std::vector<double> bicubic_matrix(int src, int dst) {
  std::vector<double> m(static_cast<std::size_t>(dst) * src, 0.0);
  const double scale = static_cast<double>(src) / dst;
  for (int i = 0; i < dst; ++i) {
    const double pos = (i + 0.5) * scale - 0.5;
    const int base = static_cast<int>(std::floor(pos));
    const double t = pos - base;
    for (int tap = -1; tap <= 2; ++tap) {
      const int j = std::clamp(base + tap, 0, src - 1);
      m[static_cast<std::size_t>(i) * src + j] += cubic_weight(t - tap);
    }
  }
  return m;
}

void resize_forward(int channels, int h, int w, int th, int tw, const std::vector<double>& ry,
                    const std::vector<double>& rx, const double* in, double* out) {
  Eigen::Map<const RowMat> my(ry.data(), th, h);
  Eigen::Map<const RowMat> mx(rx.data(), tw, w);
  RowMat tmp(th, w);
  for (int c = 0; c < channels; ++c) {
    Eigen::Map<const RowMat> x(in + static_cast<std::size_t>(c) * h * w, h, w);
    Eigen::Map<RowMat> o(out + static_cast<std::size_t>(c) * th * tw, th, tw);
    tmp.noalias() = my * x;
    o.noalias() = tmp * mx.transpose();
  }
}

void resize_backward(int channels, int h, int w, int th, int tw, const std::vector<double>& ry,
                     const std::vector<double>& rx, const double* dout, double* din) {
  Eigen::Map<const RowMat> my(ry.data(), th, h);
  Eigen::Map<const RowMat> mx(rx.data(), tw, w);
  RowMat tmp(h, tw);
  for (int c = 0; c < channels; ++c) {
    Eigen::Map<const RowMat> d(dout + static_cast<std::size_t>(c) * th * tw, th, tw);
    Eigen::Map<RowMat> dx(din + static_cast<std::size_t>(c) * h * w, h, w);
    tmp.noalias() = my.transpose() * d;
    dx.noalias() += tmp * mx;
  }
}

}  // namespace micronet::nn::kernels
