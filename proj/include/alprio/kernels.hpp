#pragma once

#include <cstddef>
#include <span>

// Dense CHW image kernels used by the predictor and the controller encoder.
//
// The functions in alprio::kernels are the production versions: loop orders
// chosen for contiguous inner loops, with OpenMP over output (or input)
// channels. Each output element is produced by exactly one thread with a fixed
// summation order, so results do not depend on the thread count.
//
// alprio::kernels::reference holds direct textbook loops, serial, kept only as
// a test oracle and benchmark baseline.
//
// Backward functions accumulate into dweight / dbias and overwrite din. An
// empty din span skips the input gradient.

namespace alprio::kernels {

struct ConvGeometry {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t height = 1;  // input
    std::size_t width = 1;   // input
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t pad = 1;

    std::size_t out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
    std::size_t out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
    std::size_t weight_size() const { return out_channels * in_channels * kernel * kernel; }
    std::size_t in_size() const { return in_channels * height * width; }
    std::size_t out_size() const { return out_channels * out_height() * out_width(); }
};

template <class T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out);

template <class T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                     std::span<const T> dout, std::span<T> din, std::span<T> dweight, std::span<T> dbias);

// Transposed 2x2 convolution with stride 2 (exact 2x upsampling).
// weight layout [in_channels][out_channels][2][2]; output (out_channels, 2h, 2w).
template <class T>
void upconv2x2_forward(std::size_t in_channels, std::size_t out_channels, std::size_t height,
                       std::size_t width, std::span<const T> in, std::span<const T> weight,
                       std::span<const T> bias, std::span<T> out);

template <class T>
void upconv2x2_backward(std::size_t in_channels, std::size_t out_channels, std::size_t height,
                        std::size_t width, std::span<const T> in, std::span<const T> weight,
                        std::span<const T> dout, std::span<T> din, std::span<T> dweight,
                        std::span<T> dbias);

// 2x2 max pooling, stride 2. argmax receives the flat input index per output.
template <class T>
void maxpool2x2_forward(std::size_t channels, std::size_t height, std::size_t width, std::span<const T> in,
                        std::span<T> out, std::span<std::size_t> argmax);

template <class T>
void maxpool2x2_backward(std::span<const std::size_t> argmax, std::span<const T> dout, std::span<T> din);

// y = W x + b with W row-major [out][in].
template <class T>
void dense_forward(std::size_t in_dim, std::size_t out_dim, std::span<const T> x, std::span<const T> weight,
                   std::span<const T> bias, std::span<T> y);

template <class T>
void dense_backward(std::size_t in_dim, std::size_t out_dim, std::span<const T> x, std::span<const T> weight,
                    std::span<const T> dy, std::span<T> dx, std::span<T> dweight, std::span<T> dbias);

namespace reference {

template <class T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out);

template <class T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                     std::span<const T> dout, std::span<T> din, std::span<T> dweight, std::span<T> dbias);

template <class T>
void upconv2x2_forward(std::size_t in_channels, std::size_t out_channels, std::size_t height,
                       std::size_t width, std::span<const T> in, std::span<const T> weight,
                       std::span<const T> bias, std::span<T> out);

template <class T>
void upconv2x2_backward(std::size_t in_channels, std::size_t out_channels, std::size_t height,
                        std::size_t width, std::span<const T> in, std::span<const T> weight,
                        std::span<const T> dout, std::span<T> din, std::span<T> dweight,
                        std::span<T> dbias);

}  // namespace reference

// Number of worker threads the kernels may use (honours ALPRIO_THREADS).
int worker_threads();
void set_worker_threads(int n);

}  // namespace alprio::kernels
