#pragma once

#include <complex>
#include <mutex>
#include <vector>

#include <fftw3.h>

#include "stainkit/error.hpp"

namespace stainkit {

namespace detail {
// FFTW planning is not thread-safe; execution is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

/// In-place unnormalised 2-D complex DFT over a row-major height x width grid.
inline void fft2d(std::vector<std::complex<double>>& grid, int height, int width, bool inverse) {
  if (grid.size() != static_cast<std::size_t>(height) * width)
    fail(ErrorCode::InvalidArgument, "fft2d: grid size does not match dimensions");
  auto* data = reinterpret_cast<fftw_complex*>(grid.data());
  fftw_plan plan;
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    plan = fftw_plan_dft_2d(height, width, data, data, inverse ? FFTW_BACKWARD : FFTW_FORWARD, FFTW_ESTIMATE);
  }
  if (!plan) fail(ErrorCode::InvalidArgument, "FFTW could not plan the transform");
  fftw_execute(plan);
  std::lock_guard lock(detail::fftw_planner_mutex());
  fftw_destroy_plan(plan);
}

}  // namespace stainkit
