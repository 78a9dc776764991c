#pragma once

#include <opencv2/core.hpp>

#include "kpforge/errors.hpp"

namespace kpforge {

/// out = mask * fg + (1 - mask) * bg, per pixel per channel. fg and bg must
/// be CV_32F with equal size and channel count; mask is CV_32FC1 in [0, 1].
cv::Mat alpha_blend(const cv::Mat& foreground, const cv::Mat& mask, const cv::Mat& background);

struct PoissonOptions {
    /// Conjugate-gradient stop: ||r||_2 <= relative_tolerance * ||b||_2.
    double relative_tolerance = 1e-6;
    /// 0 means 10 * (mask pixel count).
    long max_iterations = 0;
};

/// Seamless cloning: solves the discrete Poisson equation on the mask with
/// the foreground's gradient field as guidance and the background as
/// Dirichlet boundary. The mask (CV_8UC1, nonzero = inside) must be strictly
/// interior to the canvas. Pixels outside the mask are returned bitwise
/// equal to the background. Throws SolveError (carrying the residual norm)
/// when the iteration budget runs out.
cv::Mat poisson_blend(const cv::Mat& foreground, const cv::Mat& mask, const cv::Mat& background,
                      const PoissonOptions& options = {});

/// Laplacian-pyramid blending: the per-level difference of the two Laplacian
/// pyramids is weighted by the Gaussian pyramid of the soft mask, collapsed,
/// and added onto the background; the result is clipped to [0, 255].
/// levels == 1 degenerates to alpha_blend.
cv::Mat laplacian_blend(const cv::Mat& foreground, const cv::Mat& mask, const cv::Mat& background,
                        int levels = 4);

}  // namespace kpforge
