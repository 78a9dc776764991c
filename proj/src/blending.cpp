#include "kpforge/blending.hpp"

#include <cmath>
#include <vector>

#include <opencv2/imgproc.hpp>

namespace kpforge {

namespace {

void check_pair(const cv::Mat& fg, const cv::Mat& bg, const char* op) {
    if (fg.empty() || bg.empty()) throw ValidationError(std::string(op) + ": empty input");
    if (fg.size() != bg.size() || fg.channels() != bg.channels())
        throw ValidationError(std::string(op) + ": foreground/background dimensions differ");
    if (fg.depth() != CV_32F || bg.depth() != CV_32F)
        throw ValidationError(std::string(op) + ": images must be CV_32F");
}

void check_soft_mask(const cv::Mat& mask, const cv::Mat& ref, const char* op) {
    if (mask.type() != CV_32FC1 || mask.size() != ref.size())
        throw ValidationError(std::string(op) + ": mask must be CV_32FC1 of matching size");
}

}  // namespace

cv::Mat alpha_blend(const cv::Mat& foreground, const cv::Mat& mask, const cv::Mat& background) {
    check_pair(foreground, background, "alpha_blend");
    check_soft_mask(mask, foreground, "alpha_blend");

    cv::Mat out(foreground.size(), foreground.type());
    const int channels = foreground.channels();
    for (int y = 0; y < foreground.rows; ++y) {
        const float* fg = foreground.ptr<float>(y);
        const float* bg = background.ptr<float>(y);
        const float* m = mask.ptr<float>(y);
        float* dst = out.ptr<float>(y);
        for (int x = 0; x < foreground.cols; ++x) {
            const float w = m[x];
            for (int ch = 0; ch < channels; ++ch) {
                const int i = x * channels + ch;
                dst[i] = w * fg[i] + (1.0f - w) * bg[i];
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Poisson (seamless cloning)

namespace {

/// 5-point Laplacian system on the masked pixels, conjugate gradient in
/// double precision. Matrix-free: A x = 4x_p - sum of masked neighbors.
class PoissonSystem {
 public:
    PoissonSystem(const cv::Mat& mask) {
        index_ = cv::Mat(mask.size(), CV_32SC1, cv::Scalar(-1));
        for (int y = 0; y < mask.rows; ++y) {
            const auto* m = mask.ptr<std::uint8_t>(y);
            for (int x = 0; x < mask.cols; ++x) {
                if (m[x] != 0) {
                    index_.at<int>(y, x) = count_;
                    pixels_.emplace_back(y, x);
                    ++count_;
                }
            }
        }
    }

    int size() const { return count_; }
    const std::vector<std::pair<int, int>>& pixels() const { return pixels_; }
    int index_at(int y, int x) const { return index_.at<int>(y, x); }

    void apply(const std::vector<double>& x, std::vector<double>& out) const {
        static constexpr int kDy[4] = {-1, 1, 0, 0};
        static constexpr int kDx[4] = {0, 0, -1, 1};
        for (int i = 0; i < count_; ++i) {
            const auto [py, px] = pixels_[i];
            double v = 4.0 * x[i];
            for (int k = 0; k < 4; ++k) {
                const int j = index_.at<int>(py + kDy[k], px + kDx[k]);
                if (j >= 0) v -= x[j];
            }
            out[i] = v;
        }
    }

 private:
    cv::Mat index_;
    std::vector<std::pair<int, int>> pixels_;
    int count_ = 0;
};

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

cv::Mat poisson_blend(const cv::Mat& foreground, const cv::Mat& mask, const cv::Mat& background,
                      const PoissonOptions& options) {
    check_pair(foreground, background, "poisson_blend");
    if (mask.type() != CV_8UC1 || mask.size() != foreground.size())
        throw ValidationError("poisson_blend: mask must be CV_8UC1 of matching size");
    for (int x = 0; x < mask.cols; ++x) {
        if (mask.at<std::uint8_t>(0, x) || mask.at<std::uint8_t>(mask.rows - 1, x))
            throw ValidationError("poisson_blend: mask touches the canvas border");
    }
    for (int y = 0; y < mask.rows; ++y) {
        if (mask.at<std::uint8_t>(y, 0) || mask.at<std::uint8_t>(y, mask.cols - 1))
            throw ValidationError("poisson_blend: mask touches the canvas border");
    }

    cv::Mat out = background.clone();
    PoissonSystem system(mask);
    const int n = system.size();
    if (n == 0) return out;

    const long max_iter =
        options.max_iterations > 0 ? options.max_iterations : 10L * static_cast<long>(n);
    const int channels = foreground.channels();
    static constexpr int kDy[4] = {-1, 1, 0, 0};
    static constexpr int kDx[4] = {0, 0, -1, 1};

    std::vector<double> b(n), x(n), r(n), p(n), ap(n);
    for (int ch = 0; ch < channels; ++ch) {
        // b = guidance Laplacian of fg + Dirichlet contributions from bg.
        for (int i = 0; i < n; ++i) {
            const auto [py, px] = system.pixels()[i];
            double v = 4.0 * foreground.ptr<float>(py)[px * channels + ch];
            for (int k = 0; k < 4; ++k) {
                const int ny = py + kDy[k];
                const int nx = px + kDx[k];
                v -= foreground.ptr<float>(ny)[nx * channels + ch];
                if (system.index_at(ny, nx) < 0)
                    v += background.ptr<float>(ny)[nx * channels + ch];
            }
            b[i] = v;
            x[i] = foreground.ptr<float>(py)[px * channels + ch];  // warm start
        }

        const double b_norm = std::sqrt(dot(b, b));
        const double target = options.relative_tolerance * b_norm;

        system.apply(x, ap);
        for (int i = 0; i < n; ++i) r[i] = b[i] - ap[i];
        p = r;
        double rr = dot(r, r);
        long iter = 0;
        while (std::sqrt(rr) > target && iter < max_iter) {
            system.apply(p, ap);
            const double alpha = rr / dot(p, ap);
            for (int i = 0; i < n; ++i) {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            const double rr_next = dot(r, r);
            const double beta = rr_next / rr;
            rr = rr_next;
            for (int i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
            ++iter;
        }
        if (std::sqrt(rr) > target) {
            throw SolveError("poisson_blend: no convergence after " + std::to_string(iter) +
                                 " iterations (residual " + std::to_string(std::sqrt(rr)) + ")",
                             std::sqrt(rr));
        }
        for (int i = 0; i < n; ++i) {
            const auto [py, px] = system.pixels()[i];
            out.ptr<float>(py)[px * channels + ch] = static_cast<float>(x[i]);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Laplacian pyramid

namespace {

std::vector<cv::Mat> gaussian_pyramid(const cv::Mat& base, int levels) {
    std::vector<cv::Mat> pyr{base};
    for (int l = 1; l < levels; ++l) {
        cv::Mat down;
        cv::pyrDown(pyr.back(), down);
        pyr.push_back(down);
    }
    return pyr;
}

std::vector<cv::Mat> laplacian_pyramid(const std::vector<cv::Mat>& gauss) {
    std::vector<cv::Mat> pyr(gauss.size());
    for (std::size_t l = 0; l + 1 < gauss.size(); ++l) {
        cv::Mat up;
        cv::pyrUp(gauss[l + 1], up, gauss[l].size());
        pyr[l] = gauss[l] - up;
    }
    pyr.back() = gauss.back();
    return pyr;
}

cv::Mat mask_weighted_diff(const cv::Mat& mask, const cv::Mat& fg, const cv::Mat& bg) {
    cv::Mat out(fg.size(), fg.type());
    const int channels = fg.channels();
    for (int y = 0; y < fg.rows; ++y) {
        const float* m = mask.ptr<float>(y);
        const float* f = fg.ptr<float>(y);
        const float* g = bg.ptr<float>(y);
        float* dst = out.ptr<float>(y);
        for (int x = 0; x < fg.cols; ++x) {
            for (int ch = 0; ch < channels; ++ch) {
                const int i = x * channels + ch;
                dst[i] = m[x] * (f[i] - g[i]);
            }
        }
    }
    return out;
}

}  // namespace

cv::Mat laplacian_blend(const cv::Mat& foreground, const cv::Mat& mask, const cv::Mat& background,
                        int levels) {
    check_pair(foreground, background, "laplacian_blend");
    check_soft_mask(mask, foreground, "laplacian_blend");
    if (levels < 1) throw ConfigError("laplacian_blend: levels must be >= 1");
    // A one-level pyramid has no band separation; the merge is the plain
    // per-pixel mix.
    if (levels == 1) return alpha_blend(foreground, mask, background);

    const int align = 1 << (levels - 1);
    if (align > std::min(foreground.rows, foreground.cols))
        throw ConfigError("laplacian_blend: too many levels for image size");

    const int pad_y = (align - foreground.rows % align) % align;
    const int pad_x = (align - foreground.cols % align) % align;
    auto pad = [&](const cv::Mat& m) {
        if (pad_y == 0 && pad_x == 0) return m;
        cv::Mat padded;
        cv::copyMakeBorder(m, padded, 0, pad_y, 0, pad_x, cv::BORDER_REFLECT_101);
        return padded;
    };

    const cv::Mat fg = pad(foreground);
    const cv::Mat bg = pad(background);
    const cv::Mat m = pad(mask);

    const auto mask_pyr = gaussian_pyramid(m, levels);
    const auto fg_lap = laplacian_pyramid(gaussian_pyramid(fg, levels));
    const auto bg_lap = laplacian_pyramid(gaussian_pyramid(bg, levels));

    // Collapse the mask-weighted band differences, then add onto the
    // background. Pixels the mask pyramid never reaches stay bitwise equal
    // to the background.
    cv::Mat acc = mask_weighted_diff(mask_pyr[levels - 1], fg_lap[levels - 1], bg_lap[levels - 1]);
    for (int l = levels - 2; l >= 0; --l) {
        cv::Mat up;
        cv::pyrUp(acc, up, fg_lap[l].size());
        acc = up + mask_weighted_diff(mask_pyr[l], fg_lap[l], bg_lap[l]);
    }

    cv::Mat out = bg + acc;
    out = out(cv::Rect(0, 0, foreground.cols, foreground.rows)).clone();
    cv::max(out, 0.0, out);
    cv::min(out, 255.0, out);
    return out;
}

}  // namespace kpforge
