#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "neuroswift/frozen.hpp"
#include "neuroswift/roi.hpp"
#include "neuroswift/tensor.hpp"

namespace neuroswift {

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0.0 || sbb <= 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

// Pearson correlation over flattened pixels.
inline double pixcorr(const Tensor& a, const Tensor& b) {
    require_same_dims(a, b, "pixcorr");
    double va = 0.0, vb = 0.0, ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(a.numel());
    mb /= static_cast<double>(b.numel());
    for (std::size_t i = 0; i < a.numel(); ++i) {
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    if (va <= 0.0 || vb <= 0.0) throw NumericalError("pixcorr: zero-variance image");
    return pearson(a.vec(), b.vec());
}

namespace detail {

inline Tensor to_grayscale(const Tensor& img) {
    if (img.ndim() == 2) return img;
    if (img.ndim() != 3) throw DimensionError("ssim: expected [C x H x W] or [H x W]");
    const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    Tensor g({h, w});
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            double s = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch) s += img.at3(ch, i, j);
            g.at2(i, j) = s / static_cast<double>(c);
        }
    return g;
}

inline std::vector<double> gaussian_window(std::size_t window, double sigma) {
    std::vector<double> w(window * window);
    const double c = static_cast<double>(window - 1) / 2.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < window; ++i)
        for (std::size_t j = 0; j < window; ++j) {
            const double di = static_cast<double>(i) - c, dj = static_cast<double>(j) - c;
            w[i * window + j] = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
            sum += w[i * window + j];
        }
    for (double& x : w) x /= sum;
    return w;
}

}  // namespace detail

struct SsimOptions {
    std::size_t window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 0.0;  // <= 0 means derive from the image pair
};

// Mean of the local SSIM map, Gaussian-weighted windows fully inside the
// image, standard (K1,K2) constants, grayscale = channel mean.
inline double ssim(const Tensor& a_img, const Tensor& b_img, const SsimOptions& opt = {}) {
    require_same_dims(a_img, b_img, "ssim");
    Tensor a = detail::to_grayscale(a_img);
    Tensor b = detail::to_grayscale(b_img);
    const std::size_t h = a.dim(0), w = a.dim(1), win = opt.window;
    if (h < win || w < win) {
        throw ConfigError("ssim: image " + a.dims_str() + " smaller than window " +
                          std::to_string(win));
    }
    double range = opt.dynamic_range;
    if (range <= 0.0) {
        double lo = a[0], hi = a[0];
        for (std::size_t i = 0; i < a.numel(); ++i) {
            lo = std::min({lo, a[i], b[i]});
            hi = std::max({hi, a[i], b[i]});
        }
        range = hi - lo;
        if (range == 0.0) return 1.0;  // both images are the same constant
    }
    const double c1 = (opt.k1 * range) * (opt.k1 * range);
    const double c2 = (opt.k2 * range) * (opt.k2 * range);
    const std::vector<double> kern = detail::gaussian_window(win, opt.sigma);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i + win <= h; ++i) {
        for (std::size_t j = 0; j + win <= w; ++j) {
            double mu1 = 0.0, mu2 = 0.0, e11 = 0.0, e22 = 0.0, e12 = 0.0;
            for (std::size_t u = 0; u < win; ++u)
                for (std::size_t v = 0; v < win; ++v) {
                    const double kw = kern[u * win + v];
                    const double x = a.at2(i + u, j + v), y = b.at2(i + u, j + v);
                    mu1 += kw * x;
                    mu2 += kw * y;
                    e11 += kw * x * x;
                    e22 += kw * y * y;
                    e12 += kw * x * y;
                }
            const double s11 = e11 - mu1 * mu1;
            const double s22 = e22 - mu2 * mu2;
            const double s12 = e12 - mu1 * mu2;
            total += ((2.0 * mu1 * mu2 + c1) * (2.0 * s12 + c2)) /
                     ((mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2));
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// two-way identification with pluggable feature extractors
// ---------------------------------------------------------------------------

struct FeatureExtractor {
    std::string name;
    std::function<std::vector<double>(const Tensor& image)> features;
};

inline FeatureExtractor pixels_extractor() {
    return {"pixels", [](const Tensor& img) { return img.vec(); }};
}

inline FeatureExtractor random_projection_extractor(std::size_t feature_dim,
                                                    std::size_t image_len, std::uint64_t seed) {
    RngStream rng(seed, hash_name("random_projection_extractor"));
    auto proj = std::make_shared<Tensor>(normal_draw(rng, {feature_dim, image_len}));
    const double s = 1.0 / std::sqrt(static_cast<double>(image_len));
    for (std::size_t i = 0; i < proj->numel(); ++i) (*proj)[i] *= s;
    return {"random_projection", [proj, feature_dim](const Tensor& img) {
                if (img.numel() != proj->dim(1)) {
                    throw DimensionError("random_projection extractor: image length mismatch");
                }
                std::vector<double> out(feature_dim, 0.0);
                for (std::size_t i = 0; i < feature_dim; ++i) {
                    const double* row = proj->data() + i * proj->dim(1);
                    double acc = 0.0;
                    for (std::size_t j = 0; j < img.numel(); ++j) acc += row[j] * img[j];
                    out[i] = acc;
                }
                return out;
            }};
}

inline FeatureExtractor frozen_clip_extractor(const FrozenWorldComponents& frozen) {
    const FrozenWorldComponents* f = &frozen;
    return {"frozen_clip_image",
            [f](const Tensor& img) { return f->clip_image_encode(img).vec(); }};
}

// Percent of pairwise comparisons in which a reconstruction's features
// correlate more with its own ground truth than with a distractor; ties
// count one half. Per-pair averaging over all n(n-1) ordered comparisons.
inline double two_way_identification(const std::vector<Tensor>& recons,
                                     const std::vector<Tensor>& gts,
                                     const FeatureExtractor& extractor) {
    if (recons.size() != gts.size()) throw DimensionError("two_way: set size mismatch");
    if (recons.size() < 2) throw ConfigError("two_way: need at least 2 trials");
    const std::size_t n = recons.size();
    std::vector<std::vector<double>> fr(n), fg(n);
    for (std::size_t i = 0; i < n; ++i) {
        fr[i] = extractor.features(recons[i]);
        fg[i] = extractor.features(gts[i]);
    }
    // correlation matrix recon_i x gt_j
    std::vector<std::vector<double>> corr(n, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) corr[i][j] = pearson(fr[i], fg[j]);
    double wins = 0.0;
    std::size_t comparisons = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            if (corr[i][i] > corr[i][j]) wins += 1.0;
            else if (corr[i][i] == corr[i][j]) wins += 0.5;
            ++comparisons;
        }
    return 100.0 * wins / static_cast<double>(comparisons);
}

// ---------------------------------------------------------------------------
// interpretability: per-voxel L2 contribution of the voxel-facing weights
// ---------------------------------------------------------------------------

struct ContributionMap {
    std::string adapter;               // "autokl" or "clip"
    std::vector<std::size_t> voxel_index;  // original mask indices, gathered order
    std::vector<std::string> region;
    std::vector<double> contribution;  // L2 norm per voxel
    std::map<std::string, double> region_means;
};

inline ContributionMap contribution_map(const Tensor& fc_in_w, const RoiMask& mask,
                                        const std::string& adapter_tag) {
    if (fc_in_w.ndim() != 2 || fc_in_w.dim(0) != mask.total_voxels) {
        throw DimensionError("contribution_map: fc_in width " + fc_in_w.dims_str() +
                             " != mask voxels " + std::to_string(mask.total_voxels));
    }
    ContributionMap out;
    out.adapter = adapter_tag;
    std::size_t row = 0;
    for (const auto& [name, idx] : mask.regions) {
        double sum = 0.0;
        for (std::size_t v : idx) {
            double l2 = 0.0;
            for (std::size_t j = 0; j < fc_in_w.dim(1); ++j) {
                l2 += fc_in_w.at2(row, j) * fc_in_w.at2(row, j);
            }
            l2 = std::sqrt(l2);
            out.voxel_index.push_back(v);
            out.region.push_back(name);
            out.contribution.push_back(l2);
            sum += l2;
            ++row;
        }
        out.region_means[name] = sum / static_cast<double>(idx.size());
    }
    return out;
}

}  // namespace neuroswift
