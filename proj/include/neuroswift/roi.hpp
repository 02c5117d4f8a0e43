#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "neuroswift/rng.hpp"
#include "neuroswift/tensor.hpp"

namespace neuroswift {

// The seven visual-pathway region names, in canonical order. The first four
// carry structural (latent-derived) signal in synthetic worlds, the last
// three carry semantic (code-derived) signal.
inline const std::array<std::string, 7>& region_vocabulary() {
    static const std::array<std::string, 7> v = {"Early",   "Midventral", "Midlateral",
                                                 "Midparietal", "Ventral", "Lateral",
                                                 "Parietal"};
    return v;
}

inline bool is_structural_region(const std::string& name) {
    return name == "Early" || name == "Midventral" || name == "Midlateral" ||
           name == "Midparietal";
}

struct RoiMask {
    std::string subject_id;
    // ordered (region name, voxel index list); lists are pairwise disjoint and
    // union exactly [0, total_voxels)
    std::vector<std::pair<std::string, std::vector<std::size_t>>> regions;
    std::size_t total_voxels = 0;

    std::size_t region_size(const std::string& name) const {
        for (const auto& [n, idx] : regions)
            if (n == name) return idx.size();
        return 0;
    }
};

inline void validate_mask(const RoiMask& mask) {
    std::vector<char> seen(mask.total_voxels, 0);
    std::size_t count = 0;
    const auto& vocab = region_vocabulary();
    for (const auto& [name, idx] : mask.regions) {
        if (std::find(vocab.begin(), vocab.end(), name) == vocab.end()) {
            throw FormatError("roi mask: unknown region name '" + name + "'");
        }
        for (std::size_t v : idx) {
            if (v >= mask.total_voxels) {
                throw FormatError("roi mask: index " + std::to_string(v) + " out of range");
            }
            if (seen[v]) {
                throw FormatError("roi mask: index " + std::to_string(v) +
                                  " assigned to multiple regions");
            }
            seen[v] = 1;
            ++count;
        }
    }
    if (count != mask.total_voxels) {
        throw FormatError("roi mask: regions cover " + std::to_string(count) + " of " +
                          std::to_string(mask.total_voxels) + " voxels");
    }
}

// Column gather in region order. region_subset empty means all regions.
inline Tensor apply_mask(const Tensor& full_voxels, const RoiMask& mask,
                         const std::vector<std::string>& region_subset = {}) {
    if (full_voxels.ndim() != 2) throw DimensionError("apply_mask: expected [trials x voxels]");
    std::vector<std::size_t> cols;
    for (const auto& [name, idx] : mask.regions) {
        if (!region_subset.empty() &&
            std::find(region_subset.begin(), region_subset.end(), name) == region_subset.end()) {
            continue;
        }
        cols.insert(cols.end(), idx.begin(), idx.end());
    }
    const std::size_t width = full_voxels.dim(1);
    for (std::size_t c : cols) {
        if (c >= width) {
            throw BoundsError("apply_mask: voxel index " + std::to_string(c) +
                              " out of range for width " + std::to_string(width));
        }
    }
    Tensor out({full_voxels.dim(0), cols.size()});
    for (std::size_t i = 0; i < full_voxels.dim(0); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j) out.at2(i, j) = full_voxels.at2(i, cols[j]);
    return out;
}

// Subject-specific mask: a seeded random disjoint partition of [0, total)
// into the seven regions with the given sizes.
inline RoiMask make_subject_mask(const std::string& subject_id,
                                 const std::vector<std::size_t>& region_sizes, RngStream rng) {
    if (region_sizes.size() != region_vocabulary().size()) {
        throw ConfigError("make_subject_mask: expected 7 region sizes");
    }
    std::size_t total = 0;
    for (std::size_t s : region_sizes) {
        if (s < 1) throw ConfigError("make_subject_mask: region sizes must be >= 1");
        total += s;
    }
    std::vector<std::size_t> perm(total);
    for (std::size_t i = 0; i < total; ++i) perm[i] = i;
    shuffle_indices(perm, rng);
    RoiMask mask;
    mask.subject_id = subject_id;
    mask.total_voxels = total;
    std::size_t off = 0;
    for (std::size_t r = 0; r < region_sizes.size(); ++r) {
        std::vector<std::size_t> idx(perm.begin() + off, perm.begin() + off + region_sizes[r]);
        off += region_sizes[r];
        mask.regions.emplace_back(region_vocabulary()[r], std::move(idx));
    }
    validate_mask(mask);
    return mask;
}

// Standardized-template mask shared across subjects: contiguous layout with
// per-region sizes shrunk by `shrink`, then a fraction of voxels in each
// boundary band swapped across the adjacent region boundary. Applying it to a
// subject drops that subject's surplus voxels and blurs region labels, the
// degradation the template ablation measures.
inline RoiMask make_std_template_mask(const std::vector<std::size_t>& baseline_sizes,
                                      double shrink, double boundary_fraction, RngStream rng) {
    if (shrink < 0.0 || shrink >= 1.0) throw ConfigError("std template: shrink must be in [0,1)");
    if (boundary_fraction < 0.0 || boundary_fraction > 1.0) {
        throw ConfigError("std template: boundary fraction must be in [0,1]");
    }
    if (baseline_sizes.size() != region_vocabulary().size()) {
        throw ConfigError("std template: expected 7 region sizes");
    }
    RoiMask mask;
    mask.subject_id = "std_template";
    std::size_t off = 0;
    for (std::size_t r = 0; r < baseline_sizes.size(); ++r) {
        std::size_t size = static_cast<std::size_t>(
            std::max(1.0, std::floor(static_cast<double>(baseline_sizes[r]) * (1.0 - shrink))));
        std::vector<std::size_t> idx(size);
        for (std::size_t i = 0; i < size; ++i) idx[i] = off + i;
        off += size;
        mask.regions.emplace_back(region_vocabulary()[r], std::move(idx));
    }
    mask.total_voxels = off;
    // swap a fraction of voxels across each region boundary
    for (std::size_t r = 0; r + 1 < mask.regions.size(); ++r) {
        auto& left = mask.regions[r].second;
        auto& right = mask.regions[r + 1].second;
        const std::size_t band =
            static_cast<std::size_t>(std::floor(boundary_fraction *
                                                static_cast<double>(std::min(left.size(), right.size())) / 2.0));
        for (std::size_t k = 0; k < band; ++k) {
            const std::size_t li = left.size() - 1 - static_cast<std::size_t>(rng.next_below(
                                                         std::max<std::size_t>(1, left.size() / 2)));
            const std::size_t ri =
                static_cast<std::size_t>(rng.next_below(std::max<std::size_t>(1, right.size() / 2)));
            std::swap(left[li], right[ri]);
        }
    }
    validate_mask(mask);
    return mask;
}

}  // namespace neuroswift
