#pragma once

#include <vector>

#include "malegs/grid.hpp"

namespace malegs {

enum class UncertaintyKind { Appearance, Transient };

// H x W scalar map; values are unbounded until normalize_maps() rescales
// the whole per-scene set of one kind into [0, 1].
struct UncertaintyMap {
    Grid values;  // K = 1
    UncertaintyKind kind = UncertaintyKind::Appearance;
    bool normalized = false;
};

// Per-pixel variance of the N feature maps (novel slots plus the
// self-appearance map, in that order): mean over maps of the channel-summed
// squared deviation from the per-pixel mean feature.
UncertaintyMap appearance_uncertainty(const std::vector<const Grid*>& features);
UncertaintyMap appearance_uncertainty(const std::vector<Grid>& features);

// Channel-summed squared distance between the self-render features and the
// original-photo features; lights up wherever an occluder replaced content.
UncertaintyMap transient_uncertainty(const Grid& self_render, const Grid& original);

// Joint min-max normalization over every map of one kind in the scene.
// Degenerate (max == min) sets everything to 0.
void normalize_maps(std::vector<UncertaintyMap>& maps);

// True where the normalized value strictly exceeds tau_u.
std::vector<uint8_t> occluder_mask(const UncertaintyMap& u, double tau_u);

}  // namespace malegs
