#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace malegs {

// Dense H x W x K float tensor, row-major with interleaved channels.
// Shared container for images (K=3), feature maps (K=D or C), score and
// uncertainty maps (K=1). Serialized in the MFT1 format: magic "MFT1",
// u32 H, u32 W, u32 K, then H*W*K little-endian f32.
class Grid {
public:
    Grid() = default;
    Grid(int h, int w, int k, float fill = 0.0f)
        : h_(h), w_(w), k_(k), data_(static_cast<size_t>(h) * w * k, fill) {}

    int height() const { return h_; }
    int width() const { return w_; }
    int channels() const { return k_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float& at(int y, int x, int c) { return data_[idx(y, x, c)]; }
    float at(int y, int x, int c) const { return data_[idx(y, x, c)]; }

    float* row(int y) { return data_.data() + static_cast<size_t>(y) * w_ * k_; }
    const float* row(int y) const { return data_.data() + static_cast<size_t>(y) * w_ * k_; }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }

    bool same_shape(const Grid& o) const {
        return h_ == o.h_ && w_ == o.w_ && k_ == o.k_;
    }

    // Provenance label for feature maps (original photo, self render, novel
    // appearance slot, ...). Not serialized.
    std::string tag;

private:
    size_t idx(int y, int x, int c) const {
        return (static_cast<size_t>(y) * w_ + x) * k_ + c;
    }

    int h_ = 0, w_ = 0, k_ = 0;
    std::vector<float> data_;
};

void save_grid(const Grid& g, const std::string& path);
Grid load_grid(const std::string& path);

}  // namespace malegs
