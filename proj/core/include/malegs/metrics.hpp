#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace malegs {

// Per-query segmentation scores. Empty-vs-empty IoU counts as a perfect 1;
// precision with zero predictions counts as 0.
struct QueryMetrics {
    double iou = 0.0;
    double pixel_accuracy = 0.0;
    double precision = 0.0;
};

QueryMetrics metrics(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt);

struct SegMetrics {
    double miou = 0.0;
    double mpa = 0.0;
    double mp = 0.0;
    std::vector<std::pair<std::string, QueryMetrics>> per_query;

    void add(const std::string& label, const QueryMetrics& m);
    void finalize();  // fills the means from per_query
};

}  // namespace malegs
