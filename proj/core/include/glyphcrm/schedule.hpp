#pragma once

#include <cstdint>

namespace glyphcrm {

// Linear warmup to base over warmup steps, then linear decay to 0 at total.
// Steps are 1-based: lr(1) = base / warmup, lr(warmup) = base, lr(total) = 0.
struct LrSchedule {
    double base = 1e-4;
    std::int64_t warmup = 10000;
    std::int64_t total = 0;

    double at(std::int64_t step) const {
        if (step <= 0) return 0.0;
        if (warmup > 0 && step <= warmup) {
            return base * static_cast<double>(step) / static_cast<double>(warmup);
        }
        if (step >= total) return 0.0;
        return base * static_cast<double>(total - step) / static_cast<double>(total - warmup);
    }
};

}  // namespace glyphcrm
