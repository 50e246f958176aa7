#pragma once

#include <string>
#include <vector>

namespace reftfl {

// Which intervention parameter groups a client uploads.
enum class SharingStrategy {
    Full,    // {W, R, b}
    NoBias,  // {W, R}
    NoW,     // {R, b}
};

inline bool shares_w(SharingStrategy s) { return s != SharingStrategy::NoW; }
inline bool shares_r(SharingStrategy) { return true; }
inline bool shares_b(SharingStrategy s) { return s != SharingStrategy::NoBias; }

// Shared group names in canonical flatten order.
std::vector<std::string> shared_groups(SharingStrategy s);

std::string to_string(SharingStrategy s);
SharingStrategy sharing_strategy_from_string(const std::string& name);

}  // namespace reftfl
