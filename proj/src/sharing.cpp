#include "reftfl/sharing.hpp"

#include "reftfl/errors.hpp"

namespace reftfl {

std::vector<std::string> shared_groups(SharingStrategy s) {
    std::vector<std::string> groups;
    if (shares_w(s)) groups.push_back("W");
    groups.push_back("R");
    if (shares_b(s)) groups.push_back("b");
    return groups;
}

std::string to_string(SharingStrategy s) {
    switch (s) {
        case SharingStrategy::Full: return "full";
        case SharingStrategy::NoBias: return "no_bias";
        case SharingStrategy::NoW: return "no_w";
    }
    return "full";
}

SharingStrategy sharing_strategy_from_string(const std::string& name) {
    if (name == "full") return SharingStrategy::Full;
    if (name == "no_bias") return SharingStrategy::NoBias;
    if (name == "no_w") return SharingStrategy::NoW;
    throw ConfigError("unknown sharing strategy '" + name + "' (expected full, no_bias or no_w)");
}

}  // namespace reftfl
