#pragma once

#include "refined/common.hpp"

#include <string>
#include <vector>

namespace refined {

/// p features placed in the plane. After normalize_to_unit_square every
/// coordinate lies in [0,1].
struct Embedding {
    std::vector<std::string> labels;
    Matrix coords;  // p x 2
    std::string method_tag;

    Index p() const { return coords.rows(); }
};

}  // namespace refined
