#pragma once

#include <cstdio>
#include <string>

namespace emgfed {

// 17 significant digits: doubles survive a text round trip bit-exactly.
inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace emgfed
