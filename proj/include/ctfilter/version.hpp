#pragma once

namespace ctfilter {

inline constexpr const char* kVersion = "1.0.0";

}  // namespace ctfilter
