#pragma once

namespace fracdet {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace fracdet
