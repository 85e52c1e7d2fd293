#pragma once

namespace lemmatag {

inline constexpr const char* kToolkitName = "lemmatag";
inline constexpr const char* kVersion = "0.1.0";

}  // namespace lemmatag
