#pragma once

namespace kst {

inline constexpr const char* kLibraryVersion = "0.1.0";

} // namespace kst
