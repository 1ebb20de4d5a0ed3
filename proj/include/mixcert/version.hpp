#pragma once

namespace mixcert {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace mixcert
