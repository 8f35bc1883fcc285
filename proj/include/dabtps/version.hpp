#pragma once

namespace dabtps {

inline constexpr const char* kToolVersion = "1.0.0";

}
