#pragma once

namespace diffgen {

inline constexpr const char* kPipelineVersion = "diffgen-0.1.0";

}  // namespace diffgen
