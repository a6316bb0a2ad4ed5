#pragma once

#include <string>

namespace fedsde {

/// Shortest-free, round-trippable decimal: 17 significant digits.
std::string format_real(double value);

}  // namespace fedsde
