#pragma once

#include <string_view>

namespace enkf {

std::string_view git_revision() noexcept;
std::string_view library_version() noexcept;

}  // namespace enkf
