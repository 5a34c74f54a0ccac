#pragma once

#include <string>
#include <string_view>

namespace medroute::core {

std::string base64_encode(std::string_view bytes);
/// Throws DataError on malformed input.
std::string base64_decode(std::string_view text);

}  // namespace medroute::core
