#pragma once

#include <cstdint>
#include <string_view>

namespace geoadapt {

enum class DomainTag : std::uint8_t { kSource, kTarget };

constexpr std::string_view domain_name(DomainTag d) noexcept {
  return d == DomainTag::kSource ? "source" : "target";
}

/// Label value for samples whose class is unknown or hidden.
inline constexpr int kNoLabel = -1;

}  // namespace geoadapt
