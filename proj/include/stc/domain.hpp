#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "stc/error.hpp"

namespace stc {

// Singing technique; also the conversion target.
enum class Domain : int { chest = 0, falsetto = 1, whistle = 2, raspy = 3 };

inline constexpr int kNumDomains = 4;
inline constexpr std::array<std::string_view, kNumDomains> kDomainNames = {"chest", "falsetto",
                                                                          "whistle", "raspy"};

inline std::string_view name_of(Domain d) { return kDomainNames.at(static_cast<int>(d)); }

inline std::optional<Domain> try_parse_domain(std::string_view s) {
  for (int i = 0; i < kNumDomains; ++i)
    if (kDomainNames[i] == s) return static_cast<Domain>(i);
  return std::nullopt;
}

inline Domain parse_domain(std::string_view s) {
  if (auto d = try_parse_domain(s)) return *d;
  throw ArgumentError("unknown technique '" + std::string(s) +
                      "' (expected one of: chest, falsetto, whistle, raspy)");
}

inline Domain domain_from_index(int i) {
  if (i < 0 || i >= kNumDomains) throw ArgumentError("domain index out of range: " + std::to_string(i));
  return static_cast<Domain>(i);
}

inline int index_of(Domain d) { return static_cast<int>(d); }

}  // namespace stc
