#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

namespace linkguard {

/// 128-bit digest. Ordering is byte-lexicographic, which is also the order of
/// the on-disk term table.
struct Fingerprint {
    std::array<std::uint8_t, 16> bytes{};

    auto operator<=>(const Fingerprint&) const = default;
    bool operator==(const Fingerprint&) const = default;
};

/// Identifier stored in index headers for the fingerprint function below.
inline constexpr std::uint32_t kHashBlake2b128 = 1;

/// Unkeyed BLAKE2b truncated to 16 bytes of output (libsodium generichash).
Fingerprint fingerprint(std::string_view data);

std::string to_hex(const Fingerprint& fp);

}  // namespace linkguard
