#include "linkguard/digest.hpp"

#include <sodium.h>

#include <stdexcept>

namespace linkguard {

namespace {

struct SodiumInit {
    SodiumInit() {
        if (sodium_init() < 0) throw std::runtime_error("libsodium initialisation failed");
    }
};

}  // namespace

Fingerprint fingerprint(std::string_view data) {
    static const SodiumInit init;
    Fingerprint fp;
    crypto_generichash(fp.bytes.data(), fp.bytes.size(),
                       reinterpret_cast<const unsigned char*>(data.data()), data.size(), nullptr, 0);
    return fp;
}

std::string to_hex(const Fingerprint& fp) {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    out.reserve(32);
    for (auto b : fp.bytes) {
        out.push_back(kDigits[b >> 4]);
        out.push_back(kDigits[b & 0xF]);
    }
    return out;
}

}  // namespace linkguard
