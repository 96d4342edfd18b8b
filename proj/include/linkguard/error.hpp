#pragma once

#include <stdexcept>
#include <string>

namespace linkguard {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad arguments or configuration values.
class UsageError : public Error {
public:
    using Error::Error;
};

/// Filesystem or decoding problems while reading inputs.
class IoError : public Error {
public:
    using Error::Error;
};

/// Raised when data tokenized under one tokenizer configuration meets an
/// index built under another.
class ConfigMismatch : public Error {
public:
    using Error::Error;
};

class IndexFormatError : public Error {
public:
    enum class Kind { BadMagic, VersionMismatch, Truncated, DigestMismatch, Corrupt };

    IndexFormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// The completion did not contain a usable `edited_text` object.
class ParseFailure : public Error {
public:
    using Error::Error;
};

/// Transport-level failure talking to a completion or embedding endpoint.
class BackendError : public Error {
public:
    using Error::Error;
};

}  // namespace linkguard
