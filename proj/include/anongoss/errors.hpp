#pragma once

#include <stdexcept>
#include <string>

namespace anongoss {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UnknownRecipient : Error {
    UnknownRecipient() : Error("unknown recipient") {}
};

struct WrongKey : Error {
    WrongKey() : Error("wrong key") {}
};

struct Malformed : Error {
    Malformed() : Error("malformed message") {}
    explicit Malformed(const std::string& what) : Error("malformed message: " + what) {}
};

struct PastEvent : Error {
    PastEvent() : Error("event scheduled in the past") {}
};

struct InvalidSpec : Error {
    explicit InvalidSpec(const std::string& what) : Error("invalid spec: " + what) {}
};

struct InsufficientHistory : Error {
    InsufficientHistory() : Error("insufficient peer history") {}
};

struct PhiTooSmall : Error {
    PhiTooSmall() : Error("sampled peer set too small for route planning") {}
};

struct UnknownRoute : Error {
    UnknownRoute() : Error("no route state for tag") {}
};

struct UpstreamGone : Error {
    UpstreamGone() : Error("upstream peer departed") {}
};

struct UnknownTask : Error {
    UnknownTask() : Error("unknown task") {}
};

struct AlreadyRegistered : Error {
    AlreadyRegistered() : Error("plugin already registered") {}
};

struct MissingData : Error {
    explicit MissingData(const std::string& what) : Error("missing data: " + what) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error("config error: " + what) {}
};

// A violated model guarantee. Never caught by protocol code; the CLI maps
// it to exit code 3.
struct InvariantError : Error {
    explicit InvariantError(const std::string& what) : Error("invariant violated: " + what) {}
};

}  // namespace anongoss
