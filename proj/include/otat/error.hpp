#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace otat {

// Error taxonomy shared by the library, the CLI and the bindings. The CLI
// maps code() onto its machine-readable failure line.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& what)
        : std::runtime_error(what), code_(std::move(code)) {}
    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& w) : Error("shape", w) {}
};
struct DomainError : Error {
    explicit DomainError(const std::string& w) : Error("domain", w) {}
};
struct DegenerateInputError : Error {
    explicit DegenerateInputError(const std::string& w) : Error("degenerate-input", w) {}
};
struct NumericalError : Error {
    explicit NumericalError(const std::string& w) : Error("numerical", w) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& w) : Error("config", w) {}
};
struct ScaleError : Error {
    explicit ScaleError(const std::string& w) : Error("scale", w) {}
};
struct IoError : Error {
    explicit IoError(const std::string& w) : Error("io", w) {}
};
struct StateError : Error {
    explicit StateError(const std::string& w) : Error("state", w) {}
};
struct IndexError : Error {
    explicit IndexError(const std::string& w) : Error("index", w) {}
};
struct GenerationError : Error {
    explicit GenerationError(const std::string& w) : Error("generation", w) {}
};

}  // namespace otat
