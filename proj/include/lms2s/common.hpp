#pragma once

#include <cstddef>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lms2s {

using TokenId = std::int32_t;
using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

// Error taxonomy. Everything user-visible derives from Error so the CLI can
// report one-line causes uniformly.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error(msg) {}
};

struct IndexError : Error {
    explicit IndexError(const std::string& msg) : Error(msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

// Raised by silhouette scoring when fewer than two clusters are non-empty.
// RL callers translate it into the documented penalty reward.
struct SingleClusterError : Error {
    explicit SingleClusterError(const std::string& msg) : Error(msg) {}
};

}  // namespace lms2s
