#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>

namespace servnet {

/// A node's pseudonym. The only identity a server has in the servnet.
struct ServerId {
    std::string pseudonym;

    ServerId() = default;
    explicit ServerId(std::string name) : pseudonym(std::move(name)) {}

    const std::string& str() const { return pseudonym; }
    bool empty() const { return pseudonym.empty(); }

    friend auto operator<=>(const ServerId&, const ServerId&) = default;
    friend bool operator==(const ServerId&, const ServerId&) = default;
    friend std::ostream& operator<<(std::ostream& os, const ServerId& id) { return os << id.pseudonym; }
};

using Tick = std::uint64_t;

}  // namespace servnet

template <>
struct std::hash<servnet::ServerId> {
    std::size_t operator()(const servnet::ServerId& id) const noexcept {
        return std::hash<std::string>{}(id.pseudonym);
    }
};
