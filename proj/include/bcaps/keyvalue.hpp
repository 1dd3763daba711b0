#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

namespace bcaps {

/// Line-oriented `key=value` text. Blank lines and lines starting with '#'
/// are ignored; surrounding whitespace is trimmed. `context` prefixes error
/// messages.
class KeyValues {
public:
    static KeyValues parse(std::string_view text, std::string context);

    bool has(std::string_view key) const { return values_.find(key) != values_.end(); }
    const std::string& text(std::string_view key) const;
    long long integer(std::string_view key) const;
    std::uint64_t unsigned_integer(std::string_view key) const;
    double real(std::string_view key) const;
    bool boolean(std::string_view key) const;

    const std::map<std::string, std::string, std::less<>>& entries() const { return values_; }

private:
    std::string context_;
    std::map<std::string, std::string, std::less<>> values_;
};

} // namespace bcaps
