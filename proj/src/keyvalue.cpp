#include "bcaps/keyvalue.hpp"

#include "bcaps/error.hpp"

#include <fmt/format.h>

#include <charconv>

namespace bcaps {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <class N>
N parse_number(const std::string& s, std::string_view key, const std::string& context, const char* kind) {
    N value{};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) {
        throw ContractError(fmt::format("{}: field '{}' is not {}: '{}'", context, key, kind, s));
    }
    return value;
}

} // namespace

KeyValues KeyValues::parse(std::string_view text, std::string context) {
    KeyValues kv;
    kv.context_ = std::move(context);
    std::size_t pos = 0;
    int line_no = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        const std::string_view line = trim(text.substr(pos, end - pos));
        pos = end + 1;
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ContractError(fmt::format("{}: line {} has no '=': '{}'", kv.context_, line_no, line));
        }
        const std::string key(trim(line.substr(0, eq)));
        if (key.empty()) throw ContractError(fmt::format("{}: line {} has an empty key", kv.context_, line_no));
        kv.values_[key] = std::string(trim(line.substr(eq + 1)));
    }
    return kv;
}

const std::string& KeyValues::text(std::string_view key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ContractError(fmt::format("{}: missing field '{}'", context_, key));
    return it->second;
}

long long KeyValues::integer(std::string_view key) const {
    return parse_number<long long>(text(key), key, context_, "an integer");
}

std::uint64_t KeyValues::unsigned_integer(std::string_view key) const {
    return parse_number<std::uint64_t>(text(key), key, context_, "an unsigned integer");
}

double KeyValues::real(std::string_view key) const {
    return parse_number<double>(text(key), key, context_, "a number");
}

bool KeyValues::boolean(std::string_view key) const {
    const std::string& s = text(key);
    if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
    if (s == "0" || s == "false" || s == "no" || s == "off") return false;
    throw ContractError(fmt::format("{}: field '{}' is not a boolean: '{}'", context_, key, s));
}

} // namespace bcaps
