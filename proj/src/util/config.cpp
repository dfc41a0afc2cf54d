#include "gtalk/util/config.hpp"

#include "gtalk/util/error.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace gtalk {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

} // namespace

KeyValues KeyValues::parse(const std::string& text, const std::string& source) {
    KeyValues kv;
    kv.source_ = source;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw DataError(source + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + t + "'");
        const std::string key = trim(t.substr(0, eq));
        if (key.empty()) throw DataError(source + ":" + std::to_string(lineno) + ": empty key");
        if (kv.values_.count(key)) throw DataError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
        kv.values_[key] = trim(t.substr(eq + 1));
    }
    return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

void KeyValues::read(const std::string& key, std::string& out) {
    auto it = values_.find(key);
    if (it == values_.end()) return;
    used_.insert(key);
    out = it->second;
}

void KeyValues::read(const std::string& key, double& out) {
    std::string s;
    if (!has(key)) return;
    read(key, s);
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        out = v;
    } catch (const std::exception&) {
        throw DataError(source_ + ": key '" + key + "' expects a number, got '" + s + "'");
    }
}

void KeyValues::read(const std::string& key, bool& out) {
    std::string s;
    if (!has(key)) return;
    read(key, s);
    if (s == "true" || s == "1" || s == "yes") out = true;
    else if (s == "false" || s == "0" || s == "no") out = false;
    else throw DataError(source_ + ": key '" + key + "' expects true/false, got '" + s + "'");
}

void KeyValues::read(const std::string& key, std::uint64_t& out) {
    std::string s;
    if (!has(key)) return;
    read(key, s);
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw DataError(source_ + ": key '" + key + "' expects a non-negative integer, got '" + s + "'");
    out = v;
}

void KeyValues::read(const std::string& key, int& out) {
    std::string s;
    if (!has(key)) return;
    read(key, s);
    int v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw DataError(source_ + ": key '" + key + "' expects an integer, got '" + s + "'");
    out = v;
}

void KeyValues::read(const std::string& key, std::vector<int>& out) {
    std::string s;
    if (!has(key)) return;
    read(key, s);
    std::vector<int> v;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        int x = 0;
        auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), x);
        if (item.empty() || ec != std::errc() || p != item.data() + item.size())
            throw DataError(source_ + ": key '" + key + "' expects comma-separated integers, got '" + s + "'");
        v.push_back(x);
    }
    out = std::move(v);
}

void KeyValues::read(const std::string& key, std::vector<double>& out) {
    std::string s;
    if (!has(key)) return;
    read(key, s);
    std::vector<double> v;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        double x = 0;
        auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), x);
        if (item.empty() || ec != std::errc() || p != item.data() + item.size())
            throw DataError(source_ + ": key '" + key + "' expects comma-separated numbers, got '" + s + "'");
        v.push_back(x);
    }
    out = std::move(v);
}

void KeyValues::check_all_used() const {
    std::string unknown;
    for (const auto& [k, v] : values_)
        if (!used_.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
    if (!unknown.empty()) throw DataError(source_ + ": unknown key(s): " + unknown);
}

std::string KeyValues::to_string() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
}

} // namespace gtalk
