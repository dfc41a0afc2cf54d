#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace gtalk {

// Flat "key = value" text. Blank lines and lines starting with '#' are ignored.
class KeyValues {
public:
    static KeyValues parse(const std::string& text, const std::string& source = "<string>");
    static KeyValues load(const std::filesystem::path& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    // Typed reads; each marks the key as used. Parse failures throw DataError.
    void read(const std::string& key, std::string& out);
    void read(const std::string& key, double& out);
    void read(const std::string& key, bool& out);
    void read(const std::string& key, std::uint64_t& out);
    void read(const std::string& key, int& out);
    void read(const std::string& key, std::vector<int>& out);  // comma separated
    void read(const std::string& key, std::vector<double>& out);

    // Throws DataError listing keys never read.
    void check_all_used() const;

    const std::map<std::string, std::string>& entries() const { return values_; }
    std::string to_string() const;

private:
    std::string source_;
    std::map<std::string, std::string> values_;
    std::set<std::string> used_;
};

} // namespace gtalk
