#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace sigil {

enum class KeyType { integer, real, text, reals };

struct KeySpec {
    KeyType type;
    const char* default_value;
    const char* help;
};

// Plain-text `key = value` configuration with a fixed schema. Unknown keys
// are rejected; CLI flags mirror keys one-to-one.
struct RunConfig {
    std::map<std::string, std::string> kv;  // only explicitly-set keys

    static const std::map<std::string, KeySpec>& schema();

    static RunConfig load_file(const std::string& path);
    void set(const std::string& key, const std::string& value);

    bool has(const std::string& key) const { return kv.count(key) > 0; }
    std::string gets(const std::string& key) const;
    int64_t geti(const std::string& key) const;
    double getd(const std::string& key) const;
    std::vector<double> getds(const std::string& key) const;

    // canonical text of all schema keys with effective values
    std::string resolved_text() const;
    uint64_t config_hash() const;
    void write_resolved(const std::string& path) const;
};

std::vector<std::string> split_csv(const std::string& s);

}  // namespace sigil
