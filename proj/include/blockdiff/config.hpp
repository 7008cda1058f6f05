#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace blockdiff {

// Flat key-value configuration with [section] headers. Values are strings;
// lists are comma-separated. Keys may follow a section header on the same
// line ("[decode] mode=dynamic tau=0.2") or appear one per line below it.
class Config {
public:
    using Section = std::vector<std::pair<std::string, std::string>>;

    static Config parse(std::string_view text) {
        Config cfg;
        std::string current;
        std::istringstream in{std::string(text)};
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            strip_comment(line);
            trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                const auto close = line.find(']');
                if (close == std::string::npos) throw std::invalid_argument("config line " + std::to_string(lineno) + ": unterminated section header");
                current = line.substr(1, close - 1);
                trim(current);
                if (current.empty()) throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty section name");
                cfg.section_index(current);
                // inline key=value tokens after the header
                std::istringstream rest{line.substr(close + 1)};
                std::string tok;
                while (rest >> tok) cfg.set(current, split_pair(tok, lineno));
            } else {
                if (current.empty()) throw std::invalid_argument("config line " + std::to_string(lineno) + ": key outside any section");
                cfg.set(current, split_pair(line, lineno));
            }
        }
        return cfg;
    }

    static Config load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open config file: " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse(buf.str());
    }

    bool has(std::string_view section, std::string_view key) const {
        const Section* s = find_section(section);
        if (!s) return false;
        return std::any_of(s->begin(), s->end(), [&](const auto& kv) { return kv.first == key; });
    }

    std::string get(std::string_view section, std::string_view key) const {
        const Section* s = find_section(section);
        if (s)
            for (const auto& kv : *s)
                if (kv.first == key) return kv.second;
        throw std::out_of_range("missing config key " + std::string(section) + "." + std::string(key));
    }

    std::string get_or(std::string_view section, std::string_view key, std::string fallback) const {
        return has(section, key) ? get(section, key) : std::move(fallback);
    }

    int get_int(std::string_view section, std::string_view key) const { return std::stoi(get(section, key)); }
    int get_int_or(std::string_view section, std::string_view key, int fallback) const {
        return has(section, key) ? get_int(section, key) : fallback;
    }
    double get_double(std::string_view section, std::string_view key) const { return std::stod(get(section, key)); }
    double get_double_or(std::string_view section, std::string_view key, double fallback) const {
        return has(section, key) ? get_double(section, key) : fallback;
    }
    std::uint64_t get_u64_or(std::string_view section, std::string_view key, std::uint64_t fallback) const {
        return has(section, key) ? static_cast<std::uint64_t>(std::stoull(get(section, key))) : fallback;
    }

    std::vector<std::string> get_list(std::string_view section, std::string_view key) const {
        std::vector<std::string> out;
        std::string raw = get(section, key);
        std::string item;
        std::istringstream in(raw);
        while (std::getline(in, item, ',')) {
            trim(item);
            if (!item.empty()) out.push_back(item);
        }
        return out;
    }

    std::vector<double> get_double_list(std::string_view section, std::string_view key) const {
        std::vector<double> out;
        for (const auto& s : get_list(section, key)) out.push_back(std::stod(s));
        return out;
    }

    std::vector<int> get_int_list(std::string_view section, std::string_view key) const {
        std::vector<int> out;
        for (const auto& s : get_list(section, key)) out.push_back(std::stoi(s));
        return out;
    }

    void set(std::string_view section, std::string_view key, std::string value) {
        Section& s = sections_[section_index(section)].second;
        for (auto& kv : s) {
            if (kv.first == key) {
                kv.second = std::move(value);
                return;
            }
        }
        s.emplace_back(std::string(key), std::move(value));
    }

    // Insertion-ordered text form.
    std::string serialize() const {
        std::ostringstream out;
        for (const auto& [name, body] : sections_) {
            out << '[' << name << "]\n";
            for (const auto& [k, v] : body) out << k << " = " << v << '\n';
        }
        return out.str();
    }

    // Canonical form used for hashing: sections and keys sorted, one
    // "section.key=value" entry per line.
    std::string canonical() const {
        std::vector<std::string> lines;
        for (const auto& [name, body] : sections_)
            for (const auto& [k, v] : body) lines.push_back(name + "." + k + "=" + v);
        std::sort(lines.begin(), lines.end());
        std::string out;
        for (const auto& l : lines) {
            out += l;
            out += '\n';
        }
        return out;
    }

    std::uint64_t hash() const {
        const std::string canon = canonical();
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (unsigned char c : canon) {
            h ^= c;
            h *= 0x100000001b3ull;
        }
        return h;
    }

    const std::vector<std::pair<std::string, Section>>& sections() const { return sections_; }

private:
    static void strip_comment(std::string& line) {
        const auto pos = line.find('#');
        if (pos != std::string::npos) line.erase(pos);
    }

    static void trim(std::string& s) {
        const auto is_space = [](unsigned char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
        while (!s.empty() && is_space(s.front())) s.erase(s.begin());
        while (!s.empty() && is_space(s.back())) s.pop_back();
    }

    static std::pair<std::string, std::string> split_pair(const std::string& tok, int lineno) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
        std::string k = tok.substr(0, eq), v = tok.substr(eq + 1);
        trim(k);
        trim(v);
        if (k.empty()) throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
        return {k, v};
    }

    void set(std::string_view section, std::pair<std::string, std::string> kv) {
        set(section, kv.first, std::move(kv.second));
    }

    std::size_t section_index(std::string_view name) {
        for (std::size_t i = 0; i < sections_.size(); ++i)
            if (sections_[i].first == name) return i;
        sections_.emplace_back(std::string(name), Section{});
        return sections_.size() - 1;
    }

    const Section* find_section(std::string_view name) const {
        for (const auto& [n, body] : sections_)
            if (n == name) return &body;
        return nullptr;
    }

    std::vector<std::pair<std::string, Section>> sections_;
};

}  // namespace blockdiff
