#include "errlab/toml_lite.hpp"

#include <cctype>
#include <charconv>

#include "errlab/error.hpp"
#include "errlab/jsonl.hpp"

namespace errlab {

namespace {

class LineParser {
public:
    LineParser(std::string_view line, int lineno) : s_(line), lineno_(lineno) {}

    void skip_ws() {
        while (i_ < s_.size() && (s_[i_] == ' ' || s_[i_] == '\t')) ++i_;
    }

    bool at_end_or_comment() {
        skip_ws();
        return i_ >= s_.size() || s_[i_] == '#';
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw ConfigError("toml line " + std::to_string(lineno_) + ": " + what);
    }

    std::string key() {
        skip_ws();
        if (i_ < s_.size() && (s_[i_] == '"' || s_[i_] == '\'')) return string_value();
        std::size_t start = i_;
        while (i_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[i_])) || s_[i_] == '_' || s_[i_] == '-'))
            ++i_;
        if (start == i_) fail("expected a key");
        if (i_ < s_.size() && s_[i_] == '.') fail("dotted keys are not supported");
        return std::string(s_.substr(start, i_ - start));
    }

    void expect(char c) {
        skip_ws();
        if (i_ >= s_.size() || s_[i_] != c) fail(std::string("expected '") + c + "'");
        ++i_;
    }

    std::string string_value() {
        char q = s_[i_++];
        std::string out;
        while (i_ < s_.size() && s_[i_] != q) {
            char c = s_[i_++];
            if (q == '"' && c == '\\' && i_ < s_.size()) {
                char e = s_[i_++];
                switch (e) {
                    case 'n': out += '\n'; break;
                    case 't': out += '\t'; break;
                    case 'r': out += '\r'; break;
                    case '"': out += '"'; break;
                    case '\\': out += '\\'; break;
                    default: fail(std::string("unsupported escape \\") + e);
                }
            } else {
                out += c;
            }
        }
        if (i_ >= s_.size()) fail("unterminated string");
        ++i_;
        return out;
    }

    json value() {
        skip_ws();
        if (i_ >= s_.size()) fail("missing value");
        char c = s_[i_];
        if (c == '"' || c == '\'') return string_value();
        if (c == '[') {
            ++i_;
            json arr = json::array();
            skip_ws();
            if (i_ < s_.size() && s_[i_] == ']') {
                ++i_;
                return arr;
            }
            while (true) {
                arr.push_back(value());
                skip_ws();
                if (i_ < s_.size() && s_[i_] == ',') {
                    ++i_;
                    skip_ws();
                    if (i_ < s_.size() && s_[i_] == ']') {
                        ++i_;
                        return arr;
                    }
                    continue;
                }
                expect(']');
                return arr;
            }
        }
        std::size_t start = i_;
        while (i_ < s_.size() && s_[i_] != ',' && s_[i_] != ']' && s_[i_] != '#' && s_[i_] != ' ' && s_[i_] != '\t')
            ++i_;
        std::string tok(s_.substr(start, i_ - start));
        if (tok == "true") return true;
        if (tok == "false") return false;
        std::string digits;
        for (char ch : tok)
            if (ch != '_') digits += ch;
        long long iv = 0;
        auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), iv);
        if (ec == std::errc() && p == digits.data() + digits.size()) return iv;
        try {
            std::size_t used = 0;
            double dv = std::stod(digits, &used);
            if (used == digits.size()) return dv;
        } catch (const std::exception&) {
        }
        fail("cannot parse value '" + tok + "'");
    }

    std::size_t pos() const { return i_; }
    std::string_view rest() const { return s_.substr(i_); }

private:
    std::string_view s_;
    std::size_t i_ = 0;
    int lineno_;
};

}  // namespace

json parse_toml_lite(std::string_view text) {
    json root = json::object();
    json* table = &root;
    int lineno = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        std::string_view line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        LineParser p(line, lineno);
        if (p.at_end_or_comment()) continue;
        std::string_view rest = p.rest();
        if (rest.substr(0, 2) == "[[") {
            auto close = rest.find("]]");
            if (close == std::string_view::npos) p.fail("unterminated [[table]]");
            std::string name(rest.substr(2, close - 2));
            if (!root.contains(name)) root[name] = json::array();
            if (!root[name].is_array()) p.fail("'" + name + "' is not an array of tables");
            root[name].push_back(json::object());
            table = &root[name].back();
            continue;
        }
        if (rest.front() == '[') {
            auto close = rest.find(']');
            if (close == std::string_view::npos) p.fail("unterminated [table]");
            std::string name(rest.substr(1, close - 1));
            if (!root.contains(name)) root[name] = json::object();
            table = &root[name];
            continue;
        }
        std::string key = p.key();
        p.expect('=');
        json v = p.value();
        if (!p.at_end_or_comment()) p.fail("trailing characters after value");
        if (table->contains(key)) p.fail("duplicate key '" + key + "'");
        (*table)[key] = std::move(v);
        if (nl == text.size()) break;
    }
    return root;
}

json load_toml_lite(const std::filesystem::path& path) { return parse_toml_lite(read_file(path)); }

}  // namespace errlab
