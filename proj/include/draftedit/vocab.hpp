#pragma once

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "draftedit/util.hpp"

namespace draftedit {

namespace detail {

// Lenient UTF-8 decode: malformed bytes become their own code points so
// arbitrary corpora never fail to load.
inline std::vector<uint32_t> utf8_decode(const std::string & text) {
    std::vector<uint32_t> cps;
    size_t                i = 0;
    const auto            n = text.size();
    while (i < n) {
        unsigned char b0 = text[i];
        uint32_t      cp = b0;
        size_t        len = 1;
        if ((b0 & 0x80) == 0x00) {
            cp = b0;
        } else if ((b0 & 0xE0) == 0xC0 && i + 1 < n && (text[i + 1] & 0xC0) == 0x80) {
            cp  = (b0 & 0x1Fu) << 6 | (text[i + 1] & 0x3Fu);
            len = 2;
        } else if ((b0 & 0xF0) == 0xE0 && i + 2 < n && (text[i + 1] & 0xC0) == 0x80 &&
                   (text[i + 2] & 0xC0) == 0x80) {
            cp  = (b0 & 0x0Fu) << 12 | (text[i + 1] & 0x3Fu) << 6 | (text[i + 2] & 0x3Fu);
            len = 3;
        } else if ((b0 & 0xF8) == 0xF0 && i + 3 < n && (text[i + 1] & 0xC0) == 0x80 &&
                   (text[i + 2] & 0xC0) == 0x80 && (text[i + 3] & 0xC0) == 0x80) {
            cp  = (b0 & 0x07u) << 18 | (text[i + 1] & 0x3Fu) << 12 | (text[i + 2] & 0x3Fu) << 6 |
                 (text[i + 3] & 0x3Fu);
            len = 4;
        }
        cps.push_back(cp);
        i += len;
    }
    return cps;
}

inline std::string utf8_encode(uint32_t cp) {
    std::string out;
    if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        out += static_cast<char>(0xF0 | (cp >> 18));
        out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
    return out;
}

}  // namespace detail

// Character-level token space over the code points observed in a corpus,
// plus three reserved sentinels appended after the sorted symbols.
class Vocabulary {
  public:
    static constexpr const char * mask_symbol = "[MASK]";
    static constexpr const char * eos_symbol  = "[EOS]";
    static constexpr const char * pad_symbol  = "[PAD]";

    Vocabulary() = default;

    static Vocabulary build(const std::string & corpus) {
        if (corpus.empty()) {
            throw std::runtime_error("empty corpus");
        }
        std::set<uint32_t> seen;
        for (uint32_t cp : detail::utf8_decode(corpus)) {
            seen.insert(cp);
        }
        std::vector<std::string> symbols;
        symbols.reserve(seen.size() + 3);
        for (uint32_t cp : seen) {
            symbols.push_back(detail::utf8_encode(cp));
        }
        symbols.push_back(mask_symbol);
        symbols.push_back(eos_symbol);
        symbols.push_back(pad_symbol);
        int n = static_cast<int>(symbols.size());
        return Vocabulary(std::move(symbols), n - 3, n - 2, n - 1);
    }

    int size() const { return static_cast<int>(symbols_.size()); }

    int mask_id() const { return mask_id_; }

    int eos_id() const { return eos_id_; }

    int pad_id() const { return pad_id_; }

    bool is_sentinel(int id) const { return id == mask_id_ || id == eos_id_ || id == pad_id_; }

    const std::string & symbol(int id) const {
        if (id < 0 || id >= size()) {
            throw std::runtime_error("token id out of range");
        }
        return symbols_[id];
    }

    int id_of(const std::string & sym) const {
        auto it = index_.find(sym);
        if (it == index_.end()) {
            throw std::runtime_error("unknown symbol: " + sym);
        }
        return it->second;
    }

    std::vector<int> encode(const std::string & text) const {
        std::vector<int> ids;
        for (uint32_t cp : detail::utf8_decode(text)) {
            ids.push_back(id_of(detail::utf8_encode(cp)));
        }
        return ids;
    }

    std::string decode(const std::vector<int> & ids) const {
        std::string out;
        for (int id : ids) {
            out += symbol(id);
        }
        return out;
    }

    // Text rendering of a generation region: symbols up to (not including)
    // the first EOS; mask/pad render as nothing.
    std::string text_until_eos(const std::vector<int> & ids) const {
        std::string out;
        for (int id : ids) {
            if (id == eos_id_) {
                break;
            }
            if (!is_sentinel(id)) {
                out += symbol(id);
            }
        }
        return out;
    }

    nlohmann::json to_json() const {
        return nlohmann::json{ { "symbols", symbols_ },
                               { "mask_id", mask_id_ },
                               { "eos_id", eos_id_ },
                               { "pad_id", pad_id_ } };
    }

    static Vocabulary from_json(const nlohmann::json & j) {
        Vocabulary v(j.at("symbols").get<std::vector<std::string>>(), j.at("mask_id").get<int>(),
                     j.at("eos_id").get<int>(), j.at("pad_id").get<int>());
        return v;
    }

    void save(const std::string & path) const {
        std::ofstream out(path);
        if (!out) {
            throw std::runtime_error("cannot write vocabulary file: " + path);
        }
        out << to_json().dump(2) << "\n";
    }

    static Vocabulary load(const std::string & path) {
        std::ifstream in(path);
        if (!in) {
            throw std::runtime_error("cannot read vocabulary file: " + path);
        }
        nlohmann::json j;
        in >> j;
        return from_json(j);
    }

    std::string hash() const { return fnv1a64_hex(to_json().dump()); }

  private:
    Vocabulary(std::vector<std::string> symbols, int mask, int eos, int pad) :
        symbols_(std::move(symbols)),
        mask_id_(mask),
        eos_id_(eos),
        pad_id_(pad) {
        int n = size();
        if (n < 4 || mask_id_ >= n || eos_id_ >= n || pad_id_ >= n || mask_id_ < 0 || eos_id_ < 0 ||
            pad_id_ < 0) {
            throw std::runtime_error("invalid vocabulary: sentinel ids out of range");
        }
        if (mask_id_ == eos_id_ || mask_id_ == pad_id_ || eos_id_ == pad_id_) {
            throw std::runtime_error("invalid vocabulary: sentinel ids must be distinct");
        }
        for (int i = 0; i < n; i++) {
            if (!index_.emplace(symbols_[i], i).second) {
                throw std::runtime_error("invalid vocabulary: duplicate symbol");
            }
        }
    }

    std::vector<std::string>             symbols_;
    std::unordered_map<std::string, int> index_;
    int                                  mask_id_ = -1;
    int                                  eos_id_  = -1;
    int                                  pad_id_  = -1;
};

// Prompt region followed by a fixed grid of equally sized generation blocks.
struct BlockLayout {
    int prompt_len = 0;
    int block_size = 1;
    int num_blocks = 1;

    void validate() const {
        if (prompt_len < 0 || block_size < 1 || num_blocks < 1) {
            throw std::runtime_error("invalid block layout");
        }
    }

    int gen_len() const { return block_size * num_blocks; }

    int total_len() const { return prompt_len + gen_len(); }

    bool is_prompt(int pos) const { return pos < prompt_len; }

    // Block index of a generation position.
    int block_of(int pos) const {
        if (pos < prompt_len || pos >= total_len()) {
            throw std::runtime_error("position outside generation region");
        }
        return (pos - prompt_len) / block_size;
    }

    int block_begin(int b) const { return prompt_len + b * block_size; }

    int block_end(int b) const { return prompt_len + (b + 1) * block_size; }

    std::vector<int> block_positions(int b) const {
        std::vector<int> out;
        for (int i = block_begin(b); i < block_end(b); i++) {
            out.push_back(i);
        }
        return out;
    }

    nlohmann::json to_json() const {
        return nlohmann::json{ { "prompt_len", prompt_len },
                               { "block_size", block_size },
                               { "num_blocks", num_blocks } };
    }

    static BlockLayout from_json(const nlohmann::json & j) {
        BlockLayout l;
        l.prompt_len = j.at("prompt_len").get<int>();
        l.block_size = j.at("block_size").get<int>();
        l.num_blocks = j.at("num_blocks").get<int>();
        l.validate();
        return l;
    }
};

}  // namespace draftedit
