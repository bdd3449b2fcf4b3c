#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace interv {

/// Byte-level Aho-Corasick automaton. Reports every (possibly overlapping)
/// occurrence of every pattern in one pass over the text.
class aho_corasick {
public:
    explicit aho_corasick(std::span<const std::string> patterns) {
        nodes_.emplace_back();
        lengths_.reserve(patterns.size());
        for (std::uint32_t i = 0; i < patterns.size(); ++i) insert(patterns[i], i);
        link();
    }

    std::size_t pattern_count() const { return lengths_.size(); }

    /// Calls `on_match(pattern_index, start, end)` with byte offsets, in order
    /// of increasing end offset.
    template <typename OnMatch>
    void scan(std::string_view text, OnMatch&& on_match) const {
        std::uint32_t state = 0;
        for (std::size_t pos = 0; pos < text.size(); ++pos) {
            const auto c = static_cast<unsigned char>(text[pos]);
            while (state != 0 && child(state, c) == none) state = nodes_[state].fail;
            const std::uint32_t next = child(state, c);
            state = next == none ? 0 : next;
            for (std::uint32_t s = nodes_[state].terminal ? state : nodes_[state].out; s != none && s != 0;
                 s = nodes_[s].out) {
                for (std::uint32_t p : nodes_[s].patterns)
                    on_match(p, pos + 1 - lengths_[p], pos + 1);
            }
        }
    }

private:
    static constexpr std::uint32_t none = ~std::uint32_t(0);

    struct node {
        std::vector<std::pair<unsigned char, std::uint32_t>> edges;  // sorted by byte
        std::uint32_t fail = 0;
        std::uint32_t out = none;  // nearest terminal state on the fail chain
        bool terminal = false;
        std::vector<std::uint32_t> patterns;
    };

    std::uint32_t child(std::uint32_t s, unsigned char c) const {
        const auto& e = nodes_[s].edges;
        auto it = std::lower_bound(e.begin(), e.end(), c,
                                   [](const auto& edge, unsigned char v) { return edge.first < v; });
        return it != e.end() && it->first == c ? it->second : none;
    }

    void insert(const std::string& pattern, std::uint32_t index) {
        if (pattern.empty()) throw std::invalid_argument("aho_corasick: empty pattern");
        std::uint32_t s = 0;
        for (unsigned char c : pattern) {
            std::uint32_t next = child(s, c);
            if (next == none) {
                next = static_cast<std::uint32_t>(nodes_.size());
                nodes_.emplace_back();
                auto& e = nodes_[s].edges;
                auto it = std::lower_bound(e.begin(), e.end(), c,
                                           [](const auto& edge, unsigned char v) { return edge.first < v; });
                e.insert(it, {c, next});
            }
            s = next;
        }
        nodes_[s].terminal = true;
        nodes_[s].patterns.push_back(index);
        lengths_.push_back(pattern.size());
    }

    void link() {
        std::deque<std::uint32_t> queue;
        for (const auto& [c, s] : nodes_[0].edges) {
            nodes_[s].fail = 0;
            queue.push_back(s);
        }
        while (!queue.empty()) {
            const std::uint32_t s = queue.front();
            queue.pop_front();
            for (const auto& [c, t] : nodes_[s].edges) {
                std::uint32_t f = nodes_[s].fail;
                while (f != 0 && child(f, c) == none) f = nodes_[f].fail;
                const std::uint32_t target = child(f, c);
                nodes_[t].fail = (target == none || target == t) ? 0 : target;
                const auto& fn = nodes_[nodes_[t].fail];
                nodes_[t].out = fn.terminal ? nodes_[t].fail : fn.out;
                queue.push_back(t);
            }
        }
    }

    std::vector<node> nodes_;
    std::vector<std::size_t> lengths_;
};

}  // namespace interv
