#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace lstr {

// Boolean attention mask. Rows index queries, cols index keys, true = attend
// allowed. Every query row must keep at least one allowed key or the softmax
// over that row is undefined.
struct AttentionMask {
    int rows = 0;
    int cols = 0;
    std::vector<std::uint8_t> allow;

    AttentionMask() = default;
    AttentionMask(int r, int c, bool init = true)
        : rows(r), cols(c), allow(static_cast<std::size_t>(r) * static_cast<std::size_t>(c),
                                  init ? 1 : 0) {}

    bool allowed(int r, int c) const {
        return allow[static_cast<std::size_t>(r) * cols + c] != 0;
    }
    void set(int r, int c, bool v) {
        allow[static_cast<std::size_t>(r) * cols + c] = v ? 1 : 0;
    }
};

// Lower-triangular mask over a short-term window in temporal order
// (oldest first): position t may attend only to positions <= t.
inline AttentionMask directional_mask(int m_s) {
    if (m_s < 1) {
        throw std::invalid_argument("directional_mask: m_S must be >= 1, got " +
                                    std::to_string(m_s));
    }
    AttentionMask m(m_s, m_s, false);
    for (int r = 0; r < m_s; ++r) {
        for (int c = 0; c <= r; ++c) {
            m.set(r, c, true);
        }
    }
    return m;
}

}  // namespace lstr
