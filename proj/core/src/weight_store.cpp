#include "obskit/weight_store.hpp"

#include <fstream>

#include "obskit/io.hpp"

namespace obskit {

void Mask::save_file(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("mask save: cannot open " + path);
    write_u64_le(f, bits_.size());
    f.write(reinterpret_cast<const char*>(bits_.data()),
            static_cast<std::streamsize>(bits_.size()));
    write_u64_le(f, segments_.size());
    for (const auto& s : segments_) {
        write_u64_le(f, s.name.size());
        f.write(s.name.data(), static_cast<std::streamsize>(s.name.size()));
        write_u64_le(f, s.offset);
        write_u64_le(f, s.length);
    }
    if (!f) throw IoError("mask save: write failed for " + path);
}

Mask Mask::load_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("mask load: cannot open " + path);
    const auto d = read_u64_le(f);
    std::vector<std::uint8_t> bits(d);
    f.read(reinterpret_cast<char*>(bits.data()), static_cast<std::streamsize>(d));
    const auto n_segments = read_u64_le(f);
    std::vector<Segment> segments;
    segments.reserve(n_segments);
    for (std::uint64_t i = 0; i < n_segments; ++i) {
        const auto len = read_u64_le(f);
        std::string name(len, '\0');
        f.read(name.data(), static_cast<std::streamsize>(len));
        Segment s;
        s.name = std::move(name);
        s.offset = static_cast<std::size_t>(read_u64_le(f));
        s.length = static_cast<std::size_t>(read_u64_le(f));
        segments.push_back(std::move(s));
    }
    if (!f) throw IoError("mask load: truncated file " + path);
    Mask mask(d, std::move(segments));
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (bits[i] == 0) mask.prune(i);
    }
    return mask;
}

}  // namespace obskit
