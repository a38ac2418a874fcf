#pragma once

// Binary checkpoint format, magic "LMS2S1". Little-endian throughout.
//
//   magic            6 bytes
//   config_len       u32, then config echo text (key=value lines)
//   group_count      u32
//   per group:       name (u32 len + bytes), frozen u8, tensor_count u32
//   per tensor:      name (u32 len + bytes), precision u8 (0=f32, 1=f64),
//                    rank u32, dims u32 each, raw values
//
// Round trips are bit-exact for both precisions.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "lms2s/common.hpp"
#include "lms2s/seq2seq.hpp"

namespace lms2s {

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

inline constexpr char kCheckpointMagic[6] = {'L', 'M', 'S', '2', 'S', '1'};

struct CheckpointEntry {
    std::string name;
    std::uint8_t precision = 1;  // 0 = f32, 1 = f64
    Shape shape;
    std::vector<char> raw;
};

struct CheckpointGroup {
    std::string name;
    bool frozen = false;
    std::vector<CheckpointEntry> entries;
};

struct Checkpoint {
    std::string config_echo;
    std::vector<CheckpointGroup> groups;

    const CheckpointGroup* find(const std::string& name) const {
        for (const auto& g : groups)
            if (g.name == name) return &g;
        return nullptr;
    }
};

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
}

inline std::uint32_t read_u32(std::istream& in, const std::string& what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw IoError("checkpoint: truncated while reading " + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_str(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_str(std::istream& in, const std::string& what) {
    const std::uint32_t len = read_u32(in, what + " length");
    std::string s(len, '\0');
    if (len && !in.read(s.data(), len))
        throw IoError("checkpoint: truncated while reading " + what);
    return s;
}

template <typename S>
constexpr std::uint8_t precision_tag() {
    return sizeof(S) == 4 ? 0 : 1;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("checkpoint: cannot write " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::write_str(out, ckpt.config_echo);
    detail::write_u32(out, static_cast<std::uint32_t>(ckpt.groups.size()));
    for (const auto& g : ckpt.groups) {
        detail::write_str(out, g.name);
        out.put(g.frozen ? '\1' : '\0');
        detail::write_u32(out, static_cast<std::uint32_t>(g.entries.size()));
        for (const auto& e : g.entries) {
            detail::write_str(out, e.name);
            out.put(static_cast<char>(e.precision));
            detail::write_u32(out, static_cast<std::uint32_t>(e.shape.size()));
            for (std::size_t d : e.shape) detail::write_u32(out, static_cast<std::uint32_t>(d));
            out.write(e.raw.data(), static_cast<std::streamsize>(e.raw.size()));
        }
    }
    if (!out) throw IoError("checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open " + path);
    char magic[6];
    if (!in.read(magic, 6) || std::memcmp(magic, kCheckpointMagic, 6) != 0)
        throw IoError("checkpoint: bad magic in " + path);
    Checkpoint ckpt;
    ckpt.config_echo = detail::read_str(in, "config echo");
    const std::uint32_t group_count = detail::read_u32(in, "group count");
    ckpt.groups.resize(group_count);
    for (auto& g : ckpt.groups) {
        g.name = detail::read_str(in, "group name");
        int frozen = in.get();
        if (frozen == EOF) throw IoError("checkpoint: truncated in group '" + g.name + "'");
        g.frozen = frozen != 0;
        const std::uint32_t entry_count = detail::read_u32(in, "entry count of '" + g.name + "'");
        g.entries.resize(entry_count);
        for (auto& e : g.entries) {
            e.name = detail::read_str(in, "entry name in '" + g.name + "'");
            const std::string full = g.name + "." + e.name;
            int prec = in.get();
            if (prec == EOF) throw IoError("checkpoint: truncated in entry '" + full + "'");
            if (prec != 0 && prec != 1)
                throw IoError("checkpoint: unknown precision tag for entry '" + full + "'");
            e.precision = static_cast<std::uint8_t>(prec);
            const std::uint32_t rank = detail::read_u32(in, "rank of '" + full + "'");
            e.shape.resize(rank);
            for (auto& d : e.shape) d = detail::read_u32(in, "dims of '" + full + "'");
            const std::size_t bytes = shape_numel(e.shape) * (e.precision == 0 ? 4 : 8);
            e.raw.resize(bytes);
            if (bytes && !in.read(e.raw.data(), static_cast<std::streamsize>(bytes)))
                throw IoError("checkpoint: truncated values in entry '" + full + "'");
        }
    }
    return ckpt;
}

// ---------------------------------------------------------------------------
// Model <-> checkpoint conversion
// ---------------------------------------------------------------------------

template <typename S>
CheckpointEntry entry_from_tensor(const std::string& name, const Tensor<S>& t) {
    CheckpointEntry e;
    e.name = name;
    e.precision = detail::precision_tag<S>();
    e.shape = t.shape();
    e.raw.resize(t.numel() * sizeof(S));
    if (t.numel()) std::memcpy(e.raw.data(), t.data().data(), e.raw.size());
    return e;
}

template <typename S>
Tensor<S> tensor_from_entry(const CheckpointEntry& e, const std::string& group) {
    if (e.precision != detail::precision_tag<S>())
        throw IoError("checkpoint: entry '" + group + "." + e.name +
                      "' precision does not match the configured precision");
    std::vector<S> values(shape_numel(e.shape));
    if (!values.empty()) std::memcpy(values.data(), e.raw.data(), e.raw.size());
    return Tensor<S>::from_vector(std::move(values), e.shape);
}

template <typename S>
Checkpoint checkpoint_from_model(Model<S>& model, const std::string& config_echo) {
    Checkpoint ckpt;
    ckpt.config_echo = config_echo;
    for (auto& g : param_groups(model)) {
        CheckpointGroup cg;
        cg.name = g.name;
        cg.frozen = g.frozen;
        for (auto& p : g.params) cg.entries.push_back(entry_from_tensor(p.name, p.tensor));
        ckpt.groups.push_back(std::move(cg));
    }
    return ckpt;
}

namespace detail {

template <typename S>
Tensor<S> take(const CheckpointGroup& g, const std::string& name) {
    for (const auto& e : g.entries)
        if (e.name == name) return tensor_from_entry<S>(e, g.name);
    throw IoError("checkpoint: group '" + g.name + "' is missing entry '" + name + "'");
}

template <typename S>
LstmParams<S> lstm_from_group(const CheckpointGroup& g, const std::string& prefix) {
    return {take<S>(g, prefix + "w_ih"), take<S>(g, prefix + "w_hh"), take<S>(g, prefix + "bias")};
}

template <typename S>
DecoderParams<S> decoder_from_group(const CheckpointGroup& g) {
    return {take<S>(g, "embedding"), lstm_from_group<S>(g, ""), take<S>(g, "attn_proj"),
            take<S>(g, "w_out"), take<S>(g, "b_out")};
}

}  // namespace detail

// Rebuilds a model from checkpoint groups; whichever decoder groups are
// present (dummy decoder, filters) are restored.
template <typename S>
Model<S> model_from_checkpoint(const Checkpoint& ckpt) {
    Model<S> m;
    const CheckpointGroup* enc = ckpt.find("encoder");
    const CheckpointGroup* enh = ckpt.find("enhancer");
    const CheckpointGroup* cls = ckpt.find("classifier");
    if (!enc || !enh || !cls)
        throw IoError("checkpoint: missing encoder/enhancer/classifier groups");
    m.encoder.embedding = detail::take<S>(*enc, "embedding");
    m.encoder.fwd = detail::lstm_from_group<S>(*enc, "fwd.");
    bool has_bwd = false;
    for (const auto& e : enc->entries) has_bwd = has_bwd || e.name == "bwd.w_ih";
    if (has_bwd) m.encoder.bwd = detail::lstm_from_group<S>(*enc, "bwd.");
    m.encoder_frozen = enc->frozen;
    m.enhancer = {detail::take<S>(*enh, "w1"), detail::take<S>(*enh, "b1"),
                  detail::take<S>(*enh, "w2"), detail::take<S>(*enh, "b2")};
    m.enhancer_frozen = enh->frozen;
    m.classifier = {detail::take<S>(*cls, "w1"), detail::take<S>(*cls, "b1"),
                    detail::take<S>(*cls, "w2"), detail::take<S>(*cls, "b2")};
    if (const CheckpointGroup* dummy = ckpt.find("dummy_decoder"))
        m.dummy_decoder = detail::decoder_from_group<S>(*dummy);
    for (std::size_t i = 1;; ++i) {
        const CheckpointGroup* f = ckpt.find("filter_" + std::to_string(i));
        if (!f) break;
        m.filters.push_back(detail::decoder_from_group<S>(*f));
    }
    mark_trainable(m);
    return m;
}

}  // namespace lms2s
