#include "pmetlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <vector>

#include "pmetlab/hash.hpp"

namespace pmetlab {

namespace {

constexpr char kMagic[8] = {'P', 'M', 'E', 'T', 'L', 'A', 'B', '1'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& buf, uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& buf, double d) { put_u64(buf, std::bit_cast<uint64_t>(d)); }

void put_string(std::string& buf, const std::string& s) {
    put_u32(buf, static_cast<uint32_t>(s.size()));
    buf.append(s);
}

void put_blob(std::string& buf, const std::string& name, const Tensor& t) {
    put_string(buf, name);
    put_u32(buf, static_cast<uint32_t>(t.rank()));
    for (int64_t d : t.shape()) put_u64(buf, static_cast<uint64_t>(d));
    for (int64_t i = 0; i < t.size(); ++i) put_f64(buf, t.at(i));
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > buf.size())
            throw CheckpointError("checkpoint truncated: need " + std::to_string(n) +
                                  " bytes at offset " + std::to_string(pos));
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + static_cast<size_t>(i)]))
                 << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + static_cast<size_t>(i)]))
                 << (8 * i);
        pos += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        const uint32_t n = u32();
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

// fixed serialization order of weight blob names for a config
std::vector<std::pair<std::string, const Tensor*>> blob_list(const ToyTransformer& m) {
    std::vector<std::pair<std::string, const Tensor*>> blobs;
    blobs.emplace_back("tok_emb", &m.tok_emb);
    blobs.emplace_back("pos_emb", &m.pos_emb);
    for (size_t l = 0; l < m.layers.size(); ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        const LayerWeights& w = m.layers[l];
        blobs.emplace_back(p + "ln_gain", &w.ln_gain);
        blobs.emplace_back(p + "ln_bias", &w.ln_bias);
        blobs.emplace_back(p + "wq", &w.wq);
        blobs.emplace_back(p + "wk", &w.wk);
        blobs.emplace_back(p + "wv", &w.wv);
        blobs.emplace_back(p + "wo_attn", &w.wo_attn);
        blobs.emplace_back(p + "wi", &w.wi);
        blobs.emplace_back(p + "wo_ffn", &w.wo_ffn);
    }
    blobs.emplace_back("lnf_gain", &m.lnf_gain);
    blobs.emplace_back("lnf_bias", &m.lnf_bias);
    return blobs;
}

std::vector<std::pair<std::string, Tensor*>> blob_list_mut(ToyTransformer& m) {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (auto& [name, t] : blob_list(m)) out.emplace_back(name, const_cast<Tensor*>(t));
    return out;
}

}  // namespace

void save_checkpoint(const ToyTransformer& model, const std::string& path) {
    std::string buf;
    buf.append(kMagic, sizeof(kMagic));
    put_u32(buf, kVersion);

    const ModelConfig& c = model.config;
    put_u64(buf, static_cast<uint64_t>(c.n_layers));
    put_u64(buf, static_cast<uint64_t>(c.d_model));
    put_u64(buf, static_cast<uint64_t>(c.d_ff));
    put_u64(buf, static_cast<uint64_t>(c.n_heads));
    put_u64(buf, static_cast<uint64_t>(c.vocab_size));
    put_u64(buf, static_cast<uint64_t>(c.max_seq_len));
    put_u64(buf, c.seed);

    put_u32(buf, static_cast<uint32_t>(model.vocab.size()));
    for (const std::string& tok : model.vocab) put_string(buf, tok);

    const auto blobs = blob_list(model);
    put_u32(buf, static_cast<uint32_t>(blobs.size()));
    for (const auto& [name, t] : blobs) put_blob(buf, name, *t);

    put_u64(buf, fnv1a(buf.data(), buf.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw CheckpointError("write failed: " + path);
}

ToyTransformer load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < sizeof(kMagic) + 4 + 8)
        throw CheckpointError("checkpoint checksum verification failed: file too short");
    if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
        throw CheckpointError("bad checkpoint magic (not a PMETLAB1 file): " + path);

    const uint64_t stored = [&] {
        Reader tail{buf, buf.size() - 8};
        return tail.u64();
    }();
    const uint64_t actual = fnv1a(buf.data(), buf.size() - 8);
    if (stored != actual)
        throw CheckpointError("checkpoint checksum mismatch (corrupt or truncated): " + path);

    Reader r{buf, sizeof(kMagic)};
    const uint32_t version = r.u32();
    if (version != kVersion)
        throw CheckpointError("checkpoint version " + std::to_string(version) +
                              " unsupported (expected " + std::to_string(kVersion) + ")");

    ModelConfig c;
    c.n_layers = static_cast<int64_t>(r.u64());
    c.d_model = static_cast<int64_t>(r.u64());
    c.d_ff = static_cast<int64_t>(r.u64());
    c.n_heads = static_cast<int64_t>(r.u64());
    c.vocab_size = static_cast<int64_t>(r.u64());
    c.max_seq_len = static_cast<int64_t>(r.u64());
    c.seed = r.u64();
    try {
        c.validate();
    } catch (const ModelError& e) {
        throw CheckpointError(std::string("checkpoint config invalid: ") + e.what());
    }

    const uint32_t vocab_count = r.u32();
    if (static_cast<int64_t>(vocab_count) != c.vocab_size)
        throw CheckpointError("checkpoint vocab count " + std::to_string(vocab_count) +
                              " != config vocab_size " + std::to_string(c.vocab_size));
    std::vector<std::string> vocab;
    vocab.reserve(vocab_count);
    for (uint32_t i = 0; i < vocab_count; ++i) vocab.push_back(r.str());

    ToyTransformer model = init_model(c, std::move(vocab));

    std::map<std::string, Tensor> loaded;
    const uint32_t blob_count = r.u32();
    for (uint32_t i = 0; i < blob_count; ++i) {
        const std::string name = r.str();
        const uint32_t rank = r.u32();
        if (rank < 1 || rank > 2)
            throw CheckpointError("blob '" + name + "': rank " + std::to_string(rank) +
                                  " unsupported");
        std::vector<int64_t> dims;
        int64_t total = 1;
        for (uint32_t k = 0; k < rank; ++k) {
            dims.push_back(static_cast<int64_t>(r.u64()));
            if (dims.back() <= 0) throw CheckpointError("blob '" + name + "': bad dimension");
            total *= dims.back();
        }
        std::vector<double> data(static_cast<size_t>(total));
        for (int64_t k = 0; k < total; ++k) data[static_cast<size_t>(k)] = r.f64();
        Tensor t = (rank == 1) ? Tensor::from_vector(std::move(data))
                               : Tensor::from_matrix(dims[0], dims[1], std::move(data));
        if (!loaded.emplace(name, std::move(t)).second)
            throw CheckpointError("duplicate blob '" + name + "'");
    }
    if (r.pos != buf.size() - 8)
        throw CheckpointError("checkpoint has trailing bytes before checksum");

    for (auto& [name, dst] : blob_list_mut(model)) {
        auto it = loaded.find(name);
        if (it == loaded.end()) throw CheckpointError("checkpoint missing blob '" + name + "'");
        if (!it->second.same_shape(*dst))
            throw CheckpointError("blob '" + name + "' shape " + it->second.shape_str() +
                                  " does not match expected " + dst->shape_str());
        *dst = std::move(it->second);
        loaded.erase(it);
    }
    if (!loaded.empty())
        throw CheckpointError("checkpoint has unexpected blob '" + loaded.begin()->first + "'");
    return model;
}

}  // namespace pmetlab
