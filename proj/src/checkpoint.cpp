#include "bachi/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace bachi {

namespace {

constexpr char kMagic[4] = {'B', 'C', 'H', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) { out.write((const char*)&v, 4); }
void put_u64(std::ostream& out, std::uint64_t v) { out.write((const char*)&v, 8); }
void put_f64(std::ostream& out, double v) { out.write((const char*)&v, 8); }

std::uint32_t get_u32(std::istream& in) {
    std::uint32_t v;
    in.read((char*)&v, 4);
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

std::uint64_t get_u64(std::istream& in) {
    std::uint64_t v;
    in.read((char*)&v, 8);
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

void put_mat(std::ostream& out, const std::string& name, const Mat& m) {
    put_u32(out, (std::uint32_t)name.size());
    out.write(name.data(), (std::streamsize)name.size());
    put_u64(out, (std::uint64_t)m.rows());
    put_u64(out, (std::uint64_t)m.cols());
    for (long i = 0; i < m.rows(); ++i)
        for (long j = 0; j < m.cols(); ++j) put_f64(out, m(i, j));
}

std::pair<std::string, Mat> get_mat(std::istream& in) {
    std::uint32_t nlen = get_u32(in);
    if (nlen > 4096) throw std::runtime_error("checkpoint: implausible name length");
    std::string name(nlen, '\0');
    in.read(name.data(), nlen);
    std::uint64_t rows = get_u64(in);
    std::uint64_t cols = get_u64(in);
    if (rows * cols > (1ull << 32))
        throw std::runtime_error("checkpoint: implausible tensor size for " + name);
    Mat m((long)rows, (long)cols);
    in.read((char*)m.data(), (std::streamsize)(rows * cols * 8));
    if (!in) throw std::runtime_error("checkpoint: truncated tensor data for " + name);
    return {name, m};
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& config_text,
                     long step, const ParamStore& params,
                     const OptimizerState* optimizer) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    put_u64(out, config_text.size());
    out.write(config_text.data(), (std::streamsize)config_text.size());
    put_u64(out, (std::uint64_t)step);
    put_u64(out, params.items().size());
    for (const auto& [name, p] : params.items()) put_mat(out, name, p->value);
    out.put(optimizer ? 1 : 0);
    if (optimizer) {
        put_f64(out, optimizer->beta1);
        put_f64(out, optimizer->beta2);
        put_f64(out, optimizer->eps);
        put_f64(out, optimizer->weight_decay);
        put_u64(out, (std::uint64_t)optimizer->step);
        put_u64(out, optimizer->m.size());
        for (const auto& [name, m] : optimizer->m) put_mat(out, name, m);
        put_u64(out, optimizer->v.size());
        for (const auto& [name, m] : optimizer->v) put_mat(out, name, m);
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    std::uint32_t version = get_u32(in);
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " +
                                 std::to_string(version));
    Checkpoint ck;
    std::uint64_t clen = get_u64(in);
    if (clen > (1ull << 24)) throw std::runtime_error("checkpoint: implausible config size");
    ck.config_text.resize(clen);
    in.read(ck.config_text.data(), (std::streamsize)clen);
    ck.step = (long)get_u64(in);
    std::uint64_t n = get_u64(in);
    for (std::uint64_t i = 0; i < n; ++i) {
        auto [name, m] = get_mat(in);
        ck.params.add(name, std::move(m));
    }
    int has_opt = in.get();
    if (has_opt == 1) {
        OptimizerState st;
        in.read((char*)&st.beta1, 8);
        in.read((char*)&st.beta2, 8);
        in.read((char*)&st.eps, 8);
        in.read((char*)&st.weight_decay, 8);
        st.step = (long)get_u64(in);
        std::uint64_t nm = get_u64(in);
        for (std::uint64_t i = 0; i < nm; ++i) {
            auto [name, m] = get_mat(in);
            st.m[name] = std::move(m);
        }
        std::uint64_t nv = get_u64(in);
        for (std::uint64_t i = 0; i < nv; ++i) {
            auto [name, m] = get_mat(in);
            st.v[name] = std::move(m);
        }
        ck.optimizer = std::move(st);
    } else if (has_opt != 0) {
        throw std::runtime_error("checkpoint: truncated optimizer section");
    }
    return ck;
}

}  // namespace bachi
