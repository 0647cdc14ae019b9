#pragma once

// On-disk formats. Every binary file is one JSON header line terminated by '\n'
// followed by a little-endian payload whose layout the header describes.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "error.hpp"
#include "fb_basis.hpp"
#include "moments.hpp"
#include "sim.hpp"
#include "types.hpp"

namespace uvtomo::io {

using json = nlohmann::json;

namespace detail {

template <class T>
T to_le(T v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        unsigned char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
        std::memcpy(&v, b, sizeof(T));
        return v;
    }
}

class Writer {
public:
    void f64(double v) {
        v = to_le(v);
        append(&v, sizeof v);
    }
    void i64(std::int64_t v) {
        v = to_le(v);
        append(&v, sizeof v);
    }
    void raw(const std::string& s) { buf_ += s; }
    const std::string& str() const { return buf_; }

private:
    void append(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
    std::string buf_;
};

class Reader {
public:
    Reader(const std::string& data, std::size_t pos, std::string what) : data_(data), pos_(pos), what_(std::move(what)) {}

    double f64() { return to_le(take<double>()); }
    std::int64_t i64() { return to_le(take<std::int64_t>()); }
    bool done() const { return pos_ == data_.size(); }

private:
    template <class T>
    T take() {
        if (data_.size() - pos_ < sizeof(T)) throw IoError(what_ + ": payload is truncated");
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    const std::string& data_;
    std::size_t pos_;
    std::string what_;
};

}  // namespace detail

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw IoError("read failed: " + path.string());
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

/// Splits "header\npayload" and parses the header.
inline std::pair<json, std::size_t> split_header(const std::string& bytes, const std::string& what) {
    const auto nl = bytes.find('\n');
    if (nl == std::string::npos) throw IoError(what + ": missing header line");
    json h;
    try {
        h = json::parse(bytes.substr(0, nl));
    } catch (const json::exception& e) {
        throw IoError(what + ": bad header: " + e.what());
    }
    return {h, nl + 1};
}

inline void expect_format(const json& h, const std::string& format, const std::string& what) {
    if (!h.is_object() || h.value("format", std::string()) != format)
        throw IoError(what + ": not a " + format + " file");
}

/// SHA-1 of "blob <size>\0<bytes>", i.e. the git object id of the content.
inline std::string git_blob_hash(const std::string& bytes) {
    const std::string prefix = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx) throw IoError("hash: EVP context allocation failed");
    const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                    EVP_DigestUpdate(ctx, prefix.data(), prefix.size()) == 1 &&
                    EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 && EVP_DigestFinal_ex(ctx, md, &len) == 1;
    EVP_MD_CTX_free(ctx);
    if (!ok) throw IoError("hash: SHA-1 digest failed");
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return hex.str();
}

inline std::string file_hash(const std::filesystem::path& path) { return git_blob_hash(read_file(path)); }

// ---- tilt-series batch ------------------------------------------------------
//
// header: {"format":"uvtomo-batch","version":1,"N","K","L","dx","alpha","sigma2","seed",
//          "n_theta","clean_variance"}
// payload: N*(2K+1)*L float64 samples, record-major then tilt then line position,
//          followed by N int64 hidden grid indices.

inline std::string encode_batch(const TiltSeriesBatch& b) {
    json h = {{"format", "uvtomo-batch"}, {"version", 1},     {"N", b.N},         {"K", b.K},
              {"L", b.grid.L},            {"dx", b.grid.dx},   {"alpha", b.alpha}, {"sigma2", b.sigma2},
              {"seed", b.seed},           {"n_theta", b.n_theta}, {"clean_variance", b.clean_variance}};
    detail::Writer w;
    w.raw(h.dump() + "\n");
    for (Index i = 0; i < b.samples.rows(); ++i)
        for (Index c = 0; c < b.samples.cols(); ++c) w.f64(b.samples(i, c));
    for (int l : b.hidden_angles) w.i64(l);
    return w.str();
}

inline TiltSeriesBatch decode_batch(const std::string& bytes, const std::string& what = "batch") {
    auto [h, pos] = split_header(bytes, what);
    expect_format(h, "uvtomo-batch", what);
    TiltSeriesBatch b;
    try {
        b.N = h.at("N").get<int>();
        b.K = h.at("K").get<int>();
        b.grid.L = h.at("L").get<int>();
        b.grid.dx = h.at("dx").get<double>();
        b.alpha = h.at("alpha").get<double>();
        b.sigma2 = h.at("sigma2").get<double>();
        b.seed = h.at("seed").get<std::uint64_t>();
        b.n_theta = h.at("n_theta").get<int>();
        b.clean_variance = h.value("clean_variance", 0.0);
    } catch (const json::exception& e) {
        throw IoError(what + ": bad header field: " + e.what());
    }
    if (b.N < 0 || b.K < 0 || b.grid.L < 1 || b.n_theta < 1) throw IoError(what + ": header has invalid sizes");
    const Index cols = static_cast<Index>(2 * b.K + 1) * b.grid.L;
    const std::size_t expected = static_cast<std::size_t>(b.N) * static_cast<std::size_t>(cols + 1) * 8;
    if (bytes.size() - pos != expected) throw IoError(what + ": payload size does not match the header");
    detail::Reader r(bytes, pos, what);
    b.samples.resize(b.N, cols);
    for (Index i = 0; i < b.N; ++i)
        for (Index c = 0; c < cols; ++c) b.samples(i, c) = r.f64();
    b.hidden_angles.resize(static_cast<std::size_t>(b.N));
    for (auto& l : b.hidden_angles) l = static_cast<int>(r.i64());
    return b;
}

inline void save_batch(const std::filesystem::path& path, const TiltSeriesBatch& b) { write_file(path, encode_batch(b)); }
inline TiltSeriesBatch load_batch(const std::filesystem::path& path) { return decode_batch(read_file(path), path.string()); }

// ---- coefficient estimate / ground truth --------------------------------------
//
// header: {"format":"uvtomo-estimate","version":1,"c","R","n_a","n_theta", ...extra}
// payload: n_a (re, im) float64 pairs in basis order, then n_theta float64 probabilities.

struct Estimate {
    double c = 0.0;
    double R = 0.0;
    VectorXc a;
    VectorXd p;
    json extra = json::object();  // free-form provenance

    std::shared_ptr<const BasisSpec> basis() const { return std::make_shared<const BasisSpec>(build_basis_spec(c, R)); }
};

inline std::string encode_estimate(const Estimate& e) {
    json h = e.extra.is_object() ? e.extra : json::object();
    h["format"] = "uvtomo-estimate";
    h["version"] = 1;
    h["c"] = e.c;
    h["R"] = e.R;
    h["n_a"] = e.a.size();
    h["n_theta"] = e.p.size();
    detail::Writer w;
    w.raw(h.dump() + "\n");
    for (Index u = 0; u < e.a.size(); ++u) {
        w.f64(e.a[u].real());
        w.f64(e.a[u].imag());
    }
    for (Index l = 0; l < e.p.size(); ++l) w.f64(e.p[l]);
    return w.str();
}

inline Estimate decode_estimate(const std::string& bytes, const std::string& what = "estimate") {
    auto [h, pos] = split_header(bytes, what);
    expect_format(h, "uvtomo-estimate", what);
    Estimate e;
    Index na = 0, nt = 0;
    try {
        e.c = h.at("c").get<double>();
        e.R = h.at("R").get<double>();
        na = h.at("n_a").get<Index>();
        nt = h.at("n_theta").get<Index>();
    } catch (const json::exception& ex) {
        throw IoError(what + ": bad header field: " + ex.what());
    }
    if (na < 0 || nt < 0) throw IoError(what + ": header has invalid sizes");
    if (bytes.size() - pos != static_cast<std::size_t>(2 * na + nt) * 8)
        throw IoError(what + ": payload size does not match the header");
    detail::Reader r(bytes, pos, what);
    e.a.resize(na);
    for (Index u = 0; u < na; ++u) {
        const double re = r.f64();
        e.a[u] = cplx(re, r.f64());
    }
    e.p.resize(nt);
    for (Index l = 0; l < nt; ++l) e.p[l] = r.f64();
    for (const char* k : {"format", "version", "c", "R", "n_a", "n_theta"}) h.erase(k);
    e.extra = std::move(h);
    return e;
}

inline void save_estimate(const std::filesystem::path& path, const Estimate& e) { write_file(path, encode_estimate(e)); }
inline Estimate load_estimate(const std::filesystem::path& path) { return decode_estimate(read_file(path), path.string()); }

// ---- moment features ------------------------------------------------------------
//
// header: {"format":"uvtomo-moments","version":1,"M","K","N"}
// payload: M float64 D_w entries, M (re, im) pairs of mu, then C as M*M (re, im) pairs, row-major.

inline std::string encode_features(const MomentFeatures& f) {
    const Index M = f.mu.size();
    if (f.C.rows() != M || f.C.cols() != M || f.dw.size() != M) throw DomainError("encode_features: inconsistent sizes");
    json h = {{"format", "uvtomo-moments"}, {"version", 1}, {"M", M}, {"K", f.K}, {"N", f.N}};
    detail::Writer w;
    w.raw(h.dump() + "\n");
    for (Index i = 0; i < M; ++i) w.f64(f.dw[i]);
    for (Index i = 0; i < M; ++i) {
        w.f64(f.mu[i].real());
        w.f64(f.mu[i].imag());
    }
    for (Index r = 0; r < M; ++r)
        for (Index c = 0; c < M; ++c) {
            w.f64(f.C(r, c).real());
            w.f64(f.C(r, c).imag());
        }
    return w.str();
}

inline MomentFeatures decode_features(const std::string& bytes, const std::string& what = "moments") {
    auto [h, pos] = split_header(bytes, what);
    expect_format(h, "uvtomo-moments", what);
    MomentFeatures f;
    Index M = 0;
    try {
        M = h.at("M").get<Index>();
        f.K = h.at("K").get<int>();
        f.N = h.at("N").get<long long>();
    } catch (const json::exception& e) {
        throw IoError(what + ": bad header field: " + e.what());
    }
    if (M < 0 || bytes.size() - pos != static_cast<std::size_t>(3 * M + 2 * M * M) * 8)
        throw IoError(what + ": payload size does not match the header");
    detail::Reader r(bytes, pos, what);
    f.dw.resize(M);
    for (Index i = 0; i < M; ++i) f.dw[i] = r.f64();
    f.mu.resize(M);
    for (Index i = 0; i < M; ++i) {
        const double re = r.f64();
        f.mu[i] = cplx(re, r.f64());
    }
    f.C.resize(M, M);
    for (Index a = 0; a < M; ++a)
        for (Index b = 0; b < M; ++b) {
            const double re = r.f64();
            f.C(a, b) = cplx(re, r.f64());
        }
    return f;
}

inline void save_features(const std::filesystem::path& path, const MomentFeatures& f) { write_file(path, encode_features(f)); }
inline MomentFeatures load_features(const std::filesystem::path& path) { return decode_features(read_file(path), path.string()); }

// ---- CSV ----------------------------------------------------------------------

/// Shortest round-trip decimal form; nan/inf spelled out.
inline std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    // Prefer a shorter representation when it round-trips.
    for (int prec = 6; prec < 17; ++prec) {
        char s[32];
        std::snprintf(s, sizeof s, "%.*g", prec, v);
        if (std::strtod(s, nullptr) == v) return s;
    }
    return buf;
}

inline constexpr const char* kReportHeader = "method,snr_db,re,tv,success,seed,runtime_s";
inline constexpr const char* kAdmmHistoryHeader = "iter,objective,primal_residual,lagrangian";
inline constexpr const char* kEmHistoryHeader = "iter,loglik";

inline std::string report_row(const std::string& method, double snr, double re, double tv, bool success,
                              std::uint64_t seed, double runtime) {
    return method + "," + fmt(snr) + "," + fmt(re) + "," + fmt(tv) + "," + (success ? "1" : "0") + "," +
           std::to_string(seed) + "," + fmt(runtime);
}

// ---- images -------------------------------------------------------------------

struct PgmScaling {
    double min = 0.0;
    double max = 0.0;
};

/// 8-bit binary PGM, linearly mapping [min, max] to [0, 255]. Row 0 is written first.
inline PgmScaling write_pgm(const std::filesystem::path& path, const MatrixXd& img) {
    if (img.size() == 0) throw DomainError("write_pgm: empty image");
    PgmScaling s{img.minCoeff(), img.maxCoeff()};
    const double span = s.max - s.min;
    std::string out = "P5\n" + std::to_string(img.cols()) + " " + std::to_string(img.rows()) + "\n255\n";
    for (Index i = 0; i < img.rows(); ++i)
        for (Index j = 0; j < img.cols(); ++j) {
            const double t = span > 0.0 ? (img(i, j) - s.min) / span : 0.0;
            out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * t))));
        }
    write_file(path, out);
    return s;
}

}  // namespace uvtomo::io
