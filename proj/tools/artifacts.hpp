#pragma once
// Run-directory bookkeeping: digests, delimited tables, JSON files and the
// per-command manifests that tie outputs to the configuration.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "config.hpp"

namespace hetfx::cli {

inline std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 || EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
        EVP_MD_CTX_free(ctx);
        throw Error("SHA-256 digest failed");
    }
    EVP_MD_CTX_free(ctx);
    std::ostringstream out;
    for (unsigned int k = 0; k < len; ++k) out << std::hex << std::setw(2) << std::setfill('0') << int(digest[k]);
    return out.str();
}

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::string file_sha256(const fs::path& path) { return sha256_hex(read_file(path)); }

inline std::string json_hash(const json& j) { return sha256_hex(j.dump()); }

/// Comma-delimited table built in memory.
class Table {
public:
    explicit Table(std::vector<std::string> header) : header_(std::move(header)) {}

    template <class... Cells>
    void row(const Cells&... cells) {
        std::vector<std::string> r;
        (r.push_back(cell(cells)), ...);
        add(std::move(r));
    }

    void add(std::vector<std::string> r) {
        if (r.size() != header_.size()) throw Error("table row width does not match its header");
        rows_.push_back(std::move(r));
    }

    std::string str() const {
        std::string out;
        auto line = [&](const std::vector<std::string>& r) {
            for (std::size_t j = 0; j < r.size(); ++j) out += (j ? "," : "") + csv::quote(r[j]);
            out += '\n';
        };
        line(header_);
        for (const auto& r : rows_) line(r);
        return out;
    }

    static std::string cell(const std::string& s) { return s; }
    static std::string cell(const char* s) { return s; }
    static std::string cell(double v) { return std::isfinite(v) ? csv::format_double(v) : std::string(); }
    static std::string cell(std::size_t v) { return std::to_string(v); }
    static std::string cell(int v) { return std::to_string(v); }
    static std::string cell(bool v) { return v ? "1" : "0"; }
    static std::string cell(const std::optional<double>& v) { return v ? cell(*v) : std::string(); }

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

/// Output directory for one command. Files are recorded with their digests
/// and listed in the command's manifest.
class RunDir {
public:
    RunDir(fs::path dir, std::string command) : dir_(std::move(dir)), command_(std::move(command)) {
        fs::create_directories(dir_);
    }

    const fs::path& path() const { return dir_; }
    fs::path operator/(const std::string& name) const { return dir_ / name; }

    void write(const std::string& name, const std::string& content) {
        std::ofstream out(dir_ / name, std::ios::binary);
        if (!out) throw Error("cannot write '" + (dir_ / name).string() + "'");
        out << content;
        out.close();
        if (!out) throw Error("failed writing '" + (dir_ / name).string() + "'");
        artifacts_[name] = sha256_hex(content);
    }
    void write(const std::string& name, const Table& t) { write(name, t.str()); }
    void write(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }

    /// Writes <command>.manifest.json listing every artifact written so far.
    void finish(json extra) {
        extra["command"] = command_;
        extra["version"] = kVersion;
        extra["artifacts"] = artifacts_;
        write(command_ + ".manifest.json", extra);
    }

private:
    fs::path dir_;
    std::string command_;
    std::map<std::string, std::string> artifacts_;
};

inline json read_json(const fs::path& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw Error("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

class ManifestError : public Error {
public:
    using Error::Error;
};

/// Loads <command>.manifest.json from `dir` and checks that it was produced
/// with the expected section hash and that its artifacts are unchanged.
inline json require_manifest(const fs::path& dir, const std::string& command, const std::string& hash_key,
                             const std::string& expected_hash, const std::string& rerun_hint) {
    const fs::path path = dir / (command + ".manifest.json");
    if (!fs::exists(path))
        throw ManifestError("missing " + path.string() + ": run `hetfx " + rerun_hint + "` with this config and --out first");
    const json m = read_json(path);
    if (m.value(hash_key, std::string()) != expected_hash)
        throw ManifestError("stale " + path.string() + ": it was produced with a different configuration (" + hash_key +
                            " " + m.value(hash_key, std::string("?")) + " vs " + expected_hash + "); rerun `hetfx " +
                            rerun_hint + "`");
    if (m.value("version", std::string()) != kVersion)
        throw ManifestError("stale " + path.string() + ": written by version " + m.value("version", std::string("?")) +
                            "; rerun `hetfx " + rerun_hint + "`");
    for (const auto& [name, digest] : m.at("artifacts").items()) {
        const fs::path f = dir / name;
        if (!fs::exists(f)) throw ManifestError("artifact " + f.string() + " listed in " + path.string() + " is missing; rerun `hetfx " + rerun_hint + "`");
        if (file_sha256(f) != digest.get<std::string>())
            throw ManifestError("artifact " + f.string() + " was modified after `hetfx " + rerun_hint + "`; rerun it");
    }
    return m;
}

} // namespace hetfx::cli
