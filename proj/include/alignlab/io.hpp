#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "alignlab/advantage.hpp"
#include "alignlab/config.hpp"
#include "alignlab/errors.hpp"
#include "alignlab/mdp.hpp"
#include "alignlab/policy.hpp"
#include "alignlab/rng.hpp"

namespace alignlab {

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string content_hash(const std::string& bytes) {
    return hex64(detail::fnv1a64(bytes));
}

/// Writes via a temp file and rename so partially written outputs never land
/// under the final name.
inline void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("atomic_write: cannot open " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("atomic_write: short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_file: cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------
// task files
// ---------------------------------------------------------------------------

inline std::string serialize_task(const SynthTask& task, const TaskSpec& spec) {
    nlohmann::json j;
    j["magic"] = kTaskMagic;
    j["spec"] = task_spec_to_json(spec);
    j["vocab_size"] = task.mdp.vocab_size;
    j["eos_id"] = task.mdp.eos_id;
    j["horizon"] = task.mdp.horizon;
    j["prompts"] = task.mdp.prompts;
    nlohmann::json table = nlohmann::json::object();
    for (const auto& [key, row] : task.reward.table) table[key] = row;
    j["reward_table"] = std::move(table);
    return j.dump(2) + "\n";
}

inline void save_task(const std::filesystem::path& path, const SynthTask& task,
                      const TaskSpec& spec) {
    atomic_write(path, serialize_task(task, spec));
}

struct LoadedTask {
    SynthTask task;
    TaskSpec spec;
    std::string hash; // of the file bytes
};

inline LoadedTask load_task(const std::filesystem::path& path) {
    std::string bytes = read_file(path);
    nlohmann::json j = nlohmann::json::parse(bytes, nullptr, false);
    if (j.is_discarded()) throw IntegrityError("load_task: not valid JSON: " + path.string());
    if (!j.contains("magic") || j.at("magic") != kTaskMagic)
        throw IntegrityError("load_task: bad magic (want " + std::string(kTaskMagic) + ")");
    LoadedTask out;
    out.hash = content_hash(bytes);
    out.spec = task_spec_from_json(j.at("spec"), "spec");
    out.task.mdp.vocab_size = j.at("vocab_size").get<int>();
    out.task.mdp.eos_id = j.at("eos_id").get<int>();
    out.task.mdp.horizon = j.at("horizon").get<int>();
    for (const auto& p : j.at("prompts")) {
        TokenSeq seq;
        for (const auto& t : p) seq.push_back(t.get<int>());
        out.task.mdp.prompts.push_back(std::move(seq));
    }
    for (const auto& [key, row] : j.at("reward_table").items())
        out.task.reward.table[key] = row.get<std::vector<double>>();
    return out;
}

// ---------------------------------------------------------------------------
// policy checkpoints
// ---------------------------------------------------------------------------

inline std::string serialize_policy(const TabularPolicy& policy, const std::string& task_hash) {
    nlohmann::json j;
    j["magic"] = kPolicyMagic;
    j["role"] = to_string(policy.role());
    j["task_hash"] = task_hash;
    j["vocab_size"] = policy.vocab_size();
    nlohmann::json logits = nlohmann::json::object();
    for (const auto& [key, row] : policy.logits()) logits[key] = row;
    j["logits"] = std::move(logits);
    return j.dump(2) + "\n";
}

inline void save_policy(const std::filesystem::path& path, const TabularPolicy& policy,
                        const std::string& task_hash) {
    atomic_write(path, serialize_policy(policy, task_hash));
}

struct LoadedPolicy {
    TabularPolicy policy;
    std::string task_hash;
    std::string hash; // of the file bytes
};

inline LoadedPolicy load_policy(const std::filesystem::path& path,
                                const std::string& expected_task_hash = "") {
    std::string bytes = read_file(path);
    nlohmann::json j = nlohmann::json::parse(bytes, nullptr, false);
    if (j.is_discarded()) throw IntegrityError("load_policy: not valid JSON: " + path.string());
    if (!j.contains("magic") || j.at("magic") != kPolicyMagic)
        throw IntegrityError("load_policy: bad magic (want " + std::string(kPolicyMagic) + ")");
    LoadedPolicy out;
    out.hash = content_hash(bytes);
    out.task_hash = j.at("task_hash").get<std::string>();
    if (!expected_task_hash.empty() && out.task_hash != expected_task_hash)
        throw IntegrityError("load_policy: task hash mismatch (checkpoint built for " +
                             out.task_hash + ")");
    out.policy = TabularPolicy(j.at("vocab_size").get<int>(),
                               policy_role_from_string(j.at("role").get<std::string>()));
    std::map<StateKey, std::vector<double>> table;
    for (const auto& [key, row] : j.at("logits").items())
        table[key] = row.get<std::vector<double>>();
    out.policy.set_logits(std::move(table));
    return out;
}

/// Hash of a policy's serialized content, independent of any file on disk.
inline std::string policy_hash(const TabularPolicy& policy) {
    return content_hash(serialize_policy(policy, ""));
}

// ---------------------------------------------------------------------------
// advantage cache files (binary)
// ---------------------------------------------------------------------------

namespace detail {
inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    static_assert(sizeof bits == sizeof v);
    std::memcpy(&bits, &v, sizeof bits);
    put_u64(out, bits);
}

class ByteReader {
public:
    explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}
    std::uint32_t u32() {
        check(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        check(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
        return v;
    }
    double f64() {
        std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    std::string str(std::size_t n) {
        check(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

private:
    void check(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw IntegrityError("cache file truncated");
    }
    const std::string& bytes_;
    std::size_t pos_ = 0;
};
} // namespace detail

inline std::string serialize_cache(const TopKAdvantageCache& cache) {
    std::string out(kCacheMagic);
    detail::put_u32(out, static_cast<std::uint32_t>(cache.k));
    detail::put_u32(out, static_cast<std::uint32_t>(cache.vocab_size));
    detail::put_u32(out, cache.prob_space_subtraction ? 1u : 0u);
    detail::put_u32(out, static_cast<std::uint32_t>(cache.dpo_hash.size()));
    out += cache.dpo_hash;
    detail::put_u32(out, static_cast<std::uint32_t>(cache.ref_hash.size()));
    out += cache.ref_hash;
    detail::put_u64(out, cache.entries.size());
    for (const auto& [key, row] : cache.entries) {
        detail::put_u32(out, static_cast<std::uint32_t>(key.size()));
        out += key;
        detail::put_u32(out, static_cast<std::uint32_t>(row.size()));
        for (const auto& e : row) {
            detail::put_u32(out, static_cast<std::uint32_t>(e.token));
            detail::put_f64(out, e.log_ratio);
        }
    }
    return out;
}

inline void save_cache(const std::filesystem::path& path, const TopKAdvantageCache& cache) {
    atomic_write(path, serialize_cache(cache));
}

/// Loads a cache file; when teacher hashes are supplied they must match the
/// stored provenance.
inline TopKAdvantageCache load_cache(const std::filesystem::path& path,
                                     const std::string& expected_dpo_hash = "",
                                     const std::string& expected_ref_hash = "") {
    std::string bytes = read_file(path);
    std::string magic(kCacheMagic);
    if (bytes.size() < magic.size() || bytes.compare(0, magic.size(), magic) != 0)
        throw IntegrityError("load_cache: bad magic (want " + magic + ")");
    detail::ByteReader rd(bytes);
    (void)rd.str(magic.size());
    TopKAdvantageCache cache;
    cache.k = static_cast<int>(rd.u32());
    cache.vocab_size = static_cast<int>(rd.u32());
    cache.prob_space_subtraction = rd.u32() != 0;
    cache.dpo_hash = rd.str(rd.u32());
    cache.ref_hash = rd.str(rd.u32());
    if (!expected_dpo_hash.empty() && cache.dpo_hash != expected_dpo_hash)
        throw IntegrityError("load_cache: DPO teacher hash mismatch");
    if (!expected_ref_hash.empty() && cache.ref_hash != expected_ref_hash)
        throw IntegrityError("load_cache: reference teacher hash mismatch");
    std::uint64_t n_states = rd.u64();
    for (std::uint64_t i = 0; i < n_states; ++i) {
        StateKey key = rd.str(rd.u32());
        std::uint32_t n = rd.u32();
        std::vector<AdvantageEntry> row;
        row.reserve(n);
        for (std::uint32_t e = 0; e < n; ++e) {
            int token = static_cast<int>(rd.u32());
            double v = rd.f64();
            row.push_back(AdvantageEntry{token, v});
        }
        cache.entries.emplace(std::move(key), std::move(row));
    }
    return cache;
}

} // namespace alignlab
