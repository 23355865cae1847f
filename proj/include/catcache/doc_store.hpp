#pragma once

#include <atomic>
#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <boost/beast/core/detail/base64.hpp>
#include <boost/crc.hpp>
#include <nlohmann/json.hpp>

#include "catcache/errors.hpp"

namespace catcache {

using DocId = std::string;
using TimestampMs = std::int64_t;

struct DocumentRecord {
    DocId doc_id;
    std::string request_body;   ///< arbitrary bytes
    std::string response_body;  ///< arbitrary bytes
    TimestampMs stored_at = 0;

    friend bool operator==(const DocumentRecord&, const DocumentRecord&) = default;
};

struct BackendLatencyModel {
    double fetch_ms = 5.0;
    double put_ms = 5.0;
};

/// Operation counters every backend maintains; tests use them to prove
/// which paths touched storage.
struct StoreCounters {
    std::atomic<std::uint64_t> puts{0};
    std::atomic<std::uint64_t> fetches{0};
    std::atomic<std::uint64_t> deletes{0};

    std::uint64_t total() const { return puts + fetches + deletes; }
};

inline std::string base64_encode(std::string_view bytes) {
    namespace b64 = boost::beast::detail::base64;
    std::string out(b64::encoded_size(bytes.size()), '\0');
    out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
    return out;
}

inline std::string base64_decode(std::string_view text) {
    namespace b64 = boost::beast::detail::base64;
    if (text.size() % 4 != 0) throw ValidationError("malformed_base64", "length is not a multiple of 4");
    std::string out(b64::decoded_size(text.size()), '\0');
    std::size_t body = text.size();
    for (int i = 0; i < 2 && body > 0 && text[body - 1] == '='; ++i) --body;
    const auto [written, read] = b64::decode(out.data(), text.data(), body);
    if (read != body) throw ValidationError("malformed_base64", "invalid character in base64 text");
    out.resize(written);
    return out;
}

/// Key-value contract for external document storage. Lookup is by primary
/// key only; there is deliberately no search operation here.
class DocumentStore {
public:
    virtual ~DocumentStore() = default;

    /// Stores a copy of the record under a freshly minted id (the record's own
    /// doc_id is ignored) and returns that id.
    virtual DocId put(const DocumentRecord& record) = 0;
    /// nullopt signals not-found.
    virtual std::optional<DocumentRecord> fetch(const DocId& id) = 0;
    /// Idempotent.
    virtual void remove(const DocId& id) = 0;
    virtual std::size_t size() const = 0;

    const BackendLatencyModel& latency() const noexcept { return latency_; }
    const StoreCounters& counters() const noexcept { return counters_; }

protected:
    explicit DocumentStore(BackendLatencyModel latency) : latency_(latency) {
        if (latency.fetch_ms < 0.0 || latency.put_ms < 0.0) throw UsageError("latencies must be >= 0");
    }

    BackendLatencyModel latency_;
    StoreCounters counters_;
};

/// Accumulates simulated milliseconds charged by backends.
class SimClock {
public:
    void advance(double ms) {
        std::lock_guard lock(mu_);
        elapsed_ms_ += ms;
    }
    double elapsed_ms() const {
        std::lock_guard lock(mu_);
        return elapsed_ms_;
    }

private:
    mutable std::mutex mu_;
    double elapsed_ms_ = 0.0;
};

/// In-memory backend that charges its latency model to an optional SimClock.
/// Failure switches let tests exercise storage-error paths.
class SimulatedDocStore final : public DocumentStore {
public:
    explicit SimulatedDocStore(BackendLatencyModel latency = {}, SimClock* clock = nullptr)
        : DocumentStore(latency), clock_(clock) {}

    DocId put(const DocumentRecord& record) override {
        ++counters_.puts;
        if (fail_puts_) throw StorageError("simulated put failure");
        charge(latency_.put_ms);
        std::unique_lock lock(mu_);
        DocId id = "sim-" + std::to_string(next_id_++);
        DocumentRecord stored = record;
        stored.doc_id = id;
        docs_.emplace(id, std::move(stored));
        return id;
    }

    std::optional<DocumentRecord> fetch(const DocId& id) override {
        ++counters_.fetches;
        if (fail_fetches_) throw StorageError("simulated fetch failure");
        charge(latency_.fetch_ms);
        std::shared_lock lock(mu_);
        auto it = docs_.find(id);
        if (it == docs_.end()) return std::nullopt;
        return it->second;
    }

    void remove(const DocId& id) override {
        ++counters_.deletes;
        std::unique_lock lock(mu_);
        docs_.erase(id);
    }

    std::size_t size() const override {
        std::shared_lock lock(mu_);
        return docs_.size();
    }

    void fail_puts(bool on) { fail_puts_ = on; }
    void fail_fetches(bool on) { fail_fetches_ = on; }

    /// Drops a record behind the cache's back (simulates external data loss).
    void forget(const DocId& id) {
        std::unique_lock lock(mu_);
        docs_.erase(id);
    }

private:
    void charge(double ms) {
        if (clock_) clock_->advance(ms);
    }

    SimClock* clock_;
    mutable std::shared_mutex mu_;
    std::unordered_map<DocId, DocumentRecord> docs_;
    std::uint64_t next_id_ = 0;
    std::atomic<bool> fail_puts_{false};
    std::atomic<bool> fail_fetches_{false};
};

/// Persistent backend: one append-only log of frames
///   [payload length: u32 LE][CRC-32 of payload: u32 LE][payload]
/// where each payload is a JSON document record (bodies base64) or a
/// {"doc_id", "deleted": true} tombstone. Opening the file rebuilds the
/// id -> offset map with a full scan and truncates a torn or corrupt tail.
class FileDocStore final : public DocumentStore {
public:
    explicit FileDocStore(std::filesystem::path path, BackendLatencyModel latency = {})
        : DocumentStore(latency), path_(std::move(path)) {
        fd_ = ::open(path_.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
        if (fd_ < 0) throw StorageError("cannot open " + path_.string() + ": " + std::strerror(errno));
        recover();
    }

    ~FileDocStore() override {
        if (fd_ >= 0) ::close(fd_);
    }

    FileDocStore(const FileDocStore&) = delete;
    FileDocStore& operator=(const FileDocStore&) = delete;

    DocId put(const DocumentRecord& record) override {
        ++counters_.puts;
        std::lock_guard writer(write_mu_);
        DocId id = format_id(next_seq_);
        nlohmann::json payload{{"doc_id", id},
                               {"request_body", base64_encode(record.request_body)},
                               {"response_body", base64_encode(record.response_body)},
                               {"stored_at", record.stored_at}};
        const std::uint64_t offset = append(payload.dump());
        ++next_seq_;
        std::unique_lock lock(map_mu_);
        offsets_[id] = offset;
        return id;
    }

    std::optional<DocumentRecord> fetch(const DocId& id) override {
        ++counters_.fetches;
        std::uint64_t offset = 0;
        {
            std::shared_lock lock(map_mu_);
            auto it = offsets_.find(id);
            if (it == offsets_.end()) return std::nullopt;
            offset = it->second;
        }
        const auto payload = read_frame(offset);
        if (!payload) throw StorageError("corrupt frame for " + id);
        return decode_record(nlohmann::json::parse(*payload));
    }

    void remove(const DocId& id) override {
        ++counters_.deletes;
        std::lock_guard writer(write_mu_);
        {
            std::shared_lock lock(map_mu_);
            if (!offsets_.contains(id)) return;
        }
        append(nlohmann::json{{"doc_id", id}, {"deleted", true}}.dump());
        std::unique_lock lock(map_mu_);
        offsets_.erase(id);
    }

    std::size_t size() const override {
        std::shared_lock lock(map_mu_);
        return offsets_.size();
    }

    /// Bytes of the log that survived recovery plus everything appended since.
    std::uint64_t log_size() const {
        std::lock_guard writer(write_mu_);
        return end_;
    }

    const std::filesystem::path& path() const noexcept { return path_; }

private:
    static constexpr std::size_t kHeader = 8;
    static constexpr std::uint32_t kMaxPayload = 1u << 30;

    static DocId format_id(std::uint64_t seq) {
        char buf[24];
        std::snprintf(buf, sizeof buf, "doc-%016llx", static_cast<unsigned long long>(seq));
        return buf;
    }

    static std::uint32_t crc32(std::string_view bytes) {
        boost::crc_32_type crc;
        crc.process_bytes(bytes.data(), bytes.size());
        return crc.checksum();
    }

    static void put_u32(char* dst, std::uint32_t v) {
        for (int i = 0; i < 4; ++i) dst[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
    }
    static std::uint32_t get_u32(const char* src) {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(src[i])) << (8 * i);
        return v;
    }

    static DocumentRecord decode_record(const nlohmann::json& j) {
        DocumentRecord r;
        r.doc_id = j.at("doc_id").get<std::string>();
        r.request_body = base64_decode(j.at("request_body").get<std::string>());
        r.response_body = base64_decode(j.at("response_body").get<std::string>());
        r.stored_at = j.at("stored_at").get<TimestampMs>();
        return r;
    }

    // Caller holds write_mu_.
    std::uint64_t append(const std::string& payload) {
        std::string frame(kHeader + payload.size(), '\0');
        put_u32(frame.data(), static_cast<std::uint32_t>(payload.size()));
        put_u32(frame.data() + 4, crc32(payload));
        std::memcpy(frame.data() + kHeader, payload.data(), payload.size());
        write_all(frame, end_);
        const std::uint64_t offset = end_;
        end_ += frame.size();
        return offset;
    }

    void write_all(std::string_view bytes, std::uint64_t at) {
        std::size_t done = 0;
        while (done < bytes.size()) {
            const ssize_t n = ::pwrite(fd_, bytes.data() + done, bytes.size() - done, static_cast<off_t>(at + done));
            if (n < 0) {
                if (errno == EINTR) continue;
                throw StorageError("write to " + path_.string() + " failed: " + std::strerror(errno));
            }
            done += static_cast<std::size_t>(n);
        }
    }

    bool read_exact(char* dst, std::size_t len, std::uint64_t at) const {
        std::size_t done = 0;
        while (done < len) {
            const ssize_t n = ::pread(fd_, dst + done, len - done, static_cast<off_t>(at + done));
            if (n < 0) {
                if (errno == EINTR) continue;
                throw StorageError("read from " + path_.string() + " failed: " + std::strerror(errno));
            }
            if (n == 0) return false;
            done += static_cast<std::size_t>(n);
        }
        return true;
    }

    // Payload of the frame at `offset`, or nullopt when the frame is torn or
    // fails its checksum.
    std::optional<std::string> read_frame(std::uint64_t offset) const {
        char header[kHeader];
        if (!read_exact(header, kHeader, offset)) return std::nullopt;
        const std::uint32_t len = get_u32(header);
        if (len > kMaxPayload) return std::nullopt;
        std::string payload(len, '\0');
        if (!read_exact(payload.data(), len, offset + kHeader)) return std::nullopt;
        if (crc32(payload) != get_u32(header + 4)) return std::nullopt;
        return payload;
    }

    void recover() {
        std::uint64_t offset = 0;
        std::uint64_t max_seq = 0;
        bool any = false;
        while (auto payload = read_frame(offset)) {
            nlohmann::json j = nlohmann::json::parse(*payload, nullptr, false);
            if (j.is_discarded() || !j.contains("doc_id")) break;
            const auto id = j.at("doc_id").get<std::string>();
            if (j.value("deleted", false)) {
                offsets_.erase(id);
            } else {
                offsets_[id] = offset;
            }
            if (id.rfind("doc-", 0) == 0) {
                max_seq = std::max<std::uint64_t>(max_seq, std::stoull(id.substr(4), nullptr, 16));
                any = true;
            }
            offset += kHeader + payload->size();
        }
        end_ = offset;
        next_seq_ = any ? max_seq + 1 : 0;
        struct stat st {};
        if (::fstat(fd_, &st) == 0 && static_cast<std::uint64_t>(st.st_size) > end_) {
            if (::ftruncate(fd_, static_cast<off_t>(end_)) != 0)
                throw StorageError("cannot truncate torn tail of " + path_.string());
        }
    }

    std::filesystem::path path_;
    int fd_ = -1;
    mutable std::mutex write_mu_;
    mutable std::shared_mutex map_mu_;
    std::unordered_map<DocId, std::uint64_t> offsets_;
    std::uint64_t end_ = 0;
    std::uint64_t next_seq_ = 0;
};

}  // namespace catcache
