/// @file rundir.hpp
/// @brief Durable file primitives for a run directory: atomic replacement,
///        an exclusive lock, and the hash-chained ledger log.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "evoforge/ledger.hpp"

namespace evoforge {

namespace fs = std::filesystem;

/// Write-to-temp, fsync, rename, fsync(dir). Returns the SHA-256 of `bytes`.
std::string write_file_atomic(const fs::path& path, std::string_view bytes);
std::string read_file(const fs::path& path);

/// Serializes records one per line; returns the file digest.
std::string write_jsonl(const fs::path& path, const std::vector<json>& records);

/// Exclusive advisory lock on `<dir>/.lock`, released on destruction.
/// Throws Error(locked) when another process holds it.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir);
  ~RunLock();
  RunLock(RunLock&& other) noexcept;
  RunLock& operator=(RunLock&& other) noexcept;
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  int fd_ = -1;
};

/// chain_n = sha256(chain_{n-1} || canonical event without timestamp).
std::string chain_hash(const std::string& previous, const LedgerEvent& event);
inline const std::string kChainGenesis(64, '0');

struct LogPosition {
  std::uint64_t offset = 0;  // bytes
  std::int64_t events = 0;
  std::string chain = kChainGenesis;
};

/// Appends events as JSON lines and fsyncs. Returns the new position.
LogPosition append_log(const fs::path& log, const LogPosition& at, const std::vector<LedgerEvent>& events);

struct LogReplay {
  EvolutionLedger ledger;
  LogPosition position;
};

/// Replays the first `limit.offset` bytes, verifying every line's chain.
/// Throws Error(corruption) naming the byte offset of the first bad line.
LogReplay replay_log(const fs::path& log, const LogPosition& limit);

}  // namespace evoforge
