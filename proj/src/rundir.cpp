#include "evoforge/rundir.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "evoforge/digest.hpp"
#include "evoforge/error.hpp"

namespace evoforge {
namespace {

[[noreturn]] void io_fail(const std::string& what, const fs::path& path) {
  fail(ErrorCode::io, what + ": " + std::strerror(errno), {{"path", path.string()}});
}

void fsync_dir(const fs::path& dir) {
  const int fd = ::open(dir.empty() ? "." : dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd < 0) return;
  ::fsync(fd);
  ::close(fd);
}

void write_all(int fd, std::string_view bytes, const fs::path& path) {
  while (!bytes.empty()) {
    const ssize_t n = ::write(fd, bytes.data(), bytes.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      io_fail("write failed", path);
    }
    bytes.remove_prefix(static_cast<std::size_t>(n));
  }
}

}  // namespace

std::string write_file_atomic(const fs::path& path, std::string_view bytes) {
  const fs::path tmp = path.string() + ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) io_fail("cannot create", tmp);
  write_all(fd, bytes, tmp);
  if (::fsync(fd) != 0) io_fail("fsync failed", tmp);
  ::close(fd);
  if (::rename(tmp.c_str(), path.c_str()) != 0) io_fail("rename failed", path);
  fsync_dir(path.parent_path());
  return sha256_hex(bytes);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot read file", {{"path", path.string()}});
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string write_jsonl(const fs::path& path, const std::vector<json>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.dump();
    out += '\n';
  }
  return write_file_atomic(path, out);
}

RunLock::RunLock(const fs::path& dir) {
  const fs::path p = dir / ".lock";
  fd_ = ::open(p.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) io_fail("cannot open lock file", p);
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    fail(ErrorCode::locked, "run directory is locked by another process", {{"run_dir", dir.string()}});
  }
}

RunLock::~RunLock() {
  if (fd_ >= 0) ::close(fd_);
}

RunLock::RunLock(RunLock&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}

RunLock& RunLock::operator=(RunLock&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = std::exchange(other.fd_, -1);
  }
  return *this;
}

std::string chain_hash(const std::string& previous, const LedgerEvent& event) {
  json j = event;
  j.erase("timestamp");
  return sha256_hex(previous + j.dump());
}

LogPosition append_log(const fs::path& log, const LogPosition& at, const std::vector<LedgerEvent>& events) {
  LogPosition pos = at;
  std::string bytes;
  for (const auto& e : events) {
    pos.chain = chain_hash(pos.chain, e);
    json line = e;
    line["chain"] = pos.chain;
    bytes += line.dump();
    bytes += '\n';
    ++pos.events;
  }
  const int fd = ::open(log.c_str(), O_WRONLY | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) io_fail("cannot open ledger log", log);
  // Anything past the committed offset belongs to an interrupted stage.
  if (::ftruncate(fd, static_cast<off_t>(at.offset)) != 0) io_fail("truncate failed", log);
  if (::lseek(fd, static_cast<off_t>(at.offset), SEEK_SET) < 0) io_fail("seek failed", log);
  write_all(fd, bytes, log);
  if (::fsync(fd) != 0) io_fail("fsync failed", log);
  ::close(fd);
  pos.offset = at.offset + bytes.size();
  return pos;
}

LogReplay replay_log(const fs::path& log, const LogPosition& limit) {
  const std::string bytes = fs::exists(log) ? read_file(log) : std::string();
  if (bytes.size() < limit.offset) {
    fail(ErrorCode::corruption, "ledger log is shorter than the checkpoint offset",
         {{"offset", bytes.size()}, {"expected_offset", limit.offset}});
  }
  LogReplay out;
  std::uint64_t off = 0;
  while (off < limit.offset) {
    const auto nl = bytes.find('\n', off);
    if (nl == std::string::npos || nl >= limit.offset) {
      fail(ErrorCode::corruption, "ledger log line crosses the checkpoint offset", {{"offset", off}});
    }
    const std::string_view line(bytes.data() + off, nl - off);
    auto report = [&](const std::string& why) {
      fail(ErrorCode::corruption, "ledger log corrupted at byte offset " + std::to_string(off) + ": " + why,
           {{"offset", off}, {"seq", out.position.events}});
    };
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("chain")) report("unparseable line");
    LedgerEvent e;
    try {
      e = j.get<LedgerEvent>();
    } catch (const std::exception& ex) {
      report(ex.what());
    }
    const std::string expected = chain_hash(out.position.chain, e);
    if (j["chain"] != expected) report("chain mismatch");
    try {
      apply_event(out.ledger, e);
    } catch (const Error& ex) {
      report(ex.what());
    } catch (const std::exception& ex) {
      report(ex.what());
    }
    out.position.chain = expected;
    ++out.position.events;
    off = nl + 1;
  }
  out.position.offset = off;
  if (out.position.events != limit.events || out.position.chain != limit.chain) {
    fail(ErrorCode::corruption, "ledger log does not match the checkpoint",
         {{"offset", off}, {"events", out.position.events}, {"expected_events", limit.events}});
  }
  return out;
}

}  // namespace evoforge
