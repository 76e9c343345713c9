#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <memory>

#include "common/error.hpp"
#include "harness/harness.hpp"

namespace lev::harness {

namespace {

struct DigestContext {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx{EVP_MD_CTX_new(), &EVP_MD_CTX_free};
  DigestContext() {
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
      fail(ErrorCode::internal, "SHA-256 initialization failed");
  }
  void update(const char* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx.get(), data, n) != 1) fail(ErrorCode::internal, "SHA-256 update failed");
  }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx.get(), md, &len) != 1) fail(ErrorCode::internal, "SHA-256 finalization failed");
    static const char* digits = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(digits[md[i] >> 4]);
      out.push_back(digits[md[i] & 15]);
    }
    return out;
  }
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  DigestContext d;
  d.update(bytes.data(), bytes.size());
  return d.hex();
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path);
  DigestContext d;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    d.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return d.hex();
}

Manifest::Manifest(std::string root, std::string scenario, std::uint64_t seed)
    : root_(std::move(root)), scenario_(std::move(scenario)), seed_(seed) {}

void Manifest::add(const std::string& relative_path) {
  if (std::find(files_.begin(), files_.end(), relative_path) == files_.end()) files_.push_back(relative_path);
}

void Manifest::write(const std::string& status, const std::string& failed_stage, const std::string& error) const {
  namespace fs = std::filesystem;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& rel : files_) {
    const fs::path p = fs::path(root_) / rel;
    if (!fs::exists(p)) continue;
    entries.push_back({{"path", rel}, {"bytes", fs::file_size(p)}, {"sha256", sha256_file(p.string())}});
  }
  nlohmann::json j{{"schema", kManifestSchema},
                   {"scenario", scenario_},
                   {"seed", seed_},
                   {"status", status},
                   {"generated_at", utc_now()},
                   {"files", entries}};
  if (!failed_stage.empty()) j["failed_stage"] = failed_stage;
  if (!error.empty()) j["error"] = error;
  const std::string path = (fs::path(root_) / "manifest.json").string();
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write " + path);
  out << j.dump(2) << '\n';
  if (!out) fail(ErrorCode::io, "write failed for " + path);
}

}  // namespace lev::harness
