#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace tatrans {

/// 64-bit FNV-1a, hex encoded. Used for file and config fingerprints in manifests.
class Fnv1a {
 public:
  void update(std::string_view bytes) {
    for (unsigned char c : bytes) {
      hash_ ^= c;
      hash_ *= 0x100000001b3ULL;
    }
  }
  std::uint64_t value() const { return hash_; }
  std::string hex() const;

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

std::string digest_string(std::string_view bytes);

/// Throws ValidationError when the file cannot be read.
std::string digest_file(const std::filesystem::path& path);

}  // namespace tatrans
