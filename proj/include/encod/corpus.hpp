#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "encod/format.hpp"

namespace encod {

struct FragmentRecord {
  std::vector<std::uint8_t> payload;
  FormatLabel label = FormatLabel::enc;
  std::string source_id;
  std::uint64_t offset = 0;
};

enum class Split : std::uint8_t { none, train, dev, test };

std::string_view to_string(Split split) noexcept;
Split parse_split(std::string_view text);

struct RecordMeta {
  std::string source_id;
  std::uint64_t offset = 0;
  FormatLabel label = FormatLabel::enc;
  Split split = Split::none;
};

struct LabelCount {
  FormatLabel tag;
  std::size_t count;
};

struct DatasetManifest {
  int version = 1;
  std::size_t fragment_size = 0;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> split_seed;
  std::vector<LabelCount> labels;
  std::vector<RecordMeta> records;  // record i lives at byte i * fragment_size
  std::string store_digest;         // SHA-256 hex of the fragment blob
  std::string tool_version;

  bool is_split() const noexcept { return split_seed.has_value(); }
  std::size_t count(FormatLabel label) const noexcept;
  std::vector<std::size_t> indices(FormatLabel label, Split split) const;
  std::vector<std::size_t> indices(Split split) const;
};

nlohmann::json to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const nlohmann::json& j);

inline constexpr std::string_view kManifestFile = "manifest.json";
inline constexpr std::string_view kBlobFile = "fragments.bin";

/// Read-only, memory-mapped view of a fragment store directory
/// (`fragments.bin` + `manifest.json`).
class FragmentStore {
 public:
  explicit FragmentStore(const std::filesystem::path& dir);
  ~FragmentStore();
  FragmentStore(FragmentStore&&) noexcept;
  FragmentStore& operator=(FragmentStore&&) noexcept;
  FragmentStore(const FragmentStore&) = delete;
  FragmentStore& operator=(const FragmentStore&) = delete;

  const DatasetManifest& manifest() const noexcept { return manifest_; }
  std::size_t size() const noexcept { return manifest_.records.size(); }
  std::size_t fragment_size() const noexcept { return manifest_.fragment_size; }
  std::span<const std::uint8_t> fragment(std::size_t i) const;
  FragmentRecord record(std::size_t i) const;
  const std::filesystem::path& dir() const noexcept { return dir_; }

  /// Recomputes the blob digest and compares with the manifest.
  bool verify() const;

 private:
  std::filesystem::path dir_;
  DatasetManifest manifest_;
  const std::uint8_t* data_ = nullptr;
  std::size_t bytes_ = 0;
};

/// Contiguous, non-overlapping views from offset 0; the trailing remainder is
/// dropped. Empty input yields an empty result.
std::vector<std::span<const std::uint8_t>> fragment_file(std::span<const std::uint8_t> data,
                                                         std::size_t size);

/// A label had fewer fragments available than the quota asked for.
class ShortfallError : public std::runtime_error {
 public:
  ShortfallError(FormatLabel label, std::size_t available, std::size_t quota);
  FormatLabel label() const noexcept { return label_; }
  std::size_t available() const noexcept { return available_; }

 private:
  FormatLabel label_;
  std::size_t available_;
};

struct BuildOptions {
  std::size_t fragment_size = 2048;
  std::size_t per_label_quota = 0;
  std::uint64_t seed = 0;
  int jobs = 0;  // 0 = OpenMP default
};

/// Samples exactly per_label_quota fragments per label (without replacement,
/// seeded) and writes `out_dir/fragments.bin` + `out_dir/manifest.json`.
/// The `enc` source directory holds plaintext that is encrypted on the fly
/// with a seed-derived key and per-file IV. Nothing is written on shortfall.
DatasetManifest build_corpus(const std::map<FormatLabel, std::filesystem::path>& sources,
                             const BuildOptions& options, const std::filesystem::path& out_dir);

/// Per-label stratified 85/5/10 train/dev/test assignment.
DatasetManifest split_corpus(const DatasetManifest& manifest, std::uint64_t seed);

/// Writes a split manifest next to the original blob under out_dir (the blob
/// is hard-linked, or copied when linking fails); the input store is untouched.
void write_split_store(const FragmentStore& store, const DatasetManifest& split,
                       const std::filesystem::path& out_dir);

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Seed-derived AES key used for the enc label of a corpus.
std::array<std::uint8_t, 32> corpus_key(std::uint64_t seed);

}  // namespace encod
