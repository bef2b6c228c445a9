#include "encod/corpus.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <omp.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "encod/crypto.hpp"

namespace encod {
namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Split split) noexcept {
  switch (split) {
    case Split::none: return "none";
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "none";
}

Split parse_split(std::string_view text) {
  for (auto s : {Split::none, Split::train, Split::dev, Split::test})
    if (to_string(s) == text) return s;
  throw std::invalid_argument("unknown split '" + std::string(text) + "'");
}

std::size_t DatasetManifest::count(FormatLabel label) const noexcept {
  for (const auto& lc : labels)
    if (lc.tag == label) return lc.count;
  return 0;
}

std::vector<std::size_t> DatasetManifest::indices(FormatLabel label, Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].label == label && records[i].split == split) out.push_back(i);
  return out;
}

std::vector<std::size_t> DatasetManifest::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].split == split) out.push_back(i);
  return out;
}

json to_json(const DatasetManifest& m) {
  json j;
  j["version"] = m.version;
  j["tool_version"] = m.tool_version;
  j["fragment_size"] = m.fragment_size;
  j["seed"] = m.seed;
  j["split_seed"] = m.split_seed ? json(*m.split_seed) : json(nullptr);
  j["labels"] = json::array();
  for (const auto& lc : m.labels)
    j["labels"].push_back({{"tag", std::string(to_string(lc.tag))}, {"count", lc.count}});
  auto& recs = j["records"] = json::array();
  for (const auto& r : m.records)
    recs.push_back({{"source_id", r.source_id},
                    {"offset", r.offset},
                    {"label", std::string(to_string(r.label))},
                    {"split", std::string(to_string(r.split))}});
  j["store_digest"] = m.store_digest;
  return j;
}

DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest m;
  m.version = j.at("version").get<int>();
  m.tool_version = j.value("tool_version", std::string{});
  m.fragment_size = j.at("fragment_size").get<std::size_t>();
  m.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("split_seed") && !j["split_seed"].is_null())
    m.split_seed = j["split_seed"].get<std::uint64_t>();
  for (const auto& lc : j.at("labels"))
    m.labels.push_back({parse_label(lc.at("tag").get<std::string>()), lc.at("count").get<std::size_t>()});
  m.records.reserve(j.at("records").size());
  for (const auto& r : j.at("records"))
    m.records.push_back({r.at("source_id").get<std::string>(), r.at("offset").get<std::uint64_t>(),
                         parse_label(r.at("label").get<std::string>()),
                         parse_split(r.at("split").get<std::string>())});
  m.store_digest = j.at("store_digest").get<std::string>();
  return m;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json(manifest).dump() << '\n';
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return manifest_from_json(json::parse(in));
}

// ---------------------------------------------------------------------------

FragmentStore::FragmentStore(const fs::path& dir) : dir_(dir) {
  manifest_ = load_manifest(dir / kManifestFile);
  require_fragment_size(manifest_.fragment_size);
  const auto blob = dir / kBlobFile;
  const int fd = ::open(blob.c_str(), O_RDONLY);
  if (fd < 0) throw std::runtime_error("cannot open " + blob.string());
  struct stat st {};
  if (::fstat(fd, &st) != 0) {
    ::close(fd);
    throw std::runtime_error("cannot stat " + blob.string());
  }
  bytes_ = static_cast<std::size_t>(st.st_size);
  if (bytes_ != manifest_.records.size() * manifest_.fragment_size) {
    ::close(fd);
    throw std::runtime_error("fragment blob size does not match manifest in " + dir.string());
  }
  if (bytes_ > 0) {
    void* p = ::mmap(nullptr, bytes_, PROT_READ, MAP_PRIVATE, fd, 0);
    if (p == MAP_FAILED) {
      ::close(fd);
      throw std::runtime_error("mmap failed for " + blob.string());
    }
    data_ = static_cast<const std::uint8_t*>(p);
  }
  ::close(fd);
}

FragmentStore::~FragmentStore() {
  if (data_) ::munmap(const_cast<std::uint8_t*>(data_), bytes_);
}

FragmentStore::FragmentStore(FragmentStore&& other) noexcept
    : dir_(std::move(other.dir_)),
      manifest_(std::move(other.manifest_)),
      data_(std::exchange(other.data_, nullptr)),
      bytes_(std::exchange(other.bytes_, 0)) {}

FragmentStore& FragmentStore::operator=(FragmentStore&& other) noexcept {
  if (this != &other) {
    if (data_) ::munmap(const_cast<std::uint8_t*>(data_), bytes_);
    dir_ = std::move(other.dir_);
    manifest_ = std::move(other.manifest_);
    data_ = std::exchange(other.data_, nullptr);
    bytes_ = std::exchange(other.bytes_, 0);
  }
  return *this;
}

std::span<const std::uint8_t> FragmentStore::fragment(std::size_t i) const {
  if (i >= size()) throw std::out_of_range("fragment index out of range");
  return {data_ + i * manifest_.fragment_size, manifest_.fragment_size};
}

FragmentRecord FragmentStore::record(std::size_t i) const {
  const auto bytes = fragment(i);
  const auto& meta = manifest_.records[i];
  return {{bytes.begin(), bytes.end()}, meta.label, meta.source_id, meta.offset};
}

bool FragmentStore::verify() const {
  return sha256_hex(std::span(data_, bytes_)) == manifest_.store_digest;
}

// ---------------------------------------------------------------------------

std::vector<std::span<const std::uint8_t>> fragment_file(std::span<const std::uint8_t> data,
                                                         std::size_t size) {
  require_fragment_size(size);
  std::vector<std::span<const std::uint8_t>> out;
  out.reserve(data.size() / size);
  for (std::size_t off = 0; off + size <= data.size(); off += size) out.push_back(data.subspan(off, size));
  return out;
}

ShortfallError::ShortfallError(FormatLabel label, std::size_t available, std::size_t quota)
    : std::runtime_error("insufficient fragments for label '" + std::string(to_string(label)) +
                         "': " + std::to_string(available) + " available, quota " +
                         std::to_string(quota)),
      label_(label),
      available_(available) {}

std::array<std::uint8_t, 32> corpus_key(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x6b6579u};
  std::mt19937_64 rng(seq);
  std::array<std::uint8_t, 32> key{};
  for (std::size_t i = 0; i < key.size(); i += 8) {
    const auto word = rng();
    for (std::size_t b = 0; b < 8; ++b) key[i + b] = static_cast<std::uint8_t>(word >> (8 * b));
  }
  return key;
}

namespace {

struct SourceFile {
  fs::path path;
  std::string source_id;
  std::uint64_t length = 0;  // bytes as fragmented (ciphertext length for enc)
  Iv128 iv{};
};

std::mt19937_64 label_rng(std::uint64_t seed, FormatLabel label, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(label), stream};
  return std::mt19937_64(seq);
}

std::vector<SourceFile> list_sources(FormatLabel label, const fs::path& dir, std::uint64_t seed) {
  if (!fs::is_directory(dir))
    throw std::invalid_argument("source directory for '" + std::string(to_string(label)) +
                                "' does not exist: " + dir.string());
  std::vector<SourceFile> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    SourceFile f;
    f.path = entry.path();
    f.source_id = std::string(to_string(label)) + "/" + fs::relative(entry.path(), dir).generic_string();
    f.length = entry.file_size();
    files.push_back(std::move(f));
  }
  if (files.empty())
    throw std::invalid_argument("source directory for '" + std::string(to_string(label)) +
                                "' contains no files: " + dir.string());
  std::sort(files.begin(), files.end(),
            [](const SourceFile& a, const SourceFile& b) { return a.source_id < b.source_id; });
  if (is_encrypted(label)) {
    auto rng = label_rng(seed, label, 0x6976u);
    for (auto& f : files) {
      for (std::size_t i = 0; i < f.iv.size(); i += 8) {
        const auto word = rng();
        for (std::size_t b = 0; b < 8; ++b) f.iv[i + b] = static_cast<std::uint8_t>(word >> (8 * b));
      }
      f.length = encrypted_size(f.length);
    }
  }
  return files;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  in.seekg(0, std::ios::end);
  std::vector<std::uint8_t> data(static_cast<std::size_t>(in.tellg()));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!in) throw std::runtime_error("short read on " + path.string());
  return data;
}

struct Selection {
  std::size_t file = 0;
  std::uint64_t fragment = 0;
};

// Uniform sample of `quota` fragment slots without replacement, returned in
// (file, offset) order.
std::vector<Selection> sample_fragments(const std::vector<SourceFile>& files, std::size_t size,
                                        std::size_t quota, std::mt19937_64& rng) {
  std::vector<std::uint64_t> prefix(files.size() + 1, 0);
  for (std::size_t f = 0; f < files.size(); ++f) prefix[f + 1] = prefix[f] + files[f].length / size;
  const std::uint64_t total = prefix.back();

  std::vector<std::uint64_t> slots(total);
  std::iota(slots.begin(), slots.end(), std::uint64_t{0});
  for (std::size_t i = 0; i < quota; ++i) {
    std::uniform_int_distribution<std::uint64_t> pick(i, total - 1);
    std::swap(slots[i], slots[pick(rng)]);
  }
  slots.resize(quota);
  std::sort(slots.begin(), slots.end());

  std::vector<Selection> out;
  out.reserve(quota);
  std::size_t f = 0;
  for (auto slot : slots) {
    while (prefix[f + 1] <= slot) ++f;
    out.push_back({f, slot - prefix[f]});
  }
  return out;
}

}  // namespace

DatasetManifest build_corpus(const std::map<FormatLabel, fs::path>& sources,
                             const BuildOptions& options, const fs::path& out_dir) {
  require_fragment_size(options.fragment_size);
  if (options.per_label_quota == 0) throw std::invalid_argument("quota must be positive");
  if (sources.empty()) throw std::invalid_argument("no source directories given");
  const std::size_t size = options.fragment_size;

  // Enumerate and sample every label before touching the output directory.
  struct LabelPlan {
    FormatLabel label;
    std::vector<SourceFile> files;
    std::vector<Selection> picks;
  };
  std::vector<LabelPlan> plans;
  for (auto label : kAllLabels) {
    const auto it = sources.find(label);
    if (it == sources.end()) continue;
    LabelPlan plan{label, list_sources(label, it->second, options.seed), {}};
    std::size_t available = 0;
    for (const auto& f : plan.files) available += f.length / size;
    if (available < options.per_label_quota)
      throw ShortfallError(label, available, options.per_label_quota);
    auto rng = label_rng(options.seed, label, 0x736du);
    plan.picks = sample_fragments(plan.files, size, options.per_label_quota, rng);
    spdlog::info("corpus: {} -> {} of {} fragments from {} files", to_string(label),
                 plan.picks.size(), available, plan.files.size());
    plans.push_back(std::move(plan));
  }

  fs::create_directories(out_dir);
  const auto blob_path = out_dir / kBlobFile;
  const auto tmp_path = out_dir / (std::string(kBlobFile) + ".partial");
  std::ofstream blob(tmp_path, std::ios::binary | std::ios::trunc);
  if (!blob) throw std::runtime_error("cannot write " + tmp_path.string());

  const auto key = corpus_key(options.seed);
  DatasetManifest manifest;
  manifest.fragment_size = size;
  manifest.seed = options.seed;
  manifest.tool_version = std::string(kToolVersion);
  Sha256 digest;

  for (const auto& plan : plans) {
    // Group the picks by file; files are ingested in parallel batches and
    // written sequentially in (file, offset) order.
    std::vector<std::pair<std::size_t, std::size_t>> groups;  // [begin, end) into picks
    for (std::size_t i = 0; i < plan.picks.size();) {
      std::size_t j = i;
      while (j < plan.picks.size() && plan.picks[j].file == plan.picks[i].file) ++j;
      groups.emplace_back(i, j);
      i = j;
    }
    constexpr std::size_t kBatch = 32;
    for (std::size_t g0 = 0; g0 < groups.size(); g0 += kBatch) {
      const std::size_t g1 = std::min(groups.size(), g0 + kBatch);
      std::vector<std::vector<std::uint8_t>> chunks(g1 - g0);
      std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic) num_threads(options.jobs > 0 ? options.jobs : omp_get_max_threads())
      for (std::size_t g = g0; g < g1; ++g) {
        try {
          const auto [b, e] = groups[g];
          const auto& file = plan.files[plan.picks[b].file];
          auto data = read_file(file.path);
          if (is_encrypted(plan.label)) data = encrypt_file(data, key, file.iv);
          auto& chunk = chunks[g - g0];
          chunk.reserve((e - b) * size);
          for (std::size_t k = b; k < e; ++k) {
            const auto off = plan.picks[k].fragment * size;
            if (off + size > data.size()) throw std::runtime_error("source changed during build: " + file.path.string());
            chunk.insert(chunk.end(), data.begin() + static_cast<std::ptrdiff_t>(off),
                         data.begin() + static_cast<std::ptrdiff_t>(off + size));
          }
        } catch (...) {
#pragma omp critical(encod_corpus_failure)
          if (!failure) failure = std::current_exception();
        }
      }
      if (failure) {
        blob.close();
        fs::remove(tmp_path);
        std::rethrow_exception(failure);
      }
      for (std::size_t g = g0; g < g1; ++g) {
        const auto& chunk = chunks[g - g0];
        blob.write(reinterpret_cast<const char*>(chunk.data()), static_cast<std::streamsize>(chunk.size()));
        digest.update(chunk);
        const auto [b, e] = groups[g];
        for (std::size_t k = b; k < e; ++k) {
          const auto& file = plan.files[plan.picks[k].file];
          manifest.records.push_back({file.source_id, plan.picks[k].fragment * size, plan.label, Split::none});
        }
      }
    }
    manifest.labels.push_back({plan.label, plan.picks.size()});
  }
  blob.close();
  if (!blob) throw std::runtime_error("write failed for " + tmp_path.string());
  fs::rename(tmp_path, blob_path);
  manifest.store_digest = digest.hex_digest();
  save_manifest(manifest, out_dir / kManifestFile);
  return manifest;
}

DatasetManifest split_corpus(const DatasetManifest& manifest, std::uint64_t seed) {
  if (manifest.is_split()) throw std::invalid_argument("manifest already carries a split");
  DatasetManifest out = manifest;
  out.split_seed = seed;
  out.tool_version = std::string(kToolVersion);
  for (const auto& lc : manifest.labels) {
    auto idx = manifest.indices(lc.tag, Split::none);
    if (idx.size() < 20)
      throw std::invalid_argument("label '" + std::string(to_string(lc.tag)) + "' has " +
                                  std::to_string(idx.size()) + " records; at least 20 are needed to split 85/5/10");
    auto rng = label_rng(seed, lc.tag, 0x7370u);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = static_cast<double>(idx.size());
    const auto n_train = static_cast<std::size_t>(std::llround(0.85 * n));
    const auto n_dev = static_cast<std::size_t>(std::llround(0.05 * n));
    for (std::size_t k = 0; k < idx.size(); ++k)
      out.records[idx[k]].split = k < n_train ? Split::train : (k < n_train + n_dev ? Split::dev : Split::test);
  }
  return out;
}

void write_split_store(const FragmentStore& store, const DatasetManifest& split, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const auto src = store.dir() / kBlobFile;
  const auto dst = out_dir / kBlobFile;
  if (fs::weakly_canonical(src) != fs::weakly_canonical(dst)) {
    fs::remove(dst);
    std::error_code ec;
    fs::create_hard_link(src, dst, ec);
    if (ec) fs::copy_file(src, dst, fs::copy_options::overwrite_existing);
  } else {
    throw std::invalid_argument("output store must differ from the input store");
  }
  save_manifest(split, out_dir / kManifestFile);
}

}  // namespace encod
