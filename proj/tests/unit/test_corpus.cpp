#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "encod/corpus.hpp"
#include "encod/crypto.hpp"
#include "util.hpp"

using namespace encod;
namespace fs = std::filesystem;
using testutil::TempDir;

namespace {

// Files of `count` x `bytes` under dir, contents a function of (tag, index).
void make_sources(const fs::path& dir, int count, std::size_t bytes, std::uint64_t tag) {
  for (int i = 0; i < count; ++i)
    testutil::write_all(dir / ("f" + std::to_string(i) + ".bin"), testutil::random_bytes(bytes, tag * 1000 + i));
}

std::map<FormatLabel, fs::path> small_sources(const TempDir& tmp) {
  std::map<FormatLabel, fs::path> src;
  std::uint64_t tag = 1;
  for (auto label : {FormatLabel::enc, FormatLabel::zip, FormatLabel::png}) {
    const auto dir = tmp / ("src_" + std::string(to_string(label)));
    make_sources(dir, 5, 512 * 30 + 100, tag++);
    src[label] = dir;
  }
  return src;
}

DatasetManifest single_label_manifest(std::size_t n) {
  DatasetManifest m;
  m.fragment_size = 512;
  m.labels = {{FormatLabel::zip, n}};
  for (std::size_t i = 0; i < n; ++i) m.records.push_back({"zip/x", i * 512, FormatLabel::zip, Split::none});
  return m;
}

}  // namespace

TEST_CASE("fragment_file keeps whole fragments from offset 0") {
  const auto data = testutil::random_bytes(5000, 1);
  const auto frags = fragment_file(data, 2048);
  REQUIRE(frags.size() == 2);
  CHECK(frags[0].data() == data.data());
  CHECK(frags[1].data() == data.data() + 2048);
  CHECK(fragment_file(std::vector<std::uint8_t>(512), 512).size() == 1);
  CHECK(fragment_file(std::vector<std::uint8_t>(511), 512).empty());
  CHECK(fragment_file({}, 512).empty());
}

TEST_CASE("fragments concatenate to a prefix of the file") {
  const auto data = testutil::random_bytes(10000, 2);
  for (std::size_t size : kFragmentSizes) {
    std::vector<std::uint8_t> joined;
    for (auto f : fragment_file(data, size)) joined.insert(joined.end(), f.begin(), f.end());
    CHECK(joined.size() == data.size() / size * size);
    CHECK(std::equal(joined.begin(), joined.end(), data.begin()));
  }
}

TEST_CASE("build_corpus: balanced, recorded, reproducible") {
  TempDir tmp("corpus");
  const auto src = small_sources(tmp);
  BuildOptions opt;
  opt.fragment_size = 512;
  opt.per_label_quota = 100;
  opt.seed = 42;
  const auto m = build_corpus(src, opt, tmp / "store_a");
  CHECK(m.records.size() == 300);
  for (const auto& lc : m.labels) CHECK(lc.count == 100);
  CHECK(m.seed == 42);
  CHECK(m.fragment_size == 512);
  CHECK(m.tool_version == std::string(kToolVersion));

  FragmentStore store(tmp / "store_a");
  CHECK(store.verify());
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto r = store.record(i);
    CHECK(r.payload.size() == 512);
    CHECK(r.offset % 512 == 0);
  }

  // Non-enc payloads are verbatim slices of their source file.
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto r = store.record(i);
    if (r.label != FormatLabel::zip) continue;
    const auto rel = r.source_id.substr(r.source_id.find('/') + 1);
    const auto file = testutil::read_all(src.at(FormatLabel::zip) / rel);
    CHECK(std::equal(r.payload.begin(), r.payload.end(), file.begin() + static_cast<std::ptrdiff_t>(r.offset)));
  }

  // enc payloads are slices of IV || ciphertext under the seed's key.
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto r = store.record(i);
    if (r.label != FormatLabel::enc) continue;
    const auto rel = r.source_id.substr(r.source_id.find('/') + 1);
    const auto plain = testutil::read_all(src.at(FormatLabel::enc) / rel);
    const auto key = corpus_key(42);
    if (r.offset == 0) {
      Iv128 iv{};
      std::copy_n(r.payload.begin(), 16, iv.begin());
      const auto blob = encrypt_file(plain, key, iv);
      CHECK(std::equal(r.payload.begin(), r.payload.end(), blob.begin()));
    }
  }

  build_corpus(src, opt, tmp / "store_b");
  CHECK(testutil::read_all(tmp / "store_a" / "fragments.bin") == testutil::read_all(tmp / "store_b" / "fragments.bin"));
  CHECK(testutil::read_all(tmp / "store_a" / "manifest.json") == testutil::read_all(tmp / "store_b" / "manifest.json"));

  opt.seed = 43;
  const auto other = build_corpus(src, opt, tmp / "store_c");
  CHECK(other.store_digest != m.store_digest);
}

TEST_CASE("build_corpus: shortfall names the label and writes nothing") {
  TempDir tmp("shortfall");
  auto src = small_sources(tmp);
  const auto tiny = tmp / "src_pdf";
  make_sources(tiny, 1, 512 * 3 + 10, 99);
  src[FormatLabel::pdf] = tiny;
  BuildOptions opt;
  opt.fragment_size = 512;
  opt.per_label_quota = 100;
  opt.seed = 1;
  try {
    build_corpus(src, opt, tmp / "store");
    FAIL("expected a shortfall");
  } catch (const ShortfallError& e) {
    CHECK(e.label() == FormatLabel::pdf);
    CHECK(e.available() == 3);
    CHECK(std::string(e.what()).find("pdf") != std::string::npos);
  }
  CHECK_FALSE(fs::exists(tmp / "store" / "fragments.bin"));
  CHECK_FALSE(fs::exists(tmp / "store" / "manifest.json"));
}

TEST_CASE("build_corpus validates its inputs") {
  TempDir tmp("validate");
  auto src = small_sources(tmp);
  BuildOptions opt;
  opt.fragment_size = 1000;
  opt.per_label_quota = 1;
  CHECK_THROWS_AS(build_corpus(src, opt, tmp / "s"), std::invalid_argument);
  opt.fragment_size = 512;
  src[FormatLabel::gzip] = tmp / "missing";
  CHECK_THROWS_AS(build_corpus(src, opt, tmp / "s"), std::invalid_argument);
}

TEST_CASE("split fractions 85/5/10") {
  for (auto [n, train, dev, test] : std::vector<std::array<std::size_t, 4>>{{100, 85, 5, 10}, {200, 170, 10, 20}}) {
    const auto s = split_corpus(single_label_manifest(n), 3);
    CHECK(s.indices(FormatLabel::zip, Split::train).size() == train);
    CHECK(s.indices(FormatLabel::zip, Split::dev).size() == dev);
    CHECK(s.indices(FormatLabel::zip, Split::test).size() == test);
    CHECK(s.split_seed == std::optional<std::uint64_t>(3));
  }
}

TEST_CASE("split is stratified within one record for many sizes") {
  for (std::size_t n = 20; n < 400; n += 7) {
    const auto s = split_corpus(single_label_manifest(n), n);
    const double nd = static_cast<double>(n);
    CHECK(std::fabs(s.indices(Split::train).size() - 0.85 * nd) <= 1.0);
    CHECK(std::fabs(s.indices(Split::dev).size() - 0.05 * nd) <= 1.0);
    CHECK(std::fabs(s.indices(Split::test).size() - 0.10 * nd) <= 1.0);
    CHECK(s.indices(Split::train).size() + s.indices(Split::dev).size() + s.indices(Split::test).size() == n);
  }
}

TEST_CASE("split determinism and errors") {
  const auto m = single_label_manifest(300);
  const auto a = split_corpus(m, 9), b = split_corpus(m, 9), c = split_corpus(m, 10);
  CHECK(to_json(a) == to_json(b));
  CHECK(to_json(a) != to_json(c));
  CHECK_THROWS_AS(split_corpus(a, 1), std::invalid_argument);
  CHECK_THROWS_AS(split_corpus(single_label_manifest(19), 1), std::invalid_argument);
}

TEST_CASE("manifest JSON round-trip and split store leaves the input untouched") {
  TempDir tmp("split_store");
  const auto src = small_sources(tmp);
  BuildOptions opt;
  opt.fragment_size = 512;
  opt.per_label_quota = 40;
  opt.seed = 5;
  build_corpus(src, opt, tmp / "store");
  const auto before = testutil::read_all(tmp / "store" / "manifest.json");
  FragmentStore store(tmp / "store");
  const auto split = split_corpus(store.manifest(), 11);
  CHECK(to_json(manifest_from_json(to_json(split))) == to_json(split));
  write_split_store(store, split, tmp / "split");
  CHECK(testutil::read_all(tmp / "store" / "manifest.json") == before);
  FragmentStore reopened(tmp / "split");
  CHECK(reopened.manifest().is_split());
  CHECK(reopened.verify());
  CHECK(reopened.size() == store.size());
  for (std::size_t i = 0; i < store.size(); ++i) CHECK(std::ranges::equal(reopened.fragment(i), store.fragment(i)));
}
