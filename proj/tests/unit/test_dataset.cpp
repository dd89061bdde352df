#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "test_util.hpp"

using namespace mmgenre;
using namespace mmgenre::testing;

namespace {

struct Item {
  std::string id;
  std::optional<double> duration_s;
};

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

template <class T>
std::vector<std::uint8_t> npy_of(const Tensor<float>& t, bool fortran = false) {
  std::vector<T> v(t.data().begin(), t.data().end());
  return npy::encode<T>(t.shape(), std::span<const T>(v), fortran);
}

std::map<std::string, std::size_t> split_counts(const SplitAssignment& a) {
  std::map<std::string, std::size_t> c;
  for (const auto& [id, s] : a) ++c[to_string(s)];
  return c;
}

std::vector<std::string> make_ids(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(synth_id("vid", i));
  return ids;
}

/// Solves A x = b by Gaussian elimination with partial pivoting.
std::vector<double> solve(std::vector<std::vector<double>> A, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(A[r][c]) > std::abs(A[p][c])) p = r;
    std::swap(A[c], A[p]);
    std::swap(b[c], b[p]);
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = A[r][c] / A[c][c];
      for (std::size_t k = c; k < n; ++k) A[r][k] -= f * A[c][k];
      b[r] -= f * b[c];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= A[i][k] * x[k];
    x[i] = s / A[i][i];
  }
  return x;
}

}  // namespace

TEST(FilterByDuration, InclusiveFences) {
  std::vector<Item> items{{"a", 120.0}, {"b", 19.6}, {"c", 19.59}, {"d", 214.4},
                          {"e", 214.41}, {"f", std::nullopt}, {"g", 0.0}};
  FilterStats st;
  auto kept = filter_by_duration(items, &st);
  std::vector<std::string> ids;
  for (const auto& k : kept) ids.push_back(k.id);
  EXPECT_EQ(ids, (std::vector<std::string>{"a", "b", "d"}));
  EXPECT_EQ(st.kept, 3u);
  EXPECT_EQ(st.dropped, 3u);
  EXPECT_EQ(st.missing_duration, 1u);
}

TEST(FilterByDuration, ConfigurableBounds) {
  std::vector<Item> items{{"a", 5.0}, {"b", 10.0}, {"c", 10.5}};
  auto kept = filter_by_duration(items, nullptr, {5.0, 10.0});
  EXPECT_EQ(kept.size(), 2u);
}

TEST(FilterByDuration, KeepsOrderAndIsIdempotent) {
  SeededRng rng(4);
  std::vector<Item> items;
  for (int i = 0; i < 500; ++i) items.push_back({synth_id("x", 500 - i), rng.uniform(0, 300)});
  auto once = filter_by_duration(items);
  auto twice = filter_by_duration(once);
  ASSERT_EQ(once.size(), twice.size());
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_EQ(once[i].id, twice[i].id);
  for (const auto& it : once) {
    EXPECT_GE(*it.duration_s, 19.6);
    EXPECT_LE(*it.duration_s, 214.4);
  }
}

TEST(SplitDataset, FullDatasetCounts) {
  auto c = split_counts(split_dataset(make_ids(26412)));
  EXPECT_EQ(c["train"], 18488u);
  EXPECT_EQ(c["val"], 2641u);
  EXPECT_EQ(c["test"], 5283u);
}

TEST(SplitDataset, TenIds) {
  auto c = split_counts(split_dataset(make_ids(10)));
  EXPECT_EQ(c["train"], 7u);
  EXPECT_EQ(c["val"], 1u);
  EXPECT_EQ(c["test"], 2u);
}

TEST(SplitDataset, FloorArithmeticForEverySize) {
  for (std::size_t n = 0; n <= 200; ++n) {
    auto c = split_counts(split_dataset(make_ids(n)));
    const auto train = static_cast<std::size_t>(std::floor(0.7 * static_cast<double>(n) + 1e-9));
    const auto val = static_cast<std::size_t>(std::floor(0.1 * static_cast<double>(n) + 1e-9));
    EXPECT_EQ(c["train"], train) << n;
    EXPECT_EQ(c["val"], val) << n;
    EXPECT_EQ(c["test"], n - train - val) << n;
  }
}

TEST(SplitDataset, ContiguousInByteOrder) {
  std::vector<std::string> ids{"b", "B", "a", "_z", "0", "aa", "Z", "ab", "a0", "zz"};
  auto a = split_dataset(ids);
  std::sort(ids.begin(), ids.end());
  EXPECT_EQ(a.at(ids[0]), Split::kTrain);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const Split want = i < 7 ? Split::kTrain : i < 8 ? Split::kVal : Split::kTest;
    EXPECT_EQ(a.at(ids[i]), want) << ids[i];
  }
  EXPECT_EQ(ids.front(), "0");
  EXPECT_EQ(ids[1], "B");
}

TEST(SplitDataset, IndependentOfInputOrder) {
  auto ids = make_ids(137);
  auto reference = split_dataset(ids);
  SeededRng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.below(i)]);
    EXPECT_EQ(split_dataset(ids), reference);
  }
}

TEST(SplitDataset, RejectsDuplicates) {
  EXPECT_THROW(split_dataset({"a", "b", "a"}), DataError);
}

TEST(SplitDataset, SelectSplitSortsById) {
  std::vector<Item> items;
  for (int i = 9; i >= 0; --i) items.push_back({synth_id("v", i), 50.0});
  auto a = split_items(items);
  auto train = select_split(items, a, Split::kTrain);
  ASSERT_EQ(train.size(), 7u);
  EXPECT_TRUE(std::is_sorted(train.begin(), train.end(),
                             [](const Item& x, const Item& y) { return x.id < y.id; }));
  EXPECT_EQ(train.front().id, "v000000");
  EXPECT_EQ(select_split(items, a, Split::kTest).back().id, "v000009");
}

TEST(SplitNames, RoundTrip) {
  for (auto s : {Split::kTrain, Split::kVal, Split::kTest}) EXPECT_EQ(parse_split(to_string(s)), s);
  EXPECT_THROW(parse_split("dev"), ConfigError);
}

TEST(MakeBatch, TruncatesHeadFirstAtTrainLength) {
  SeededRng rng(1);
  VideoRecord r;
  r.id = "x";
  r.genres = {"Horror"};
  r.features["clip"] = random_tensor<float>({300, 512}, rng);
  const std::vector<ModalitySpec> specs{standard_modality("clip")};
  Batch b = make_batch(std::vector<VideoRecord>{r}, specs);
  const auto& mb = b.modalities.at("clip");
  ASSERT_EQ(mb.values.shape(), (Shape{1, 216, 512}));
  EXPECT_TRUE(std::equal(mb.values.data().begin(), mb.values.data().end(), r.features["clip"].data().begin()));
  EXPECT_TRUE(std::all_of(mb.mask.begin(), mb.mask.end(), [](auto v) { return v == 1; }));
}

TEST(MakeBatch, PadsShortSequencesWithMaskedZeros) {
  SeededRng rng(2);
  VideoRecord r;
  r.id = "x";
  r.genres = {"Horror"};
  r.features["clip"] = random_tensor<float>({100, 512}, rng);
  Batch b = make_batch(std::vector<VideoRecord>{r}, {standard_modality("clip")});
  const auto& mb = b.modalities.at("clip");
  EXPECT_EQ(std::count(mb.mask.begin(), mb.mask.end(), 1), 100);
  EXPECT_EQ(std::count(mb.mask.begin(), mb.mask.end(), 0), 116);
  for (std::size_t t = 0; t < 216; ++t) {
    EXPECT_EQ(mb.mask[t], t < 100 ? 1 : 0);
    for (std::size_t d = 0; d < 512; ++d) {
      const float want = t < 100 ? r.features["clip"][t * 512 + d] : 0.0f;
      if (mb.values[t * 512 + d] != want) {
        ADD_FAILURE() << "t=" << t << " d=" << d;
        return;
      }
    }
  }
}

TEST(MakeBatch, StandardShapesForBatchOf32) {
  auto recs = synth_mean_encoded(32, 3, 0.1);
  Batch b = make_batch(recs, standard_modalities());
  EXPECT_EQ(b.modalities.at("clip").values.shape(), (Shape{32, 216, 512}));
  EXPECT_EQ(b.modalities.at("ocr").values.shape(), (Shape{32, 64, 768}));
  EXPECT_EQ(b.modalities.at("asr").values.shape(), (Shape{32, 86, 768}));
  EXPECT_EQ(b.modalities.at("audiotag").values.shape(), (Shape{32, 140, 128}));
  EXPECT_EQ(b.modalities.at("musicnet").values.shape(), (Shape{32, 18, 64}));
  EXPECT_EQ(b.labels.shape(), (Shape{32, kNumGenres}));
}

TEST(MakeBatch, PreservesOrderAndLabels) {
  auto recs = synth_mean_encoded(17, 8, 0.5, {.specs = toy_specs()});
  std::reverse(recs.begin(), recs.end());
  Batch b = make_batch(recs, toy_specs());
  ASSERT_EQ(b.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(b.ids[i], recs[i].id);
    for (std::size_t c = 0; c < kNumGenres; ++c) {
      const bool has = std::find(recs[i].genres.begin(), recs[i].genres.end(), kGenres[c]) != recs[i].genres.end();
      EXPECT_EQ(b.labels[i * kNumGenres + c], has ? 1.0f : 0.0f);
    }
  }
}

TEST(MakeBatch, NaturalPolicyPadsToLongestWithCap) {
  SeededRng rng(3);
  std::vector<VideoRecord> recs(2);
  recs[0].id = "a";
  recs[1].id = "b";
  recs[0].features["clip"] = random_tensor<float>({3, 5}, rng);
  recs[1].features["clip"] = random_tensor<float>({9, 5}, rng);
  const std::vector<ModalitySpec> specs{{"clip", 5, 4, false}};
  EXPECT_EQ(make_batch(recs, specs, LengthPolicy::natural()).modalities.at("clip").values.dim(1), 9u);
  EXPECT_EQ(make_batch(recs, specs, LengthPolicy::natural({{"clip", 7}})).modalities.at("clip").values.dim(1), 7u);
  EXPECT_EQ(make_batch(recs, specs).modalities.at("clip").values.dim(1), 4u);
}

TEST(MakeBatch, RejectsWidthMismatchAndMissingModality) {
  SeededRng rng(3);
  std::vector<VideoRecord> recs(1);
  recs[0].id = "a";
  recs[0].features["clip"] = random_tensor<float>({3, 6}, rng);
  EXPECT_THROW(make_batch(recs, {{"clip", 5, 4, false}}), DataError);
  EXPECT_THROW(make_batch(recs, {{"ocr", 6, 4, false}}), DataError);
}

TEST(ValidateRecord, RequiresGenreAndMatchingWidths) {
  SeededRng rng(1);
  auto recs = synth_mean_encoded(1, 1, 0.0, {.specs = toy_specs()});
  EXPECT_NO_THROW(validate_record(recs[0], toy_specs()));
  auto no_genre = recs[0];
  no_genre.genres.clear();
  EXPECT_THROW(validate_record(no_genre, toy_specs()), DataError);
  auto wrong = recs[0];
  wrong.features["asr"] = random_tensor<float>({2, 9}, rng);
  EXPECT_THROW(validate_record(wrong, toy_specs()), DataError);
}

TEST(Mmf, RoundTripIsBitExact) {
  TempDir dir("mmf");
  SeededRng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    mmf::Features f;
    f["clip"] = random_tensor<float>({rng.below(30), 7}, rng);
    f["asr"] = random_tensor<float>({rng.below(5), 3}, rng, 1e6);
    f["ocr"] = empty_sequence(4);
    if (f["clip"].size()) f["clip"][0] = -0.0f;
    if (f["asr"].size()) f["asr"][0] = std::numeric_limits<float>::denorm_min();
    const auto path = dir / "r.mmf";
    mmf::write(f, path);
    auto back = mmf::read(path);
    ASSERT_EQ(back.size(), f.size());
    for (const auto& [name, seq] : f) {
      const auto& got = back.at(name);
      ASSERT_EQ(got.shape(), seq.shape()) << name;
      for (std::size_t i = 0; i < seq.size(); ++i)
        ASSERT_EQ(std::bit_cast<std::uint32_t>(got[i]), std::bit_cast<std::uint32_t>(seq[i]));
    }
  }
}

TEST(Mmf, ByteLayout) {
  mmf::Features f;
  f["b"] = Tensor<float>::from_rows({{1.0f}});
  f["a"] = empty_sequence(2);
  auto bytes = mmf::encode(f);
  const std::vector<std::uint8_t> want{'M', 'M', 'F', '1', 1, 0, 2, 0,
                                       1, 'a', 0, 0, 0, 0, 2, 0, 0, 0,
                                       1, 'b', 1, 0, 0, 0, 1, 0, 0, 0, 0x00, 0x00, 0x80, 0x3f};
  EXPECT_EQ(bytes, want);
}

TEST(Mmf, RejectsBadMagic) {
  auto bytes = mmf::encode({{"clip", Tensor<float>({2, 2}, 1.0f)}});
  std::copy_n("XXXX", 4, bytes.begin());
  try {
    mmf::decode(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
  }
}

TEST(Mmf, RejectsTruncationAtEveryLength) {
  auto bytes = mmf::encode({{"clip", Tensor<float>({2, 3}, 1.5f)}, {"ocr", Tensor<float>({1, 2}, 2.0f)}});
  for (std::size_t n = 0; n < bytes.size(); ++n)
    EXPECT_THROW(mmf::decode(std::span<const std::uint8_t>(bytes.data(), n)), FormatError) << n;
  bytes.push_back(0);
  EXPECT_THROW(mmf::decode(bytes), FormatError);
}

TEST(Mmf, RejectsDimensionOverflowWithOffset) {
  std::vector<std::uint8_t> bytes{'M', 'M', 'F', '1', 1, 0, 1, 0, 1, 'x',
                                  0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff};
  try {
    mmf::decode(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 10u);
  }
}

TEST(Mmf, RejectsUnsortedNamesAndBadVersion) {
  std::vector<std::uint8_t> unsorted{'M', 'M', 'F', '1', 1, 0, 2, 0,
                                     1, 'b', 0, 0, 0, 0, 1, 0, 0, 0,
                                     1, 'a', 0, 0, 0, 0, 1, 0, 0, 0};
  EXPECT_THROW(mmf::decode(unsorted), FormatError);
  auto bytes = mmf::encode({});
  bytes[4] = 2;
  EXPECT_THROW(mmf::decode(bytes), FormatError);
}

TEST(Mmf, ReadReportsPath) {
  TempDir dir("mmfpath");
  write_bytes(dir / "bad.mmf", {'N', 'O', 'P', 'E', 0, 0, 0, 0});
  try {
    mmf::read(dir / "bad.mmf");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.mmf"), std::string::npos);
  }
  EXPECT_THROW(mmf::read(dir / "missing.mmf"), DataError);
}

TEST(Npy, DecodesFloat32AndNarrowsFloat64) {
  SeededRng rng(5);
  auto t = random_tensor<float>({7, 512}, rng);
  EXPECT_EQ(npy::decode_matrix(npy_of<float>(t)), t);
  auto wide = npy::decode_matrix(npy_of<double>(t));
  EXPECT_EQ(wide.shape(), (Shape{7, 512}));
  EXPECT_EQ(wide, t);
}

TEST(Npy, HeaderIsAligned) {
  auto bytes = npy_of<float>(Tensor<float>({2, 3}));
  const std::size_t header_len = bytes[8] | (bytes[9] << 8);
  EXPECT_EQ((10 + header_len) % 64, 0u);
  EXPECT_EQ(bytes.size(), 10 + header_len + 24);
}

TEST(Npy, AcceptsVersionTwoHeader) {
  auto v1 = npy_of<float>(Tensor<float>({1, 2}, 3.0f));
  const std::size_t len = v1[8] | (v1[9] << 8);
  std::vector<std::uint8_t> v2(v1.begin(), v1.begin() + 8);
  v2[6] = 2;
  v2.insert(v2.end(), {static_cast<std::uint8_t>(len), static_cast<std::uint8_t>(len >> 8), 0, 0});
  v2.insert(v2.end(), v1.begin() + 10, v1.end());
  EXPECT_EQ(npy::decode_matrix(v2), Tensor<float>({1, 2}, 3.0f));
}

TEST(Npy, RejectsRankOne) {
  std::vector<float> v(512, 1.0f);
  auto bytes = npy::encode<float>({512}, std::span<const float>(v));
  try {
    npy::decode_matrix(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("rank"), std::string::npos);
  }
}

TEST(Npy, RejectsFortranOrder) {
  try {
    npy::decode_matrix(npy_of<float>(Tensor<float>({2, 2}), true));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("Fortran"), std::string::npos);
  }
}

TEST(Npy, RejectsOtherDtypesMagicAndTruncation) {
  auto bytes = npy_of<float>(Tensor<float>({2, 2}));
  auto int_dtype = bytes;
  const std::string hdr(bytes.begin() + 10, bytes.end());
  const auto at = hdr.find("<f4");
  int_dtype[10 + at + 1] = 'i';
  EXPECT_THROW(npy::decode_matrix(int_dtype), FormatError);
  auto big_endian = bytes;
  big_endian[10 + at] = '>';
  EXPECT_THROW(npy::decode_matrix(big_endian), FormatError);
  auto magic = bytes;
  magic[1] = 'X';
  EXPECT_THROW(npy::decode_matrix(magic), FormatError);
  bytes.pop_back();
  EXPECT_THROW(npy::decode_matrix(bytes), FormatError);
}

TEST(Manifest, JsonRoundTrip) {
  TempDir dir("manifest");
  Manifest m;
  m.samples.push_back({"a", 30.5, {"Action", "Drama"}, "a.mmf"});
  m.samples.push_back({"b", std::nullopt, {"Western"}, "sub/b.mmf"});
  save_manifest(m, dir / "manifest.json");
  auto back = load_manifest(dir / "manifest.json");
  ASSERT_EQ(back.samples.size(), 2u);
  EXPECT_EQ(back.samples[0].duration_s, 30.5);
  EXPECT_EQ(back.samples[0].genres, (std::vector<std::string>{"Action", "Drama"}));
  EXPECT_FALSE(back.samples[1].duration_s.has_value());
  EXPECT_EQ(back.samples[1].path, "sub/b.mmf");
  EXPECT_EQ(back.base_dir, dir.path());
  EXPECT_EQ(manifest_json(back)["genres"], manifest_json(m)["genres"]);
}

TEST(Manifest, DropsUnknownGenresAndRejectsBadInput) {
  auto m = parse_manifest(nlohmann::json::parse(
      R"({"samples":[{"id":"a","duration_s":40,"genres":["Action","Noir","action"]}]})"));
  EXPECT_EQ(m.samples[0].genres, (std::vector<std::string>{"Action"}));
  EXPECT_EQ(m.dropped_genre_labels, 2u);
  EXPECT_EQ(m.samples[0].path, "a.mmf");
  EXPECT_THROW(parse_manifest(nlohmann::json::parse(R"({"samples":[{"id":"a"},{"id":"a"}]})")), DataError);
  EXPECT_THROW(parse_manifest(nlohmann::json::parse(R"({"genres":["Action"],"samples":[]})")), DataError);
  TempDir dir("badjson");
  std::ofstream(dir / "m.json") << "{not json";
  EXPECT_THROW(load_manifest(dir / "m.json"), DataError);
}

TEST(ManifestSource, LoadsRecordsLazily) {
  TempDir dir("source");
  auto recs = synth_mean_encoded(3, 2, 0.3, {.specs = toy_specs()});
  Manifest m;
  m.base_dir = dir.path();
  for (const auto& r : recs) {
    mmf::write(r, dir / (r.id + ".mmf"));
    m.samples.push_back({r.id, r.duration_s, r.genres, r.id + ".mmf"});
  }
  ManifestSource src(m, m.samples);
  ASSERT_EQ(src.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    auto r = src.get(i);
    EXPECT_EQ(src.id(i), recs[i].id);
    EXPECT_EQ(r->genres, recs[i].genres);
    EXPECT_EQ(r->features, recs[i].features);
  }
}

TEST(ImportNpy, ConvertsReportsAndContinues) {
  TempDir dir("import");
  SeededRng rng(6);
  const std::vector<ModalitySpec> specs{standard_modality("clip"), standard_modality("ocr")};
  auto clip = random_tensor<float>({7, 512}, rng);
  write_bytes(dir / "npy/good/clip.npy", npy_of<double>(clip));
  write_bytes(dir / "npy/fortran/clip.npy", npy_of<float>(clip, true));
  write_bytes(dir / "npy/narrow/clip.npy", npy_of<float>(Tensor<float>({3, 100})));
  std::vector<float> flat(512, 0.0f);
  write_bytes(dir / "npy/flat/clip.npy", npy::encode<float>({512}, std::span<const float>(flat)));

  Manifest src;
  for (const char* id : {"good", "fortran", "narrow", "flat", "absent"})
    src.samples.push_back({id, 60.0, {"Comedy"}, ""});
  auto summary = import_npy(dir / "npy", src, dir / "out", specs);
  EXPECT_EQ(summary.imported, 1u);
  EXPECT_EQ(summary.failed, 4u);
  ASSERT_EQ(summary.errors.size(), 4u);
  EXPECT_NE(summary.errors[0].find("Fortran"), std::string::npos);
  EXPECT_NE(summary.errors[2].find("rank"), std::string::npos);

  auto m = load_manifest(dir / "out/manifest.json");
  ASSERT_EQ(m.samples.size(), 1u);
  EXPECT_EQ(m.samples[0].id, "good");
  EXPECT_EQ(m.samples[0].genres, (std::vector<std::string>{"Comedy"}));
  auto r = load_record(m, m.samples[0]);
  EXPECT_EQ(r.features.at("clip"), clip);
  EXPECT_EQ(r.features.at("ocr").shape(), (Shape{0, 768}));
}

TEST(SynthMeanEncoded, Reproducible) {
  auto a = synth_mean_encoded(20, 5, 0.2, {.specs = toy_specs()});
  auto b = synth_mean_encoded(20, 5, 0.2, {.specs = toy_specs()});
  auto c = synth_mean_encoded(20, 6, 0.2, {.specs = toy_specs()});
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].id, b[i].id);
    EXPECT_EQ(a[i].genres, b[i].genres);
    EXPECT_EQ(a[i].duration_s, b[i].duration_s);
    EXPECT_EQ(a[i].features, b[i].features);
  }
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) differs |= a[i].features != c[i].features;
  EXPECT_TRUE(differs);
  EXPECT_THROW(synth_mean_encoded(0, 1, 0.0), std::invalid_argument);
}

TEST(SynthMeanEncoded, RecordsAreValidAndWithinBounds) {
  auto recs = synth_mean_encoded(40, 2, 1.0);
  std::set<std::string> ids;
  for (const auto& r : recs) {
    EXPECT_NO_THROW(validate_record(r, standard_modalities()));
    ids.insert(r.id);
    for (const auto& m : standard_modalities()) {
      EXPECT_GE(r.length(m.name), 1u);
      EXPECT_LE(r.length(m.name), m.train_max_len);
    }
    EXPECT_GE(*r.duration_s, 19.6);
    EXPECT_LE(*r.duration_s, 214.4);
  }
  EXPECT_EQ(ids.size(), recs.size());
}

TEST(SynthMeanEncoded, NoiselessMeanEqualsSummedSignatures) {
  const auto specs = toy_specs();
  auto recs = synth_mean_encoded(30, 12, 0.0, {.specs = specs});
  auto sig = mean_encoded_signatures(12, specs);
  for (const auto& r : recs) {
    for (std::size_t m = 0; m < specs.size(); ++m) {
      std::vector<double> want(specs[m].input_dim, 0.0);
      for (const auto& g : r.genres)
        for (std::size_t d = 0; d < want.size(); ++d) want[d] += sig[m][*genre_index(g)][d];
      auto avg = temporal_average(r.features.at(specs[m].name));
      for (std::size_t d = 0; d < want.size(); ++d) EXPECT_EQ(avg[d], static_cast<float>(want[d]));
    }
  }
}

TEST(SynthMeanEncoded, LinearProbeRecoversEveryLabelWithoutNoise) {
  auto recs = synth_mean_encoded(60, 21, 0.0);
  const auto specs = standard_modalities();
  const auto signatures = mean_encoded_signatures(21, specs);
  const auto& S = signatures[0];  // clip, 21 × 512
  std::vector<std::vector<double>> gram(kNumGenres, std::vector<double>(kNumGenres));
  for (std::size_t i = 0; i < kNumGenres; ++i)
    for (std::size_t j = 0; j < kNumGenres; ++j)
      for (std::size_t d = 0; d < 512; ++d) gram[i][j] += S[i][d] * S[j][d];
  std::size_t correct = 0;
  for (const auto& r : recs) {
    auto x = temporal_average(r.features.at("clip"));
    std::vector<double> rhs(kNumGenres);
    for (std::size_t g = 0; g < kNumGenres; ++g)
      for (std::size_t d = 0; d < 512; ++d) rhs[g] += S[g][d] * x[d];
    auto y = solve(gram, rhs);
    auto truth = label_row(r);
    bool all = true;
    for (std::size_t g = 0; g < kNumGenres; ++g) all &= (y[g] > 0.5) == (truth[g] == 1.0f);
    correct += all;
  }
  EXPECT_EQ(correct, recs.size());
}

TEST(SynthOrderEncoded, SwappingBlocksFlipsLabelAndKeepsMean) {
  std::vector<OrderLayout> layouts;
  OrderEncodedOptions opt;
  opt.spec = {"clip", 6, 64, false};
  opt.min_length = 16;
  opt.max_length = 40;
  auto recs = synth_order_encoded(50, 3, opt, &layouts);
  ASSERT_EQ(layouts.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto& lay = layouts[i];
    EXPECT_LT(lay.first_block + lay.block_length, recs[i].length("clip") / 2 + 1);
    EXPECT_GE(lay.second_block, recs[i].length("clip") / 2);
    EXPECT_EQ(recs[i].genres, (std::vector<std::string>{lay.a_first ? "Action" : "Adventure"}));
    VideoRecord swapped = recs[i];
    OrderLayout lay2 = lay;
    swap_marker_blocks(swapped, lay2);
    EXPECT_NE(swapped.genres, recs[i].genres);
    EXPECT_EQ(temporal_average(swapped.features.at("clip")), temporal_average(recs[i].features.at("clip")));
    swap_marker_blocks(swapped, lay2);
    EXPECT_EQ(swapped.features, recs[i].features);
    EXPECT_EQ(swapped.genres, recs[i].genres);
  }
}

TEST(SynthOrderEncoded, FrameMultisetIndependentOfLabel) {
  std::vector<OrderLayout> layouts;
  OrderEncodedOptions opt;
  opt.spec = {"clip", 4, 64, false};
  opt.min_length = 8;
  opt.max_length = 24;
  auto recs = synth_order_encoded(30, 8, opt, &layouts);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    auto rows = [](const FeatureSequence& s) {
      std::vector<std::vector<float>> out;
      for (std::size_t t = 0; t < s.dim(0); ++t) out.emplace_back(s.ptr() + t * s.dim(1), s.ptr() + (t + 1) * s.dim(1));
      std::sort(out.begin(), out.end());
      return out;
    };
    VideoRecord other = recs[i];
    OrderLayout lay = layouts[i];
    swap_marker_blocks(other, lay);
    EXPECT_EQ(rows(other.features.at("clip")), rows(recs[i].features.at("clip")));
  }
}

TEST(SynthOrderEncoded, BothClassesAppearAndReproducible) {
  auto a = synth_order_encoded(200, 4);
  auto b = synth_order_encoded(200, 4);
  std::size_t action = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].features, b[i].features);
    action += a[i].genres.front() == "Action";
    EXPECT_GE(a[i].length("clip"), 64u);
    EXPECT_LE(a[i].length("clip"), 128u);
  }
  EXPECT_GT(action, 70u);
  EXPECT_LT(action, 130u);
  EXPECT_THROW(synth_order_encoded(0, 1), std::invalid_argument);
}
