#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "mriqa/domain.hpp"

using namespace mriqa;

namespace fs = std::filesystem;

namespace {

SliceImage make_slice(int h, int w, std::vector<float> data) {
  SliceImage s;
  s.height = h;
  s.width = w;
  s.data = std::move(data);
  return s;
}

fs::path temp_dir() {
  auto dir = fs::temp_directory_path() / "mriqa_domain_test";
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE_BEGIN("domain");

TEST_CASE("quality labels round-trip through their string forms") {
  for (auto l : {QualityLabel::Pass, QualityLabel::Questionable, QualityLabel::Fail}) {
    CHECK(label_from_string(to_string(l)) == l);
  }
  CHECK(to_string(QualityLabel::Pass) == "pass");
  CHECK(to_string(QualityLabel::Questionable) == "questionable");
  CHECK(to_string(QualityLabel::Fail) == "fail");
  CHECK_THROWS_AS(label_from_string("ok"), FormatError);
}

TEST_CASE("minmax_normalize maps [2,4,6] to [0,0.5,1]") {
  const SliceImage out = minmax_normalize(make_slice(1, 3, {2.0f, 4.0f, 6.0f}));
  CHECK(out.data == std::vector<float>{0.0f, 0.5f, 1.0f});
}

TEST_CASE("minmax_normalize maps a constant image to zeros") {
  const SliceImage out = minmax_normalize(make_slice(1, 3, {5.0f, 5.0f, 5.0f}));
  CHECK(out.data == std::vector<float>{0.0f, 0.0f, 0.0f});
}

TEST_CASE("minmax_normalize attains 0 and 1 exactly on random grids") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> dist(-100.0f, 100.0f);
  for (int trial = 0; trial < 10; ++trial) {
    SliceImage img = make_slice(6, 6, std::vector<float>(36));
    for (auto& v : img.data) v = dist(rng);
    const SliceImage out = minmax_normalize(img);
    CHECK(*std::min_element(out.data.begin(), out.data.end()) == 0.0f);
    CHECK(*std::max_element(out.data.begin(), out.data.end()) == 1.0f);
  }
}

TEST_CASE("minmax_normalize is idempotent for non-constant images") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<float> dist(-5.0f, 5.0f);
  SliceImage img = make_slice(4, 4, std::vector<float>(16));
  for (auto& v : img.data) v = dist(rng);
  const SliceImage once = minmax_normalize(img);
  const SliceImage twice = minmax_normalize(once);
  CHECK(once.data == twice.data);
}

TEST_CASE("minmax_normalize rejects an empty image") {
  CHECK_THROWS_AS(minmax_normalize(SliceImage{}), InvalidInputError);
}

TEST_CASE("pad_to_size centers with a symmetric margin") {
  const SliceImage out = pad_to_size(make_slice(3, 3, std::vector<float>(9, 1.0f)), 5);
  REQUIRE(out.height == 5);
  for (int y = 0; y < 5; ++y) {
    for (int x = 0; x < 5; ++x) {
      const bool inside = y >= 1 && y <= 3 && x >= 1 && x <= 3;
      CHECK(out.at(y, x) == (inside ? 1.0f : 0.0f));
    }
  }
}

TEST_CASE("pad_to_size puts the extra odd margin at the bottom/right") {
  const SliceImage out = pad_to_size(make_slice(2, 2, {1, 2, 3, 4}), 5);
  CHECK(out.at(1, 1) == 1.0f);
  CHECK(out.at(1, 2) == 2.0f);
  CHECK(out.at(2, 1) == 3.0f);
  CHECK(out.at(2, 2) == 4.0f);
  CHECK(out.at(0, 0) == 0.0f);
  CHECK(out.at(4, 4) == 0.0f);
}

TEST_CASE("pad_to_size is the identity at the canvas size") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<float> dist(0.0f, 1.0f);
  SliceImage img = make_slice(8, 8, std::vector<float>(64));
  for (auto& v : img.data) v = dist(rng);
  const SliceImage out = pad_to_size(img, 8);
  CHECK(out.data == img.data);
}

TEST_CASE("pad_to_size preserves the multiset of nonzero pixel values") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<float> dist(0.1f, 1.0f);
  SliceImage img = make_slice(3, 5, std::vector<float>(15));
  for (auto& v : img.data) v = dist(rng);
  const SliceImage out = pad_to_size(img, 9);
  std::vector<float> a = img.data, b;
  for (float v : out.data) {
    if (v != 0.0f) b.push_back(v);
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);
}

TEST_CASE("pad_to_size rejects an oversized image") {
  CHECK_THROWS_AS(pad_to_size(make_slice(4, 4, std::vector<float>(16)), 3), InvalidInputError);
}

TEST_CASE("slice predictions take the argmax with fixed-order tie breaks") {
  const auto p = SlicePrediction::from_probabilities({0.2, 0.5, 0.3});
  CHECK(p.label == QualityLabel::Questionable);
  CHECK(p.max_probability() == doctest::Approx(0.5));
  const auto tie = SlicePrediction::from_probabilities({0.5, 0.5, 0.0});
  CHECK(tie.label == QualityLabel::Pass);
  CHECK_THROWS_AS(SlicePrediction::from_probabilities({0.5, 0.6, 0.3}), InvalidInputError);
}

TEST_CASE("manifests round-trip through save/load") {
  const fs::path dir = temp_dir();
  save_pgm(RawImage{1, 1, {0}}, (dir / "a.pgm").string());
  save_pgm(RawImage{1, 1, {1}}, (dir / "b.pgm").string());

  DatasetManifest m;
  m.split_tag = SplitTag::Train;
  m.records.push_back({"vol1", 0, "a.pgm", QualityLabel::Pass, false, std::nullopt});
  m.records.push_back({"vol1", 1, "b.pgm", QualityLabel::Fail, false, std::nullopt});
  const std::string path = (dir / "m.tsv").string();
  save_manifest(m, path);
  const DatasetManifest back = load_manifest(path);
  REQUIRE(back.records.size() == 2);
  CHECK(back.split_tag == SplitTag::Train);
  CHECK(back.records[0].volume_id == "vol1");
  CHECK(back.records[0].slice_index == 0);
  CHECK(back.records[0].image_path == "a.pgm");
  CHECK(back.records[0].label == QualityLabel::Pass);
  CHECK(back.records[1].label == QualityLabel::Fail);

  // A second save of the loaded manifest is byte-identical.
  const std::string path2 = (dir / "m2.tsv").string();
  save_manifest(back, path2);
  std::ifstream f1(path), f2(path2);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
}

TEST_CASE("the unlabeled token parses into an unlabeled record") {
  const fs::path dir = temp_dir();
  save_pgm(RawImage{1, 1, {7}}, (dir / "u.pgm").string());
  const std::string path = (dir / "u.tsv").string();
  {
    std::ofstream out(path);
    out << "#! split=unlabeled\n# comment line\nvolX\t3\tu.pgm\tunlabeled\n";
  }
  const DatasetManifest m = load_manifest(path);
  REQUIRE(m.records.size() == 1);
  CHECK(m.split_tag == SplitTag::Unlabeled);
  CHECK_FALSE(m.records[0].label.has_value());
}

TEST_CASE("duplicate manifest keys are rejected with the line number") {
  const fs::path dir = temp_dir();
  save_pgm(RawImage{1, 1, {7}}, (dir / "d.pgm").string());
  const std::string path = (dir / "dup.tsv").string();
  {
    std::ofstream out(path);
    out << "v\t1\td.pgm\tpass\nv\t1\td.pgm\tfail\n";
  }
  try {
    load_manifest(path);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("unknown label tokens are rejected") {
  const fs::path dir = temp_dir();
  const std::string path = (dir / "bad.tsv").string();
  {
    std::ofstream out(path);
    out << "v\t1\tx.pgm\tgreat\n";
  }
  CHECK_THROWS_AS(load_manifest(path, false), FormatError);
}

TEST_CASE("pseudo-label provenance survives a round-trip") {
  const fs::path dir = temp_dir();
  save_pgm(RawImage{1, 1, {7}}, (dir / "p.pgm").string());
  DatasetManifest m;
  m.records.push_back({"v", 0, "p.pgm", QualityLabel::Pass, true, std::nullopt});
  m.records.push_back({"v", 1, "p.pgm", QualityLabel::Fail, false, std::nullopt});
  const std::string path = (dir / "prov.tsv").string();
  save_manifest(m, path);
  const DatasetManifest back = load_manifest(path);
  CHECK(back.records[0].pseudo_labeled);
  CHECK_FALSE(back.records[1].pseudo_labeled);
}

TEST_CASE("16-bit graymaps round-trip bit-exactly") {
  const fs::path dir = temp_dir();
  std::mt19937_64 rng(9);
  RawImage img;
  img.height = 5;
  img.width = 7;
  img.data.resize(35);
  std::uniform_int_distribution<int> dist(0, 65535);
  for (auto& v : img.data) v = static_cast<std::uint16_t>(dist(rng));
  const std::string path = (dir / "img.pgm").string();
  save_pgm(img, path);
  const RawImage back = load_pgm(path);
  CHECK(back.height == img.height);
  CHECK(back.width == img.width);
  CHECK(back.data == img.data);
}

TEST_SUITE_END();
