#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "ca3/data.hpp"
#include "support.hpp"

using namespace ca3;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("ca3_data_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_text(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

std::vector<unsigned char> be32(std::uint32_t v) {
  return {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 8),
          static_cast<unsigned char>(v)};
}

std::vector<unsigned char> idx_images(std::uint32_t n, std::uint32_t rows, std::uint32_t cols,
                                      const std::vector<unsigned char>& pixels) {
  std::vector<unsigned char> b;
  for (auto v : {0x00000803u, n, rows, cols}) {
    auto w = be32(v);
    b.insert(b.end(), w.begin(), w.end());
  }
  b.insert(b.end(), pixels.begin(), pixels.end());
  return b;
}

std::vector<unsigned char> idx_labels(const std::vector<unsigned char>& labels) {
  std::vector<unsigned char> b;
  for (auto v : {0x00000801u, static_cast<std::uint32_t>(labels.size())}) {
    auto w = be32(v);
    b.insert(b.end(), w.begin(), w.end());
  }
  b.insert(b.end(), labels.begin(), labels.end());
  return b;
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("IDX images decode hand-built bytes") {
    TempDir dir;
    write_bytes(dir.file("img"), idx_images(2, 2, 3, {0, 51, 102, 153, 204, 255, 255, 0, 0, 0, 0, 1}));
    write_bytes(dir.file("lab"), idx_labels({7, 3}));
    const Dataset d = load_idx(dir.file("img"), dir.file("lab"));
    CHECK(d.features.shape() == Shape{2, 1, 2, 3});
    CHECK(d.features[1] == doctest::Approx(0.2));
    CHECK(d.features[5] == 1.0f);
    CHECK(d.features[11] == doctest::Approx(1.0 / 255));
    CHECK(d.labels == std::vector<int>{7, 3});
    CHECK(is_idx_images_file(dir.file("img")));
    CHECK_FALSE(is_idx_images_file(dir.file("lab")));
  }

  TEST_CASE("IDX write/read round trip") {
    TempDir dir;
    Rng rng(1);
    std::vector<float> px(3 * 4 * 5);
    for (auto& v : px) v = static_cast<float>(rng.below(256)) / 255.0f;
    const Tensor images(Shape{3, 1, 4, 5}, px);
    write_idx_images(dir.file("i"), images);
    write_idx_labels(dir.file("l"), {0, 1, 9});
    const Dataset d = load_idx(dir.file("i"), dir.file("l"));
    CHECK(std::equal(d.features.data().begin(), d.features.data().end(), px.begin()));
    CHECK(d.labels == std::vector<int>{0, 1, 9});
  }

  TEST_CASE("IDX errors are distinct and name the file") {
    TempDir dir;
    auto bad = idx_images(1, 2, 2, {1, 2, 3, 4});
    bad[3] = 0x01;
    write_bytes(dir.file("magic"), bad);
    CHECK_THROWS_WITH_AS(load_idx_images(dir.file("magic")), doctest::Contains("magic"), DataError);
    write_bytes(dir.file("short_header"), {0, 0, 8, 3, 0});
    CHECK_THROWS_WITH_AS(load_idx_images(dir.file("short_header")), doctest::Contains("truncated IDX header"),
                         DataError);
    write_bytes(dir.file("short_payload"), idx_images(2, 2, 2, {1, 2, 3}));
    CHECK_THROWS_WITH_AS(load_idx_images(dir.file("short_payload")), doctest::Contains("short_payload"), DataError);
    write_bytes(dir.file("img"), idx_images(2, 1, 1, {1, 2}));
    write_bytes(dir.file("lab"), idx_labels({1, 2, 3}));
    CHECK_THROWS_WITH_AS(load_idx(dir.file("img"), dir.file("lab")), doctest::Contains("3 labels for 2"), DataError);
    CHECK_THROWS_AS(load_idx_images(dir.file("missing")), DataError);
  }

  TEST_CASE("gzip-compressed IDX archives load") {
    const std::string root = CA3_SOURCE_DIR;
    const Tensor x = load_idx_images(root + "/data/mnist/mnist10k-images-idx3-ubyte.gz");
    CHECK(x.shape() == Shape{10000, 1, 28, 28});
    const auto y = load_idx_labels(root + "/data/mnist/mnist10k-labels-idx1-ubyte.gz");
    CHECK(y.size() == 10000);
    CHECK(std::count(y.begin(), y.end(), 0) == 1001);
  }

  TEST_CASE("CSV with numeric and categorical columns") {
    TempDir dir;
    write_text(dir.file("t.csv"),
               "a,color,b,cls\n"
               "1.5,red,2,normal\n"
               "-1,blue,3e1,attack\n"
               "0,red,4,normal\n");
    CsvOptions opt;
    opt.label_column = "cls";
    opt.positive_values = {"attack"};
    const Dataset d = load_csv(dir.file("t.csv"), opt);
    CHECK(d.features.shape() == Shape{3, 4});
    CHECK(d.feature_names == std::vector<std::string>{"a", "color=red", "color=blue", "b"});
    CHECK(d.labels == std::vector<int>{0, 1, 0});
    CHECK(d.features[4] == -1.0f);
    CHECK(d.features[5] == 0.0f);
    CHECK(d.features[6] == 1.0f);
    CHECK(d.features[7] == 30.0f);
    REQUIRE(d.schema.has_value());

    write_text(dir.file("new.csv"), "b,color,a\n5,green,1\n6,blue,2\n");
    const Dataset again = load_csv(dir.file("new.csv"), *d.schema);
    CHECK(again.features.shape() == Shape{2, 4});
    CHECK_FALSE(again.has_labels());
    CHECK(again.features[1] == 0.0f);  // unseen level -> all zeros
    CHECK(again.features[2] == 0.0f);
    CHECK(again.features[3] == 5.0f);
    CHECK(again.features[6] == 1.0f);
  }

  TEST_CASE("CSV labels match numeric positive values") {
    TempDir dir;
    write_text(dir.file("t.csv"), "x,y\n1,1.0\n2,0\n3,1\n");
    CsvOptions opt;
    opt.label_column = "y";
    opt.positive_values = {"1"};
    CHECK(load_csv(dir.file("t.csv"), opt).labels == std::vector<int>{1, 0, 1});
  }

  TEST_CASE("CSV errors give row and column") {
    TempDir dir;
    write_text(dir.file("bad.csv"), "x,y,label\n1,2,0\n3,oops,1\n");
    CsvOptions opt;
    opt.label_column = "label";
    opt.positive_values = {"1"};
    CHECK_THROWS_WITH_AS(load_csv(dir.file("bad.csv"), opt), doctest::Contains("row 2, column 'y'"), DataError);
    write_text(dir.file("ragged.csv"), "x,label\n1,0\n1,2,3\n");
    CHECK_THROWS_AS(load_csv(dir.file("ragged.csv"), opt), DataError);
    opt.label_column = "target";
    write_text(dir.file("ok.csv"), "x,label\n1,0\n");
    CHECK_THROWS_WITH_AS(load_csv(dir.file("ok.csv"), opt), doctest::Contains("'target'"), DataError);
  }

  TEST_CASE("write_csv round trips numeric data") {
    TempDir dir;
    const Dataset d = synth_two_gaussian(20, 5, 3, 4.0, 9);
    write_csv(dir.file("s.csv"), d);
    CsvOptions opt;
    opt.label_column = "label";
    opt.positive_values = {"1"};
    const Dataset back = load_csv(dir.file("s.csv"), opt);
    CHECK(back.labels == d.labels);
    CHECK(std::equal(back.features.data().begin(), back.features.data().end(), d.features.data().begin()));
  }

  TEST_CASE("dedup agrees with an ordered-set oracle") {
    Rng rng(3);
    std::vector<float> v;
    std::vector<int> labels;
    for (int i = 0; i < 300; ++i) {
      v.push_back(static_cast<float>(rng.below(3)));
      v.push_back(static_cast<float>(rng.below(3)));
      labels.push_back(static_cast<int>(rng.below(2)));
    }
    Dataset d;
    d.features = Tensor(Shape{300, 2}, v);
    d.labels = labels;
    const Dataset u = dedup(d);

    std::set<std::tuple<float, float, int>> seen;
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < 300; ++i) {
      if (seen.insert({v[2 * i], v[2 * i + 1], labels[i]}).second) keep.push_back(i);
    }
    REQUIRE(u.size() == keep.size());
    for (std::size_t r = 0; r < keep.size(); ++r) {
      CHECK(u.features[2 * r] == v[2 * keep[r]]);
      CHECK(u.features[2 * r + 1] == v[2 * keep[r] + 1]);
      CHECK(u.labels[r] == labels[keep[r]]);
    }
  }

  TEST_CASE("normalization is fitted on the given rows only") {
    const Tensor x(Shape{4, 3}, {1, 5, 0, 3, 5, 1, 5, 5, 2, 100, 7, 3});
    Dataset d;
    d.features = x;
    const Normalized z = normalize(d, NormMethod::zscore, {0, 1, 2});
    // column 1 is constant on the fit rows and is dropped
    CHECK(z.record.kept == std::vector<std::size_t>{0, 2});
    CHECK(z.record.dropped == std::vector<std::size_t>{1});
    CHECK(z.dataset.features.shape() == Shape{4, 2});
    double mean = 0, sq = 0;
    for (std::size_t r = 0; r < 3; ++r) mean += z.dataset.features[r * 2];
    mean /= 3;
    for (std::size_t r = 0; r < 3; ++r) sq += std::pow(z.dataset.features[r * 2] - mean, 2);
    CHECK(mean == doctest::Approx(0).epsilon(1e-6));
    CHECK(std::sqrt(sq / 3) == doctest::Approx(1).epsilon(1e-6));  // population std
    CHECK(z.dataset.features[6] > 10.0f);                             // outlier row not part of the fit

    const Normalized m = normalize(d, NormMethod::minmax, {0, 1, 2});
    CHECK(m.dataset.features[0] == 0.0f);
    CHECK(m.dataset.features[4] == 1.0f);

    const Dataset again = apply_normalization(d, z.record);
    CHECK(std::equal(again.features.data().begin(), again.features.data().end(), z.dataset.features.data().begin()));

    Dataset flat;
    flat.features = Tensor::full({3, 2}, 4.0f);
    CHECK_THROWS_AS(normalize(flat, NormMethod::zscore, {0, 1, 2}), DataError);
    Dataset wide;
    wide.features = Tensor::zeros({2, 4});
    CHECK_THROWS_AS(apply_normalization(wide, z.record), DataError);
  }

  TEST_CASE("synthetic two-gaussian generator") {
    const Dataset a = synth_two_gaussian(1000, 100, 10, 6.0, 5);
    const Dataset b = synth_two_gaussian(1000, 100, 10, 6.0, 5);
    CHECK(a.features.shape() == Shape{1100, 10});
    CHECK(a.anomaly_fraction() == doctest::Approx(100.0 / 1100));
    CHECK(std::equal(a.features.data().begin(), a.features.data().end(), b.features.data().begin()));
    double typical = 0, anomalous = 0;
    for (std::size_t i = 0; i < 1100; ++i) (a.labels[i] ? anomalous : typical) += a.features[i * 10];
    CHECK(typical / 1000 == doctest::Approx(0.0).epsilon(0.15));
    CHECK(anomalous / 100 == doctest::Approx(6.0).epsilon(0.05));
    CHECK_THROWS_AS(synth_two_gaussian(0, 1, 1, 1, 0), ConfigError);
  }

  TEST_CASE("subset keeps labels aligned") {
    const Dataset d = synth_two_gaussian(5, 5, 2, 3.0, 1);
    const Dataset s = d.subset({9, 0});
    CHECK(s.labels == std::vector<int>{1, 0});
    CHECK(s.features[0] == d.features[18]);
  }
}
