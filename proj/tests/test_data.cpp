#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ei/dataset.hpp"
#include "ei/errors.hpp"
#include "ei/tensor.hpp"
#include "ei/tensor_io.hpp"

using namespace ei;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("ei_data_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// Mean over the 4x4 corner block; cue blocks sit near 1, noise near 0.
double corner_mean(const Tensor& img, int corner) {
    const std::int64_t sz = img.dim(0);
    const std::int64_t r0 = (corner == 1 || corner == 3) ? sz - 4 : 0;
    const std::int64_t c0 = (corner == 1 || corner == 2) ? sz - 4 : 0;
    auto v = img.values();
    double sum = 0;
    for (std::int64_t r = 0; r < 4; ++r)
        for (std::int64_t c = 0; c < 4; ++c) sum += v[static_cast<std::size_t>((r0 + r) * sz + c0 + c)];
    return sum / 16.0;
}

// xor images carry the bit as top-left (1) vs bottom-right (0).
int read_bit(const Tensor& img) { return corner_mean(img, 0) > 0.5 ? 1 : 0; }

int label_class(const Sample& s) {
    for (std::size_t c = 0; c < s.label.size(); ++c)
        if (s.label[c] == 1.0) return static_cast<int>(c);
    return -1;
}

bool same_values(const Tensor& a, const Tensor& b) {
    auto av = a.values();
    auto bv = b.values();
    if (av.size() != bv.size()) return false;
    for (std::size_t i = 0; i < av.size(); ++i)
        if (av[i] != bv[i]) return false;
    return true;
}

}  // namespace

TEST_CASE("synthetic spec validation") {
    SyntheticSpec spec;
    CHECK_NOTHROW(spec.validate());

    SyntheticSpec bad = spec;
    bad.task = "parity";
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = spec;
    bad.modalities = 3;  // xor is strictly two-modality
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = spec;
    bad.task = "redundant";
    bad.classes = 5;  // only four corners to draw on
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = spec;
    bad.image_size = 7;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = spec;
    bad.train_count = -1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = spec;
    bad.noise_std = -0.1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    CHECK(spec.count_for("train") == 1000);
    CHECK(spec.count_for("val") == 200);
    CHECK(spec.count_for("test") == 200);
    CHECK_THROWS_AS(static_cast<void>(spec.count_for("holdout")), DataError);
}

TEST_CASE("generation is deterministic under the seed") {
    SyntheticSpec spec;
    spec.train_count = 20;
    spec.val_count = 5;
    spec.test_count = 5;

    Dataset a = synth_split(spec, "train");
    Dataset b = synth_split(spec, "train");
    REQUIRE(a.size() == 20);
    REQUIRE(b.size() == 20);
    for (std::int64_t i = 0; i < a.size(); ++i) {
        const auto& sa = a.samples[static_cast<std::size_t>(i)];
        const auto& sb = b.samples[static_cast<std::size_t>(i)];
        CHECK(sa.id == sb.id);
        CHECK(sa.label == sb.label);
        for (std::size_t m = 0; m < sa.tensors.size(); ++m)
            CHECK(same_values(sa.tensors[m], sb.tensors[m]));
    }

    SyntheticSpec other = spec;
    other.seed = 1;
    Dataset c = synth_split(other, "train");
    bool any_diff = false;
    for (std::int64_t i = 0; i < a.size() && !any_diff; ++i) {
        if (!same_values(a.samples[static_cast<std::size_t>(i)].tensors[0],
                         c.samples[static_cast<std::size_t>(i)].tensors[0]))
            any_diff = true;
    }
    CHECK(any_diff);

    // Splits draw from distinct streams.
    Dataset v = synth_split(spec, "val");
    CHECK_FALSE(same_values(a.samples[0].tensors[0], v.samples[0].tensors[0]));
}

TEST_CASE("xor labels follow the rendered bits") {
    SyntheticSpec spec;
    spec.train_count = 1000;
    Dataset ds = synth_split(spec, "train");
    REQUIRE(ds.size() == 1000);

    std::int64_t label_one = 0;
    std::int64_t bit_label_agree[2] = {0, 0};
    for (const auto& s : ds.samples) {
        REQUIRE(s.tensors.size() == 2);
        REQUIRE(s.label.size() == 2);
        const int b1 = read_bit(s.tensors[0]);
        const int b2 = read_bit(s.tensors[1]);
        const int cls = label_class(s);
        CHECK(cls == (b1 ^ b2));
        label_one += cls;
        bit_label_agree[0] += (b1 == cls);
        bit_label_agree[1] += (b2 == cls);
    }

    // Class balance within the pinned tolerance.
    const double p1 = static_cast<double>(label_one) / 1000.0;
    CHECK(std::fabs(p1 - 0.5) <= 0.05);

    // Neither single modality's bit predicts the label: agreement stays
    // near chance, which bounds |corr| by about 0.1.
    for (int m = 0; m < 2; ++m) {
        const double agree = static_cast<double>(bit_label_agree[m]) / 1000.0;
        CHECK(std::fabs(agree - 0.5) <= 0.05);
    }
}

TEST_CASE("redundant task renders the class cue in every modality") {
    SyntheticSpec spec;
    spec.task = "redundant";
    spec.classes = 3;
    spec.train_count = 30;
    Dataset ds = synth_split(spec, "train");
    for (const auto& s : ds.samples) {
        const int cls = label_class(s);
        REQUIRE(cls >= 0);
        for (const auto& img : s.tensors) {
            CHECK(corner_mean(img, cls) > 0.5);
            for (int corner = 0; corner < 3; ++corner)
                if (corner != cls) CHECK(corner_mean(img, corner) < 0.5);
        }
    }
}

TEST_CASE("unimodal-linear task keeps the second modality blank") {
    SyntheticSpec spec;
    spec.task = "unimodal-linear";
    spec.train_count = 40;
    Dataset ds = synth_split(spec, "train");
    for (const auto& s : ds.samples) {
        const int cls = label_class(s);
        CHECK(corner_mean(s.tensors[0], cls) > 0.5);
        for (int corner = 0; corner < 4; ++corner) CHECK(corner_mean(s.tensors[1], corner) < 0.5);
    }
}

TEST_CASE("written corpus loads back bit-identically") {
    SyntheticSpec spec;
    spec.train_count = 12;
    spec.val_count = 4;
    spec.test_count = 3;
    const fs::path dir = fresh_dir("roundtrip");
    generate_synthetic(spec, dir);

    std::ifstream manifest(dir / "manifest.jsonl");
    REQUIRE(manifest.good());
    std::int64_t lines = 0;
    std::string line;
    while (std::getline(manifest, line))
        if (!line.empty()) ++lines;
    CHECK(lines == 19);

    for (const char* split : {"train", "val", "test"}) {
        Dataset mem = synth_split(spec, split);
        Dataset disk = load_split(dir / "manifest.jsonl", split);
        REQUIRE(disk.size() == mem.size());
        CHECK(disk.modalities == mem.modalities);
        CHECK(disk.classes == mem.classes);
        for (std::int64_t i = 0; i < mem.size(); ++i) {
            const auto& sm = mem.samples[static_cast<std::size_t>(i)];
            const auto& sd = disk.samples[static_cast<std::size_t>(i)];
            CHECK(sd.id == sm.id);
            CHECK(sd.label == sm.label);
            for (std::size_t m = 0; m < sm.tensors.size(); ++m)
                CHECK(same_values(sd.tensors[m], sm.tensors[m]));
        }
    }
}

TEST_CASE("loading orders samples by id regardless of manifest order") {
    const fs::path dir = fresh_dir("ordering");
    Tensor t = Tensor::full({2, 2}, 0.25);
    write_tensor(dir / "b.eitf", t, FileDtype::f32);
    write_tensor(dir / "a.eitf", t, FileDtype::f32);
    {
        std::ofstream m(dir / "manifest.jsonl");
        m << R"({"id":"b","tensors":["b.eitf","b.eitf"],"label":[1,0],"split":"train"})" << "\n";
        m << R"({"id":"a","tensors":["a.eitf","a.eitf"],"label":[0,1],"split":"train"})" << "\n";
    }
    Dataset ds = load_split(dir / "manifest.jsonl", "train");
    REQUIRE(ds.size() == 2);
    CHECK(ds.samples[0].id == "a");
    CHECK(ds.samples[1].id == "b");
}

TEST_CASE("manifest loading rejects malformed input") {
    const fs::path dir = fresh_dir("badmanifest");
    Tensor t = Tensor::full({2, 2}, 1.0);
    write_tensor(dir / "t.eitf", t, FileDtype::f32);

    auto write_manifest = [&](const std::string& body) {
        std::ofstream m(dir / "manifest.jsonl", std::ios::trunc);
        m << body;
    };
    const fs::path mp = dir / "manifest.jsonl";

    CHECK_THROWS_AS(static_cast<void>(load_split(dir / "missing.jsonl", "train")), DataError);
    CHECK_THROWS_AS(static_cast<void>(load_split(mp, "holdout")), DataError);

    write_manifest("{not json}\n");
    CHECK_THROWS_AS(static_cast<void>(load_split(mp, "train")), DataError);

    write_manifest(R"({"id":"x","tensors":["t.eitf"],"label":[1,0]})" "\n");  // no split
    CHECK_THROWS_AS(static_cast<void>(load_split(mp, "train")), DataError);

    write_manifest(R"({"id":"x","tensors":["t.eitf"],"label":[1,0],"split":"holdout"})" "\n");
    CHECK_THROWS_AS(static_cast<void>(load_split(mp, "train")), DataError);

    write_manifest(R"({"id":"x","tensors":["t.eitf"],"label":[1,0],"split":"train"})" "\n"
                   R"({"id":"y","tensors":["t.eitf"],"label":[1,0,0],"split":"train"})" "\n");
    CHECK_THROWS_AS(static_cast<void>(load_split(mp, "train")), DataError);

    write_manifest(R"({"id":"x","tensors":["t.eitf"],"label":[1,0],"split":"train"})" "\n"
                   R"({"id":"y","tensors":["t.eitf","t.eitf"],"label":[1,0],"split":"train"})" "\n");
    CHECK_THROWS_AS(static_cast<void>(load_split(mp, "train")), DataError);

    write_manifest(R"({"id":"x","tensors":["t.eitf"],"label":[1,0],"split":"train"})" "\n"
                   R"({"id":"x","tensors":["t.eitf"],"label":[0,1],"split":"train"})" "\n");
    CHECK_THROWS_AS(static_cast<void>(load_split(mp, "train")), DataError);

    write_manifest(R"({"id":"x","tensors":["gone.eitf"],"label":[1,0],"split":"train"})" "\n");
    CHECK_THROWS_AS(static_cast<void>(load_split(mp, "train")), DataError);

    // Width checks apply across splits even when lines are filtered out.
    write_manifest(R"({"id":"x","tensors":["t.eitf"],"label":[1,0],"split":"val"})" "\n"
                   R"({"id":"y","tensors":["t.eitf"],"label":[1,0,0],"split":"train"})" "\n");
    CHECK_THROWS_AS(static_cast<void>(load_split(mp, "train")), DataError);
}

TEST_CASE("tensor container roundtrips both precisions") {
    const fs::path dir = fresh_dir("eitf");
    Rng rng(5);

    // f32 payload: values quantized on write, so a quantized source
    // survives exactly.
    Tensor t32 = Tensor::zeros({3, 4, 2});
    for (auto& v : t32.raw_values()) v = static_cast<double>(static_cast<float>(rng.normal()));
    write_tensor(dir / "a.eitf", t32, FileDtype::f32);
    FileDtype dt;
    Tensor back32 = read_tensor(dir / "a.eitf", &dt);
    CHECK(dt == FileDtype::f32);
    REQUIRE(back32.ndim() == 3);
    CHECK(back32.dim(0) == 3);
    CHECK(back32.dim(1) == 4);
    CHECK(back32.dim(2) == 2);
    CHECK(same_values(back32, t32));

    Tensor t64 = Tensor::zeros({5});
    for (auto& v : t64.raw_values()) v = rng.normal();
    write_tensor(dir / "b.eitf", t64, FileDtype::f64);
    Tensor back64 = read_tensor(dir / "b.eitf", &dt);
    CHECK(dt == FileDtype::f64);
    CHECK(same_values(back64, t64));

    CHECK_NOTHROW(static_cast<void>(read_tensor_as(dir / "b.eitf", FileDtype::f64)));
    CHECK_THROWS_AS(static_cast<void>(read_tensor_as(dir / "b.eitf", FileDtype::f32)), DataError);
}

TEST_CASE("tensor container rejects corrupt files") {
    const fs::path dir = fresh_dir("eitfbad");
    Tensor t = Tensor::full({2, 2}, 1.0);
    write_tensor(dir / "ok.eitf", t, FileDtype::f32);

    auto corrupt = [&](const std::string& name, std::size_t offset, char byte) {
        std::ifstream in(dir / "ok.eitf", std::ios::binary);
        std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        buf[offset] = byte;
        std::ofstream out(dir / name, std::ios::binary);
        out << buf;
        return dir / name;
    };

    CHECK_THROWS_AS(static_cast<void>(read_tensor(dir / "missing.eitf")), DataError);
    CHECK_THROWS_AS(static_cast<void>(read_tensor(corrupt("magic.eitf", 0, 'X'))), DataError);
    CHECK_THROWS_AS(static_cast<void>(read_tensor(corrupt("version.eitf", 4, 9))), DataError);
    CHECK_THROWS_AS(static_cast<void>(read_tensor(corrupt("dtype.eitf", 6, 7))), DataError);

    {
        std::ifstream in(dir / "ok.eitf", std::ios::binary);
        std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::ofstream out(dir / "short.eitf", std::ios::binary);
        out << buf.substr(0, buf.size() - 3);
    }
    CHECK_THROWS_AS(static_cast<void>(read_tensor(dir / "short.eitf")), DataError);
}
