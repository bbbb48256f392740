#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>

#include "diffseg/data.hpp"
#include "diffseg/image_io.hpp"

using namespace diffseg;

namespace {

multi_rater_sample make_sample(const std::string& id, std::uint64_t seed, int h = 12, int w = 10,
                               int c = 1, int ks = 2, int n = 3) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    multi_rater_sample s;
    s.sample_id = id;
    s.label = int(seed % 2);
    s.image = tensor({h, w, c});
    for (long i = 0; i < s.image.size(); ++i) s.image[i] = quantize16(u(rng)) / 65535.0;
    s.masks = tensor({h, w, ks, n});
    for (long i = 0; i < s.masks.size(); ++i) s.masks[i] = quantize16(u(rng)) / 65535.0;
    return s;
}

dataset make_dataset(int count, std::uint64_t seed) {
    dataset d;
    d.split = dataset_split::train;
    d.metadata["generator"] = "test";
    d.metadata["seed"] = std::to_string(seed);
    for (int i = 0; i < count; ++i)
        d.samples.push_back(make_sample("s" + std::to_string(i), seed + i));
    return d;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
}

}  // namespace

TEST_CASE("dataset round trips exactly through disk") {
    auto dir = std::filesystem::temp_directory_path() / "diffseg_data_rt";
    std::filesystem::remove_all(dir);
    dataset d = make_dataset(3, 11);
    save_dataset(d, dir.string());

    dataset back = load_dataset(dir.string());
    REQUIRE(back.samples.size() == d.samples.size());
    REQUIRE(back.split == d.split);
    REQUIRE(back.metadata == d.metadata);
    for (size_t i = 0; i < d.samples.size(); ++i) {
        REQUIRE(back.samples[i].sample_id == d.samples[i].sample_id);
        REQUIRE(back.samples[i].label == d.samples[i].label);
        REQUIRE(back.samples[i].image == d.samples[i].image);
        REQUIRE(back.samples[i].masks == d.samples[i].masks);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("load order follows the manifest, not directory listing") {
    auto dir = std::filesystem::temp_directory_path() / "diffseg_data_order";
    std::filesystem::remove_all(dir);
    dataset d;
    d.samples.push_back(make_sample("zz_last", 1));
    d.samples.push_back(make_sample("aa_first", 2));
    save_dataset(d, dir.string());
    dataset back = load_dataset(dir.string());
    REQUIRE(back.samples[0].sample_id == "zz_last");
    REQUIRE(back.samples[1].sample_id == "aa_first");
    std::filesystem::remove_all(dir);
}

TEST_CASE("two saves of the same dataset are byte-identical") {
    auto dir_a = std::filesystem::temp_directory_path() / "diffseg_data_a";
    auto dir_b = std::filesystem::temp_directory_path() / "diffseg_data_b";
    std::filesystem::remove_all(dir_a);
    std::filesystem::remove_all(dir_b);
    dataset d = make_dataset(2, 42);
    save_dataset(d, dir_a.string());
    save_dataset(d, dir_b.string());
    for (const auto& entry : std::filesystem::directory_iterator(dir_a)) {
        auto name = entry.path().filename();
        CAPTURE(name.string());
        REQUIRE(slurp(entry.path()) == slurp(dir_b / name));
    }
    std::filesystem::remove_all(dir_a);
    std::filesystem::remove_all(dir_b);
}

TEST_CASE("validate_sample reports each violated condition") {
    multi_rater_sample good = make_sample("ok", 3);
    REQUIRE(validate_sample(good).empty());

    multi_rater_sample bad = good;
    bad.sample_id = "";
    bad.label = 7;
    bad.masks(0, 0, 0, 0) = 1.5;
    auto v = validate_sample(bad);
    REQUIRE(v.size() == 3);
    bool has_id = false, has_label = false, has_range = false;
    for (const auto& msg : v) {
        if (msg.find("sample_id") != std::string::npos) has_id = true;
        if (msg.find("label") != std::string::npos) has_label = true;
        if (msg.find("[0,1]") != std::string::npos) has_range = true;
    }
    REQUIRE(has_id);
    REQUIRE(has_label);
    REQUIRE(has_range);

    multi_rater_sample one_rater = good;
    one_rater.masks = tensor({12, 10, 2, 1});
    v = validate_sample(one_rater);
    REQUIRE_FALSE(v.empty());
    REQUIRE(v.front().find("n must be >= 2") != std::string::npos);
}

TEST_CASE("save_dataset rejects invalid samples") {
    dataset d = make_dataset(1, 5);
    d.samples[0].label = 3;
    auto dir = std::filesystem::temp_directory_path() / "diffseg_data_invalid";
    REQUIRE_THROWS_AS(save_dataset(d, dir.string()), validation_error);
    // a path through an existing regular file can never become a directory
    auto blocked = std::filesystem::temp_directory_path() / "diffseg_blocked";
    std::filesystem::remove_all(blocked);
    std::ofstream(blocked) << "x";
    REQUIRE_THROWS_AS(save_dataset(make_dataset(1, 5), (blocked / "x").string()), io_error);
    std::filesystem::remove_all(blocked);
}

TEST_CASE("duplicate sample ids are rejected") {
    dataset d = make_dataset(2, 6);
    d.samples[1].sample_id = d.samples[0].sample_id;
    REQUIRE_THROWS_AS(validate_dataset(d), validation_error);
}

TEST_CASE("load_dataset rejects missing or malformed manifests") {
    auto dir = std::filesystem::temp_directory_path() / "diffseg_data_badmanifest";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    REQUIRE_THROWS_AS(load_dataset(dir.string()), format_error);

    std::ofstream(dir / "manifest.json") << "{ not json";
    REQUIRE_THROWS_AS(load_dataset(dir.string()), format_error);

    std::ofstream(dir / "manifest.json") << R"({"format":"something-else","version":1})";
    REQUIRE_THROWS_AS(load_dataset(dir.string()), format_error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("load_dataset verifies mask geometry against the image") {
    auto dir = std::filesystem::temp_directory_path() / "diffseg_data_badmask";
    std::filesystem::remove_all(dir);
    dataset d = make_dataset(1, 9);
    save_dataset(d, dir.string());
    // overwrite one mask with the wrong size
    tensor wrong({4, 4, 1});
    write_png16((dir / mask_file_name("s0", 0, 0)).string(), wrong);
    REQUIRE_THROWS_AS(load_dataset(dir.string()), validation_error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("fusion provenance names round trip") {
    for (auto p : {fusion_provenance::majority_vote, fusion_provenance::dfgt_raw,
                   fusion_provenance::dfgt_transrob, fusion_provenance::dfgt_fourier,
                   fusion_provenance::dfgt_expg})
        REQUIRE(provenance_from_string(to_string(p)) == p);
    REQUIRE_THROWS_AS(provenance_from_string("nonsense"), format_error);
}

TEST_CASE("split names round trip") {
    for (auto s : {dataset_split::train, dataset_split::val, dataset_split::test})
        REQUIRE(split_from_string(to_string(s)) == s);
    REQUIRE_THROWS_AS(split_from_string("holdout"), format_error);
}
