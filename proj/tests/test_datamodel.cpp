#include <doctest.h>

#include <fstream>

#include "crowdsca/datamodel.hpp"
#include "crowdsca/errors.hpp"
#include "oracles.hpp"

using namespace crowdsca;

namespace {

SceneConfig scene(int h, int w, int people, BackgroundStyle style = BackgroundStyle::plain) {
    SceneConfig c;
    c.height = h;
    c.width = w;
    c.n_people = people;
    c.attributes.background_style = style;
    return c;
}

bool covers(const CrowdMask& rect, const CrowdMask& exact) {
    for (std::size_t i = 0; i < rect.values.size(); ++i) {
        if (rect.values[i] < exact.values[i]) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("empty scene is pure background") {
    const auto p = generate_synthetic_scene(scene(64, 64, 0), 3);
    CHECK(p.source.heads.empty());
    for (auto v : p.source.mask.values) REQUIRE(v == 0);
    for (auto v : p.target.mask.values) REQUIRE(v == 0);
    CHECK(p.source.mask.provenance == MaskProvenance::exact);
    CHECK(p.target.mask.provenance == MaskProvenance::detection_rectangles);
}

TEST_CASE("five people at seed 7") {
    const auto p = generate_synthetic_scene(scene(64, 64, 5), 7);
    REQUIRE(p.source.heads.size() == 5);
    for (const auto& h : p.source.heads) {
        CHECK(h.row >= 0.0);
        CHECK(h.row < 64.0);
        CHECK(h.col >= 0.0);
        CHECK(h.col < 64.0);
    }
    CHECK(covers(p.target.mask, p.source.mask));
    CHECK(p.target.heads.value() == p.source.heads);
    CHECK_NOTHROW(validate(p.source));
    CHECK_NOTHROW(validate(p.target));
}

TEST_CASE("generator is deterministic and seed sensitive") {
    const auto cfg = scene(96, 128, 12, BackgroundStyle::textured);
    const auto a = generate_synthetic_scene(cfg, 11);
    const auto b = generate_synthetic_scene(cfg, 11);
    const auto c = generate_synthetic_scene(cfg, 12);
    CHECK(a.source == b.source);
    CHECK(a.target == b.target);
    CHECK_FALSE(a.source.image == c.source.image);
}

TEST_CASE("rectangles cover silhouettes for many scenes") {
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const auto p = generate_synthetic_scene(scene(64, 64, 20, seed % 2 ? BackgroundStyle::textured : BackgroundStyle::plain), seed);
        REQUIRE(covers(p.target.mask, p.source.mask));
        for (float v : p.source.image.pixels) REQUIRE((v >= 0.0F && v <= 1.0F));
    }
}

TEST_CASE("scene dimensions must be multiples of 8") {
    CHECK_THROWS_AS(generate_synthetic_scene(scene(63, 64, 1), 0), ConfigError);
    CHECK_THROWS_AS(generate_synthetic_scene(scene(64, 60, 1), 0), ConfigError);
    CHECK_THROWS_AS(generate_synthetic_scene(scene(8, 8, 1), 0), ConfigError);
}

TEST_CASE("dataset round trip is exact") {
    const auto dir = oracle::temp_dir("roundtrip");
    SourceDataset src;
    TargetDataset tgt;
    for (int i = 0; i < 3; ++i) {
        auto p = generate_synthetic_scene(scene(32, 48, 4), static_cast<std::uint64_t>(i));
        p.source.id = "s" + std::to_string(i);
        p.target.id = "t" + std::to_string(i);
        p.source.attributes.brightness = 0.25 * i;
        src.samples.push_back(p.source);
        tgt.samples.push_back(p.target);
    }
    save_dataset(dir / "src", src);
    save_dataset(dir / "tgt", tgt);
    const auto src2 = load_source_dataset(dir / "src");
    const auto tgt2 = load_target_dataset(dir / "tgt");
    CHECK(src2.size() == 3);
    CHECK(src2 == src);
    CHECK(tgt2 == tgt);
    CHECK(dataset_kind(dir / "src") == DomainKind::source);
    CHECK(dataset_kind(dir / "tgt") == DomainKind::target);
    std::filesystem::remove_all(dir);
}

TEST_CASE("target set without head files loads with heads absent") {
    const auto dir = oracle::temp_dir("noheads");
    TargetDataset tgt;
    auto p = generate_synthetic_scene(scene(32, 32, 3), 5);
    p.target.id = "a";
    p.target.heads.reset();
    tgt.samples.push_back(p.target);
    save_dataset(dir, tgt);
    const auto back = load_target_dataset(dir);
    REQUIRE(back.size() == 1);
    CHECK_FALSE(back.samples[0].heads.has_value());
    std::filesystem::remove_all(dir);
}

TEST_CASE("load errors name the offending file") {
    const auto dir = oracle::temp_dir("loaderr");
    SourceDataset src;
    auto p = generate_synthetic_scene(scene(32, 32, 3), 5);
    p.source.id = "only";
    src.samples.push_back(p.source);
    save_dataset(dir, src);

    SUBCASE("missing mask") {
        std::filesystem::remove(dir / "masks" / "only.png");
        try {
            (void)load_source_dataset(dir);
            FAIL("expected LoadError");
        } catch (const LoadError& e) {
            CHECK(std::string(e.what()).find("only.png") != std::string::npos);
        }
    }
    SUBCASE("point outside the image") {
        std::ofstream(dir / "heads" / "only.json") << "[[37.0, 3.0]]";
        CHECK_THROWS_AS(load_source_dataset(dir), ValidationError);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("scene regularization filter") {
    SourceDataset ds;
    const double bright[10] = {0.1, 0.6, 0.2, 0.9, 0.5, 0.55, 0.3, 0.8, 0.05, 0.4};
    for (int i = 0; i < 10; ++i) {
        SourceSample s;
        s.id = "s" + std::to_string(i);
        s.attributes.brightness = bright[i];
        s.attributes.density_level = static_cast<DensityLevel>(i % 3);
        ds.samples.push_back(s);
    }
    SUBCASE("accept all") { CHECK(scene_regularization_filter(ds, parse_scene_predicate("all")) == ds); }
    SUBCASE("brightness threshold keeps order") {
        const auto out = scene_regularization_filter(ds, parse_scene_predicate("brightness > 0.5"));
        std::vector<std::string> expect;
        for (const auto& s : ds.samples) {
            if (s.attributes.brightness > 0.5) expect.push_back(s.id);
        }
        REQUIRE(expect.size() == 4);
        REQUIRE(out.size() == expect.size());
        for (std::size_t i = 0; i < expect.size(); ++i) CHECK(out.samples[i].id == expect[i]);
    }
    SUBCASE("conjunction") {
        const auto out =
            scene_regularization_filter(ds, parse_scene_predicate("brightness<=0.5 && density_level==low"));
        std::size_t n = 0;
        for (const auto& s : ds.samples) {
            n += (s.attributes.brightness <= 0.5 && s.attributes.density_level == DensityLevel::low) ? 1 : 0;
        }
        CHECK(out.size() == n);
    }
    SUBCASE("accept none") { CHECK(scene_regularization_filter(ds, parse_scene_predicate("none")).size() == 0); }
    SUBCASE("bad predicates") {
        CHECK_THROWS_AS(parse_scene_predicate("density_level==huge"), ConfigError);
        CHECK_THROWS_AS(parse_scene_predicate("weather==rain"), ConfigError);
        CHECK_THROWS_AS(parse_scene_predicate("brightness ~ 3"), ConfigError);
    }
}

TEST_CASE("random crops") {
    const auto p = generate_synthetic_scene(scene(64, 64, 10), 21);

    SUBCASE("full-size crop is the identity") {
        const auto c = random_crop_pair(p.source, 64, 64, 9);
        CHECK(c == p.source);
    }
    SUBCASE("points outside the window are dropped") {
        const HeadPoints heads{{10.0, 10.0}, {30.0, 25.0}};
        const auto kept = crop(heads, CropWindow{20, 20, 32, 32});
        REQUIRE(kept.size() == 1);
        CHECK(kept[0].row == doctest::Approx(10.0));
        CHECK(kept[0].col == doctest::Approx(5.0));
    }
    SUBCASE("retained heads match a direct scan") {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const auto win = choose_crop(64, 64, 32, 32, seed);
            const auto c = random_crop_pair(p.source, 32, 32, seed);
            std::size_t inside = 0;
            for (const auto& h : p.source.heads) {
                inside += (h.row >= win.row && h.row < win.row + 32 && h.col >= win.col && h.col < win.col + 32) ? 1 : 0;
            }
            CHECK(c.heads.size() == inside);
            for (int i = 0; i < 32; ++i) {
                for (int j = 0; j < 32; ++j) {
                    REQUIRE(c.mask.at(i, j) == p.source.mask.at(i + win.row, j + win.col));
                    REQUIRE(c.image.at(1, i, j) == p.source.image.at(1, i + win.row, j + win.col));
                }
            }
        }
    }
    SUBCASE("target crops keep the same offset for image and mask") {
        const auto win = choose_crop(64, 64, 32, 48, 4);
        const auto c = random_crop_pair(p.target, 32, 48, 4);
        for (int i = 0; i < 32; ++i) {
            for (int j = 0; j < 48; ++j) REQUIRE(c.mask.at(i, j) == p.target.mask.at(i + win.row, j + win.col));
        }
    }
    SUBCASE("invalid crops") {
        CHECK_THROWS_AS(random_crop_pair(p.source, 72, 64, 0), ConfigError);
        CHECK_THROWS_AS(random_crop_pair(p.source, 30, 32, 0), ConfigError);
    }
}

TEST_CASE("benchmark splits") {
    BenchmarkConfig cfg;
    cfg.n_source = 4;
    cfg.n_target = 3;
    cfg.n_test = 2;
    cfg.height = 64;
    cfg.width = 64;
    const auto b = generate_benchmark(cfg);
    REQUIRE(b.source.size() == 4);
    REQUIRE(b.target.size() == 3);
    REQUIRE(b.test.size() == 2);
    for (const auto& s : b.source.samples) {
        CHECK(s.attributes.background_style == BackgroundStyle::plain);
        const auto [lo, hi] = people_range(s.attributes.density_level);
        CHECK(static_cast<int>(s.heads.size()) >= lo);
        CHECK(static_cast<int>(s.heads.size()) <= hi);
    }
    for (const auto& s : b.target.samples) {
        CHECK_FALSE(s.heads.has_value());
        CHECK(s.attributes->background_style == BackgroundStyle::textured);
    }
    for (const auto& s : b.test.samples) CHECK(s.heads.has_value());
    CHECK(generate_benchmark(cfg).source == b.source);
    cfg.n_source = 0;
    CHECK(generate_benchmark(cfg).source.empty());
}
