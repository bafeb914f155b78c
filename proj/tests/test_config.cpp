#include "egonav/config.hpp"

#include <doctest.h>

#include <fstream>

using namespace egonav;

TEST_CASE("canonical config round-trips and hashes stably") {
  RunConfig c;
  c.seed = 42;
  c.scene.source = SceneSource::kCorridor;
  c.train.total_steps = 77;
  c.train.optimizer = nn::OptimizerKind::kSgdMomentum;
  c.env.camera.reversed = true;
  c.env.profile = SamplingProfile::kCorridor;
  c.eval.checkpoint = "x.egqn";
  const RunConfig back = overlay_json(RunConfig{}, c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.hash() == c.hash());
  CHECK(c.hash() != RunConfig{}.hash());
  CHECK(back.env.camera.horizontal_fov == doctest::Approx(deg2rad(130.0)));
}

TEST_CASE("partial overlays touch only the given keys") {
  RunConfig base;
  base.seed = 9;
  base.eval.episodes = 20;
  const RunConfig c = overlay_json(base, R"({"train": {"batch": 16}, "camera": {"fov_deg": 90}})");
  CHECK(c.seed == 9);
  CHECK(c.eval.episodes == 20);
  CHECK(c.train.batch == 16);
  CHECK(c.env.camera.horizontal_fov == doctest::Approx(kPi / 2));
}

TEST_CASE("config errors name the offending key") {
  auto message = [](const std::string& text) {
    try {
      overlay_json(RunConfig{}, text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message(R"({"train": {"bach": 3}})").find("train.bach") != std::string::npos);
  CHECK(message(R"({"train": {"batch": "many"}})").find("train.batch") != std::string::npos);
  CHECK(message(R"({"prior": {"kind": "gan"}})").find("prior.kind") != std::string::npos);
  CHECK(message(R"({"version": 99})").find("version") != std::string::npos);
  CHECK_THROWS_AS(overlay_json(RunConfig{}, "[1, 2]"), ConfigError);
  CHECK_THROWS_AS(overlay_json(RunConfig{}, "{oops"), ConfigError);
}

TEST_CASE("validation") {
  RunConfig c;
  CHECK_NOTHROW(c.validate());
  c.scene.source = SceneSource::kFile;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RunConfig{};
  c.eval.jobs = 0;
  CHECK_THROWS(c.validate());
  c = RunConfig{};
  c.train.gamma = 1.5;
  CHECK_THROWS(c.validate());
}

TEST_CASE("resolved config is written beside outputs") {
  const auto dir = std::filesystem::temp_directory_path() / "egonav_cfg_test";
  std::filesystem::create_directories(dir);
  RunConfig c;
  c.seed = 5;
  write_resolved(c, dir);
  const RunConfig back = overlay_file(RunConfig{}, dir / "resolved_config.json");
  CHECK(back.to_json() == c.to_json());
  std::ifstream h(dir / "resolved_config.hash");
  std::string text;
  std::getline(h, text);
  CHECK(text == hex64(c.hash()));
  std::filesystem::remove_all(dir);
}

TEST_CASE("scene and prior factories") {
  RunConfig c;
  c.scene.source = SceneSource::kCorridor;
  CHECK(make_scene(c).id == "corridor");
  c.scene.source = SceneSource::kGenerate;
  c.seed = 3;
  CHECK(make_scene(c).boxes.size() == 4 + static_cast<std::size_t>(c.scene.params.n_obstacles));
  CHECK(make_prior(c)->name() == "kinematic");
}
