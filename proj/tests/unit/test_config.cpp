#include <doctest.h>

#include <fstream>

#include "vlab/config.hpp"
#include "vlab/error.hpp"

using namespace vlab;

namespace {

ExperimentConfig parse(std::string_view text, std::vector<std::string> overrides = {}) {
  return parse_config(text, overrides);
}

}  // namespace

TEST_CASE("defaults follow the model depth") {
  const ExperimentConfig c = parse(R"({"seed": 3})");
  CHECK(c.seed == 3);
  CHECK(c.model.rng_seed == 3);
  CHECK(c.steer_site.label() == "resid_post@L5:pos-1");
  CHECK(c.heads_layer == 4);
  CHECK(c.grid.values == EpsilonGrid::standard().values);
  CHECK(c.read_modes == std::vector<ReadMode>{ReadMode::final_, ReadMode::last});
  CHECK(c.probe_positions == std::vector<int>{1});
  CHECK(c.probe_layers.size() == 6);
  CHECK(c.probe_sites().size() == 24);
  CHECK_FALSE(c.plant.has_value());
  CHECK_FALSE(c.corpus_markers);
  REQUIRE(c.compare_sites.size() == 2);
  CHECK(c.compare_sites[0].label() == "attn_out@L4:pos-1");
  CHECK(c.head_sets.front().vector_level());

  const ExperimentConfig shallow = parse(R"({"seed": 1, "model": {"n_layers": 3}})");
  CHECK(shallow.steer_site.label() == "resid_post@L2:pos-1");
  CHECK(shallow.heads_layer == 1);
}

TEST_CASE("comments and overrides") {
  const ExperimentConfig c = parse(R"({
    // experiment seed
    "seed": 9,
    /* output folder */
    "output": "runs/x"
  })",
                                   {"probe.positions=[1,2,3]", "steer.grid=[-1,0,1]", "output=elsewhere",
                                    "model.n_layers=4", "plant.gain_std=6"});
  CHECK(c.probe_positions == std::vector<int>{1, 2, 3});
  CHECK(c.grid.values == std::vector<double>{-1, 0, 1});
  CHECK(c.output == "elsewhere");
  CHECK(c.model.n_layers == 4);
  REQUIRE(c.plant.has_value());
  CHECK(c.plant->gain_std == 6.0);
  CHECK(c.corpus_markers);
}

TEST_CASE("configuration errors") {
  CHECK_THROWS_AS(parse(R"({})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"seed": -1})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"seed": 1, "sede": 2})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"seed": 1, "model": {"layers": 2}})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"seed": 1, "model": {"d_model": 63}})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"seed": 1, "stages": ["probe", "fly"]})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"seed": 1, "steer": {"site": "resid_post@L9:pos-1"}})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"seed": 1, "steer": {"grid": [1, 2]}})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"seed": 1, "steer": {"epsilon_unit": "furlongs"}})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"seed": 1, "steer": {"read": ["sideways"]}})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"seed": 1, "probe": {"positions": [0]}})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"seed": 1, "probe": {"streams": ["resid_mid"]}})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"seed": 1, "heads": {"sets": [[7]]}})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"seed": 1, "plant": {"layer": 2}, "corpus": {"markers": false}})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"seed": 1, "plant": {"layer": 6}})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"seed": 1)"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"seed": 1})", {"nonsense"}), ConfigError);
  CHECK_THROWS_AS(parse(R"({"seed": 1})", {"model.width=3"}), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/vlab.json"), ConfigError);
}

TEST_CASE("canonical form round trips") {
  const ExperimentConfig c = parse(R"({"seed": 4, "plant": {"layer": 1}, "probe": {"positions": [1, 2]},
                                       "heads": {"sets": ["vector", [0, 2], [1]]}})");
  const ExperimentConfig again = parse(c.canonical());
  CHECK(again.canonical() == c.canonical());
  CHECK(again.head_sets[1].heads == std::vector<int>{0, 2});
}

TEST_CASE("load from file") {
  const auto path = std::filesystem::temp_directory_path() / "vlab_test_config.json";
  {
    std::ofstream f(path);
    f << "{\"seed\": 5, // five\n \"stages\": [\"probe\"]}";
  }
  const ExperimentConfig c = load_config(path, std::vector<std::string>{"seed=6"});
  CHECK(c.seed == 6);
  CHECK(c.has_stage("probe"));
  CHECK_FALSE(c.has_stage("steer"));
  std::filesystem::remove(path);
}

TEST_CASE("head set labels") {
  CHECK(head_set_label({}) == "vector (all heads)");
  CHECK(head_set_label(std::vector<int>{2}) == "head 2");
  CHECK(head_set_label(std::vector<int>{1, 2, 3}) == "heads 1-3");
  CHECK(head_set_label(std::vector<int>{0, 2}) == "heads 0,2");
}
