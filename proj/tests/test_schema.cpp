#include <gtest/gtest.h>

#include <fstream>

#include "straightflow/cli/config.hpp"

using namespace straightflow;
using namespace straightflow::cli;

namespace {

json load_schema() {
  std::ifstream in(STRAIGHTFLOW_SCHEMA);
  return json::parse(in);
}

std::vector<std::string> keys_of(const json& props) {
  std::vector<std::string> out;
  for (const auto& [k, v] : props.items()) out.push_back(k);
  return out;
}

}  // namespace

TEST(Schema, TopLevelKeysMatchParser) {
  const auto s = load_schema();
  EXPECT_EQ(keys_of(s["properties"]), config_keys().at(""));
  EXPECT_FALSE(s["additionalProperties"].get<bool>());
}

TEST(Schema, SectionKeysMatchParser) {
  const auto s = load_schema();
  for (const auto& [section, keys] : config_keys()) {
    if (section.empty()) continue;
    const auto& obj = s["properties"][section];
    EXPECT_EQ(keys_of(obj["properties"]), keys) << section;
    EXPECT_FALSE(obj["additionalProperties"].get<bool>()) << section;
  }
}

TEST(Schema, SweepParamsMatchParser) {
  const auto s = load_schema();
  std::vector<std::string> params;
  for (const auto& p : s["properties"]["sweep"]["properties"]["param"]["enum"]) params.push_back(p);
  EXPECT_EQ(params, sweep_params());
}

TEST(Schema, DefaultsMatchParser) {
  const auto s = load_schema()["properties"];
  const ExperimentConfig c;
  EXPECT_EQ(s["n"]["default"], c.n);
  EXPECT_EQ(s["time_steps"]["default"], c.time_steps);
  EXPECT_EQ(s["grid"]["properties"]["nodes"]["default"], c.grid_nodes);
  EXPECT_EQ(s["trace_queries"]["default"], c.trace_queries);
  EXPECT_EQ(s["flow"]["properties"]["steps"]["default"], c.flow.steps);
  EXPECT_EQ(s["flow"]["properties"]["grid_nodes"]["default"], c.flow.grid_nodes);
  EXPECT_EQ(s["kernel"]["properties"]["density_floor"]["default"].get<double>(), c.kernel.density_floor);
  EXPECT_EQ(s["tolerances"]["properties"]["trace_ratio"]["default"].get<double>(), c.tol.trace_ratio);
  EXPECT_EQ(s["output"]["default"], c.output);
}
