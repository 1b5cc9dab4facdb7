#include <gtest/gtest.h>

#include <string>

#include "pmsg/error.hpp"
#include "pmsg/scenario_config.hpp"

using namespace pmsg;

namespace {

const char* kMinimal = R"(
[scenario]
speed = 7000rpm
load = 43.5kW@0s, 62.25kW@40ms
)";

ErrorCode code_of(const std::string& text) {
  try {
    parse_config(text, "t.cfg");
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::kInvalidArgument;
}

std::string message_of(const std::string& text) {
  try {
    parse_config(text, "t.cfg");
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(ParseQuantity, ScalesUnits) {
  EXPECT_DOUBLE_EQ(parse_quantity("0.090mH", "inductance"), 0.090e-3);
  EXPECT_DOUBLE_EQ(parse_quantity("5.3mOhm", "resistance"), 5.3e-3);
  EXPECT_DOUBLE_EQ(parse_quantity("-43.5kW", "power"), -43.5e3);
  EXPECT_DOUBLE_EQ(parse_quantity("1mF", "capacitance"), 1e-3);
  EXPECT_DOUBLE_EQ(parse_quantity("40kHz", "frequency"), 40e3);
  EXPECT_DOUBLE_EQ(parse_quantity("7000rpm", "speed"), 7000.0);
}

TEST(ParseQuantity, SubUnitsAreExact) {
  // 5 us must equal the literal 5e-6 so tick arithmetic stays integral.
  EXPECT_EQ(parse_quantity("5us", "time"), 5e-6);
  EXPECT_EQ(parse_quantity("25us", "time"), 25e-6);
  EXPECT_EQ(parse_quantity("0.5ms", "time"), 0.5e-3);
}

TEST(ParseQuantity, RejectsWrongOrMissingUnit) {
  EXPECT_THROW(parse_quantity("0.090mV", "inductance"), Error);
  EXPECT_THROW(parse_quantity("540", "voltage"), Error);
  EXPECT_THROW(parse_quantity("abcV", "voltage"), Error);
  try {
    parse_quantity("3xyz", "time");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfigError);
  }
}

TEST(ParseConfig, MinimalUsesPresetAndDefaults) {
  const ConfigDocument d = parse_config(kMinimal, "t.cfg");
  EXPECT_DOUBLE_EQ(d.scenario.machine.l_d, 0.090e-3);
  EXPECT_DOUBLE_EQ(d.scenario.speed_rpm.at(0.0), 7000.0);
  EXPECT_DOUBLE_EQ(d.scenario.load_power.at(0.05), 62.25e3);
  EXPECT_EQ(d.scenario.load_power.points()[1].start, 0.04);
  EXPECT_EQ(d.output.trace_file, "trace.csv");
  EXPECT_EQ(d.output.decimation, 1);
}

TEST(ParseConfig, UnitErrorNamesKeyAndLine) {
  const std::string text = "[machine]\npreset = bmw-i3\nl_d = 0.090mV\n[scenario]\nspeed = 7000rpm\nload = 40kW\n";
  EXPECT_EQ(code_of(text), ErrorCode::kConfigError);
  const std::string msg = message_of(text);
  EXPECT_NE(msg.find("t.cfg:3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("machine.l_d"), std::string::npos) << msg;
}

TEST(ParseConfig, RejectsUnknownAndDuplicateKeys) {
  EXPECT_EQ(code_of(std::string(kMinimal) + "[machine]\nbogus = 1H\n"), ErrorCode::kConfigError);
  EXPECT_EQ(code_of(std::string(kMinimal) + "[nowhere]\n"), ErrorCode::kConfigError);
  EXPECT_EQ(code_of(std::string(kMinimal) + "[scenario]\nduration = 1s\nduration = 2s\n"),
            ErrorCode::kConfigError);
}

TEST(ParseConfig, PresetMustComeFirst) {
  const std::string text = std::string(kMinimal) + "[machine]\nl_d = 0.1mH\npreset = bmw-i3\n";
  EXPECT_EQ(code_of(text), ErrorCode::kConfigError);
}

TEST(ParseConfig, ExplicitConstantsOverridePreset) {
  const ConfigDocument d =
      parse_config(std::string(kMinimal) + "[machine]\npreset = bmw-i3\nl_d = 0.1mH\n", "t.cfg");
  EXPECT_DOUBLE_EQ(d.scenario.machine.l_d, 0.1e-3);
  EXPECT_DOUBLE_EQ(d.scenario.machine.l_q, 0.255e-3);
}

TEST(ParseConfig, ProfilesMustStartAtZeroAndIncrease) {
  EXPECT_EQ(code_of("[scenario]\nspeed = 7000rpm\nload = 1kW@1ms\n"), ErrorCode::kConfigError);
  EXPECT_EQ(code_of("[scenario]\nspeed = 7000rpm\nload = 1kW@0s, 2kW@5ms, 3kW@4ms\n"),
            ErrorCode::kConfigError);
  EXPECT_EQ(code_of("[scenario]\nload = 1kW\n"), ErrorCode::kConfigError);
}

TEST(ParseConfig, LimitsFlowIntoNmpc) {
  const ConfigDocument d = parse_config(
      std::string(kMinimal) + "[dc_link]\nv_ref = 500V\nv_min = 400V\nv_max = 600V\n", "t.cfg");
  EXPECT_DOUBLE_EQ(d.scenario.nmpc.v_dc_ref, 500.0);
  EXPECT_DOUBLE_EQ(d.scenario.nmpc.v_dc_min, 400.0);
  EXPECT_DOUBLE_EQ(d.scenario.nmpc.v_dc_max, 600.0);
  EXPECT_DOUBLE_EQ(d.scenario.nmpc.i_peak, 400.0);
}

TEST(ParseConfig, ValidationFailuresAreConfigErrors) {
  EXPECT_EQ(code_of(std::string(kMinimal) + "[scenario]\nintegrator_step = 7us\n"), ErrorCode::kConfigError);
  EXPECT_EQ(code_of(std::string(kMinimal) + "[nmpc]\nhorizon = 0\n"), ErrorCode::kConfigError);
}

TEST(RenderConfig, RoundTrips) {
  for (const ConfigDocument& d : {builtin_case1(), builtin_case2()}) {
    const ConfigDocument back = parse_config(render_config(d), "rendered");
    EXPECT_EQ(back.scenario.name, d.scenario.name);
    EXPECT_EQ(back.scenario.duration, d.scenario.duration);
    EXPECT_EQ(back.scenario.integrator_step, d.scenario.integrator_step);
    EXPECT_EQ(back.scenario.machine.l_q, d.scenario.machine.l_q);
    EXPECT_EQ(back.scenario.inner.d_pole, d.scenario.inner.d_pole);
    ASSERT_EQ(back.scenario.load_power.points().size(), d.scenario.load_power.points().size());
    for (std::size_t k = 0; k < d.scenario.load_power.points().size(); ++k) {
      EXPECT_EQ(back.scenario.load_power.points()[k].start, d.scenario.load_power.points()[k].start);
      EXPECT_EQ(back.scenario.load_power.points()[k].value, d.scenario.load_power.points()[k].value);
    }
    EXPECT_EQ(render_config(back), render_config(d));
  }
}

TEST(Builtins, CaseDefinitions) {
  const ConfigDocument c1 = builtin_case1();
  EXPECT_EQ(c1.scenario.name, "case1");
  EXPECT_DOUBLE_EQ(c1.scenario.speed_rpm.at(0.0), 7000.0);
  EXPECT_DOUBLE_EQ(c1.scenario.load_power.at(0.0), 43.5e3);
  EXPECT_DOUBLE_EQ(c1.scenario.load_power.at(0.04), 62.25e3);
  const ConfigDocument c2 = builtin_case2();
  EXPECT_DOUBLE_EQ(c2.scenario.speed_rpm.at(0.0), 8000.0);
  EXPECT_DOUBLE_EQ(c2.scenario.load_power.at(0.05), 81e3);
  EXPECT_DOUBLE_EQ(c2.scenario.load_power.at(0.1), 34e3);
  EXPECT_NO_THROW(c2.scenario.validate());
}

TEST(LoadConfig, MissingFileIsIoError) {
  try {
    load_config("/definitely/not/here.cfg");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIoError);
  }
}

TEST(LoadConfig, ShippedScenarioMatchesBuiltin) {
  const ConfigDocument f = load_config(PMSG_SCENARIO_DIR "/case1.cfg");
  const ConfigDocument b = builtin_case1();
  EXPECT_EQ(render_config(f), render_config(b));
}
