#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pyra/checkpoint.hpp"
#include "pyra/config.hpp"
#include "pyra/model.hpp"

using namespace pyra;

namespace {

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

Tensor tensor_of(const Shape& shape, std::vector<double> values) {
  Tensor t = Tensor::zeros(shape);
  t.data() = std::move(values);
  return t;
}

}  // namespace

TEST_CASE("checkpoint bytes follow the documented little-endian layout") {
  Tensor one = tensor_of({1}, {1.0});
  std::string bytes = serialize_checkpoint("{}", {{"w", one}});

  // magic
  REQUIRE(bytes.substr(0, 4) == "PYRA");
  // version u32 LE
  REQUIRE(static_cast<unsigned char>(bytes[4]) == 1);
  REQUIRE(bytes[5] == 0);
  REQUIRE(bytes[6] == 0);
  REQUIRE(bytes[7] == 0);
  // config length u64 LE = 2, then "{}"
  REQUIRE(static_cast<unsigned char>(bytes[8]) == 2);
  for (int i = 9; i < 16; ++i) REQUIRE(bytes[i] == 0);
  REQUIRE(bytes.substr(16, 2) == "{}");
  // tensor count u64 LE = 1
  REQUIRE(static_cast<unsigned char>(bytes[18]) == 1);
  // name length u16 LE = 1, then "w"
  REQUIRE(static_cast<unsigned char>(bytes[26]) == 1);
  REQUIRE(bytes[27] == 0);
  REQUIRE(bytes[28] == 'w');
  // dtype 1 (f64), rank 1, dim 1
  REQUIRE(static_cast<unsigned char>(bytes[29]) == 1);
  REQUIRE(static_cast<unsigned char>(bytes[30]) == 1);
  REQUIRE(static_cast<unsigned char>(bytes[31]) == 1);
  // 1.0 = 0x3FF0000000000000, little-endian: 6 zero bytes then F0 3F
  REQUIRE(static_cast<unsigned char>(bytes[45]) == 0xF0);
  REQUIRE(static_cast<unsigned char>(bytes[46]) == 0x3F);
  REQUIRE(bytes.size() == 47);
}

TEST_CASE("empty checkpoint is exactly header plus config plus count") {
  std::string config = "{\"a\":1}";
  std::string bytes = serialize_checkpoint(config, {});
  REQUIRE(bytes.size() == 4 + 4 + 8 + config.size() + 8);
  LoadedCheckpoint back = parse_checkpoint(bytes);
  REQUIRE(back.config_json == config);
  REQUIRE(back.tensors.empty());
}

TEST_CASE("checkpoint round-trip reproduces tensors bitwise and config byte-identically") {
  // Values chosen to stress raw byte fidelity: signed zeros, denormals,
  // infinities, NaN, and garden-variety numbers.
  std::vector<std::pair<std::string, Tensor>> tensors;
  tensors.emplace_back("scalar", tensor_of({}, {3.14159}));
  tensors.emplace_back("edge.values",
                       tensor_of({2, 3}, {0.0, -0.0, 5e-324, -std::numeric_limits<double>::infinity(),
                                          std::numeric_limits<double>::quiet_NaN(), 1.0 / 3.0}));
  tensors.emplace_back("empty.dim", tensor_of({0, 4}, {}));
  std::string config = "{\"arch\":\"tiny\",\"seed\":7}";

  LoadedCheckpoint back = parse_checkpoint(serialize_checkpoint(config, tensors));
  REQUIRE(back.config_json == config);
  REQUIRE(back.tensors.size() == tensors.size());
  for (size_t i = 0; i < tensors.size(); ++i) {
    REQUIRE(back.tensors[i].first == tensors[i].first);
    REQUIRE(back.tensors[i].second.shape() == tensors[i].second.shape());
    REQUIRE(bitwise_equal(back.tensors[i].second.data(), tensors[i].second.data()));
  }
}

TEST_CASE("checkpoint file round-trip on a full model") {
  RunConfig cfg = run_config_from_string(R"({"arch": "tiny", "constant_r": 2, "pyra_enabled": true})");
  Model model = model_from_config(cfg);
  std::string config_str = run_config_to_string(cfg);
  std::string path = "roundtrip_test.ckpt";
  save_checkpoint(path, config_str, model.named_parameters());

  LoadedCheckpoint back = load_checkpoint(path);
  REQUIRE(back.config_json == config_str);
  auto params = model.named_parameters();
  REQUIRE(back.tensors.size() == params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    REQUIRE(back.tensors[i].first == params[i].first);
    REQUIRE(bitwise_equal(back.tensors[i].second.data(), params[i].second.data()));
  }

  SECTION("loaded tensors drop into a freshly built model") {
    RunConfig cfg2 = run_config_from_string(back.config_json);
    Model rebuilt = model_from_config(cfg2);
    for (auto& [name, t] : rebuilt.named_parameters()) {
      for (auto& v : t.data()) v = -123.0;  // scribble, then restore from file
    }
    apply_named_tensors(rebuilt.named_parameters(), back.tensors);
    auto a = model.named_parameters();
    auto b = rebuilt.named_parameters();
    for (size_t i = 0; i < a.size(); ++i) REQUIRE(bitwise_equal(a[i].second.data(), b[i].second.data()));
  }

  std::remove(path.c_str());
}

TEST_CASE("corrupted checkpoints report precise format errors") {
  Tensor t = tensor_of({2}, {1.5, -2.5});
  std::string good = serialize_checkpoint("{\"k\":true}", {{"weights", t}});

  SECTION("bad magic") {
    std::string bad = good;
    bad[0] = 'X';
    try {
      parse_checkpoint(bad);
      FAIL("expected format_error");
    } catch (const format_error& e) {
      std::string msg = e.what();
      REQUIRE(msg.find("magic") != std::string::npos);
      REQUIRE(msg.find("byte offset 0") != std::string::npos);
    }
  }

  SECTION("unsupported version") {
    std::string bad = good;
    bad[4] = 9;
    try {
      parse_checkpoint(bad);
      FAIL("expected format_error");
    } catch (const format_error& e) {
      REQUIRE(std::string(e.what()).find("version 9") != std::string::npos);
    }
  }

  SECTION("truncation mid-tensor reports expected vs available bytes") {
    std::string bad = good.substr(0, good.size() - 5);  // cut into the last f64
    try {
      parse_checkpoint(bad);
      FAIL("expected format_error");
    } catch (const format_error& e) {
      std::string msg = e.what();
      REQUIRE(msg.find("truncated at byte offset") != std::string::npos);
      REQUIRE(msg.find("needs 8 bytes") != std::string::npos);
      REQUIRE(msg.find("3 remain") != std::string::npos);
    }
  }

  SECTION("truncation inside the header") {
    for (size_t keep : {0, 3, 5, 10, 17}) {
      REQUIRE_THROWS_AS(parse_checkpoint(good.substr(0, keep)), format_error);
    }
  }

  SECTION("trailing bytes are rejected") {
    REQUIRE_THROWS_AS(parse_checkpoint(good + "zz"), format_error);
  }

  SECTION("unknown dtype tag names the tensor") {
    std::string bad = good;
    // dtype byte sits right after the header, config, count, name length and name
    size_t dtype_at = 4 + 4 + 8 + 10 + 8 + 2 + 7;
    bad[dtype_at] = 5;
    try {
      parse_checkpoint(bad);
      FAIL("expected format_error");
    } catch (const format_error& e) {
      std::string msg = e.what();
      REQUIRE(msg.find("dtype tag 5") != std::string::npos);
      REQUIRE(msg.find("weights") != std::string::npos);
    }
  }

  SECTION("missing file") {
    REQUIRE_THROWS_AS(load_checkpoint("no_such_dir/no_such_file.ckpt"), format_error);
  }
}

TEST_CASE("f32 checkpoints load with an upcast") {
  // Hand-built payload: one f32 tensor "h" of shape [2] holding {1.5f, -0.25f}.
  std::string bytes;
  bytes.append("PYRA", 4);
  auto push_le = [&bytes](uint64_t v, int n) {
    for (int b = 0; b < n; ++b) bytes.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
  };
  push_le(1, 4);   // version
  push_le(0, 8);   // empty config
  push_le(1, 8);   // one tensor
  push_le(1, 2);   // name length
  bytes.push_back('h');
  bytes.push_back(0);  // dtype f32
  bytes.push_back(1);  // rank 1
  push_le(2, 8);       // dim 2
  for (float f : {1.5f, -0.25f}) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    push_le(bits, 4);
  }

  LoadedCheckpoint back = parse_checkpoint(bytes);
  REQUIRE(back.tensors.size() == 1);
  REQUIRE(back.tensors[0].first == "h");
  REQUIRE(back.tensors[0].second.data() == std::vector<double>{1.5, -0.25});
}

TEST_CASE("apply_named_tensors is strict about coverage and shapes") {
  Tensor a = tensor_of({2}, {1.0, 2.0});
  Tensor b = tensor_of({2}, {0.0, 0.0});

  SECTION("happy path copies data") {
    apply_named_tensors({{"x", b}}, {{"x", a}});
    REQUIRE(b.data() == a.data());
  }

  SECTION("missing tensor") {
    REQUIRE_THROWS_AS(apply_named_tensors({{"x", b}}, {}), format_error);
  }

  SECTION("shape mismatch") {
    Tensor wrong = tensor_of({1, 2}, {1.0, 2.0});
    REQUIRE_THROWS_AS(apply_named_tensors({{"x", b}}, {{"x", wrong}}), format_error);
  }

  SECTION("unused tensor in the file") {
    REQUIRE_THROWS_AS(apply_named_tensors({{"x", b}}, {{"x", a}, {"ghost", a}}), format_error);
  }
}

TEST_CASE("run config materializes defaults from an empty document") {
  RunConfig c = run_config_from_string("{}");
  REQUIRE(c.arch.name == "tiny");
  REQUIRE(c.schedule.r == std::vector<int64_t>(4, 0));
  REQUIRE_FALSE(c.pyra.enabled);
  REQUIRE(c.pyra.mode == PyraMode::kFull);
  REQUIRE(c.lora_rank == 4);
  REQUIRE(c.partition == PartitionMode::kAlternating);
  REQUIRE(c.pooling == PoolingMode::kSizeWeighted);
  REQUIRE(c.train.epochs == 100);
  REQUIRE(c.train.warmup_epochs == 10);
  REQUIRE(c.train.lr_peft == 1e-3);
  REQUIRE(c.train.lr_generators == 1e-4);
  REQUIRE(c.train.weight_decay == 1e-4);
  REQUIRE(c.train.pipeline == Pipeline::kOneStage);
  REQUIRE(c.seed == 0);
  REQUIRE(c.train.seed == 0);

  // The emitted form carries every key, so a saved config stands alone.
  auto j = run_config_to_json(c);
  REQUIRE(j.size() == 30);
  REQUIRE(j.contains("schedule"));
  REQUIRE(j.contains("lr_generators"));
}

TEST_CASE("run config round-trips losslessly through its normalized form") {
  RunConfig c = run_config_from_string(R"({
    "arch": "vit_b",
    "published": "vit_b_high",
    "pyra_enabled": true,
    "pyra_mode": "gated",
    "pyra_gated_hidden": 6,
    "epochs": 42,
    "warmup_epochs": 7,
    "lr_generators": 5e-4,
    "seed": 99
  })");
  REQUIRE(c.lora_rank == 8);  // vit_b default
  REQUIRE(c.schedule.r[0] == 40);
  REQUIRE(c.train.seed == 99);

  std::string s1 = run_config_to_string(c);
  RunConfig c2 = run_config_from_string(s1);
  std::string s2 = run_config_to_string(c2);
  REQUIRE(s1 == s2);  // byte-identical normal form
  REQUIRE(c2.schedule.r == c.schedule.r);
  REQUIRE(c2.train.epochs == 42);
  REQUIRE(c2.pyra.gated_hidden == 6);
}

TEST_CASE("run config schedule sugar normalizes into the explicit array") {
  SECTION("constant_r") {
    RunConfig c = run_config_from_string(R"({"arch": "vit_b", "constant_r": 16})");
    REQUIRE(c.schedule.r == std::vector<int64_t>(12, 16));
  }
  SECTION("target_ratio plus final_tokens") {
    RunConfig c = run_config_from_string(R"({"arch": "vit_b", "target_ratio": 2.0, "final_tokens": 4})");
    REQUIRE(c.schedule.r == std::vector<int64_t>(12, 16));
  }
  SECTION("published") {
    RunConfig c = run_config_from_string(R"({"arch": "vit_l", "published": "vit_l_high"})");
    REQUIRE(c.schedule.r.size() == 24);
    REQUIRE(c.lora_rank == 12);  // vit_l default
  }
  SECTION("explicit array wins when given alone") {
    RunConfig c = run_config_from_string(R"({"schedule": [1, 1, 0, 0]})");
    REQUIRE(c.schedule.r == std::vector<int64_t>{1, 1, 0, 0});
  }
}

TEST_CASE("run config rejects malformed documents") {
  REQUIRE_THROWS_AS(run_config_from_string("{\"banana\": 1}"), config_error);
  REQUIRE_THROWS_AS(run_config_from_string("not json at all"), config_error);
  REQUIRE_THROWS_AS(run_config_from_string("[1,2,3]"), config_error);
  REQUIRE_THROWS_AS(run_config_from_string(R"({"constant_r": 2, "published": "vit_b_high"})"),
                    config_error);
  REQUIRE_THROWS_AS(run_config_from_string(R"({"final_tokens": 4})"), config_error);
  REQUIRE_THROWS_AS(run_config_from_string(R"({"pyra_mode": "extra_full"})"), config_error);
  REQUIRE_THROWS_AS(run_config_from_string(R"({"pipeline": "three_stage"})"), config_error);
  REQUIRE_THROWS_AS(run_config_from_string(R"({"partition": "sorted"})"), config_error);
  // Cross-field validation still runs: a schedule too long for the arch.
  REQUIRE_THROWS_AS(run_config_from_string(R"({"schedule": [1, 1, 1, 1, 1]})"), schedule_error);
  REQUIRE_THROWS_AS(run_config_from_string(R"({"epochs": 0})"), config_error);
  REQUIRE_THROWS_AS(run_config_from_string(R"({"lora_rank": -2})"), config_error);
}

TEST_CASE("config builds a working model and task") {
  RunConfig c = run_config_from_string(
      R"({"arch": "tiny", "constant_r": 1, "pyra_enabled": true, "train_size": 4, "val_size": 2, "test_size": 2})");
  Model model = model_from_config(c);
  SyntheticTask task = task_from_config(c);
  REQUIRE(task.train.size() == 4);
  REQUIRE(task.val.size() == 2);
  REQUIRE(task.test.size() == 2);
  NoGradGuard ng;
  Tensor logits = forward(task.train[0].image, model);
  REQUIRE(logits.numel() == 4);

  // An accounting-feasible but non-executable schedule passes config
  // validation and is rejected at model construction.
  RunConfig infeasible = run_config_from_string(R"({"schedule": [14, 1, 0, 0]})");
  REQUIRE_THROWS_AS(model_from_config(infeasible), schedule_error);
}
