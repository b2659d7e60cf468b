#include <zlib.h>

#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "test_support.hpp"

using agn::ModelConfig;
using agn::Shape;
using agn::TensorT;
using testutil::max_abs_diff;
using testutil::rand_tensor;
using testutil::to_vec;
using DT = TensorT<double>;
using FT = TensorT<float>;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.n_joints = 4;
  cfg.t_in = 4;
  cfg.t_out = 2;
  cfg.d_p = 8;
  cfg.temporal_dim = 8;
  cfg.encoder_layers = 1;
  cfg.decoder_layers = 1;
  cfg.affm_ratio = 4;
  cfg.seed = 7;
  return cfg;
}

std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() /
             ("agn_model_test_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig cfg = tiny_config();
  REQUIRE_NOTHROW(cfg.validate());

  SECTION("timescales must be odd ascending") {
    cfg.timescales = {3, 5, 6};
    REQUIRE_THROWS_AS(cfg.validate(), agn::ConfigError);
    cfg.timescales = {5, 3, 7};
    REQUIRE_THROWS_AS(cfg.validate(), agn::ConfigError);
  }
  SECTION("d_p constraints") {
    cfg.d_p = 9;
    REQUIRE_THROWS_AS(cfg.validate(), agn::ConfigError);
    cfg.d_p = 6;  // block width 3 is odd, non-local path impossible
    cfg.affm_ratio = 3;
    REQUIRE_THROWS_AS(cfg.validate(), agn::ConfigError);
  }
  SECTION("decoder cannot outnumber encoder") {
    cfg.decoder_layers = cfg.encoder_layers + 1;
    REQUIRE_THROWS_AS(cfg.validate(), agn::ConfigError);
  }
  SECTION("at least one relation branch") {
    cfg.use_gce = false;
    cfg.use_lie = false;
    REQUIRE_THROWS_AS(cfg.validate(), agn::ConfigError);
  }
  SECTION("single-frame input impossible") {
    cfg.t_in = 1;
    REQUIRE_THROWS_AS(cfg.validate(), agn::ConfigError);
  }
}

TEST_CASE("build is deterministic per seed") {
  auto cfg = tiny_config();
  auto m1 = agn::build_model<float>(cfg);
  auto m2 = agn::build_model<float>(cfg);
  REQUIRE(m1.params.size() == m2.params.size());
  auto it2 = m2.params.begin();
  for (const auto& [name, t] : m1.params) {
    REQUIRE(name == it2->first);
    REQUIRE(t.data() == it2->second.data());  // identical bytes
    ++it2;
  }
  cfg.seed = 8;
  auto m3 = agn::build_model<float>(cfg);
  bool any_diff = false;
  auto it3 = m3.params.begin();
  for (const auto& [name, t] : m1.params) {
    if (t.data() != it3->second.data()) any_diff = true;
    ++it3;
  }
  REQUIRE(any_diff);
}

TEST_CASE("default configuration forward shape") {
  ModelConfig cfg;  // paper defaults: 22 joints, 10 in, 10 out
  auto model = agn::build_model<float>(cfg);
  agn::Rng rng(81);
  auto x = rand_tensor<float>({22, 10, 3}, rng, -500, 500);
  auto y = model.forward(x);
  REQUIRE(y.shape() == Shape{22, 10, 3});
  for (float v : y.data()) REQUIRE(std::isfinite(v));

  SECTION("wrong input shape is an input error") {
    REQUIRE_THROWS_AS(model.forward(FT::zeros({22, 9, 3})), agn::InputError);
  }
}

TEST_CASE("parameter count matches a hand-summed ledger") {
  ModelConfig cfg;
  cfg.n_joints = 5;
  cfg.t_in = 4;
  cfg.t_out = 3;
  cfg.d_p = 8;
  cfg.temporal_dim = 6;
  cfg.encoder_layers = 1;
  cfg.decoder_layers = 1;
  auto model = agn::build_model<float>(cfg);

  // MTDE stream: 3*3*8 + 5*3*8 + 7*3*8 kernels, 3 biases of 8,
  // reduce 24*8 + 8 -> 584 per stream, two streams.
  const std::int64_t mtde = 2 * ((3 + 5 + 7) * 3 * 8 + 3 * 8 + 24 * 8 + 8);
  // temporal projection (2*4-1) x 6
  const std::int64_t proj = 7 * 6;
  // per block at half width h=4:
  //   reduce 8*4+4, gce (5+1 + 4*4+4 + 1*3*4*4+4),
  //   lie (3*3*4*4+4 + 3*(4*2+2) + 2*4+4),
  //   affm (12*4+4 + 4*1+1 + 1*4+4), expand 4*8+8
  const std::int64_t block = (8 * 4 + 4) + (6 + 20 + 52) + (148 + 30 + 12) +
                             (52 + 5 + 8) + (4 * 8 + 8);
  // head: 8*3+3 channel map, 6*3 temporal map
  const std::int64_t head = (8 * 3 + 3) + 6 * 3;
  REQUIRE(model.params.total_parameters() == mtde + proj + 2 * block + head);
}

TEST_CASE("param store rejects duplicates and keeps order") {
  agn::ParamStore<float> store;
  store.add("a", FT::zeros({2}));
  store.add("b", FT::zeros({3}));
  REQUIRE_THROWS_AS(store.add("a", FT::zeros({1})), agn::ContractError);
  REQUIRE(store.total_parameters() == 5);
  std::vector<std::string> names;
  for (const auto& [n, t] : store) names.push_back(n);
  REQUIRE(names == std::vector<std::string>{"a", "b"});
}

TEST_CASE("forward is pure and zero head gives zero output") {
  auto cfg = tiny_config();
  auto model = agn::build_model<float>(cfg);
  agn::Rng rng(82);
  auto x = rand_tensor<float>({4, 4, 3}, rng, -100, 100);
  auto y1 = model.forward(x);
  auto y2 = model.forward(x);
  REQUIRE(y1.data() == y2.data());

  model.head_channel_w.data().assign(model.head_channel_w.data().size(), 0.0f);
  model.head_channel_b.data().assign(model.head_channel_b.data().size(), 0.0f);
  auto y3 = model.forward(x);
  for (float v : y3.data()) REQUIRE(v == 0.0f);
}

TEST_CASE("zero-weight blocks are exact identities") {
  auto cfg = tiny_config();
  cfg.encoder_layers = 2;
  cfg.decoder_layers = 2;
  auto model = agn::build_model<float>(cfg);
  auto zero_block = [](agn::AjreBlock<float>& b) {
    auto z = [](TensorT<float>& t) { t.data().assign(t.data().size(), 0.0f); };
    z(b.reduce_w);
    z(b.reduce_b);
    z(b.expand_w);
    z(b.expand_b);
    if (b.gce) {
      z(b.gce->conv_ba_w);
      z(b.gce->conv_emb_w);
      z(b.gce->conv_intra_w);
    }
    if (b.lie) {
      z(b.lie->adjacent_w);
      z(b.lie->theta_w);
      z(b.lie->phi_w);
      z(b.lie->g_w);
      z(b.lie->out_w);
    }
    if (b.affm) {
      z(b.affm->fuse_w);
      z(b.affm->fc1_w);
      z(b.affm->fc2_w);
    }
  };
  for (auto& b : model.encoder) zero_block(b);
  for (auto& b : model.decoder) zero_block(b);

  agn::Rng rng(83);
  auto h = rand_tensor<float>({4, 8, 8}, rng);
  REQUIRE(model.encoder[0].forward(h).data() == h.data());

  // With identity blocks the network collapses to head(proj(mtde(x))) scaled
  // by the skip-sum accumulation factor decoder_layers + 1.
  auto x = rand_tensor<float>({4, 4, 3}, rng, -10, 10);
  auto y = model.forward(x);
  auto trunk = agn::temporal_linear(agn::mtde_forward(x, *model.mtde), model.proj_w);
  auto ref = agn::temporal_linear(
      agn::conv_1x1(agn::scale(trunk, 3.0f), model.head_channel_w, model.head_channel_b),
      model.head_temporal_w);
  REQUIRE(y.shape() == ref.shape());
  REQUIRE(max_abs_diff(to_vec(y), to_vec(ref)) < 1e-4);
}

TEST_CASE("mpjpe loss") {
  SECTION("zero at identical poses") {
    agn::Rng rng(84);
    auto p = rand_tensor<double>({3, 2, 3}, rng);
    REQUIRE(agn::mpjpe_loss(p, p).item() == 0.0);
  }
  SECTION("3-4-5 offset") {
    auto pred = DT::from_data({1, 1, 3}, {0, 0, 0});
    auto truth = DT::from_data({1, 1, 3}, {3, 0, 4});
    REQUIRE(agn::mpjpe_loss(pred, truth).item() == Catch::Approx(5.0));
  }
  SECTION("random case against the loop oracle") {
    agn::Rng rng(85);
    auto pred = rand_tensor<double>({3, 2, 3}, rng);
    auto truth = rand_tensor<double>({3, 2, 3}, rng);
    REQUIRE(agn::mpjpe_loss(pred, truth).item() ==
            Catch::Approx(oracle::mpjpe(to_vec(pred), to_vec(truth), 3, 2)).margin(1e-12));
  }
  SECTION("shape mismatch") {
    REQUIRE_THROWS_AS(agn::mpjpe_loss(DT::zeros({2, 2, 3}), DT::zeros({2, 3, 3})),
                      agn::ShapeError);
  }
  SECTION("gradient is a descent direction") {
    agn::Rng rng(86);
    auto truth = rand_tensor<double>({4, 3, 3}, rng, -50, 50);
    auto delta = rand_tensor<double>({4, 3, 3}, rng, -1, 1);
    for (auto& v : delta.data()) v = v >= 0 ? 1.0 : -1.0;  // |delta| = 1
    auto pred = agn::add(truth, delta);
    pred.set_requires_grad(true);
    pred.zero_grad();
    agn::backward(agn::mpjpe_loss(pred, truth));
    std::int64_t agree = 0, total = 0;
    for (std::size_t i = 0; i < pred.grad().size(); ++i) {
      ++total;
      if (pred.grad()[i] * delta.data()[i] > 0) ++agree;
    }
    REQUIRE(static_cast<double>(agree) / static_cast<double>(total) >= 0.99);
  }
  SECTION("gradient passes the central-difference check") {
    agn::Rng rng(87);
    auto truth = rand_tensor<double>({3, 2, 3}, rng);
    auto pred = rand_tensor<double>({3, 2, 3}, rng);
    REQUIRE(agn::grad_check(
                [&](const DT& t) { return agn::mpjpe_loss(t, truth); }, pred) < 1e-3);
  }
}

TEST_CASE("full tiny model gradients match finite differences") {
  auto cfg = tiny_config();
  auto model = agn::build_model<double>(cfg);
  agn::Rng rng(88);
  auto target = rand_tensor<double>({4, 2, 3}, rng);
  auto x = rand_tensor<double>({4, 4, 3}, rng);
  auto loss = [&](const DT&) { return agn::mpjpe_loss(model.forward(x), target); };
  REQUIRE(agn::grad_check([&](const DT& t) { return agn::mpjpe_loss(model.forward(t), target); },
                          x) < 1e-3);
  REQUIRE(agn::grad_check(loss, model.head_temporal_w) < 1e-3);
  REQUIRE(agn::grad_check(loss, model.proj_w) < 1e-3);
}

TEST_CASE("checkpoint round-trip and corruption") {
  auto dir = temp_dir();
  auto cfg = tiny_config();
  auto model = agn::build_model<float>(cfg);
  agn::Rng rng(89);
  auto x = rand_tensor<float>({4, 4, 3}, rng, -100, 100);
  auto y_before = model.forward(x);

  const auto path = (dir / "model.agnc").string();
  agn::save_checkpoint(model.params, path);

  SECTION("round-trip restores bitwise-identical behaviour") {
    auto loaded = agn::load_checkpoint<float>(path);
    auto model2 = agn::build_model<float>(cfg);
    agn::load_state(model2, loaded);
    auto y_after = model2.forward(x);
    REQUIRE(y_before.data() == y_after.data());
  }
  SECTION("independent byte reader agrees with the parameter table") {
    std::ifstream in(path, std::ios::binary);
    std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    auto u16 = [&](std::size_t o) {
      return static_cast<unsigned>(static_cast<unsigned char>(raw[o])) |
             (static_cast<unsigned>(static_cast<unsigned char>(raw[o + 1])) << 8);
    };
    auto u32 = [&](std::size_t o) {
      std::uint32_t v = 0;
      for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[o + i])) << (8 * i);
      }
      return v;
    };
    REQUIRE(raw.substr(0, 4) == "AGNC");
    REQUIRE(u32(4) == 1);
    REQUIRE(u32(8) == model.params.size());
    // zlib CRC as the independent checksum implementation
    const auto computed =
        ::crc32(0L, reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uInt>(raw.size() - 4));
    REQUIRE(static_cast<std::uint32_t>(computed) == u32(raw.size() - 4));

    std::size_t off = 12;
    for (const auto& [name, tensor] : model.params) {
      const auto name_len = u16(off);
      off += 2;
      REQUIRE(raw.substr(off, name_len) == name);
      off += name_len;
      const auto rank = static_cast<unsigned>(static_cast<unsigned char>(raw[off]));
      off += 1;
      REQUIRE(rank == tensor.shape().size());
      std::int64_t count = 1;
      for (unsigned d = 0; d < rank; ++d) {
        REQUIRE(static_cast<std::int64_t>(u32(off)) == tensor.shape()[d]);
        count *= tensor.shape()[d];
        off += 4;
      }
      REQUIRE(count == tensor.numel());
      off += 4 * count;
    }
    REQUIRE(off == raw.size() - 4);
  }
  SECTION("truncation is caught by the checksum") {
    std::ifstream in(path, std::ios::binary);
    std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    raw.resize(raw.size() - 9);
    const auto trunc = (dir / "trunc.agnc").string();
    std::ofstream(trunc, std::ios::binary) << raw;
    try {
      agn::load_checkpoint<float>(trunc);
      FAIL("expected CheckpointError");
    } catch (const agn::CheckpointError& e) {
      REQUIRE(std::string(e.what()).find("checksum") != std::string::npos);
    }
  }
  SECTION("bad magic is named") {
    std::ifstream in(path, std::ios::binary);
    std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    raw[0] = 'X';
    const auto bad = (dir / "magic.agnc").string();
    std::ofstream(bad, std::ios::binary) << raw;
    try {
      agn::load_checkpoint<float>(bad);
      FAIL("expected CheckpointError");
    } catch (const agn::CheckpointError& e) {
      REQUIRE(std::string(e.what()).find("magic") != std::string::npos);
    }
  }
  SECTION("flipped payload byte is caught") {
    std::ifstream in(path, std::ios::binary);
    std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    raw[raw.size() / 2] ^= 0x40;
    const auto bad = (dir / "flip.agnc").string();
    std::ofstream(bad, std::ios::binary) << raw;
    REQUIRE_THROWS_AS(agn::load_checkpoint<float>(bad), agn::CheckpointError);
  }
  SECTION("architecture mismatch is rejected at load_state") {
    auto loaded = agn::load_checkpoint<float>(path);
    auto cfg2 = cfg;
    cfg2.d_p = 16;
    auto model2 = agn::build_model<float>(cfg2);
    REQUIRE_THROWS_AS(agn::load_state(model2, loaded), agn::CheckpointError);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("forward shape holds over random small configs") {
  agn::Rng rng(90);
  std::uniform_int_distribution<int> joints(2, 5), frames(3, 6), outs(1, 4), enc(1, 3);
  for (int rep = 0; rep < 25; ++rep) {
    ModelConfig cfg;
    cfg.n_joints = joints(rng);
    cfg.t_in = frames(rng);
    cfg.t_out = outs(rng);
    cfg.d_p = 8;
    cfg.temporal_dim = 4 + rep % 6;
    cfg.encoder_layers = enc(rng);
    cfg.decoder_layers = 1 + static_cast<int>(rng() % cfg.encoder_layers);
    cfg.seed = rep;
    auto model = agn::build_model<float>(cfg);
    auto x = rand_tensor<float>({cfg.n_joints, cfg.t_in, 3}, rng, -10, 10);
    auto y = model.forward(x);
    REQUIRE(y.shape() == Shape{cfg.n_joints, cfg.t_out, 3});
    for (float v : y.data()) REQUIRE(std::isfinite(v));
  }
}
