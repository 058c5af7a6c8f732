#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <random>

#include "secap/checkpoint.hpp"
#include "test_util.hpp"

using namespace secap;
using secap::test::random_tensor;
using secap::test::TempDir;

namespace {

ModelConfig tiny(std::size_t n_q = 4) {
  ModelConfig c;
  c.n_q = n_q;
  c.d_q = 8;
  c.qformer_layers = 1;
  c.qformer_ffn = 16;
  c.max_text_len = 32;
  c.d_dec = 8;
  c.decoder_layers = 1;
  c.decoder_ffn = 16;
  c.max_positions = 64;
  c.varnet_hidden = 8;
  return c;
}

Vocab tiny_vocab() { return Vocab::from_texts({"the voice is calm."}); }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::filesystem::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary | std::ios::trunc) << s;
}

Checkpoint snapshot(const Model& m) {
  Checkpoint ck;
  ck.step = 7;
  ck.model_config = m.config().dump();
  ck.train_config = "stage = 1\n";
  ck.vocab = vocab_to_string(m.vocab());
  ck.rng_state = "123";
  ck.counters["adam.t"] = 7;
  store_tensors(ck, m.params(), {});
  return ck;
}

CheckpointError::Kind load_kind(const std::filesystem::path& p) {
  try {
    load_checkpoint(p);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "load succeeded";
  return CheckpointError::Kind::Io;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitIdentical) {
  TempDir d("ck");
  const auto m = Model::create(tiny(), tiny_vocab(), 3);
  save_checkpoint(snapshot(m), d / "a.ck");
  const auto ck = load_checkpoint(d / "a.ck");
  EXPECT_EQ(ck.step, 7u);
  EXPECT_EQ(ck.rng_state, "123");
  EXPECT_EQ(ck.counters.at("adam.t"), 7u);
  const auto back = model_from_checkpoint(ck);
  EXPECT_EQ(vocab_to_string(back.vocab()), vocab_to_string(m.vocab()));

  std::mt19937_64 rng(1);
  const auto frames = ad::constant(random_tensor(13, 40, rng));
  const auto a = m.qformer().encode_speech(frames).value();
  const auto b = back.qformer().encode_speech(frames).value();
  ASSERT_EQ(a.shape(), b.shape());
  EXPECT_EQ(std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)), 0);
  for (const auto& [name, e] : m.params().entries())
    EXPECT_EQ(e.var.value(), back.params().get(name).value()) << name;

  save_checkpoint(ck, d / "b.ck");
  EXPECT_EQ(slurp(d / "a.ck"), slurp(d / "b.ck"));
}

TEST(Checkpoint, TensorsStoredInNameOrder) {
  TempDir d("ck");
  const auto m = Model::create(tiny(), tiny_vocab(), 3);
  save_checkpoint(snapshot(m), d / "a.ck");
  const auto bytes = slurp(d / "a.ck");
  std::size_t last = 0;
  std::string prev;
  for (const auto& [name, _] : m.params().entries()) {
    const auto key = "param/" + name;
    const auto at = bytes.find(key);
    ASSERT_NE(at, std::string::npos) << key;
    EXPECT_GT(at, last) << prev << " then " << key;
    last = at;
    prev = key;
  }
}

TEST(Checkpoint, MomentsRoundTrip) {
  TempDir d("ck");
  auto m = Model::create(tiny(), tiny_vocab(), 3);
  Adam opt;
  std::mt19937_64 rng(2);
  std::vector<ad::Var> terms;
  for (auto& [_, e] : m.params().entries())
    terms.push_back(ad::sum(ad::mul(e.var, ad::constant(random_tensor(e.var.value().rows(), e.var.value().cols(), rng)))));
  ad::backward(ad::sum(ad::concat_rows(terms)));
  opt.step(m.params());
  Checkpoint ck = snapshot(m);
  store_tensors(ck, m.params(), {&opt});
  save_checkpoint(ck, d / "m.ck");
  const auto back = load_checkpoint(d / "m.ck");
  Adam opt2;
  restore_moments(back, m.params(), opt2, [](ParamGroup) { return true; });
  ASSERT_EQ(opt2.moments().size(), opt.moments().size());
  for (const auto& [name, mom] : opt.moments()) {
    EXPECT_EQ(opt2.moments().at(name).m, mom.m) << name;
    EXPECT_EQ(opt2.moments().at(name).v, mom.v) << name;
    EXPECT_EQ(mom.m.shape(), m.params().get(name).value().shape());
  }
}

TEST(Checkpoint, CorruptPayloadByteIsChecksumError) {
  TempDir d("ck");
  const auto m = Model::create(tiny(), tiny_vocab(), 3);
  save_checkpoint(snapshot(m), d / "a.ck");
  auto bytes = slurp(d / "a.ck");
  bytes[bytes.size() - 5] ^= 0x01;  // last payload byte, just before its crc
  spit(d / "bad.ck", bytes);
  EXPECT_EQ(load_kind(d / "bad.ck"), CheckpointError::Kind::Checksum);
}

TEST(Checkpoint, CorruptHeaderIsChecksumError) {
  TempDir d("ck");
  const auto m = Model::create(tiny(), tiny_vocab(), 3);
  save_checkpoint(snapshot(m), d / "a.ck");
  auto bytes = slurp(d / "a.ck");
  const auto at = bytes.find("n_q");
  ASSERT_NE(at, std::string::npos);
  bytes[at] = 'm';
  spit(d / "bad.ck", bytes);
  EXPECT_EQ(load_kind(d / "bad.ck"), CheckpointError::Kind::Checksum);
}

TEST(Checkpoint, VersionMismatch) {
  TempDir d("ck");
  const auto m = Model::create(tiny(), tiny_vocab(), 3);
  save_checkpoint(snapshot(m), d / "a.ck");
  auto bytes = slurp(d / "a.ck");
  const std::uint32_t v = kCheckpointVersion + 1;
  std::memcpy(bytes.data() + 4, &v, 4);
  spit(d / "v.ck", bytes);
  EXPECT_EQ(load_kind(d / "v.ck"), CheckpointError::Kind::Version);
}

TEST(Checkpoint, ShapeDriftNamesTensor) {
  TempDir d("ck");
  const auto m = Model::create(tiny(4), tiny_vocab(), 3);
  save_checkpoint(snapshot(m), d / "a.ck");
  auto other = Model::create(tiny(6), tiny_vocab(), 3);
  try {
    restore_params(load_checkpoint(d / "a.ck"), other.params());
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointError::Kind::ShapeDrift);
    EXPECT_NE(std::string(e.what()).find("qformer.queries"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, MissingOrExtraTensorIsShapeDrift) {
  const auto m = Model::create(tiny(), tiny_vocab(), 3);
  auto ck = snapshot(m);
  ck.tensors.erase(ck.tensors.begin());
  auto other = Model::create(tiny(), tiny_vocab(), 4);
  try {
    restore_params(ck, other.params());
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointError::Kind::ShapeDrift);
  }
  ck = snapshot(m);
  ck.tensors["param/stray"] = Tensor(1, 1, 0.0);
  try {
    restore_params(ck, other.params());
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointError::Kind::ShapeDrift);
    EXPECT_NE(std::string(e.what()).find("'stray'"), std::string::npos);
  }
}

TEST(Checkpoint, TruncatedMissingAndForeignFiles) {
  TempDir d("ck");
  const auto m = Model::create(tiny(), tiny_vocab(), 3);
  save_checkpoint(snapshot(m), d / "a.ck");
  const auto bytes = slurp(d / "a.ck");
  spit(d / "t.ck", bytes.substr(0, bytes.size() / 2));
  EXPECT_EQ(load_kind(d / "t.ck"), CheckpointError::Kind::Format);
  spit(d / "tail.ck", bytes + "x");
  EXPECT_EQ(load_kind(d / "tail.ck"), CheckpointError::Kind::Format);
  spit(d / "j.ck", "{\"not\": \"a checkpoint\"}");
  EXPECT_EQ(load_kind(d / "j.ck"), CheckpointError::Kind::Format);
  spit(d / "empty.ck", "");
  EXPECT_EQ(load_kind(d / "empty.ck"), CheckpointError::Kind::Format);
  EXPECT_EQ(load_kind(d / "nope.ck"), CheckpointError::Kind::Io);
}

TEST(Checkpoint, SaveLeavesNoTempFile) {
  TempDir d("ck");
  const auto m = Model::create(tiny(), tiny_vocab(), 3);
  save_checkpoint(snapshot(m), d / "a.ck");
  save_checkpoint(snapshot(m), d / "a.ck");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& _ : std::filesystem::directory_iterator(d.path())) ++files;
  EXPECT_EQ(files, 1u);
  EXPECT_THROW(save_checkpoint(snapshot(m), d / "no_such_dir" / "a.ck"), CheckpointError);
}

TEST(Checkpoint, ModelConfigSnapshotRoundTrips) {
  auto c = tiny();
  c.feat.mel_bins = 24;
  c.varnet_hidden = 5;
  const auto back = ModelConfig::parse(c.dump());
  EXPECT_EQ(back.dump(), c.dump());
  EXPECT_EQ(back.feat.mel_bins, 24u);
  EXPECT_THROW(ModelConfig::parse("n_q = 4\nbogus = 1\n"), ConfigError);
}
