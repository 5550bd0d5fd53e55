#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "ssmdrive/params.hpp"
#include "ssmdrive/tensor.hpp"

using namespace ssmdrive;

namespace {
std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("param store is deterministic and rejects duplicates") {
  Rng rng(1);
  ParamStore ps;
  ps.add("b.second", Tensor::zeros({2}));
  ps.add("a.first", Tensor::zeros({3}));
  ps.add("c.third", Tensor::zeros({1}));
  auto names = ps.names();
  CHECK(names == std::vector<std::string>{"a.first", "b.second", "c.third"});
  CHECK(ps.total_elements() == 6);
  CHECK_THROWS_AS(ps.add("a.first", Tensor::zeros({3})), std::invalid_argument);
  CHECK_THROWS_AS(ps.get("missing"), std::invalid_argument);
}

TEST_CASE("linear layer computes x*W + b") {
  Rng rng(2);
  ParamStore ps;
  Linear lin(ps, "lin", 2, 3, rng);
  lin.w.array() << 1, 2, 3, 4, 5, 6;  // [[1,2,3],[4,5,6]]
  lin.b.array() << 10, 20, 30;
  Tensor x = Tensor::from({1, 2}, {1, 1});
  Tensor y = lin.forward(x);
  CHECK(y(0, 0) == doctest::Approx(15.0));
  CHECK(y(0, 1) == doctest::Approx(27.0));
  CHECK(y(0, 2) == doctest::Approx(39.0));
}

TEST_CASE("checkpoint round trip restores parameters bit-for-bit") {
  std::string path = temp_path("ckpt_roundtrip.bin");
  Rng rng(3);
  ParamStore ps;
  Tensor w = ps.add("layer.w", Tensor::randn({4, 5}, rng));
  Tensor b = ps.add("layer.b", Tensor::randn({5}, rng));
  Array w0 = w.array();
  Array b0 = b.array();
  save_checkpoint(ps, path);
  w.array().setConstant(-1.0);
  b.array().setConstant(-2.0);
  load_checkpoint(ps, path);
  for (std::int64_t i = 0; i < w0.size(); ++i) CHECK(w.array()[i] == w0[i]);
  for (std::int64_t i = 0; i < b0.size(); ++i) CHECK(b.array()[i] == b0[i]);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint rejects bad magic and shape mismatches") {
  std::string path = temp_path("ckpt_bad.bin");
  {
    FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("NOT-A-CHECKPOINT-AT-ALL", f);
    std::fclose(f);
  }
  Rng rng(4);
  ParamStore ps;
  ps.add("w", Tensor::randn({2, 2}, rng));
  CHECK_THROWS_WITH_AS(load_checkpoint(ps, path),
                       ("checkpoint: '" + path + "' has an unknown format or version").c_str(),
                       std::runtime_error);

  std::string good = temp_path("ckpt_good.bin");
  save_checkpoint(ps, good);
  ParamStore other;
  other.add("w", Tensor::zeros({2, 3}));
  CHECK_THROWS_AS(load_checkpoint(other, good), std::runtime_error);
  std::filesystem::remove(path);
  std::filesystem::remove(good);
}

TEST_CASE("adamw descends a quadratic and decays weights") {
  ParamStore ps;
  Tensor x = ps.add("x", Tensor::from({2}, {5.0, -3.0}));
  AdamW opt(ps, 0.05, 0.0);
  for (int it = 0; it < 400; ++it) {
    Tape tape;
    Tensor loss = sum(square(x));
    tape.backward(loss);
    opt.zero_accum();
    opt.accumulate();
    opt.step();
  }
  CHECK(std::abs(x(0)) < 1e-2);
  CHECK(std::abs(x(1)) < 1e-2);

  // Pure decay: no gradient, weight_decay shrinks the parameter.
  ParamStore ps2;
  Tensor w = ps2.add("w", Tensor::from({1}, {1.0}));
  AdamW opt2(ps2, 0.1, 0.5);
  opt2.zero_accum();
  opt2.step();
  CHECK(w(0) < 1.0);
  CHECK(w(0) == doctest::Approx(1.0 - 0.1 * 0.5).epsilon(1e-12));
}

TEST_CASE("cosine schedule warms up and decays to the floor") {
  double lr0 = 2e-4;
  CHECK(cosine_lr(lr0, 0, 100, 10) == doctest::Approx(lr0 / 10));
  CHECK(cosine_lr(lr0, 9, 100, 10) == doctest::Approx(lr0));
  CHECK(cosine_lr(lr0, 10, 100, 10) == doctest::Approx(lr0));
  CHECK(cosine_lr(lr0, 100, 100, 10) == doctest::Approx(lr0 * 0.01).epsilon(1e-9));
  // Monotone decay after warmup.
  double prev = 1.0;
  for (int s = 10; s <= 100; s += 5) {
    double lr = cosine_lr(lr0, s, 100, 10);
    CHECK(lr <= prev + 1e-18);
    prev = lr;
  }
}
