#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "dslab/tensor.hpp"
#include "test_support.hpp"

using namespace dslab;
using dslab::testing::check_gradients;
using dslab::testing::random_tensor;

TEST_CASE("matmul identity") {
  Tensor id = Tensor::zeros({3, 3});
  for (int i = 0; i < 3; ++i) id.data()[i * 3 + i] = 1.0;
  Rng rng(7);
  Tensor x = random_tensor({3, 5}, rng);
  Tensor y = matmul(id, x);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-15));
}

TEST_CASE("matmul hand arithmetic") {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from({2, 1}, {1, 1});
  Tensor c = matmul(a, b);
  CHECK(c.data()[0] == 3.0);
  CHECK(c.data()[1] == 7.0);
}

TEST_CASE("matmul shape mismatch reports both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL("expected dimension error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Dimension);
    CHECK(std::string(e.what()).find("[2,3]") != std::string::npos);
    CHECK(std::string(e.what()).find("[4,2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient vs finite differences") {
  Rng rng(11);
  Tensor a = random_tensor({4, 5}, rng);
  Tensor b = random_tensor({5, 3}, rng);
  auto res = check_gradients([&] { return sum(mul(matmul(a, b), matmul(a, b))); },
                             {a, b});
  CHECK(res.max_rel < 1e-6);
}

TEST_CASE("patch_project zero image and zero bias") {
  Tensor img = Tensor::zeros({1, 4, 4});
  Rng rng(3);
  Tensor w = random_tensor({6, 1, 2, 2}, rng);
  Tensor b = Tensor::zeros({6});
  Tensor out = patch_project(img, w, b);
  CHECK(out.shape() == Shape{4, 6});
  for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("patch_project matches brute-force patch extraction") {
  Rng rng(5);
  Tensor img = random_tensor({1, 4, 4}, rng);
  Tensor w = random_tensor({3, 1, 2, 2}, rng);
  Tensor b = random_tensor({3}, rng);
  Tensor out = patch_project(img, w, b);
  CHECK(out.shape() == Shape{4, 3});
  // independent oracle: gather each 2x2 block by explicit indexing and dot it
  // against the flattened filters
  const std::size_t p = 2, W = 4;
  for (std::size_t py = 0; py < 2; ++py) {
    for (std::size_t px = 0; px < 2; ++px) {
      std::vector<double> patch;
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < p; ++j)
          patch.push_back(img.data()[(py * p + i) * W + px * p + j]);
      for (std::size_t d = 0; d < 3; ++d) {
        double expect = b.data()[d];
        for (std::size_t k = 0; k < patch.size(); ++k)
          expect += patch[k] * w.data()[d * 4 + k];
        CHECK(out.data()[(py * 2 + px) * 3 + d] ==
              doctest::Approx(expect).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("patch_project token 0 is the top-left block") {
  Tensor img = Tensor::zeros({1, 4, 4});
  // distinct values in top-left 2x2
  img.data()[0] = 1.0;
  img.data()[1] = 2.0;
  img.data()[4] = 3.0;
  img.data()[5] = 4.0;
  Tensor w = Tensor::from({1, 1, 2, 2}, {1, 10, 100, 1000});
  Tensor b = Tensor::zeros({1});
  Tensor out = patch_project(img, w, b);
  CHECK(out.data()[0] == 1.0 + 20.0 + 300.0 + 4000.0);
}

TEST_CASE("patch_project indivisible image is a configuration error") {
  Tensor img = Tensor::zeros({1, 5, 4});
  Tensor w = Tensor::zeros({2, 1, 2, 2});
  Tensor b = Tensor::zeros({2});
  CHECK_THROWS_AS(patch_project(img, w, b), Error);
  try {
    patch_project(img, w, b);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
  }
}

TEST_CASE("patch_project gradient vs finite differences") {
  Rng rng(13);
  Tensor img = random_tensor({1, 8, 8}, rng);
  Tensor w = random_tensor({4, 1, 4, 4}, rng);
  Tensor b = random_tensor({4}, rng);
  auto res = check_gradients(
      [&] {
        Tensor t = patch_project(img, w, b);
        return sum(mul(t, t));
      },
      {img, w, b});
  CHECK(res.max_rel < 1e-6);
}

TEST_CASE("softmax_cross_entropy degenerate single logit") {
  Tensor logits = Tensor::from({1, 1}, {3.7});
  Tensor loss = softmax_cross_entropy(logits, {0});
  CHECK(loss.item() == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("softmax_cross_entropy uniform logits") {
  Tensor logits = Tensor::full({2, 4}, 0.25);
  Tensor loss = softmax_cross_entropy(logits, {1, 3});
  CHECK(loss.item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("softmax_cross_entropy out-of-range target") {
  Tensor logits = Tensor::zeros({2, 3});
  try {
    softmax_cross_entropy(logits, {0, 3});
    FAIL("expected index error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Index);
  }
}

TEST_CASE("softmax_cross_entropy gradient vs finite differences") {
  Rng rng(17);
  Tensor logits = random_tensor({3, 5}, rng);
  auto res = check_gradients(
      [&] { return softmax_cross_entropy(logits, {4, 0, 2}); }, {logits});
  CHECK(res.max_rel < 1e-6);
}

TEST_CASE("backward of sum gives all-ones gradient") {
  Rng rng(19);
  Tensor x = random_tensor({3, 4}, rng);
  x.set_requires_grad(true);
  Tensor loss = sum(x);
  backward(loss);
  REQUIRE(x.grad().size() == x.size());
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward of sum of squares gives 2x") {
  Rng rng(23);
  Tensor x = random_tensor({2, 5}, rng);
  x.set_requires_grad(true);
  Tensor loss = sum(mul(x, x));
  backward(loss);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(x.grad()[i] == doctest::Approx(2.0 * x.data()[i]).epsilon(1e-14));
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor x = Tensor::zeros({2, 2}, true);
  Tensor y = scale(x, 2.0);
  try {
    backward(y);
    FAIL("expected contract error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Contract);
  }
  Tape::instance().clear();
}

TEST_CASE("backward clears the tape") {
  Tensor x = Tensor::zeros({2}, true);
  Tensor loss = sum(x);
  CHECK(Tape::instance().size() > 0);
  backward(loss);
  CHECK(Tape::instance().size() == 0);
}

TEST_CASE("gradient accumulates when a tensor is used twice") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  Tensor loss = sum(add(x, x));
  backward(loss);
  for (double g : x.grad()) CHECK(g == 2.0);
}

TEST_CASE("per-op gradients pass finite-difference checks") {
  Rng rng(29);

  SUBCASE("add/sub/mul/scale") {
    Tensor a = random_tensor({3, 3}, rng);
    Tensor b = random_tensor({3, 3}, rng);
    auto res = check_gradients(
        [&] {
          Tensor t = add(mul(a, b), sub(scale(a, 0.7), b));
          return sum(mul(t, t));
        },
        {a, b});
    CHECK(res.max_rel < 1e-6);
  }

  SUBCASE("add_rowvec") {
    Tensor x = random_tensor({4, 3}, rng);
    Tensor v = random_tensor({3}, rng);
    auto res = check_gradients(
        [&] {
          Tensor t = add_rowvec(x, v);
          return sum(mul(t, t));
        },
        {x, v});
    CHECK(res.max_rel < 1e-6);
  }

  SUBCASE("mul_exp_scalar") {
    Tensor x = random_tensor({3, 4}, rng);
    Tensor s = Tensor::scalar(0.4);
    auto res = check_gradients(
        [&] {
          Tensor t = mul_exp_scalar(x, s);
          return sum(mul(t, t));
        },
        {x, s});
    CHECK(res.max_rel < 1e-6);
  }

  SUBCASE("transpose and slices") {
    Tensor x = random_tensor({4, 6}, rng);
    auto res = check_gradients(
        [&] {
          Tensor t = transpose(slice_cols(x, 1, 3));
          Tensor u = slice_rows(x, 0, 2);
          return add(sum(mul(t, t)), sum(mul(u, u)));
        },
        {x});
    CHECK(res.max_rel < 1e-6);
  }

  SUBCASE("concat rows and cols") {
    Tensor a = random_tensor({2, 3}, rng);
    Tensor b = random_tensor({1, 3}, rng);
    Tensor c = random_tensor({3, 2}, rng);
    auto res = check_gradients(
        [&] {
          Tensor r = concat_rows({a, b});
          Tensor q = concat_cols({r, c});
          return sum(mul(q, q));
        },
        {a, b, c});
    CHECK(res.max_rel < 1e-6);
  }

  SUBCASE("gather_rows and embedding") {
    Tensor x = random_tensor({5, 3}, rng);
    auto res = check_gradients(
        [&] {
          Tensor g = gather_rows(x, {0, 2, 2, 4});
          Tensor e = embedding(x, {1, 3});
          return add(sum(mul(g, g)), sum(mul(e, e)));
        },
        {x});
    CHECK(res.max_rel < 1e-6);
  }

  SUBCASE("gelu") {
    Tensor x = random_tensor({3, 3}, rng, -2.0, 2.0);
    auto res = check_gradients(
        [&] {
          Tensor t = gelu(x);
          return sum(mul(t, t));
        },
        {x});
    CHECK(res.max_rel < 1e-6);
  }

  SUBCASE("layer_norm") {
    Tensor x = random_tensor({3, 8}, rng);
    Tensor g = random_tensor({8}, rng, 0.5, 1.5);
    Tensor b = random_tensor({8}, rng);
    auto res = check_gradients(
        [&] {
          Tensor t = layer_norm(x, g, b);
          return sum(mul(t, t));
        },
        {x, g, b});
    CHECK(res.max_rel < 1e-6);
  }

  SUBCASE("softmax_rows") {
    Tensor x = random_tensor({3, 5}, rng);
    auto res = check_gradients(
        [&] {
          Tensor p = softmax_rows(x);
          return sum(mul(p, p));
        },
        {x});
    CHECK(res.max_rel < 1e-6);
  }

  SUBCASE("l2_normalize") {
    Tensor x = random_tensor({1, 6}, rng);
    Tensor w = random_tensor({1, 6}, rng);
    auto res = check_gradients(
        [&] {
          Tensor y = l2_normalize(x);
          return sum(mul(y, w));
        },
        {x});
    CHECK(res.max_rel < 1e-6);
  }
}

TEST_CASE("softmax rows sum to one within 1e-12") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({4, 7}, rng, -30.0, 30.0);
    Tensor p = softmax_rows(x);
    for (std::size_t i = 0; i < 4; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 7; ++j) s += p.data()[i * 7 + j];
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("sgd_step updates, freezes, and zeroes") {
  SUBCASE("frozen group bytes unchanged") {
    Rng rng(37);
    Tensor w = random_tensor({3, 3}, rng);
    std::vector<double> before = w.data();
    w.set_requires_grad(true);
    Tensor loss = sum(mul(w, w));
    backward(loss);
    std::vector<ParamGroup> groups{{"frozen", {w}, true}};
    sgd_step(groups, 0.5);
    CHECK(std::memcmp(before.data(), w.data().data(),
                      before.size() * sizeof(double)) == 0);
    CHECK(w.grad().empty());
  }

  SUBCASE("single scalar hand arithmetic") {
    Tensor theta = Tensor::scalar(1.0, true);
    theta.clear_grad();
    Tensor loss = scale(theta, 2.0);  // dL/dtheta = 2
    backward(loss);
    std::vector<ParamGroup> groups{{"g", {theta}, false}};
    sgd_step(groups, 0.1);
    CHECK(theta.item() == doctest::Approx(0.8).epsilon(1e-15));
  }

  SUBCASE("two zero-lr steps are a no-op") {
    Tensor w = Tensor::from({2}, {0.5, -0.25}, true);
    std::vector<double> before = w.data();
    std::vector<ParamGroup> groups{{"g", {w}, false}};
    for (int step = 0; step < 2; ++step) {
      Tensor loss = sum(mul(w, w));
      backward(loss);
      sgd_step(groups, 0.0);
    }
    CHECK(w.data() == before);
  }
}

TEST_CASE("determinism: identical seeds give bit-identical training") {
  auto run = [] {
    Rng rng(99);
    Tensor w = random_tensor({4, 4}, rng);
    Tensor x = random_tensor({2, 4}, rng);
    w.set_requires_grad(true);
    std::vector<ParamGroup> groups{{"w", {w}, false}};
    std::vector<double> losses;
    for (int step = 0; step < 5; ++step) {
      Tensor out = matmul(x, w);
      Tensor loss = sum(mul(out, out));
      losses.push_back(loss.item());
      backward(loss);
      sgd_step(groups, 0.01);
    }
    return std::make_pair(losses, w.data());
  };
  auto [l1, w1] = run();
  auto [l2, w2] = run();
  CHECK(l1 == l2);
  CHECK(w1 == w2);
}

TEST_CASE("checkpoint round-trip is exact") {
  Rng rng(41);
  std::vector<ParamGroup> groups;
  groups.push_back({"alpha", {random_tensor({3, 4}, rng),
                              random_tensor({5}, rng)}, false});
  groups.push_back({"beta", {random_tensor({2, 2, 2}, rng)}, true});

  auto path = std::filesystem::temp_directory_path() / "dslab_ckpt_test.dsck";
  save_checkpoint(path, groups);
  auto loaded = load_checkpoint(path);

  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].name == "alpha");
  CHECK(loaded[0].frozen == false);
  CHECK(loaded[1].name == "beta");
  CHECK(loaded[1].frozen == true);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    REQUIRE(loaded[g].tensors.size() == groups[g].tensors.size());
    for (std::size_t t = 0; t < groups[g].tensors.size(); ++t) {
      CHECK(loaded[g].tensors[t].shape() == groups[g].tensors[t].shape());
      CHECK(loaded[g].tensors[t].data() == groups[g].tensors[t].data());
    }
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint header is the documented layout") {
  auto path = std::filesystem::temp_directory_path() / "dslab_ckpt_hdr.dsck";
  save_checkpoint(path, {{"g", {Tensor::scalar(1.5)}, false}});
  std::ifstream in(path, std::ios::binary);
  char magic[4];
  in.read(magic, 4);
  CHECK(std::string(magic, 4) == "DSCK");
  unsigned char version[4];
  in.read(reinterpret_cast<char*>(version), 4);
  CHECK(version[0] == 1);  // little-endian u32
  CHECK(version[1] == 0);
  std::filesystem::remove(path);
}

TEST_CASE("truncated checkpoint is a format error") {
  auto path = std::filesystem::temp_directory_path() / "dslab_ckpt_trunc.dsck";
  save_checkpoint(path, {{"group", {Tensor::zeros({8, 8})}, false}});
  const auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full - 16);
  try {
    load_checkpoint(path);
    FAIL("expected format error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Format);
  }
  std::filesystem::remove(path);
}
