#include <catch2/catch_amalgamated.hpp>

#include <vector>

#include "cssgr/encoders.hpp"
#include "support/test_support.hpp"

using namespace cssgr;
using test_support::gradcheck;

namespace {

TextEncoderParams text_params(std::size_t vocab, std::size_t d, Rng& rng) {
  return TextEncoderParams::init(vocab, d, 16, rng);
}

}  // namespace

TEST_CASE("text encoder is invariant to repeating the whole segment", "[encoders]") {
  Rng rng(1);
  TextEncoderParams p = text_params(12, 8, rng);
  std::vector<int> seg{4, 7, 9};
  std::vector<int> repeated{4, 7, 9, 4, 7, 9, 4, 7, 9};
  Tensor once = encode_text(seg, p);
  Tensor thrice = encode_text(repeated, p);
  for (std::size_t i = 0; i < 8; ++i)
    REQUIRE(once.at(i) == Catch::Approx(thrice.at(i)).margin(1e-12));
}

TEST_CASE("text encoder rejects empty segments and out-of-vocab ids", "[encoders]") {
  Rng rng(2);
  TextEncoderParams p = text_params(12, 8, rng);
  REQUIRE_THROWS_AS(encode_text({}, p), Error);
  REQUIRE_THROWS_AS(encode_text({12}, p), Error);
  REQUIRE_THROWS_AS(encode_text({-1}, p), Error);
}

TEST_CASE("different segments map to different embeddings under random init", "[encoders]") {
  Rng rng(3);
  TextEncoderParams p = text_params(32, 16, rng);
  int collisions = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> a, b;
    for (int i = 0; i < 3; ++i) a.push_back(static_cast<int>(rng.below(32)));
    do {
      b.clear();
      for (int i = 0; i < 3; ++i) b.push_back(static_cast<int>(rng.below(32)));
    } while (b == a);
    Tensor ea = encode_text(a, p);
    Tensor eb = encode_text(b, p);
    bool equal = true;
    for (std::size_t i = 0; i < 16 && equal; ++i) equal = (ea.at(i) == eb.at(i));
    collisions += equal ? 1 : 0;
  }
  REQUIRE(collisions == 0);
}

TEST_CASE("text encoder gradients match finite differences", "[encoders]") {
  Rng rng(4);
  TextEncoderParams p = text_params(12, 6, rng);
  std::vector<int> seg{3, 5, 5, 9};
  auto loss = [&] {
    Tensor e = encode_text(seg, p);
    return sum_all(mul(e, e));
  };
  REQUIRE(gradcheck(loss, p.parameters()) < 1e-5);

  p.use_positions = true;
  REQUIRE(gradcheck(loss, p.parameters()) < 1e-5);
}

TEST_CASE("position-aware mode distinguishes permuted segments", "[encoders]") {
  Rng rng(5);
  TextEncoderParams p = text_params(12, 8, rng);
  std::vector<int> ab{4, 7};
  std::vector<int> ba{7, 4};
  Tensor plain_ab = encode_text(ab, p);
  Tensor plain_ba = encode_text(ba, p);
  for (std::size_t i = 0; i < 8; ++i)
    REQUIRE(plain_ab.at(i) == Catch::Approx(plain_ba.at(i)).margin(1e-15));

  p.use_positions = true;
  Tensor pos_ab = encode_text(ab, p);
  Tensor pos_ba = encode_text(ba, p);
  bool any_diff = false;
  for (std::size_t i = 0; i < 8; ++i) any_diff = any_diff || (pos_ab.at(i) != pos_ba.at(i));
  REQUIRE(any_diff);
}

TEST_CASE("visual encoder: zero input with zero bias gives zero output", "[encoders]") {
  Rng rng(6);
  VisualEncoderParams p = VisualEncoderParams::init(4, 8, rng);
  for (std::size_t i = 0; i < p.bias.numel(); ++i) p.bias.at(i) = 0.0;
  Tensor out = encode_visual(std::vector<double>(4, 0.0), p);
  for (std::size_t i = 0; i < 8; ++i) REQUIRE(out.at(i) == 0.0);
}

TEST_CASE("visual encoder pre-activations are linear in the input", "[encoders]") {
  Rng rng(7);
  VisualEncoderParams p = VisualEncoderParams::init(4, 8, rng);
  std::vector<double> x{0.3, -0.7, 1.2, 0.1};
  std::vector<double> x2{0.6, -1.4, 2.4, 0.2};
  // Compare pre-relu activations directly through the projection.
  Tensor xa = Tensor::from(Shape{4}, x);
  Tensor xb = Tensor::from(Shape{4}, x2);
  Tensor pre_a = add(vecmat(xa, p.proj), p.bias);
  Tensor pre_b = add(vecmat(xb, p.proj), p.bias);
  for (std::size_t i = 0; i < 8; ++i)
    REQUIRE(pre_b.at(i) - p.bias.at(i) ==
            Catch::Approx(2.0 * (pre_a.at(i) - p.bias.at(i))).margin(1e-12));
}

TEST_CASE("visual encoder validates input length and differentiates", "[encoders]") {
  Rng rng(8);
  VisualEncoderParams p = VisualEncoderParams::init(4, 6, rng);
  REQUIRE_THROWS_AS(encode_visual(std::vector<double>(3, 0.0), p), Error);

  std::vector<double> x{0.5, -0.2, 0.9, 0.4};
  auto loss = [&] {
    Tensor e = encode_visual(x, p);
    return sum_all(mul(e, e));
  };
  REQUIRE(gradcheck(loss, p.parameters()) < 1e-5);
}

TEST_CASE("build_nodes stacks text rows first with matching tags", "[encoders]") {
  Rng rng(9);
  TextEncoderParams tp = text_params(12, 8, rng);
  VisualEncoderParams vp = VisualEncoderParams::init(3, 8, rng);
  Sample s;
  s.sample_id = "s0";
  s.text_segments = {{3, 4}, {5}};
  s.visual_segments = {{1.0, 0.1, 0.0}, {0.0, 1.0, 0.2}, {0.3, 0.0, 1.0}};
  NodeSet nodes = build_nodes(s, tp, vp);
  REQUIRE(nodes.embeddings.rows() == 5);
  REQUIRE(nodes.modality_tags == std::vector<std::uint8_t>{0, 0, 1, 1, 1});
  REQUIRE(nodes.num_text == 2);
  REQUIRE(nodes.num_visual == 3);

  // Row i is exactly the standalone encoding of segment i.
  Tensor t0 = encode_text(s.text_segments[0], tp);
  Tensor v2 = encode_visual(s.visual_segments[2], vp);
  for (std::size_t j = 0; j < 8; ++j) {
    REQUIRE(nodes.embeddings.at(0, j) == t0.at(j));
    REQUIRE(nodes.embeddings.at(4, j) == v2.at(j));
  }

  // Permuting visual segments permutes the rows identically.
  Sample sp = s;
  std::swap(sp.visual_segments[0], sp.visual_segments[2]);
  NodeSet permuted = build_nodes(sp, tp, vp);
  for (std::size_t j = 0; j < 8; ++j) {
    REQUIRE(permuted.embeddings.at(2, j) == nodes.embeddings.at(4, j));
    REQUIRE(permuted.embeddings.at(4, j) == nodes.embeddings.at(2, j));
    REQUIRE(permuted.embeddings.at(3, j) == nodes.embeddings.at(3, j));
  }

  Sample bad = s;
  bad.text_segments.clear();
  REQUIRE_THROWS_AS(build_nodes(bad, tp, vp), Error);
}
