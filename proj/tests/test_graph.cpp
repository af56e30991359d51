#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "cssgr/graph.hpp"
#include "support/test_support.hpp"

using namespace cssgr;
using test_support::gradcheck;
using test_support::random_tensor;

namespace {

// Independent similarity: textbook cosine written from scratch.
double oracle_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (std::sqrt(na) < 1e-12 || std::sqrt(nb) < 1e-12) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<double> row_of(const Tensor& m, std::size_t i) {
  std::vector<double> r(m.cols());
  for (std::size_t j = 0; j < m.cols(); ++j) r[j] = m.at(i, j);
  return r;
}

// Brute-force double loop over all ordered pairs.
Adjacency oracle_adjacency(const Tensor& nodes, double tau) {
  const std::size_t n = nodes.rows();
  Adjacency adj(n * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      adj[i * n + j] =
          (i != j && oracle_cosine(row_of(nodes, i), row_of(nodes, j)) >= tau) ? 1 : 0;
  return adj;
}

// Straight-loop re-derivation of one message-passing layer: per-node scores,
// per-neighborhood softmax, explicit weighted sums. No tensor ops.
std::vector<std::vector<double>> oracle_layer(const Tensor& h, const Adjacency& adj,
                                              const GnnLayerParams& p) {
  const std::size_t n = h.rows(), d = h.cols();
  auto apply_right = [&](const std::vector<double>& v, const Tensor& w) {
    std::vector<double> out(d, 0.0);
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t r = 0; r < d; ++r) out[c] += v[r] * w.at(r, c);
    return out;
  };
  std::vector<std::vector<double>> q(n), k(n);
  for (std::size_t i = 0; i < n; ++i) {
    q[i] = apply_right(row_of(h, i), p.attn_q);
    k[i] = apply_right(row_of(h, i), p.attn_k);
  }
  std::vector<std::vector<double>> out(n, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> nbrs;
    for (std::size_t j = 0; j < n; ++j)
      if (adj[i * n + j]) nbrs.push_back(j);
    std::vector<double> alpha(nbrs.size(), 0.0);
    if (!nbrs.empty()) {
      std::vector<double> sc(nbrs.size());
      double mx = -1e300;
      for (std::size_t t = 0; t < nbrs.size(); ++t) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += q[i][c] * k[nbrs[t]][c];
        sc[t] = s / std::sqrt(static_cast<double>(d));
        mx = std::max(mx, sc[t]);
      }
      double z = 0.0;
      for (std::size_t t = 0; t < nbrs.size(); ++t) {
        alpha[t] = std::exp(sc[t] - mx);
        z += alpha[t];
      }
      for (double& a : alpha) a /= z;
    }
    std::vector<double> acc(d, 0.0);
    for (std::size_t t = 0; t < nbrs.size(); ++t) {
      std::vector<double> msg = apply_right(row_of(h, nbrs[t]), p.w1);
      for (std::size_t c = 0; c < d; ++c) acc[c] += alpha[t] * msg[c];
    }
    std::vector<double> self = apply_right(row_of(h, i), p.w2);
    for (std::size_t c = 0; c < d; ++c) out[i][c] = std::max(0.0, acc[c] + self[c]);
  }
  return out;
}

}  // namespace

TEST_CASE("identical nonzero rows give the complete graph minus diagonal", "[graph]") {
  Tensor nodes(Shape{4, 3});
  for (std::size_t i = 0; i < 4; ++i) {
    nodes.at(i, 0) = 1.0;
    nodes.at(i, 1) = 2.0;
    nodes.at(i, 2) = -1.0;
  }
  Adjacency adj = build_adjacency(nodes, 0.5);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) REQUIRE(adj[i * 4 + j] == (i == j ? 0 : 1));
}

TEST_CASE("adjacency matches the brute-force oracle on random instances", "[graph]") {
  Rng rng(21);
  for (int trial = 0; trial < 120; ++trial) {
    const std::size_t n = 2 + rng.below(19);  // up to 20 nodes
    Tensor nodes = random_tensor({n, 4}, rng, -1.0, 1.0, false);
    const double tau = rng.uniform(-0.9, 0.9);
    REQUIRE(build_adjacency(nodes, tau) == oracle_adjacency(nodes, tau));
  }
}

TEST_CASE("adjacency is symmetric with a zero diagonal, ties included", "[graph]") {
  Rng rng(22);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(7);
    Tensor nodes = random_tensor({n, 5}, rng, -1.0, 1.0, false);
    Adjacency adj = build_adjacency(nodes, 0.5);
    for (std::size_t i = 0; i < n; ++i) {
      REQUIRE(adj[i * n + i] == 0);
      for (std::size_t j = 0; j < n; ++j) REQUIRE(adj[i * n + j] == adj[j * n + i]);
    }
  }
  // Exact tie at the threshold keeps the edge.
  Tensor pair(Shape{2, 2});
  pair.at(0, 0) = 1.0;
  pair.at(0, 1) = 0.0;
  pair.at(1, 0) = 1.0;
  pair.at(1, 1) = 1.0;  // cos = 1/sqrt(2)
  const double tau = 1.0 / std::sqrt(2.0);
  Adjacency adj = build_adjacency(pair, cosine_raw(pair.data().data(), pair.data().data() + 2, 2));
  REQUIRE(adj[1] == 1);
  (void)tau;

  REQUIRE_THROWS_AS(build_adjacency(pair, 1.5), Error);
}

TEST_CASE("attention over a single neighbor is exactly one", "[graph]") {
  Rng rng(23);
  Tensor h = random_tensor({3, 4}, rng);
  GnnLayerParams p = GnnLayerParams::init(4, rng);
  // Node 0 <-> node 1 only; node 2 isolated.
  Adjacency adj(9, 0);
  adj[0 * 3 + 1] = adj[1 * 3 + 0] = 1;
  Tensor alpha = attention_coefficients(h, adj, p);
  REQUIRE(alpha.at(0, 1) == 1.0);
  REQUIRE(alpha.at(0, 0) == 0.0);
  REQUIRE(alpha.at(0, 2) == 0.0);
  for (std::size_t j = 0; j < 3; ++j) REQUIRE(alpha.at(2, j) == 0.0);
}

TEST_CASE("identical neighbor states attract uniform attention", "[graph]") {
  Rng rng(24);
  Tensor h(Shape{4, 5});
  // Rows 1..3 identical, row 0 distinct.
  for (std::size_t j = 0; j < 5; ++j) {
    h.at(0, j) = rng.uniform(-1.0, 1.0);
    const double v = rng.uniform(-1.0, 1.0);
    h.at(1, j) = v;
    h.at(2, j) = v;
    h.at(3, j) = v;
  }
  GnnLayerParams p = GnnLayerParams::init(5, rng);
  Adjacency adj(16, 0);
  for (std::size_t j = 1; j < 4; ++j) {
    adj[0 * 4 + j] = 1;
    adj[j * 4 + 0] = 1;
  }
  Tensor alpha = attention_coefficients(h, adj, p);
  for (std::size_t j = 1; j < 4; ++j)
    REQUIRE(alpha.at(0, j) == Catch::Approx(1.0 / 3.0).margin(1e-12));
}

TEST_CASE("attention rows over nonempty neighborhoods sum to one", "[graph]") {
  Rng rng(25);
  for (int trial = 0; trial < 30; ++trial) {
    Tensor h = random_tensor({6, 8}, rng);
    GnnLayerParams p = GnnLayerParams::init(8, rng);
    Adjacency adj = build_adjacency(h, rng.uniform(-0.5, 0.5));
    Tensor alpha = attention_coefficients(h, adj, p);
    for (std::size_t i = 0; i < 6; ++i) {
      bool any = false;
      double sum = 0.0;
      for (std::size_t j = 0; j < 6; ++j) {
        if (adj[i * 6 + j]) {
          any = true;
        } else {
          REQUIRE(alpha.at(i, j) == 0.0);
        }
        sum += alpha.at(i, j);
      }
      if (any) REQUIRE(std::fabs(sum - 1.0) < 1e-9);
      else REQUIRE(sum == 0.0);
    }
  }
}

TEST_CASE("message passing matches the straight-loop oracle", "[graph]") {
  Rng rng(26);
  for (int trial = 0; trial < 120; ++trial) {
    const std::size_t n = 2 + rng.below(5);
    const std::size_t d = 3 + rng.below(4);
    Tensor h = random_tensor({n, d}, rng, -1.0, 1.0, false);
    GnnLayerParams p = GnnLayerParams::init(d, rng);
    Adjacency adj = build_adjacency(h, rng.uniform(-0.8, 0.8));
    Tensor got = message_passing_layer(h, adj, p);
    auto want = oracle_layer(h, adj, p);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j)
        REQUIRE(got.at(i, j) == Catch::Approx(want[i][j]).margin(1e-12));
  }
}

TEST_CASE("empty adjacency reduces to the per-node self map", "[graph]") {
  Rng rng(27);
  Tensor h = random_tensor({4, 6}, rng);
  GnnLayerParams p = GnnLayerParams::init(6, rng);
  Adjacency none(16, 0);
  Tensor got = message_passing_layer(h, none, p);
  Tensor want = relu(matmul(h, p.w2));
  for (std::size_t i = 0; i < got.numel(); ++i)
    REQUIRE(got.at(i) == Catch::Approx(want.at(i)).margin(1e-15));
}

TEST_CASE("zero message map with identity self map passes nonnegative states through",
          "[graph]") {
  Rng rng(28);
  Tensor h = random_tensor({4, 4}, rng, 0.0, 1.0);
  GnnLayerParams p = GnnLayerParams::init(4, rng);
  for (std::size_t i = 0; i < 16; ++i) p.w1.at(i) = 0.0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) p.w2.at(i, j) = (i == j) ? 1.0 : 0.0;
  Adjacency adj = build_adjacency(h, -1.0);  // complete graph
  Tensor out = message_passing_layer(h, adj, p);
  for (std::size_t i = 0; i < 16; ++i) REQUIRE(out.at(i) == Catch::Approx(h.at(i)).margin(1e-15));
}

TEST_CASE("one layer is equivariant under node relabeling", "[graph]") {
  Rng rng(29);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 6, d = 5;
    Tensor h = random_tensor({n, d}, rng, -1.0, 1.0, false);
    GnnLayerParams p = GnnLayerParams::init(d, rng);
    std::vector<int> perm{0, 1, 2, 3, 4, 5};
    rng.shuffle(perm);
    Tensor hp(Shape{n, d});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) hp.at(i, j) = h.at(perm[i], j);
    const double tau = rng.uniform(-0.5, 0.5);
    Tensor out = message_passing_layer(h, build_adjacency(h, tau), p);
    Tensor outp = message_passing_layer(hp, build_adjacency(hp, tau), p);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j)
        REQUIRE(outp.at(i, j) == Catch::Approx(out.at(perm[i], j)).margin(1e-12));
  }
}

TEST_CASE("dynamic update equals fresh construction on the same states", "[graph]") {
  Rng rng(30);
  Tensor h = random_tensor({5, 4}, rng, -1.0, 1.0, false);
  REQUIRE(dynamic_update(h, 0.5) == build_adjacency(h, 0.5));
  for (int trial = 0; trial < 40; ++trial) {
    Tensor states = random_tensor({4 + rng.below(4), 4}, rng, -2.0, 2.0, false);
    const double tau = rng.uniform(-0.9, 0.9);
    REQUIRE(dynamic_update(states, tau) == oracle_adjacency(states, tau));
  }
}

TEST_CASE("path adjacency links consecutive nodes only", "[graph]") {
  Adjacency adj = path_adjacency(4);
  Adjacency want{0, 1, 0, 0,  //
                 1, 0, 1, 0,  //
                 0, 1, 0, 1,  //
                 0, 0, 1, 0};
  REQUIRE(adj == want);
  REQUIRE(path_adjacency(1) == Adjacency{0});
}

TEST_CASE("gradients through attention and both maps match finite differences", "[graph]") {
  Rng rng(31);
  Tensor h = random_tensor({4, 5}, rng);
  GnnLayerParams p = GnnLayerParams::init(5, rng);
  Adjacency adj = build_adjacency(h, 0.2);
  auto loss = [&] {
    Tensor out = message_passing_layer(h, adj, p);
    return sum_all(mul(out, out));
  };
  std::vector<Tensor> params = p.parameters();
  params.push_back(h);
  REQUIRE(gradcheck(loss, params) < 1e-5);
}
