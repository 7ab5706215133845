#include <cmath>
#include <vector>

#include "distiltag/crf.h"
#include "distiltag/error.h"
#include "distiltag/graph.h"
#include "distiltag/rng.h"
#include "doctest.h"
#include "oracles.h"

using namespace distiltag;
using distiltag::testing::brute_best_path;
using distiltag::testing::brute_log_partition;
using distiltag::testing::path_score;

namespace {

struct Instance {
  std::size_t length;
  std::size_t k;
  std::vector<double> em;
  std::vector<double> trans;
};

Instance random_instance(Rng& rng, std::size_t max_len, std::size_t max_k, double scale = 2.0) {
  Instance in;
  in.length = 1 + rng.below(max_len);
  in.k = 1 + rng.below(max_k);
  in.em.resize(in.length * in.k);
  in.trans.resize((in.k + 2) * (in.k + 2));
  for (auto& v : in.em) v = rng.uniform(-scale, scale);
  for (auto& v : in.trans) v = rng.uniform(-scale, scale);
  return in;
}

}  // namespace

TEST_CASE("log partition matches exhaustive enumeration") {
  Rng rng(3);
  for (int n = 0; n < 300; ++n) {
    const auto in = random_instance(rng, 5, 4);
    const double got = crf_log_partition<double>(in.em, in.length, in.k, in.trans);
    CHECK(got == doctest::Approx(brute_log_partition(in.em, in.length, in.k, in.trans)).epsilon(1e-12));
  }
}

TEST_CASE("viterbi matches brute-force argmax") {
  Rng rng(4);
  for (int n = 0; n < 300; ++n) {
    const auto in = random_instance(rng, 5, 4);
    CHECK(viterbi_decode<double>(in.em, in.length, in.k, in.trans) ==
          brute_best_path(in.em, in.length, in.k, in.trans));
  }
}

TEST_CASE("viterbi breaks exact ties toward the lower tag") {
  const std::size_t k = 3, length = 3;
  const std::vector<double> em(length * k, 0.0);
  const std::vector<double> trans((k + 2) * (k + 2), 0.0);
  CHECK(viterbi_decode<double>(em, length, k, trans) == std::vector<int>{0, 0, 0});
}

TEST_CASE("path score and nll agree with the definitions") {
  Rng rng(5);
  for (int n = 0; n < 50; ++n) {
    const auto in = random_instance(rng, 5, 4);
    std::vector<int> tags(in.length);
    for (auto& t : tags) t = static_cast<int>(rng.below(in.k));
    const double score = crf_path_score<double>(in.em, in.length, in.k, in.trans, tags);
    CHECK(score == doctest::Approx(static_cast<double>(path_score(in.em, in.k, in.trans, tags))));
    const double nll = crf_nll<double>(in.em, in.length, in.k, in.trans, tags);
    CHECK(nll == doctest::Approx(brute_log_partition(in.em, in.length, in.k, in.trans) - score));
    CHECK(nll >= -1e-12);
  }
}

TEST_CASE("single tag: nll is zero") {
  const std::vector<double> em{0.3, -1.0, 2.0};
  const std::vector<double> trans(9, 0.5);
  CHECK(crf_nll<double>(em, 3, 1, trans, std::vector<int>{0, 0, 0}) == doctest::Approx(0.0));
}

TEST_CASE("nll gradient matches central differences") {
  Rng rng(6);
  for (int n = 0; n < 40; ++n) {
    auto in = random_instance(rng, 4, 4);
    std::vector<int> tags(in.length);
    for (auto& t : tags) t = static_cast<int>(rng.below(in.k));
    std::vector<double> d_em(in.em.size(), 0.0), d_tr(in.trans.size(), 0.0);
    crf_nll_backward<double>(in.em, in.length, in.k, in.trans, tags, 1.0, d_em, d_tr);
    const double h = 1e-6;
    auto numeric = [&](std::vector<double>& x, std::size_t i) {
      const double saved = x[i];
      x[i] = saved + h;
      const double plus = crf_nll<double>(in.em, in.length, in.k, in.trans, tags);
      x[i] = saved - h;
      const double minus = crf_nll<double>(in.em, in.length, in.k, in.trans, tags);
      x[i] = saved;
      return (plus - minus) / (2 * h);
    };
    for (std::size_t i = 0; i < in.em.size(); ++i) CHECK(d_em[i] == doctest::Approx(numeric(in.em, i)).epsilon(1e-6));
    for (std::size_t i = 0; i < in.trans.size(); ++i) CHECK(d_tr[i] == doctest::Approx(numeric(in.trans, i)).epsilon(1e-6));
  }
}

TEST_CASE("emission gradient rows are marginals minus gold indicators") {
  Rng rng(7);
  const auto in = random_instance(rng, 5, 4);
  std::vector<int> tags(in.length, 0);
  std::vector<double> d_em(in.em.size(), 0.0);
  crf_nll_backward<double>(in.em, in.length, in.k, in.trans, tags, 1.0, d_em, {});
  for (std::size_t t = 0; t < in.length; ++t) {
    double row = 0;
    for (std::size_t j = 0; j < in.k; ++j) row += d_em[t * in.k + j];
    // marginals sum to one, the gold indicator removes one
    CHECK(row == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("crf errors") {
  const std::vector<double> trans(16, 0.0);
  const std::vector<double> em(4, 0.0);
  CHECK_THROWS_AS(crf_log_partition<double>({}, 0, 2, trans), Error);
  try {
    crf_log_partition<double>({}, 0, 2, trans);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kEmptySequence);
  }
  try {
    crf_nll<double>(em, 2, 2, trans, std::vector<int>{0, 2});
    FAIL("expected an index error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kIndex);
  }
  try {
    crf_nll<double>(em, 2, 2, std::vector<double>(9, 0.0), std::vector<int>{0, 1});
    FAIL("expected a dimension error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDimension);
  }
}

TEST_CASE("graph crf_nll averages over sequences") {
  Rng rng(8);
  const std::size_t k = 3;
  Tensor<double> em({7, k});
  for (auto& v : em.values()) v = rng.uniform(-1, 1);
  Tensor<double> tr({k + 2, k + 2});
  for (auto& v : tr.values()) v = rng.uniform(-1, 1);
  const std::vector<SequenceTarget> seqs{{0, 3, {0, 1, 2}}, {3, 4, {2, 2, 1, 0}}};
  Graph<double> g(false);
  const double got = g.crf_nll(em, tr, seqs).item();
  const auto ev = em.values();
  const double a = crf_nll<double>(ev.subspan(0, 9), 3, k, tr.values(), seqs[0].tags);
  const double b = crf_nll<double>(ev.subspan(9, 12), 4, k, tr.values(), seqs[1].tags);
  CHECK(got == doctest::Approx((a + b) / 2));
}
