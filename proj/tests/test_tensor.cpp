#include <algorithm>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "sntf/tensor.hpp"
#include "support.hpp"

using namespace sntf;

namespace {

SparseTensorData parse(const std::string& text) {
  std::istringstream in(text);
  return parse_tensor(in);
}

SparseTensorData numbered(std::size_t n) {
  std::vector<std::uint32_t> flat;
  std::vector<double> vals;
  for (std::size_t i = 0; i < n; ++i) {
    flat.push_back(static_cast<std::uint32_t>(i));
    flat.push_back(static_cast<std::uint32_t>(i % 3));
    vals.push_back(static_cast<double>(i));
  }
  return SparseTensorData({static_cast<std::uint32_t>(n), 3}, flat, vals);
}

}  // namespace

TEST(Parse, HeaderGivesDims) {
  const auto t = parse("2;3,4\n0,0,1.5\n2,3,-0.5\n");
  EXPECT_EQ(t.num_modes(), 2u);
  EXPECT_EQ(t.dims(), (std::vector<std::uint32_t>{3, 4}));
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t.value(0), 1.5);
  EXPECT_EQ(t.value(1), -0.5);
  EXPECT_EQ(t.index(1)[1], 3u);
}

TEST(Parse, HeaderlessInfersDims) {
  const auto t = parse("1,1,0.0\n");
  EXPECT_EQ(t.dims(), (std::vector<std::uint32_t>{2, 2}));
}

TEST(Parse, IndexBeyondHeaderIsBoundsError) {
  EXPECT_THROW(parse("2;3,4\n5,0,1.0\n"), BoundsError);
}

TEST(Parse, CommentsAndBlankLinesSkipped) {
  const auto t = parse("# entries\n\n2;2,2\n  0 , 1 , 2.5 \n# tail\n");
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t.value(0), 2.5);
}

TEST(Parse, MalformedLineReportsLineNumber) {
  try {
    parse("2;3,3\n0,0,1\n0,x,2\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(Parse, ArityMismatchIsParseError) {
  EXPECT_THROW(parse("0,0,1\n0,0,0,1\n"), ParseError);
  EXPECT_THROW(parse("0,1\n"), ParseError);
}

TEST(Parse, NonFiniteValueRejected) {
  EXPECT_THROW(parse("0,0,nan\n"), ParseError);
  EXPECT_THROW(parse("0,0,inf\n"), ParseError);
}

TEST(Parse, EmptyInputIsDataError) { EXPECT_THROW(parse("# nothing\n"), DataError); }

TEST(Parse, BadHeaderRejected) {
  EXPECT_THROW(parse("3;2,2\n"), ParseError);
  EXPECT_THROW(parse("2;0,2\n"), ParseError);
  EXPECT_THROW(parse("0,0,1\n2;2,2\n"), ParseError);
}

TEST(Tensor, ConstructorValidates) {
  EXPECT_THROW(SparseTensorData({3}, {0}, {1.0}), DataError);
  EXPECT_THROW(SparseTensorData({2, 2}, {0, 2}, {1.0}), BoundsError);
  EXPECT_THROW(SparseTensorData({2, 2}, {0, 1}, {1.0, 2.0}), DataError);
  EXPECT_THROW(SparseTensorData({2, 2}, {0, 1}, {std::nan("")}), DataError);
}

TEST(Tensor, DensityOfSparseTensor) {
  // 12,000 distinct present cells in 200 x 100 x 200.
  auto rng = make_rng(1);
  IndexSet cells;
  std::vector<std::uint32_t> flat;
  while (cells.size() < 12000) {
    Index idx{static_cast<std::uint32_t>(uniform_index(rng, 200)), static_cast<std::uint32_t>(uniform_index(rng, 100)),
              static_cast<std::uint32_t>(uniform_index(rng, 200))};
    if (cells.insert(idx).second) flat.insert(flat.end(), idx.begin(), idx.end());
  }
  const SparseTensorData t({200, 100, 200}, flat, std::vector<double>(12000, 1.0));
  EXPECT_NEAR(t.density(), 0.003, 1e-12);
}

TEST(Tensor, RoundTripIsExact) {
  auto rng = make_rng(2);
  std::vector<std::uint32_t> flat;
  std::vector<double> vals;
  for (int n = 0; n < 200; ++n) {
    flat.push_back(static_cast<std::uint32_t>(uniform_index(rng, 7)));
    flat.push_back(static_cast<std::uint32_t>(uniform_index(rng, 9)));
    flat.push_back(static_cast<std::uint32_t>(uniform_index(rng, 5)));
    vals.push_back(standard_normal(rng) * std::pow(10.0, static_cast<double>(uniform_index(rng, 20)) - 10.0));
  }
  const SparseTensorData t({7, 9, 5}, flat, vals);
  std::stringstream ss;
  write_tensor(ss, t);
  const auto back = parse_tensor(ss);
  EXPECT_EQ(back.dims(), t.dims());
  EXPECT_EQ(back.flat_indices(), t.flat_indices());
  EXPECT_EQ(back.values(), t.values());
}

TEST(Tensor, SaveAndLoadFile) {
  const auto dir = fixtures::scratch_dir("tensor_io");
  const auto t = parse("2;4,4\n0,1,0.25\n3,3,-7\n");
  save_tensor(dir / "t.csv", t);
  EXPECT_FALSE(std::filesystem::exists(dir / "t.csv.tmp"));
  const auto back = load_tensor(dir / "t.csv");
  EXPECT_EQ(back.values(), t.values());
  EXPECT_THROW(load_tensor(dir / "missing.csv"), DataError);
  std::filesystem::remove_all(dir);
}

TEST(Split, CardinalityAndDisjoint) {
  const auto data = numbered(10);
  const auto s = split_train_test(data, {0.8, 5});
  EXPECT_EQ(s.train.size(), 8u);
  EXPECT_EQ(s.test.size(), 2u);
  std::set<double> a(s.train.values().begin(), s.train.values().end());
  for (double v : s.test.values()) EXPECT_FALSE(a.contains(v));
}

TEST(Split, SameSeedSameSplit) {
  const auto data = numbered(50);
  const auto a = split_train_test(data, {0.8, 9});
  const auto b = split_train_test(data, {0.8, 9});
  EXPECT_EQ(a.train.values(), b.train.values());
  EXPECT_EQ(a.test.values(), b.test.values());
  const auto c = split_train_test(data, {0.8, 10});
  EXPECT_NE(a.test.values(), c.test.values());
}

TEST(Split, IsPartitionByPosition) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto data = numbered(37);
    const auto s = split_train_test(data, {0.3 + 0.02 * static_cast<double>(seed), seed});
    std::vector<double> all = s.train.values();
    all.insert(all.end(), s.test.values().begin(), s.test.values().end());
    std::sort(all.begin(), all.end());
    EXPECT_EQ(all, data.values());
  }
}

TEST(Split, RejectsDegenerateInput) {
  EXPECT_THROW(split_train_test(numbered(1), {0.8, 0}), InsufficientDataError);
  EXPECT_THROW(split_train_test(numbered(10), {1.0, 0}), DataError);
  EXPECT_THROW(split_train_test(numbered(10), {0.0, 0}), DataError);
}

TEST(Reindex, SingleEntry) {
  const std::vector<std::uint32_t> flat{1, 3, 5};
  const auto m = reindex_active_nodes(flat, 3);
  EXPECT_EQ(m.active_dims(), (std::vector<std::uint32_t>{1, 1, 1}));
  EXPECT_EQ(m.lookup(0, 1), 0u);
  EXPECT_EQ(m.lookup(1, 3), 0u);
  EXPECT_EQ(m.lookup(2, 5), 0u);
}

TEST(Reindex, CountsAndDuplicates) {
  EXPECT_EQ(reindex_active_nodes(std::vector<std::uint32_t>{0, 0, 0, 1}, 2).active_dims(),
            (std::vector<std::uint32_t>{1, 2}));
  EXPECT_EQ(reindex_active_nodes(std::vector<std::uint32_t>{2, 2, 2, 2}, 2).active_dims(),
            (std::vector<std::uint32_t>{1, 1}));
  EXPECT_THROW(reindex_active_nodes(std::vector<std::uint32_t>{}, 2), InsufficientDataError);
}

TEST(Reindex, UnseenNodeMapsToAggregatedSlot) {
  const auto m = reindex_active_nodes(std::vector<std::uint32_t>{4, 7, 9, 7}, 2);
  bool unseen = false;
  EXPECT_EQ(m.lookup(0, 4, &unseen), 0u);
  EXPECT_FALSE(unseen);
  EXPECT_EQ(m.lookup(0, 5, &unseen), 2u);
  EXPECT_TRUE(unseen);
}

TEST(Reindex, IsBijectionOnObservedNodes) {
  auto rng = make_rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::uint32_t> flat;
    for (int n = 0; n < 60; ++n)
      for (int k = 0; k < 3; ++k) flat.push_back(static_cast<std::uint32_t>(uniform_index(rng, 1000)));
    const auto m = reindex_active_nodes(flat, 3);
    for (std::size_t k = 0; k < 3; ++k) {
      std::set<std::uint32_t> observed;
      for (std::size_t p = k; p < flat.size(); p += 3) observed.insert(flat[p]);
      ASSERT_EQ(m.to_original[k].size(), observed.size());
      std::set<std::uint32_t> images;
      for (auto node : observed) {
        const auto a = m.lookup(k, node);
        EXPECT_LT(a, observed.size());
        EXPECT_EQ(m.to_original[k][a], node);
        images.insert(a);
      }
      EXPECT_EQ(images.size(), observed.size());
    }
  }
}

TEST(Negatives, ForcedComplement) {
  IndexSet observed{{0, 0}};
  auto neg = sample_negatives({2, 2}, observed, 3, 1);
  std::sort(neg.begin(), neg.end());
  EXPECT_EQ(neg, (std::vector<Index>{{0, 1}, {1, 0}, {1, 1}}));
}

TEST(Negatives, FullTensorIsCapacityError) {
  IndexSet observed{{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  EXPECT_THROW(sample_negatives({2, 2}, observed, 1, 1), CapacityError);
}

TEST(Negatives, SparseRegimeNoCollisionsNoDuplicates) {
  auto rng = make_rng(4);
  IndexSet observed;
  while (observed.size() < 10)
    observed.insert({static_cast<std::uint32_t>(uniform_index(rng, 10)),
                     static_cast<std::uint32_t>(uniform_index(rng, 10)),
                     static_cast<std::uint32_t>(uniform_index(rng, 10))});
  const auto neg = sample_negatives({10, 10, 10}, observed, 10, 7);
  ASSERT_EQ(neg.size(), 100u);
  IndexSet seen;
  for (const auto& idx : neg) {
    EXPECT_FALSE(observed.contains(idx));
    EXPECT_TRUE(seen.insert(idx).second);
    for (auto v : idx) EXPECT_LT(v, 10u);
  }
}

TEST(Negatives, DenseRegimeNoCollisionsNoDuplicates) {
  IndexSet observed;
  for (std::uint32_t i = 0; i < 6; ++i)
    for (std::uint32_t j = 0; j < 5; ++j)
      if ((i + j) % 2 == 0) observed.insert({i, j});
  const auto neg = sample_unobserved({6, 5}, observed, 14, 3);
  ASSERT_EQ(neg.size(), 14u);
  IndexSet seen;
  for (const auto& idx : neg) {
    EXPECT_FALSE(observed.contains(idx));
    EXPECT_TRUE(seen.insert(idx).second);
  }
}

TEST(Negatives, DeterministicInSeed) {
  IndexSet observed{{0, 0, 0}};
  EXPECT_EQ(sample_unobserved({20, 20, 20}, observed, 50, 11), sample_unobserved({20, 20, 20}, observed, 50, 11));
  EXPECT_NE(sample_unobserved({20, 20, 20}, observed, 50, 11), sample_unobserved({20, 20, 20}, observed, 50, 12));
}
