#include <doctest.h>

#include <algorithm>
#include <set>

#include "fscil/common.hpp"
#include "fscil/protocol.hpp"

using namespace fscil;

namespace {

// Independent id source with deterministic, disjoint per-class id blocks.
struct FakeSource : ClassIndexSource {
  std::vector<std::vector<int>> train, test;

  FakeSource(int classes, int train_per_class, int test_per_class) {
    int next = 0;
    train.resize(classes);
    test.resize(classes);
    for (int c = 0; c < classes; ++c)
      for (int i = 0; i < train_per_class; ++i) train[c].push_back(next++);
    for (int c = 0; c < classes; ++c)
      for (int i = 0; i < test_per_class; ++i) test[c].push_back(next++);
  }

  int source_num_classes() const override { return static_cast<int>(train.size()); }
  const std::vector<int>& train_ids_of_class(int c) const override { return train[c]; }
  const std::vector<int>& test_ids_of_class(int c) const override { return test[c]; }
};

ProtocolConfig small_cfg() {
  ProtocolConfig cfg;
  cfg.total_classes = 10;
  cfg.base_count = 6;
  cfg.ways = 2;
  cfg.num_sessions = 2;
  cfg.shots = 3;
  cfg.val_fraction = 0.1;
  cfg.seed = 7;
  return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("protocol");

TEST_CASE("default configuration covers one hundred classes") {
  ProtocolConfig cfg;
  FscilProtocol p = build_protocol(cfg);
  CHECK(p.total_classes == 100);
  CHECK(p.base_classes.size() == 60);
  CHECK(p.num_sessions() == 8);
  for (const auto& s : p.sessions) CHECK(s.size() == 5);
  CHECK(p.base_classes.front() == 0);
  CHECK(p.base_classes.back() == 59);
  CHECK(p.sessions[0] == std::vector<int>{60, 61, 62, 63, 64});
  CHECK(p.sessions[7] == std::vector<int>{95, 96, 97, 98, 99});
}

TEST_CASE("class partition counts must add up") {
  ProtocolConfig cfg;
  cfg.num_sessions = 7;  // 60 + 35 != 100
  CHECK_THROWS_AS(build_protocol(cfg), ValidationError);
}

TEST_CASE("seeded permutation partitions all classes exactly once") {
  ProtocolConfig cfg;
  cfg.class_order = "seeded_permutation";
  cfg.seed = 3;
  FscilProtocol p = build_protocol(cfg);
  std::set<int> all(p.base_classes.begin(), p.base_classes.end());
  for (const auto& s : p.sessions) all.insert(s.begin(), s.end());
  CHECK(all.size() == 100);
  CHECK(*all.begin() == 0);
  CHECK(*all.rbegin() == 99);

  FscilProtocol q = build_protocol(cfg);
  CHECK(p.base_classes == q.base_classes);
  cfg.seed = 4;
  FscilProtocol r = build_protocol(cfg);
  CHECK(p.base_classes != r.base_classes);
}

TEST_CASE("seen and incremental class lists grow per session") {
  FscilProtocol p = build_protocol(ProtocolConfig{});
  CHECK(p.seen_classes(0).size() == 60);
  CHECK(p.incremental_classes(0).empty());
  CHECK(p.seen_classes(3).size() == 75);
  CHECK(p.incremental_classes(3).size() == 15);
  CHECK(p.seen_classes(8).size() == 100);
  CHECK(p.incremental_classes(8).size() == 40);
}

TEST_CASE("hash tracks protocol content") {
  ProtocolConfig cfg;
  FscilProtocol a = build_protocol(cfg);
  FscilProtocol b = build_protocol(cfg);
  CHECK(a.hash() == b.hash());
  cfg.shots = 1;
  FscilProtocol c = build_protocol(cfg);
  CHECK(a.hash() != c.hash());
}

TEST_CASE("base session splits each class into disjoint train and val") {
  auto cfg = small_cfg();
  FscilProtocol p = build_protocol(cfg);
  FakeSource src(10, 20, 5);
  SessionView v = session_view(p, src, 0);
  CHECK(v.session_index == 0);
  CHECK(v.seen_classes.size() == 6);
  // 10% of 20 per class held out
  CHECK(v.val_indices.size() == 6 * 2);
  CHECK(v.train_indices.size() == 6 * 18);

  std::set<int> train_set(v.train_indices.begin(), v.train_indices.end());
  std::set<int> val_set(v.val_indices.begin(), v.val_indices.end());
  CHECK(train_set.size() == v.train_indices.size());
  for (int id : v.val_indices) CHECK(!train_set.count(id));

  // union recovers exactly the base-class train ids
  std::set<int> expect;
  for (int c = 0; c < 6; ++c)
    expect.insert(src.train[c].begin(), src.train[c].end());
  std::set<int> got = train_set;
  got.insert(val_set.begin(), val_set.end());
  CHECK(got == expect);

  CHECK(std::is_sorted(v.train_indices.begin(), v.train_indices.end()));
  CHECK(std::is_sorted(v.val_indices.begin(), v.val_indices.end()));

  SessionView again = session_view(p, src, 0);
  CHECK(again.train_indices == v.train_indices);
  CHECK(again.val_indices == v.val_indices);
}

TEST_CASE("different seeds give different base splits") {
  auto cfg = small_cfg();
  FakeSource src(10, 20, 5);
  FscilProtocol p1 = build_protocol(cfg);
  cfg.seed = 8;
  FscilProtocol p2 = build_protocol(cfg);
  CHECK(session_view(p1, src, 0).val_indices != session_view(p2, src, 0).val_indices);
}

TEST_CASE("incremental sessions provide exactly the configured shots") {
  auto cfg = small_cfg();
  FscilProtocol p = build_protocol(cfg);
  FakeSource src(10, 20, 5);
  SessionView v = session_view(p, src, 1);
  CHECK(v.seen_classes.size() == 8);
  CHECK(v.val_indices.empty());
  CHECK(v.train_indices.size() == 2 * 3);  // 2 new classes, 3 shots
  for (int id : v.train_indices) {
    int cls = -1;
    for (int c = 0; c < 10; ++c)
      if (std::count(src.train[c].begin(), src.train[c].end(), id)) cls = c;
    CHECK((cls == 6 || cls == 7));
  }
  SessionView again = session_view(p, src, 1);
  CHECK(again.train_indices == v.train_indices);
}

TEST_CASE("too few examples for the shot count is a data error") {
  auto cfg = small_cfg();
  FscilProtocol p = build_protocol(cfg);
  FakeSource src(10, 2, 5);  // 2 < 3 shots
  CHECK_THROWS_AS(session_view(p, src, 1), InsufficientDataError);
}

TEST_CASE("accumulated train set unions the per-session train parts") {
  auto cfg = small_cfg();
  FscilProtocol p = build_protocol(cfg);
  FakeSource src(10, 20, 5);
  SessionView acc = accumulated_train_set(p, src, 2);
  std::set<int> expect;
  for (int s = 0; s <= 2; ++s) {
    SessionView v = session_view(p, src, s);
    expect.insert(v.train_indices.begin(), v.train_indices.end());
  }
  std::set<int> got(acc.train_indices.begin(), acc.train_indices.end());
  CHECK(got == expect);
  CHECK(acc.train_indices.size() == expect.size());
  CHECK(acc.seen_classes.size() == 10);
  // the base validation split carries through unchanged
  CHECK(acc.val_indices == session_view(p, src, 0).val_indices);
}

TEST_CASE("cumulative test ids cover exactly the seen classes") {
  auto cfg = small_cfg();
  FscilProtocol p = build_protocol(cfg);
  FakeSource src(10, 20, 5);
  auto ids0 = cumulative_test_ids(p, src, 0);
  CHECK(ids0.size() == 6 * 5);
  auto ids2 = cumulative_test_ids(p, src, 2);
  CHECK(ids2.size() == 10 * 5);
  std::set<int> expect;
  for (int c = 0; c < 6; ++c) expect.insert(src.test[c].begin(), src.test[c].end());
  CHECK(std::set<int>(ids0.begin(), ids0.end()) == expect);
}

TEST_CASE("session index bounds are validated") {
  auto cfg = small_cfg();
  FscilProtocol p = build_protocol(cfg);
  FakeSource src(10, 20, 5);
  CHECK_THROWS_AS(session_view(p, src, 3), ContractError);
  CHECK_THROWS_AS(session_view(p, src, -1), ContractError);
}

TEST_SUITE_END();
