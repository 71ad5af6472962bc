#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "fscil/common.hpp"
#include "fscil/data.hpp"

using namespace fscil;
namespace fs = std::filesystem;

namespace {

SyntheticSpec tiny_spec() {
  SyntheticSpec spec;
  spec.classes = 4;
  spec.train_per_class = {{0, 12}, {1, 12}, {2, 3}, {3, 3}};
  spec.test_per_class = 6;
  spec.channels = 2;
  spec.height = 4;
  spec.width = 4;
  spec.seed = 11;
  return spec;
}

fs::path temp_dir() {
  auto dir = fs::temp_directory_path() / "fscil_data_test";
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE_BEGIN("data");

TEST_CASE("synthetic generator honors shape and per-class counts") {
  auto ds = make_synthetic(tiny_spec());
  CHECK(ds->channels == 2);
  CHECK(ds->height == 4);
  CHECK(ds->width == 4);
  CHECK(ds->num_classes == 4);
  CHECK(ds->num_train() == 12 + 12 + 3 + 3);
  CHECK(ds->num_test() == 4 * 6);
  CHECK(ds->train_ids_of_class(0).size() == 12);
  CHECK(ds->train_ids_of_class(2).size() == 3);
  CHECK(ds->test_ids_of_class(3).size() == 6);
  for (int id : ds->train_ids_of_class(1)) {
    CHECK(ds->label(id) == 1);
    CHECK(!ds->is_test(id));
  }
  for (int id : ds->test_ids_of_class(1)) CHECK(ds->is_test(id));
}

TEST_CASE("synthetic generator is seed-deterministic") {
  auto a = make_synthetic(tiny_spec());
  auto b = make_synthetic(tiny_spec());
  auto spec = tiny_spec();
  spec.seed = 12;
  auto c = make_synthetic(spec);
  CHECK(a->copy_image(0) == b->copy_image(0));
  CHECK(a->copy_image(17) == b->copy_image(17));
  CHECK(a->copy_image(0) != c->copy_image(0));
}

TEST_CASE("synthetic classes have distinct means") {
  auto spec = tiny_spec();
  spec.noise = 0.0;
  auto ds = make_synthetic(spec);
  auto x0 = ds->copy_image(ds->train_ids_of_class(0)[0]);
  auto x1 = ds->copy_image(ds->train_ids_of_class(1)[0]);
  double diff = 0.0;
  for (size_t i = 0; i < x0.size(); ++i) diff += std::abs(x0[i] - x1[i]);
  CHECK(diff > 1.0);
  // zero noise collapses a class onto its mean
  auto y0 = ds->copy_image(ds->train_ids_of_class(0)[1]);
  CHECK(x0 == y0);
}

TEST_CASE("train views refuse ids outside their allowed set") {
  auto ds = make_synthetic(tiny_spec());
  std::vector<int> allowed = {0, 1, 2};
  TrainView view(ds, allowed);
  CHECK(view.size() == 3);
  CHECK(view.image(1) != nullptr);
  CHECK(view.label(2) == ds->label(2));
  CHECK_THROWS_AS(view.image(3), ContractError);       // train id, not allowed
  CHECK_THROWS_AS(view.label(100000), ContractError);  // out of range
  int test_id = ds->test_ids_of_class(0)[0];
  CHECK_THROWS_AS(view.image(test_id), ContractError);
  // a test id can never even enter a train view
  CHECK_THROWS_AS(TrainView(ds, {test_id}), ContractError);
}

TEST_CASE("access probe observes every pixel read with its kind") {
  auto ds = make_synthetic(tiny_spec());
  std::vector<std::pair<int, AccessKind>> log;
  ds->set_access_probe([&](int id, AccessKind k) { log.emplace_back(id, k); });
  TrainView view(ds, {0, 1});
  view.image(0);
  int test_id = ds->test_ids_of_class(0)[0];
  EvalView eval(ds, {test_id});
  eval.image(test_id);
  ds->image(1);
  REQUIRE(log.size() == 3);
  CHECK(log[0] == std::pair<int, AccessKind>{0, AccessKind::Train});
  CHECK(log[1] == std::pair<int, AccessKind>{test_id, AccessKind::Eval});
  CHECK(log[2] == std::pair<int, AccessKind>{1, AccessKind::Raw});
}

TEST_CASE("normalization whitens the reference ids per channel") {
  auto ds = make_synthetic(tiny_spec());
  std::vector<int> ref;
  for (int id = 0; id < ds->num_train(); ++id) ref.push_back(id);
  ds->normalize_with(ref);
  CHECK(ds->normalized);
  const int hw = ds->height * ds->width;
  for (int c = 0; c < ds->channels; ++c) {
    double sum = 0.0, ss = 0.0;
    for (int id : ref) {
      const float* px = ds->image(id);
      for (int i = 0; i < hw; ++i) {
        sum += px[c * hw + i];
        ss += static_cast<double>(px[c * hw + i]) * px[c * hw + i];
      }
    }
    double n = static_cast<double>(ref.size()) * hw;
    CHECK(std::abs(sum / n) < 1e-4);
    CHECK(ss / n == doctest::Approx(1.0).epsilon(1e-3));
  }
  CHECK_THROWS_AS(ds->normalize_with(ref), ContractError);
}

TEST_CASE("class statistics split head and tail by rule") {
  auto ds = make_synthetic(tiny_spec());
  std::vector<int> all_train;
  for (int id = 0; id < ds->num_train(); ++id) all_train.push_back(id);
  TrainView view(ds, all_train);

  auto counts = view.class_counts();
  CHECK(counts[0] == 12);
  CHECK(counts[2] == 3);

  ClassStats by_session = class_stats(view, TailRule::by_session(), {0, 1});
  CHECK(by_session.head_classes == std::set<int>{0, 1});
  CHECK(by_session.tail_classes == std::set<int>{2, 3});

  ClassStats by_threshold = class_stats(view, TailRule::by_threshold(10));
  CHECK(by_threshold.head_classes == std::set<int>{0, 1});
  CHECK(by_threshold.tail_classes == std::set<int>{2, 3});
}

TEST_CASE("ids_by_class groups the allowed ids") {
  auto ds = make_synthetic(tiny_spec());
  std::vector<int> all_train;
  for (int id = 0; id < ds->num_train(); ++id) all_train.push_back(id);
  TrainView view(ds, all_train);
  auto groups = view.ids_by_class();
  CHECK(groups.size() == 4);
  CHECK(groups[0].size() == 12);
  CHECK(groups[3].size() == 3);
  for (int id : groups[2]) CHECK(ds->label(id) == 2);
}

TEST_CASE("cifar reader decodes records byte for byte") {
  auto dir = temp_dir() / "cifar_ok";
  fs::create_directories(dir);
  // two train records, one test record, labels 7 and 3 and 7
  auto write_file = [&](const fs::path& p, const std::vector<int>& fines) {
    std::ofstream f(p, std::ios::binary);
    for (size_t r = 0; r < fines.size(); ++r) {
      unsigned char coarse = 1;
      unsigned char fine = static_cast<unsigned char>(fines[r]);
      f.put(static_cast<char>(coarse));
      f.put(static_cast<char>(fine));
      for (int i = 0; i < 3072; ++i)
        f.put(static_cast<char>((i + r) % 256));
    }
  };
  write_file(dir / "train.bin", {7, 3});
  write_file(dir / "test.bin", {7});

  auto ds = load_cifar100(dir.string());
  CHECK(ds->num_train() == 2);
  CHECK(ds->num_test() == 1);
  CHECK(ds->channels == 3);
  CHECK(ds->height == 32);
  CHECK(ds->width == 32);
  CHECK(ds->num_classes == 100);
  CHECK(ds->label(0) == 7);
  CHECK(ds->label(1) == 3);
  CHECK(ds->label(2) == 7);
  // pixel j of record r holds byte (j + r) % 256, scaled by 255
  const float* img0 = ds->image(0);
  CHECK(img0[0] == doctest::Approx(0.0f));
  CHECK(img0[1] == doctest::Approx(1.0f / 255.0f));
  CHECK(img0[255] == doctest::Approx(1.0f));
  const float* img1 = ds->image(1);
  CHECK(img1[0] == doctest::Approx(1.0f / 255.0f));
}

TEST_CASE("cifar reader rejects malformed files") {
  auto dir = temp_dir() / "cifar_bad";
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "train.bin", std::ios::binary);
    for (int i = 0; i < 3000; ++i) f.put(0);  // not a record multiple
  }
  {
    std::ofstream f(dir / "test.bin", std::ios::binary);
    for (int i = 0; i < 3074; ++i) f.put(0);
  }
  CHECK_THROWS_AS(load_cifar100(dir.string()), DataError);
  CHECK_THROWS_AS(load_cifar100((dir / "missing").string()), DataError);
}

TEST_CASE("dataset cache round trips bit for bit") {
  auto ds = make_synthetic(tiny_spec());
  auto path = (temp_dir() / "cache.bin").string();
  save_dataset_cache(*ds, path);
  auto back = load_dataset_cache(path);
  CHECK(back->num_examples() == ds->num_examples());
  CHECK(back->num_train() == ds->num_train());
  CHECK(back->num_classes == ds->num_classes);
  CHECK(back->channels == ds->channels);
  for (int id : {0, 5, 17, ds->num_examples() - 1}) {
    CHECK(back->label(id) == ds->label(id));
    CHECK(back->copy_image(id) == ds->copy_image(id));
  }
}

TEST_CASE("dataset cache rejects corrupt input") {
  auto dir = temp_dir();
  auto path = (dir / "corrupt.bin").string();
  {
    std::ofstream f(path, std::ios::binary);
    f.write("nonsense", 8);
  }
  CHECK_THROWS_AS(load_dataset_cache(path), DataError);
  CHECK_THROWS_AS(load_dataset_cache((dir / "absent.bin").string()), DataError);
}

TEST_SUITE_END();
