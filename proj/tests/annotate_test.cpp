#include <filesystem>
#include <fstream>
#include <thread>

#include <gtest/gtest.h>

#include "weakhar/annotate.hpp"

namespace weakhar {
namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("weakhar-annotate-" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                        "-" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ClusterAssignment make_assignment(std::vector<int> ids, Matrix log_densities) {
  ClusterAssignment a;
  a.cluster_ids = std::move(ids);
  a.log_densities = std::move(log_densities);
  return a;
}

EmbeddingSet embeddings_of(const Matrix& m) {
  EmbeddingSet e;
  e.participant_id = "p";
  e.clips = m;
  e.spans = WindowingSpec{4.0, 1.0}.spans(m.rows());
  return e;
}

// A fitted random instance used by the brute-force comparisons.
struct Instance {
  EmbeddingSet embeddings;
  GmmModel model;
  ClusterAssignment assignment;
};

Instance random_instance(std::uint64_t seed, Index T, Index C, Index E) {
  Rng rng(seed);
  Matrix data(T, E);
  for (Index i = 0; i < T; ++i)
    for (Index j = 0; j < E; ++j) data(i, j) = rng.normal(static_cast<double>((i * 7) % C) * 1.5, 1.0);
  Instance inst;
  inst.embeddings = embeddings_of(data);
  inst.model = fit_gmm(data, {.components = C, .seed = seed});
  inst.assignment = assign_clusters(inst.model, data);
  return inst;
}

TEST(FindCentroids, SingleMemberCluster) {
  auto a = make_assignment({0, 1, 0}, Matrix{{-1.0, -9.0}, {-5.0, -3.0}, {-2.0, -9.0}});
  auto cs = find_centroids(a);
  ASSERT_EQ(cs.centroids.size(), 2u);
  EXPECT_EQ(cs.find(1)->clip_index, 1);
  EXPECT_EQ(cs.find(0)->clip_index, 0);
}

TEST(FindCentroids, ClosestToMeanUnderIsotropicComponent) {
  GmmModel m;
  m.weights = Vector::Ones(1);
  m.means = Matrix::Zero(1, 1);
  m.chols.assign(1, Matrix::Identity(1, 1) * 2.0);
  m.log_dets = Vector::Constant(1, std::log(4.0));
  Matrix data{{-1.0}, {0.2}, {3.0}};
  auto cs = find_centroids(assign_clusters(m, data));
  EXPECT_EQ(cs.find(0)->clip_index, 1);
}

TEST(FindCentroids, TiesGoToSmallerClipAndEmptyClustersAreReported) {
  auto a = make_assignment({2, 2, 0}, Matrix{{0, 0, -1.0}, {0, 0, -1.0}, {-1.0, 0, 0}});
  auto cs = find_centroids(a);
  EXPECT_EQ(cs.find(2)->clip_index, 0);
  EXPECT_EQ(cs.find(1), nullptr);
  EXPECT_EQ(cs.empty_clusters(), std::vector<int>{1});
}

TEST(FindCentroids, MatchesBruteForceScan) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto inst = random_instance(seed, 120, 6, 3);
    auto cs = find_centroids(inst.assignment);
    for (Index c = 0; c < 6; ++c) {
      Index best = -1;
      double best_density = -INFINITY;
      for (Index t = 0; t < 120; ++t) {
        if (inst.assignment.cluster_ids[static_cast<std::size_t>(t)] != c) continue;
        double d = log_pdf(inst.embeddings.clips.row(t), inst.model.means.row(c),
                           inst.model.chols[static_cast<std::size_t>(c)], inst.model.log_dets(c));
        if (d > best_density) {
          best_density = d;
          best = t;
        }
      }
      const Centroid* found = cs.find(static_cast<int>(c));
      if (best < 0) {
        EXPECT_EQ(found, nullptr);
      } else {
        ASSERT_NE(found, nullptr);
        EXPECT_EQ(found->clip_index, best);
      }
    }
  }
}

TEST(AnnotateOracle, BudgetAndLabels) {
  std::vector<int> ids;
  for (int t = 0; t < 300; ++t) ids.push_back(t % 100);
  auto cs = find_centroids(make_assignment(ids, Matrix::Zero(300, 100)));
  std::vector<int> gt(300, 3);
  gt[0] = 7;
  auto ann = annotate_oracle(cs, gt);
  EXPECT_EQ(ann.budget, 100);
  EXPECT_EQ(ann.labels.at(0), 7);
  EXPECT_EQ(ann.labels.at(1), 3);
  EXPECT_EQ(ann.labels.at(2), 3);
  EXPECT_THROW(annotate_oracle(cs, std::vector<int>(50, 1)), DataError);
}

TEST(Propagate, ThresholdExtremes) {
  auto inst = random_instance(3, 80, 4, 2);
  auto cs = find_centroids(inst.assignment);
  ClusterLabels labels;
  for (const auto& c : cs.centroids) labels[c.cluster_id] = c.cluster_id + 1;
  auto all = propagate(inst.assignment, labels, inst.embeddings, cs, kNoThreshold);
  EXPECT_EQ(all.retained_count(), 80);
  auto only = propagate(inst.assignment, labels, inst.embeddings, cs, 0.0);
  EXPECT_EQ(only.retained_count(), static_cast<Index>(cs.centroids.size()));
  for (const auto& c : cs.centroids) {
    const auto& w = only.clips[static_cast<std::size_t>(c.clip_index)];
    EXPECT_TRUE(w.retained);
    EXPECT_TRUE(w.is_centroid);
    EXPECT_EQ(w.distance, 0.0);
  }
  EXPECT_EQ(all.annotation_budget, static_cast<int>(cs.centroids.size()));
}

TEST(Propagate, MatchesBruteForceDistanceFilter) {
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    auto inst = random_instance(seed, 100, 2, 2);
    auto cs = find_centroids(inst.assignment);
    ClusterLabels labels;
    for (const auto& c : cs.centroids) labels[c.cluster_id] = c.cluster_id;
    const double threshold = 1.2;
    auto weak = propagate(inst.assignment, labels, inst.embeddings, cs, threshold);
    for (Index t = 0; t < 100; ++t) {
      const int cluster = inst.assignment.cluster_ids[static_cast<std::size_t>(t)];
      const Index centroid = cs.find(cluster)->clip_index;
      double d2 = 0.0;
      for (Index j = 0; j < 2; ++j) {
        const double diff = inst.embeddings.clips(t, j) - inst.embeddings.clips(centroid, j);
        d2 += diff * diff;
      }
      EXPECT_EQ(weak.clips[static_cast<std::size_t>(t)].retained, std::sqrt(d2) <= threshold);
      EXPECT_EQ(weak.clips[static_cast<std::size_t>(t)].label_id, cluster);
    }
  }
}

TEST(Propagate, ClosureAndMonotoneRetention) {
  auto inst = random_instance(8, 150, 5, 3);
  auto cs = find_centroids(inst.assignment);
  ClusterLabels labels;
  for (const auto& c : cs.centroids) labels[c.cluster_id] = (c.cluster_id * 3) % 4;
  std::vector<double> thresholds{0.0, 0.5, 1.0, 2.0, 4.0, kNoThreshold};
  std::vector<bool> previous(150, false);
  for (double th : thresholds) {
    auto weak = propagate(inst.assignment, labels, inst.embeddings, cs, th);
    for (Index t = 0; t < 150; ++t) {
      const auto& w = weak.clips[static_cast<std::size_t>(t)];
      if (w.retained) {
        const Index centroid = cs.find(w.cluster_id)->clip_index;
        EXPECT_EQ(w.label_id, weak.clips[static_cast<std::size_t>(centroid)].label_id);
      }
      if (previous[static_cast<std::size_t>(t)]) {
        EXPECT_TRUE(w.retained);
      }
      previous[static_cast<std::size_t>(t)] = w.retained;
    }
  }
}

TEST(Propagate, UnlabelledClusterIsStateError) {
  auto inst = random_instance(2, 40, 3, 2);
  auto cs = find_centroids(inst.assignment);
  ClusterLabels labels;
  labels[cs.centroids.front().cluster_id] = 1;
  EXPECT_THROW(propagate(inst.assignment, labels, inst.embeddings, cs), StateError);
}

TEST(Propagate, ThresholdPresets) {
  EXPECT_EQ(parse_threshold("T-4"), 4.0);
  EXPECT_EQ(parse_threshold("T-6"), 6.0);
  EXPECT_TRUE(std::isinf(parse_threshold("inf")));
  EXPECT_EQ(parse_threshold("2.5"), 2.5);
  EXPECT_THROW(parse_threshold("-1"), ConfigError);
}

TEST(Propagate, WeakLabelFileRoundTrip) {
  auto inst = random_instance(4, 30, 3, 2);
  auto cs = find_centroids(inst.assignment);
  ClusterLabels labels;
  for (const auto& c : cs.centroids) labels[c.cluster_id] = 1;
  auto weak = propagate(inst.assignment, labels, inst.embeddings, cs, 1.0);
  auto text = encode_weak_labels(weak);
  auto back = decode_weak_labels(text, "p", 1.0);
  EXPECT_EQ(encode_weak_labels(back), text);
  EXPECT_EQ(back.annotation_budget, weak.annotation_budget);
}

CentroidSet centroids_for(int clusters) {
  std::vector<int> ids;
  for (int t = 0; t < clusters; ++t) ids.push_back(t);
  return find_centroids(make_assignment(ids, Matrix::Zero(clusters, clusters)));
}

std::vector<std::string> vocab() { return {"null", "walk", "run", "jump"}; }

TEST(Session, EnqueueSkipsLabelledClusters) {
  TempDir tmp;
  AnnotationSession s("p", centroids_for(50), WindowingSpec{}.spans(50), vocab(), tmp.path / "log.tsv");
  for (int c = 0; c < 10; ++c) ASSERT_EQ(s.submit(s.request_id(c), 1), SubmitStatus::kAccepted);
  auto reqs = s.enqueue_requests();
  ASSERT_EQ(reqs.size(), 40u);
  EXPECT_EQ(reqs.front().cluster_id, 10);
  EXPECT_EQ(reqs.front().span.start_s, 10.0);
  EXPECT_EQ(s.enqueue_requests().size(), 40u);
}

TEST(Session, ResumeKeepsRequestIdsAndLabels) {
  TempDir tmp;
  std::vector<std::string> first_ids;
  {
    AnnotationSession s("p", centroids_for(5), WindowingSpec{}.spans(5), vocab(), tmp.path / "log.tsv");
    for (auto& r : s.enqueue_requests()) first_ids.push_back(r.request_id);
    EXPECT_EQ(s.submit(first_ids[0], 2), SubmitStatus::kAccepted);
    EXPECT_EQ(s.submit(first_ids[0], 3), SubmitStatus::kDuplicate);
  }
  AnnotationSession resumed("p", centroids_for(5), WindowingSpec{}.spans(5), vocab(), tmp.path / "log.tsv");
  auto reqs = resumed.enqueue_requests();
  ASSERT_EQ(reqs.size(), 4u);
  for (std::size_t i = 0; i < reqs.size(); ++i) EXPECT_EQ(reqs[i].request_id, first_ids[i + 1]);
  EXPECT_EQ(resumed.labels().at(0), 2);
  EXPECT_EQ(resumed.submit(first_ids[0], 1), SubmitStatus::kDuplicate);
  EXPECT_EQ(AnnotationSession::read_log(tmp.path / "log.tsv").size(), 1u);
}

TEST(Session, CompletedSessionHasNoRequests) {
  TempDir tmp;
  AnnotationSession s("p", centroids_for(2), WindowingSpec{}.spans(2), vocab(), tmp.path / "log.tsv");
  s.submit(s.request_id(0), 1);
  s.submit(s.request_id(1), 1);
  EXPECT_TRUE(s.enqueue_requests().empty());
  EXPECT_FALSE(s.next_request());
  EXPECT_TRUE(s.complete());
  s.close();
  EXPECT_THROW(s.enqueue_requests(), StateError);
  EXPECT_THROW(s.submit(s.request_id(0), 1), StateError);
}

TEST(Session, RejectsUnknownLabelsAndRequests) {
  TempDir tmp;
  AnnotationSession s("p", centroids_for(3), WindowingSpec{}.spans(3), vocab(), tmp.path / "log.tsv");
  EXPECT_EQ(s.submit(s.request_id(0), 4), SubmitStatus::kUnknownLabel);
  EXPECT_EQ(s.submit(s.request_id(0), -1), SubmitStatus::kUnknownLabel);
  EXPECT_EQ(s.submit("nope", 1), SubmitStatus::kUnknownRequest);
  EXPECT_EQ(s.state().labeled, 0);
}

TEST(Session, PartialTrailingLineIsDiscarded) {
  TempDir tmp;
  auto log = tmp.path / "log.tsv";
  {
    AnnotationSession s("p", centroids_for(3), WindowingSpec{}.spans(3), vocab(), log);
    s.submit(s.request_id(0), 1);
  }
  {
    std::ofstream out(log, std::ios::app);
    out << "p-c00001\t1\t1";
  }
  AnnotationSession s("p", centroids_for(3), WindowingSpec{}.spans(3), vocab(), log);
  EXPECT_EQ(s.state().labeled, 1);
  EXPECT_EQ(s.submit(s.request_id(1), 2), SubmitStatus::kAccepted);
  EXPECT_EQ(AnnotationSession::read_log(log).size(), 2u);
}

TEST(Session, ConcurrentSubmissionsAreSerialized) {
  TempDir tmp;
  AnnotationSession s("p", centroids_for(20), WindowingSpec{}.spans(20), vocab(), tmp.path / "log.tsv");
  std::atomic<int> accepted{0};
  std::vector<std::thread> threads;
  for (int k = 0; k < 4; ++k)
    threads.emplace_back([&] {
      for (int c = 0; c < 20; ++c)
        if (s.submit(s.request_id(c), 1) == SubmitStatus::kAccepted) ++accepted;
    });
  for (auto& t : threads) t.join();
  EXPECT_EQ(accepted.load(), 20);
  EXPECT_EQ(AnnotationSession::read_log(tmp.path / "log.tsv").size(), 20u);
}

TEST(Session, BudgetNeverExceedsComponents) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto inst = random_instance(seed, 200, 8, 2);
    auto cs = find_centroids(inst.assignment);
    std::vector<int> gt(200, 1);
    EXPECT_LE(annotate_oracle(cs, gt).budget, 8);
  }
}

}  // namespace
}  // namespace weakhar
