#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "oracles.hpp"
#include "tgnn/catalog.hpp"
#include "tgnn/config.hpp"
#include "tgnn/error.hpp"
#include "tgnn/graph.hpp"
#include "tgnn/partition.hpp"
#include "tgnn/pca.hpp"
#include "tgnn/rng.hpp"
#include "tgnn/synth.hpp"

using namespace tgnn;

namespace {

// Catalog with unit-dimension embeddings; category = garment-local letter.
Catalog tiny_catalog(const std::vector<std::vector<std::string>>& outfit_members,
                     std::vector<std::string> garment_ids,
                     std::vector<std::string>* warnings = nullptr) {
  std::vector<Garment> garments;
  std::vector<double> embeddings;
  for (std::size_t i = 0; i < garment_ids.size(); ++i) {
    garments.push_back(Garment{garment_ids[i], static_cast<int>(i)});
    embeddings.push_back(static_cast<double>(i));
  }
  std::vector<std::string> categories;
  for (std::size_t i = 0; i < garment_ids.size(); ++i) categories.push_back("cat" + std::to_string(i));
  std::vector<Outfit> outfits;
  for (std::size_t i = 0; i < outfit_members.size(); ++i) {
    Outfit o;
    o.id = "o" + std::to_string(i + 1);
    for (const auto& gid : outfit_members[i]) {
      const auto it = std::find(garment_ids.begin(), garment_ids.end(), gid);
      o.members.push_back(static_cast<int>(it - garment_ids.begin()));
    }
    outfits.push_back(std::move(o));
  }
  return Catalog::build(std::move(garments), std::move(embeddings), 1, std::move(categories),
                        std::move(outfits), warnings);
}

// Random catalog: n outfits drawing 2-5 garments from a shared pool, so
// outfits overlap and the graphs have structure.
Catalog random_catalog(std::size_t outfit_count, std::size_t garment_count, Rng& rng) {
  std::vector<Garment> garments;
  std::vector<double> embeddings;
  std::vector<std::string> categories = {"top", "bottom", "shoes", "bag"};
  for (std::size_t i = 0; i < garment_count; ++i) {
    garments.push_back(Garment{"g" + std::to_string(i), static_cast<int>(rng.index(4))});
    embeddings.push_back(rng.uniform(-1.0, 1.0));
    embeddings.push_back(rng.uniform(-1.0, 1.0));
  }
  std::vector<Outfit> outfits;
  for (std::size_t i = 0; i < outfit_count; ++i) {
    Outfit o;
    o.id = "o" + std::to_string(i);
    const std::size_t size = 2 + rng.index(4);
    std::set<int> picked;
    while (picked.size() < size) picked.insert(static_cast<int>(rng.index(garment_count)));
    o.members.assign(picked.begin(), picked.end());
    outfits.push_back(std::move(o));
  }
  return Catalog::build(std::move(garments), std::move(embeddings), 2, std::move(categories),
                        std::move(outfits));
}

std::filesystem::path temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("tgnn-test-" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("catalog builds the inverse membership index") {
  Catalog c = tiny_catalog({{"a", "b", "cc"}, {"cc", "d"}}, {"a", "b", "cc", "d"});
  const int g = c.garment_index("cc");
  REQUIRE(g >= 0);
  const auto& outfits = c.outfits_of(g);
  REQUIRE(outfits.size() == 2);
  CHECK(c.outfit(outfits[0]).id == "o1");
  CHECK(c.outfit(outfits[1]).id == "o2");
}

TEST_CASE("catalog file loading and validation errors") {
  const auto dir = temp_dir("catalog");
  const auto emb_path = (dir / "embeddings.tsv").string();
  const auto outfit_path = (dir / "outfits.tsv").string();

  SUBCASE("valid round trip") {
    std::ofstream(emb_path) << "a\ttop\t1.0,2.0\nb\tbottom\t3.0,4.0\nc\ttop\t5.0,6.0\n";
    std::ofstream(outfit_path) << "o1\ta,b\no2\tb,c\n";
    std::vector<std::string> warnings;
    Catalog c = Catalog::load(outfit_path, emb_path, &warnings);
    CHECK(c.garment_count() == 3);
    CHECK(c.outfit_count() == 2);
    CHECK(c.embed_dim() == 2);
    CHECK(c.embedding(c.garment_index("b"))[1] == 4.0);
    CHECK(warnings.empty());
  }
  SUBCASE("dangling garment reference names the line") {
    std::ofstream(emb_path) << "a\ttop\t1.0\nb\tbottom\t2.0\n";
    std::ofstream(outfit_path) << "o1\ta,b\no2\ta,zzz\n";
    try {
      Catalog::load(outfit_path, emb_path);
      FAIL("expected a parse error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find(":2:") != std::string::npos);
      CHECK(std::string(e.what()).find("zzz") != std::string::npos);
    }
  }
  SUBCASE("duplicate garment id") {
    std::ofstream(emb_path) << "a\ttop\t1.0\na\ttop\t2.0\n";
    std::ofstream(outfit_path) << "";
    CHECK_THROWS_AS(Catalog::load(outfit_path, emb_path), Error);
  }
  SUBCASE("ragged embedding rows") {
    std::ofstream(emb_path) << "a\ttop\t1.0,2.0\nb\ttop\t3.0\n";
    std::ofstream(outfit_path) << "";
    CHECK_THROWS_AS(Catalog::load(outfit_path, emb_path), Error);
  }
  SUBCASE("duplicate category inside an outfit warns instead of failing") {
    std::ofstream(emb_path) << "a\ttop\t1.0\nb\ttop\t2.0\n";
    std::ofstream(outfit_path) << "o1\ta,b\n";
    std::vector<std::string> warnings;
    Catalog c = Catalog::load(outfit_path, emb_path, &warnings);
    CHECK(c.outfit_count() == 1);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("o1") != std::string::npos);
  }
}

TEST_CASE("membership inversion holds on random catalogs") {
  Rng rng(99);
  for (int trial = 0; trial < 5; ++trial) {
    Catalog c = random_catalog(25, 30, rng);
    for (std::size_t oi = 0; oi < c.outfit_count(); ++oi) {
      for (int g : c.outfit(static_cast<int>(oi)).members) {
        const auto& inv = c.outfits_of(g);
        CHECK(std::find(inv.begin(), inv.end(), static_cast<int>(oi)) != inv.end());
      }
    }
    for (std::size_t g = 0; g < c.garment_count(); ++g) {
      for (int oi : c.outfits_of(static_cast<int>(g))) {
        const auto& members = c.outfit(oi).members;
        CHECK(std::find(members.begin(), members.end(), static_cast<int>(g)) != members.end());
      }
    }
  }
}

TEST_CASE("pca on rank-deficient data") {
  SUBCASE("points on a line explain everything with one component") {
    std::vector<double> rows;
    for (int i = 0; i < 10; ++i) {
      const double t = static_cast<double>(i) - 4.5;
      rows.insert(rows.end(), {1.0 + 2.0 * t, -1.0 * t, 0.5 * t});
    }
    PcaModel model = pca_fit(rows, 10, 3, 1);
    CHECK(model.explained_variance_ratio[0] == doctest::Approx(1.0).epsilon(1e-10));
  }
  SUBCASE("plane in five dimensions needs two components") {
    Rng rng(3);
    std::vector<double> rows;
    for (int i = 0; i < 40; ++i) {
      const double u = rng.uniform(-2.0, 2.0), v = rng.uniform(-2.0, 2.0);
      rows.insert(rows.end(), {u, v, u + v, u - v, 2.0 * u});
    }
    PcaModel model = pca_fit(rows, 40, 5, 2);
    const double sum = model.explained_variance_ratio[0] + model.explained_variance_ratio[1];
    CHECK(std::abs(sum - 1.0) < 1e-8);
  }
}

TEST_CASE("pca ratios match an independent covariance eigendecomposition") {
  Rng rng(17);
  const std::size_t n = 200, d = 50, keep = 10;
  std::vector<double> rows(n * d);
  for (double& v : rows) v = rng.normal();
  PcaModel model = pca_fit(rows, n, d, keep);

  // Oracle route: dense eigensolver on the sample covariance.
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMat> x(rows.data(), n, d);
  Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  Eigen::MatrixXd cov = centered.transpose() * centered / double(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  std::vector<double> lambdas(eig.eigenvalues().data(), eig.eigenvalues().data() + d);
  std::sort(lambdas.rbegin(), lambdas.rend());
  const double total = cov.trace();

  for (std::size_t i = 0; i < keep; ++i) {
    CHECK(model.explained_variance[i] ==
          doctest::Approx(lambdas[i]).epsilon(1e-6));
    CHECK(model.explained_variance_ratio[i] ==
          doctest::Approx(lambdas[i] / total).epsilon(1e-6));
    CHECK(model.explained_variance_ratio[i] >= 0.0);
    if (i > 0) CHECK(model.explained_variance_ratio[i] <= model.explained_variance_ratio[i - 1]);
  }

  // Projected coordinates carry exactly the explained eigenvalues.
  for (std::size_t comp = 0; comp < keep; ++comp) {
    double mean = 0.0, var = 0.0;
    std::vector<double> coords(n);
    for (std::size_t r = 0; r < n; ++r) {
      coords[r] = pca_transform(model, {rows.data() + r * d, d})[comp];
      mean += coords[r];
    }
    mean /= double(n);
    for (double cval : coords) var += (cval - mean) * (cval - mean);
    var /= double(n - 1);
    CHECK(var == doctest::Approx(model.explained_variance[comp]).epsilon(1e-6));
  }

  // Reconstruction error equals the discarded eigenvalue mass.
  double discarded = 0.0;
  for (std::size_t i = keep; i < d; ++i) discarded += lambdas[i];
  CHECK(pca_reconstruction_error(model, rows, n, d) ==
        doctest::Approx(discarded).epsilon(1e-6));

  // Components are orthonormal.
  for (std::size_t i = 0; i < keep; ++i) {
    for (std::size_t j = i; j < keep; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += model.components[i * d + c] * model.components[j * d + c];
      CHECK(std::abs(dot - (i == j ? 1.0 : 0.0)) < 1e-8);
    }
  }
}

TEST_CASE("pca transform fundamentals") {
  SUBCASE("the mean maps to zero") {
    Rng rng(5);
    std::vector<double> rows(20 * 4);
    for (double& v : rows) v = rng.uniform(-1.0, 1.0);
    PcaModel model = pca_fit(rows, 20, 4, 2);
    const auto out = pca_transform(model, model.mean);
    for (double v : out) CHECK(std::abs(v) < 1e-12);
  }
  SUBCASE("identity components subtract the mean") {
    PcaModel model;
    model.raw_dim = 3;
    model.out_dim = 3;
    model.mean = {1.0, 2.0, 3.0};
    model.components = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    model.explained_variance = {1, 1, 1};
    model.explained_variance_ratio = {0.34, 0.33, 0.33};
    const auto out = pca_transform(model, std::vector<double>{2.0, 2.0, 2.0});
    CHECK(out[0] == doctest::Approx(1.0));
    CHECK(out[1] == doctest::Approx(0.0));
    CHECK(out[2] == doctest::Approx(-1.0));
  }
  SUBCASE("rank-1 fit recovers the signed distance along the line") {
    std::vector<double> direction = {2.0 / 3.0, -1.0 / 3.0, 2.0 / 3.0};
    std::vector<double> rows;
    std::vector<double> ts = {-2.0, -1.0, 0.5, 1.5, 1.0};
    for (double t : ts) {
      for (double dir : direction) rows.push_back(5.0 + t * dir);
    }
    PcaModel model = pca_fit(rows, ts.size(), 3, 1);
    const double t_query = 0.75;
    std::vector<double> x(3);
    for (std::size_t i = 0; i < 3; ++i) x[i] = 5.0 + t_query * direction[i];
    // Hand projection: dot(component, x - mean).
    double expect = 0.0;
    for (std::size_t i = 0; i < 3; ++i) expect += model.components[i] * (x[i] - model.mean[i]);
    CHECK(pca_transform(model, x)[0] == doctest::Approx(expect).epsilon(1e-8));
    // The component spans the planted direction (up to sign).
    double align = 0.0;
    for (std::size_t i = 0; i < 3; ++i) align += model.components[i] * direction[i];
    CHECK(std::abs(std::abs(align) - 1.0) < 1e-8);
  }
  SUBCASE("dimension mismatch throws") {
    Rng rng(6);
    std::vector<double> rows(10 * 3);
    for (double& v : rows) v = rng.uniform(-1.0, 1.0);
    PcaModel model = pca_fit(rows, 10, 3, 2);
    CHECK_THROWS_AS(pca_transform(model, std::vector<double>{1.0, 2.0}), Error);
  }
}

TEST_CASE("pca reconstruction error is nonincreasing in the kept dimension") {
  Rng rng(23);
  const std::size_t n = 60, d = 12;
  std::vector<double> rows(n * d);
  for (double& v : rows) v = rng.normal();
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t keep = 1; keep <= 6; ++keep) {
    PcaModel model = pca_fit(rows, n, d, keep);
    const double err = pca_reconstruction_error(model, rows, n, d);
    CHECK(err <= prev + 1e-9);
    prev = err;
  }
}

TEST_CASE("pca rejects bad input") {
  std::vector<double> rows = {1.0, 2.0, 3.0, 4.0};
  CHECK_THROWS_AS(pca_fit(rows, 2, 2, 3), Error);  // beyond min(n, d)
  rows[1] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(pca_fit(rows, 2, 2, 1), Error);
  CHECK_THROWS_AS(pca_fit({1.0, 2.0}, 1, 2, 1), Error);  // single sample
}

TEST_CASE("pca model file round trip") {
  Rng rng(29);
  std::vector<double> rows(30 * 6);
  for (double& v : rows) v = rng.normal();
  PcaModel model = pca_fit(rows, 30, 6, 3);
  const auto dir = temp_dir("pca");
  const auto path = (dir / "model.pca").string();
  save_pca_model(path, model);
  PcaModel loaded = load_pca_model(path);
  CHECK(loaded.raw_dim == model.raw_dim);
  CHECK(loaded.out_dim == model.out_dim);
  CHECK(loaded.mean == model.mean);
  CHECK(loaded.components == model.components);
  CHECK(loaded.explained_variance_ratio == model.explained_variance_ratio);
}

TEST_CASE("outfit graph construction") {
  SUBCASE("single shared garment creates the only edge") {
    Catalog c = tiny_catalog({{"a", "b"}, {"b", "c"}, {"d", "e"}}, {"a", "b", "c", "d", "e"});
    OutfitRelationGraph org = build_org(c);
    REQUIRE(org.edges.size() == 1);
    CHECK(org.edges[0] == std::pair<int, int>{0, 1});
  }
  SUBCASE("disjoint outfits give an empty edge set") {
    Catalog c = tiny_catalog({{"a", "b"}, {"c", "d"}}, {"a", "b", "c", "d"});
    CHECK(build_org(c).edges.empty());
  }
  SUBCASE("random catalogs match the pairwise-intersection oracle") {
    Rng rng(41);
    for (int trial = 0; trial < 5; ++trial) {
      Catalog c = random_catalog(40, 35, rng);
      OutfitRelationGraph org = build_org(c);
      const auto expect = oracles::org_edges_brute(c);
      CHECK(std::set<std::pair<int, int>>(org.edges.begin(), org.edges.end()) == expect);
    }
  }
}

TEST_CASE("item graph induction") {
  SUBCASE("one outfit induces a clique with self edges") {
    Catalog c = tiny_catalog({{"a", "b", "cc"}}, {"a", "b", "cc"});
    ItemRelationGraph irg = induce_irg(std::vector<int>{0}, c);
    REQUIRE(irg.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(irg.neighbors[i].size() == 3);  // both others plus self
      CHECK(std::binary_search(irg.neighbors[i].begin(), irg.neighbors[i].end(), irg.nodes[i]));
    }
  }
  SUBCASE("chain of two outfits omits the far edge") {
    Catalog c = tiny_catalog({{"a", "b"}, {"b", "c"}}, {"a", "b", "c"});
    ItemRelationGraph irg = induce_irg(std::vector<int>{0, 1}, c);
    const int a = c.garment_index("a"), b = c.garment_index("b"), cc = c.garment_index("c");
    CHECK(irg.has_edge(a, b));
    CHECK(irg.has_edge(b, cc));
    CHECK_FALSE(irg.has_edge(a, cc));
    CHECK(irg.has_edge(a, a));
  }
  SUBCASE("random catalogs match the brute-force induction") {
    Rng rng(43);
    for (int trial = 0; trial < 5; ++trial) {
      Catalog c = random_catalog(30, 25, rng);
      std::vector<int> all(c.outfit_count());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
      ItemRelationGraph irg = induce_irg(all, c);
      const auto expect = oracles::irg_adjacency_brute(all, c);
      REQUIRE(irg.size() == expect.size());
      for (std::size_t i = 0; i < irg.size(); ++i) {
        const auto& brute = expect.at(irg.nodes[i]);
        CHECK(std::set<int>(irg.neighbors[i].begin(), irg.neighbors[i].end()) == brute);
      }
    }
  }
  SUBCASE("unknown outfit index throws") {
    Catalog c = tiny_catalog({{"a", "b"}}, {"a", "b"});
    CHECK_THROWS_AS(induce_irg(std::vector<int>{5}, c), Error);
  }
  SUBCASE("adjacency is symmetric") {
    Rng rng(44);
    Catalog c = random_catalog(20, 18, rng);
    std::vector<int> all(c.outfit_count());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    ItemRelationGraph irg = induce_irg(all, c);
    for (std::size_t i = 0; i < irg.size(); ++i) {
      for (int nbr : irg.neighbors[i]) CHECK(irg.has_edge(nbr, irg.nodes[i]));
    }
  }
}

TEST_CASE("outfit edge removal") {
  SUBCASE("removing the only outfit leaves self edges") {
    Catalog c = tiny_catalog({{"a", "b", "cc"}}, {"a", "b", "cc"});
    ItemRelationGraph irg = induce_irg(std::vector<int>{0}, c);
    ItemRelationGraph stripped = remove_outfit_edges(irg, c.outfit(0).members);
    for (std::size_t i = 0; i < stripped.size(); ++i) {
      CHECK(stripped.neighbors[i] == std::vector<int>{stripped.nodes[i]});
    }
  }
  SUBCASE("removal of a pairless outfit is a no-op") {
    Catalog c = tiny_catalog({{"a", "b"}, {"c", "d"}}, {"a", "b", "c", "d"});
    ItemRelationGraph irg = induce_irg(std::vector<int>{0, 1}, c);
    std::vector<int> fake = {c.garment_index("a"), c.garment_index("c")};
    ItemRelationGraph same = remove_outfit_edges(irg, fake);
    CHECK(same.neighbors == irg.neighbors);
  }
  SUBCASE("an edge shared with another outfit is still removed") {
    // Edge a-b is provided by both outfits; removal works on endpoints, not
    // provenance, so it disappears with outfit 0.
    Catalog c = tiny_catalog({{"a", "b", "cc"}, {"a", "b"}}, {"a", "b", "cc"});
    ItemRelationGraph irg = induce_irg(std::vector<int>{0, 1}, c);
    ItemRelationGraph stripped = remove_outfit_edges(irg, c.outfit(0).members);
    CHECK_FALSE(stripped.has_edge(c.garment_index("a"), c.garment_index("b")));
    CHECK(stripped.has_edge(c.garment_index("a"), c.garment_index("a")));
  }
  SUBCASE("never deletes self edges, never adds edges") {
    Rng rng(45);
    Catalog c = random_catalog(25, 20, rng);
    std::vector<int> all(c.outfit_count());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    ItemRelationGraph irg = induce_irg(all, c);
    ItemRelationGraph stripped = remove_outfit_edges(irg, c.outfit(3).members);
    for (std::size_t i = 0; i < stripped.size(); ++i) {
      CHECK(std::binary_search(stripped.neighbors[i].begin(), stripped.neighbors[i].end(),
                               stripped.nodes[i]));
      for (int nbr : stripped.neighbors[i]) CHECK(irg.has_edge(stripped.nodes[i], nbr));
    }
  }
  SUBCASE("member outside the graph throws") {
    Catalog c = tiny_catalog({{"a", "b"}, {"c", "d"}}, {"a", "b", "c", "d"});
    ItemRelationGraph irg = induce_irg(std::vector<int>{0}, c);
    CHECK_THROWS_AS(remove_outfit_edges(irg, c.outfit(1).members), Error);
  }
}

TEST_CASE("graph statistics") {
  SUBCASE("triangle") {
    Catalog c = tiny_catalog({{"a", "b", "cc"}}, {"a", "b", "cc"});
    GraphStats stats = graph_stats(induce_irg(std::vector<int>{0}, c));
    CHECK(stats.transitivity == doctest::Approx(1.0));
    CHECK(stats.avg_clustering_coeff == doctest::Approx(1.0));
    CHECK(stats.connected_components == 1);
    CHECK(stats.avg_degree == doctest::Approx(2.0));  // self edges excluded
  }
  SUBCASE("path") {
    Catalog c = tiny_catalog({{"a", "b"}, {"b", "cc"}}, {"a", "b", "cc"});
    GraphStats stats = graph_stats(induce_irg(std::vector<int>{0, 1}, c));
    CHECK(stats.transitivity == doctest::Approx(0.0));
    CHECK(stats.connected_components == 1);
    CHECK(stats.avg_degree == doctest::Approx(4.0 / 3.0));
    CHECK(stats.median_degree == doctest::Approx(1.0));
  }
  SUBCASE("random graphs match the triple-enumeration oracle") {
    Rng rng(47);
    for (int trial = 0; trial < 4; ++trial) {
      Catalog c = random_catalog(30, 26, rng);
      std::vector<int> all(c.outfit_count());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
      ItemRelationGraph irg = induce_irg(all, c);
      GraphStats stats = graph_stats(irg);
      const auto brute = oracles::graph_stats_brute(oracles::irg_adjacency_brute(all, c));
      CHECK(stats.node_count == brute.nodes);
      CHECK(stats.edge_count == brute.edges);
      CHECK(stats.avg_degree == doctest::Approx(brute.avg_degree).epsilon(1e-12));
      CHECK(stats.median_degree == doctest::Approx(brute.median_degree).epsilon(1e-12));
      CHECK(stats.connected_components == brute.components);
      CHECK(stats.transitivity == doctest::Approx(brute.transitivity).epsilon(1e-12));
      CHECK(stats.avg_clustering_coeff == doctest::Approx(brute.avg_clustering).epsilon(1e-12));
    }
  }
  SUBCASE("report mirrors the published row names") {
    Catalog c = tiny_catalog({{"a", "b", "cc"}}, {"a", "b", "cc"});
    const std::string report = render_graph_stats(graph_stats(induce_irg(std::vector<int>{0}, c)));
    for (const char* row : {"Nodes", "Edges", "Avg. Degree", "Median Degree",
                            "Conn. Components", "Transitivity", "Avg. Cluster Coeff."}) {
      CHECK(report.find(row) != std::string::npos);
    }
    CHECK(report.find("Transitivity 1.0") != std::string::npos);
  }
}

TEST_CASE("partitioner honors the size contract") {
  SUBCASE("isolated outfits split by count") {
    OutfitRelationGraph org;
    org.node_count = 100;
    org.adjacency.assign(100, {});
    PartitionSet parts = partition_org(org, 50, 7);
    REQUIRE(parts.partitions.size() == 2);
    CHECK(parts.partitions[0].size() == 50);
    CHECK(parts.partitions[1].size() == 50);
    CHECK(parts.edge_cut == 0);
  }
  SUBCASE("small graph collapses to one partition with a warning") {
    OutfitRelationGraph org;
    org.node_count = 10;
    org.adjacency.assign(10, {});
    for (int i = 0; i < 10; ++i) {
      for (int j = i + 1; j < 10; ++j) org.edges.emplace_back(i, j);
    }
    for (auto& [a, b] : org.edges) {
      org.adjacency[a].push_back(b);
      org.adjacency[b].push_back(a);
    }
    std::vector<std::string> warnings;
    PartitionSet parts = partition_org(org, 50, 7, &warnings);
    CHECK(parts.partitions.size() == 1);
    CHECK(parts.partitions[0].size() == 10);
    CHECK(warnings.size() == 1);
  }
  SUBCASE("random graphs: covering, disjoint, bounded, better than random cut") {
    Rng rng(53);
    for (int trial = 0; trial < 6; ++trial) {
      const std::size_t n = 200;
      OutfitRelationGraph org;
      org.node_count = n;
      org.adjacency.assign(n, {});
      std::set<std::pair<int, int>> edges;
      const std::size_t edge_count = 300 + rng.index(200);
      while (edges.size() < edge_count) {
        const int a = static_cast<int>(rng.index(n));
        const int b = static_cast<int>(rng.index(n));
        if (a == b) continue;
        edges.emplace(std::min(a, b), std::max(a, b));
      }
      org.edges.assign(edges.begin(), edges.end());
      for (auto& [a, b] : org.edges) {
        org.adjacency[a].push_back(b);
        org.adjacency[b].push_back(a);
      }

      PartitionSet parts = partition_org(org, 50, 1000 + trial);
      CHECK(parts.partitions.size() == 4);

      // Coverage and consistency.
      std::set<int> seen;
      for (std::size_t p = 0; p < parts.partitions.size(); ++p) {
        for (int o : parts.partitions[p]) {
          CHECK(parts.assignment[static_cast<std::size_t>(o)] == static_cast<int>(p));
          CHECK(seen.insert(o).second);
        }
      }
      CHECK(seen.size() == n);

      // Size bounds with at most one remainder partition.
      const std::size_t lo = 25, hi = 75;
      std::size_t out_of_bounds = 0;
      for (const auto& p : parts.partitions) {
        if (p.size() < lo || p.size() > hi) ++out_of_bounds;
      }
      CHECK(out_of_bounds <= 1);

      // Edge cut no worse than the median random assignment.
      std::vector<std::size_t> random_cuts;
      for (std::uint64_t s = 0; s < 20; ++s) {
        Rng r(9000 + s);
        std::vector<int> assign(n);
        for (auto& a : assign) a = static_cast<int>(r.index(parts.partitions.size()));
        random_cuts.push_back(partition_edge_cut(org, assign));
      }
      std::sort(random_cuts.begin(), random_cuts.end());
      const double median =
          (static_cast<double>(random_cuts[9]) + static_cast<double>(random_cuts[10])) / 2.0;
      CHECK(static_cast<double>(parts.edge_cut) <= median);
    }
  }
}

TEST_CASE("partition lookup") {
  // Two style blobs far apart in embedding space; outfits within each blob.
  std::vector<Garment> garments;
  std::vector<double> embeddings;
  std::vector<std::string> categories = {"top", "bottom"};
  for (int i = 0; i < 8; ++i) {
    garments.push_back(Garment{"g" + std::to_string(i), i % 2});
    const double base = i < 4 ? 10.0 : -10.0;
    embeddings.push_back(base + 0.1 * i);
    embeddings.push_back(base - 0.1 * i);
  }
  std::vector<Outfit> outfits = {
      {"o0", {0, 1}}, {"o1", {2, 3}}, {"o2", {0, 3}},  // blob A
      {"o3", {4, 5}}, {"o4", {6, 7}}, {"o5", {4, 7}},  // blob B
  };
  Catalog c = Catalog::build(std::move(garments), std::move(embeddings), 2,
                             std::move(categories), std::move(outfits));
  OutfitRelationGraph org = build_org(c);
  PartitionSet parts = partition_org(org, 3, 11);
  REQUIRE(parts.partitions.size() == 2);

  SUBCASE("train mode is a table lookup") {
    const auto& members = c.outfit(2).members;
    CHECK(partition_for_outfit(members, parts, c, PartitionLookup::kTrain) ==
          parts.assignment[2]);
    std::vector<int> not_an_outfit = {0, 2};
    CHECK_THROWS_AS(partition_for_outfit(not_an_outfit, parts, c, PartitionLookup::kTrain),
                    Error);
  }
  SUBCASE("test mode votes by nearest neighbors") {
    // Query garments sit exactly on blob A members; the vote must land on
    // whichever partition holds the blob A outfits.
    std::vector<int> query = {0, 1};
    const int expect = parts.assignment[0];
    CHECK(partition_for_outfit(query, parts, c, PartitionLookup::kTest) == expect);
  }
  SUBCASE("vote recount matches an exhaustive tally, ties to smallest index") {
    Rng rng(61);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<int> query;
      const std::size_t qn = 1 + rng.index(3);
      for (std::size_t i = 0; i < qn; ++i) query.push_back(static_cast<int>(rng.index(8)));
      const int got = partition_for_outfit(query, parts, c, PartitionLookup::kTest);

      // Recount: nearest garment by cosine, then one vote per partition
      // holding one of its outfits.
      std::vector<std::size_t> votes(parts.partitions.size(), 0);
      for (int q : query) {
        int best = -1;
        double best_sim = -2.0;
        for (std::size_t g = 0; g < c.garment_count(); ++g) {
          if (c.outfits_of(static_cast<int>(g)).empty()) continue;
          double dot = 0.0, na = 0.0, nb = 0.0;
          for (std::size_t k = 0; k < 2; ++k) {
            dot += c.embedding(q)[k] * c.embedding(static_cast<int>(g))[k];
            na += c.embedding(q)[k] * c.embedding(q)[k];
            nb += c.embedding(static_cast<int>(g))[k] * c.embedding(static_cast<int>(g))[k];
          }
          const double sim = dot / std::sqrt(na * nb);
          if (sim > best_sim) {
            best_sim = sim;
            best = static_cast<int>(g);
          }
        }
        std::set<int> voted;
        for (int oi : c.outfits_of(best)) voted.insert(parts.assignment[oi]);
        for (int p : voted) votes[static_cast<std::size_t>(p)] += 1;
      }
      std::size_t expect = 0;
      for (std::size_t p = 1; p < votes.size(); ++p) {
        if (votes[p] > votes[expect]) expect = p;
      }
      CHECK(got == static_cast<int>(expect));
    }
  }
  SUBCASE("empty query and empty partitions throw") {
    CHECK_THROWS_AS(partition_for_outfit({}, parts, c, PartitionLookup::kTest), Error);
    PartitionSet empty;
    std::vector<int> query = {0};
    CHECK_THROWS_AS(partition_for_outfit(query, empty, c, PartitionLookup::kTest), Error);
  }
}

TEST_CASE("partition file round trip") {
  Rng rng(67);
  Catalog c = random_catalog(30, 25, rng);
  OutfitRelationGraph org = build_org(c);
  PartitionSet parts = partition_org(org, 10, 3);
  const auto dir = temp_dir("partition");
  const auto path = (dir / "partitions.tsv").string();
  save_partitions(path, parts, c);
  PartitionSet loaded = load_partitions(path, c);
  CHECK(loaded.assignment == parts.assignment);
  CHECK(loaded.size_target == parts.size_target);
  CHECK(loaded.edge_cut == parts.edge_cut);
}

TEST_CASE("synthetic catalog generation") {
  SUBCASE("zero noise collapses each cell to one point") {
    SynthConfig cfg;
    cfg.styles = 2;
    cfg.categories = 3;
    cfg.garments_per_cell = 4;
    cfg.outfit_count = 20;
    cfg.outfit_size_min = 2;
    cfg.outfit_size_max = 3;
    cfg.embedding_noise = 0.0;
    cfg.raw_dim = 8;
    SynthDataset data = generate_synthetic_catalog(cfg);
    for (std::size_t g = 1; g < data.catalog.garment_count(); ++g) {
      if (data.oracle.labels[g] != data.oracle.labels[g - 1]) continue;
      const auto a = data.catalog.embedding(static_cast<int>(g));
      const auto b = data.catalog.embedding(static_cast<int>(g - 1));
      for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    }
  }
  SUBCASE("no sharing means no outfit-graph edges") {
    SynthConfig cfg;
    cfg.sharing_probability = 0.0;
    cfg.outfit_count = 80;
    cfg.garments_per_cell = 30;
    SynthDataset data = generate_synthetic_catalog(cfg);
    CHECK(build_org(data.catalog).edges.empty());
  }
  SUBCASE("outfit-graph edges match the brute-force shared-item count") {
    SynthConfig cfg;
    cfg.sharing_probability = 0.5;
    cfg.outfit_count = 300;
    cfg.garments_per_cell = 20;
    SynthDataset data = generate_synthetic_catalog(cfg);
    OutfitRelationGraph org = build_org(data.catalog);
    const auto brute = oracles::org_edges_brute(data.catalog);
    CHECK(std::set<std::pair<int, int>>(org.edges.begin(), org.edges.end()) == brute);
    CHECK_FALSE(org.edges.empty());
  }
  SUBCASE("every generated outfit satisfies the oracle") {
    SynthConfig cfg;
    cfg.outfit_count = 120;
    SynthDataset data = generate_synthetic_catalog(cfg);
    for (std::size_t i = 0; i < data.catalog.outfit_count(); ++i) {
      CHECK(data.oracle.compatible(data.catalog.outfit(static_cast<int>(i)).members));
    }
    for (const auto& r : data.val_outfits) CHECK(data.oracle.compatible(r.members));
    for (const auto& r : data.test_outfits) CHECK(data.oracle.compatible(r.members));
  }
  SUBCASE("oracle rejects mixed styles and repeated categories") {
    SynthConfig cfg;
    cfg.outfit_count = 40;
    SynthDataset data = generate_synthetic_catalog(cfg);
    // First garment of style 0 and first of style 1 share category 0.
    const int a = 0;
    const int b = static_cast<int>(cfg.categories * cfg.garments_per_cell);
    CHECK(data.oracle.labels[a].first != data.oracle.labels[b].first);
    std::vector<int> mixed = {a, b};
    CHECK_FALSE(data.oracle.compatible(mixed));
    std::vector<int> repeated = {0, 1};  // same (style, category) cell
    CHECK_FALSE(data.oracle.compatible(repeated));
  }
  SUBCASE("random label recount") {
    SynthConfig cfg;
    cfg.outfit_count = 40;
    SynthDataset data = generate_synthetic_catalog(cfg);
    Rng rng(71);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<int> set;
      std::set<int> used;
      while (set.size() < 4) {
        const int g = static_cast<int>(rng.index(data.catalog.garment_count()));
        if (used.insert(g).second) set.push_back(g);
      }
      bool expect = true;
      std::set<int> cats;
      for (int g : set) {
        if (data.oracle.labels[g].first != data.oracle.labels[set[0]].first) expect = false;
        if (!cats.insert(data.oracle.labels[g].second).second) expect = false;
      }
      CHECK(data.oracle.compatible(set) == expect);
    }
  }
  SUBCASE("nearest-centroid recovery is high at the default noise") {
    SynthConfig cfg;
    cfg.outfit_count = 60;
    SynthDataset data = generate_synthetic_catalog(cfg);
    CHECK(nearest_centroid_recovery(data) >= 0.99);
  }
  SUBCASE("disjoint splits never share garments") {
    SynthConfig cfg;
    cfg.disjoint_garments = true;
    cfg.outfit_count = 150;
    cfg.garments_per_cell = 40;
    SynthDataset data = generate_synthetic_catalog(cfg);
    std::set<int> train_garments;
    for (std::size_t i = 0; i < data.catalog.outfit_count(); ++i) {
      for (int g : data.catalog.outfit(static_cast<int>(i)).members) train_garments.insert(g);
    }
    for (const auto& r : data.val_outfits) {
      for (int g : r.members) CHECK(train_garments.count(g) == 0);
    }
    for (const auto& r : data.test_outfits) {
      for (int g : r.members) CHECK(train_garments.count(g) == 0);
    }
  }
  SUBCASE("emitted files load back into an identical catalog") {
    SynthConfig cfg;
    cfg.outfit_count = 50;
    cfg.garments_per_cell = 6;
    SynthDataset data = generate_synthetic_catalog(cfg);
    const auto dir = temp_dir("synth");
    write_synth_files(data, dir.string());
    Catalog loaded =
        Catalog::load((dir / "outfits_train.tsv").string(), (dir / "embeddings.tsv").string());
    CHECK(loaded.garment_count() == data.catalog.garment_count());
    CHECK(loaded.outfit_count() == data.catalog.outfit_count());
    for (std::size_t g = 0; g < loaded.garment_count(); ++g) {
      const auto a = loaded.embedding(static_cast<int>(g));
      const auto b = data.catalog.embedding(static_cast<int>(g));
      for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    }
    const auto val = load_outfit_records((dir / "outfits_val.tsv").string(), loaded);
    CHECK(val.size() == data.val_outfits.size());
  }
}

TEST_CASE("run config file round trip and precedence") {
  const auto dir = temp_dir("config");
  const auto path = (dir / "run.cfg").string();
  RunConfig cfg;
  cfg.model.model_dim = 64;
  cfg.model.heads = 4;
  cfg.trainer.learning_rate = 1e-3;
  cfg.partition_size_target = 25;
  save_run_config(path, cfg);
  RunConfig loaded = load_run_config(path);
  CHECK(loaded.model.model_dim == 64);
  CHECK(loaded.trainer.learning_rate == doctest::Approx(1e-3));
  CHECK(loaded.partition_size_target == 25);
  CHECK(loaded.hash() == cfg.hash());

  // A flag applied after the file wins.
  apply_config_entry(loaded, "model_dim", "128");
  CHECK(loaded.model.model_dim == 128);
  CHECK(loaded.hash() != cfg.hash());

  std::ofstream(path) << "nonsense_key=1\n";
  CHECK_THROWS_AS(load_run_config(path), Error);
}
