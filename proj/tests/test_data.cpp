#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <set>

#include <nlohmann/json.hpp>

#include "ham/data.hpp"
#include "ham/errors.hpp"

using namespace ham;

namespace {

GenerateConfig small_config(double noise = 0.0) {
  GenerateConfig c;
  c.num_classes = 3;
  c.input_dim = 4;
  c.n_per_domain = 60;
  c.domains = {{0, 0.0, 1.0, {}, 1.0, noise}, {1, 0.5, 2.0, {1.0}, 0.5, noise}, {2, 3.0, 0.5, {0, 2}, 1.0, noise}};
  return c;
}

std::shared_ptr<const Dataset> shared(Dataset ds) { return std::make_shared<const Dataset>(std::move(ds)); }

}  // namespace

TEST_CASE("generate") {
  SUBCASE("default config is four domains of 500") {
    const auto ds = generate(GenerateConfig{});
    CHECK(ds.samples.size() == 2000);
    CHECK(ds.domain_ids() == std::vector<int>{0, 1, 2, 3});
    for (int d : ds.domain_ids()) {
      CHECK(std::count_if(ds.samples.begin(), ds.samples.end(), [&](const Sample& s) { return s.domain_id == d; }) ==
            500);
    }
  }
  SUBCASE("deterministic") { CHECK(generate(small_config(0.2)).samples == generate(small_config(0.2)).samples); }
  SUBCASE("different seeds differ") {
    auto c = small_config();
    auto d = c;
    d.seed = c.seed + 1;
    CHECK(generate(c).samples != generate(d).samples);
  }
  SUBCASE("no label noise means no corrupted samples") {
    const auto ds = generate(small_config(0.0));
    CHECK(std::none_of(ds.samples.begin(), ds.samples.end(), [](const Sample& s) { return s.corrupted; }));
  }
  SUBCASE("corrupted labels differ from the generative class") {
    auto c = small_config(0.4);
    const auto ds = generate(c);
    std::size_t flipped = 0;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
      const auto& s = ds.samples[i];
      const auto generative = (i % c.n_per_domain) % c.num_classes;
      CHECK(s.y < c.num_classes);
      CHECK(s.corrupted == (s.y != generative));
      flipped += s.corrupted;
    }
    // 180 draws at rate 0.4: mean 72, sd 6.6.
    CHECK(flipped > 40);
    CHECK(flipped < 105);
  }
  SUBCASE("identical specs give identically distributed domains") {
    GenerateConfig c;
    c.num_classes = 4;
    c.input_dim = 3;
    c.n_per_domain = 4000;
    c.domains = {{0, 0.4, 1.3, {0.5}, 1.0, 0.0}, {1, 0.4, 1.3, {0.5}, 1.0, 0.0}};
    const auto ds = generate(c);
    for (std::size_t j = 0; j < c.input_dim; ++j) {
      double m[2] = {0, 0}, m2[2] = {0, 0};
      for (const auto& s : ds.samples) {
        m[s.domain_id] += s.x[j];
        m2[s.domain_id] += s.x[j] * s.x[j];
      }
      const double n = static_cast<double>(c.n_per_domain);
      const double mean0 = m[0] / n, mean1 = m[1] / n;
      const double sd = std::sqrt(std::max(m2[0] / n - mean0 * mean0, m2[1] / n - mean1 * mean1));
      // Difference of two means has sd sigma * sqrt(2/n); 3 sigma / sqrt(n) per the oracle.
      CHECK(std::abs(mean0 - mean1) < 3.0 * sd * std::sqrt(2.0) / std::sqrt(n));
    }
  }
  SUBCASE("class means are at least 2 apart") {
    GenerateConfig c;
    c.num_classes = 6;
    c.input_dim = 2;
    c.n_per_domain = 6000;
    c.domains = {{0, 0.0, 1.0, {}, 0.0, 0.0}};
    const auto ds = generate(c);
    std::map<std::size_t, std::vector<double>> mean;
    for (const auto& s : ds.samples) mean[s.y] = s.x;
    for (std::size_t a = 0; a < 6; ++a) {
      for (std::size_t b = a + 1; b < 6; ++b) {
        CHECK(std::hypot(mean[a][0] - mean[b][0], mean[a][1] - mean[b][1]) >= 2.0 - 1e-12);
      }
    }
  }
  SUBCASE("domain transform is rotate, scale, offset") {
    GenerateConfig c;
    c.num_classes = 2;
    c.input_dim = 3;
    c.n_per_domain = 2;
    c.domains = {{0, 0.0, 1.0, {}, 0.0, 0.0}, {1, M_PI / 2, 2.0, {1.0, -1.0, 0.5}, 0.0, 0.0}};
    const auto ds = generate(c);
    for (std::size_t i = 0; i < 2; ++i) {
      const auto& base = ds.samples[i].x;
      const auto& moved = ds.samples[2 + i].x;
      CHECK(moved[0] == doctest::Approx(-2.0 * base[1] + 1.0).epsilon(1e-12));
      CHECK(moved[1] == doctest::Approx(2.0 * base[0] - 1.0).epsilon(1e-12));
      CHECK(moved[2] == doctest::Approx(2.0 * base[2] + 0.5).epsilon(1e-12));
    }
  }
  SUBCASE("invalid configs name the field") {
    auto c = small_config();
    c.num_classes = 1;
    try {
      generate(c);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(e.field() == "data.num_classes");
    }
    c = small_config();
    c.domains[1].scale = 0.0;
    CHECK_THROWS_AS(generate(c), ConfigError);
    c = small_config();
    c.domains[0].label_noise_rate = 1.0;
    CHECK_THROWS_AS(generate(c), ConfigError);
    c = small_config();
    c.domains[0].offset = std::vector<double>(5, 0.0);
    CHECK_THROWS_AS(generate(c), ConfigError);
    c = small_config();
    c.n_per_domain = 2;
    CHECK_THROWS_AS(generate(c), ConfigError);
    c = small_config();
    c.domains[2].domain_id = 0;
    CHECK_THROWS_AS(generate(c), ConfigError);
  }
}

TEST_CASE("split_train_val") {
  auto ds = shared(generate(small_config()));
  const auto all = DatasetView::all(ds);
  SUBCASE("80/20 per domain") {
    GenerateConfig c = small_config();
    c.n_per_domain = 100;
    auto big = shared(generate(c));
    auto sp = split_train_val(DatasetView::all(big), 3);
    for (int d : {0, 1, 2}) {
      CHECK(sp.train.only_domain(d).size() == 80);
      CHECK(sp.val.only_domain(d).size() == 20);
    }
  }
  SUBCASE("partition of the parent") {
    auto sp = split_train_val(all, 5);
    std::multiset<std::size_t> u(sp.train.indices().begin(), sp.train.indices().end());
    u.insert(sp.val.indices().begin(), sp.val.indices().end());
    CHECK(std::multiset<std::size_t>(all.indices().begin(), all.indices().end()) == u);
    std::set<std::size_t> t(sp.train.indices().begin(), sp.train.indices().end());
    for (auto i : sp.val.indices()) CHECK(t.count(i) == 0);
  }
  SUBCASE("deterministic, seed dependent") {
    CHECK(split_train_val(all, 5).val.indices() == split_train_val(all, 5).val.indices());
    CHECK(split_train_val(all, 5).val.indices() != split_train_val(all, 6).val.indices());
  }
  SUBCASE("stratification rounding") {
    GenerateConfig c = small_config();
    c.n_per_domain = 37;
    auto odd = shared(generate(c));
    auto sp = split_train_val(DatasetView::all(odd), 1);
    for (int d : {0, 1, 2}) {
      const auto n = sp.val.only_domain(d).size();
      CHECK((n == 7 || n == 8));
    }
  }
  SUBCASE("too-small domain") {
    auto tiny = all.only_domain(0);
    DatasetView four(ds, std::vector<std::size_t>(tiny.indices().begin(), tiny.indices().begin() + 4));
    CHECK_THROWS_AS(split_train_val(four, 1), ConfigError);
  }
  SUBCASE("views") {
    CHECK(all.only_domain(1).size() == 60);
    CHECK(all.without_domain(1).size() == 120);
    CHECK(all.only_domain(0).concat(all.only_domain(2)).size() == 120);
    auto other = shared(generate(small_config()));
    CHECK_THROWS_AS(all.concat(DatasetView::all(other)), StructuralError);
  }
}

TEST_CASE("batch_iter") {
  GenerateConfig c = small_config();
  c.n_per_domain = 50;
  c.domains.resize(1);
  auto ds = shared(generate(c));
  const auto view = DatasetView::all(ds);
  SUBCASE("sizes") {
    auto b = batch_iter(view, 24, 1, 0);
    REQUIRE(b.size() == 3);
    CHECK(b[0].size() == 24);
    CHECK(b[1].size() == 24);
    CHECK(b[2].size() == 2);
  }
  SUBCASE("epochs permute the same multiset") {
    auto flat = [](const std::vector<Batch>& bs) {
      std::vector<const Sample*> v;
      for (const auto& b : bs) v.insert(v.end(), b.begin(), b.end());
      return v;
    };
    auto e0 = flat(batch_iter(view, 24, 1, 0));
    auto e1 = flat(batch_iter(view, 24, 1, 1));
    CHECK(e0 != e1);
    CHECK(flat(batch_iter(view, 24, 1, 0)) == e0);
    std::sort(e0.begin(), e0.end());
    std::sort(e1.begin(), e1.end());
    CHECK(e0 == e1);
  }
  SUBCASE("stream cycles epochs") {
    BatchStream s(view, 24, 1);
    const auto e0 = batch_iter(view, 24, 1, 0);
    const auto e1 = batch_iter(view, 24, 1, 1);
    CHECK(s.next() == e0[0]);
    CHECK(s.next() == e0[1]);
    CHECK(s.next() == e0[2]);
    CHECK(s.next() == e1[0]);
  }
  SUBCASE("invalid") { CHECK_THROWS_AS(batch_iter(view, 0, 1, 0), DomainError); }
}

TEST_CASE("csv") {
  SUBCASE("three-sample round trip") {
    Dataset ds;
    ds.input_dim = 2;
    ds.num_classes = 3;
    ds.samples = {{{0.1, -2.5}, 0, 0, false}, {{1e-300, 3.0}, 2, 1, true}, {{-0.0, 7.25}, 1, 5, false}};
    const auto back = parse_csv(to_csv(ds));
    CHECK(back == ds);
    CHECK(back.input_dim == 2);
    CHECK(back.num_classes == 3);
    CHECK(to_csv(back) == to_csv(ds));
  }
  SUBCASE("header") {
    Dataset ds;
    ds.input_dim = 2;
    CHECK(to_csv(ds) == "x_0,x_1,y,domain_id,corrupted\n");
  }
  SUBCASE("large round trip is bit-exact") {
    GenerateConfig c;
    c.n_per_domain = 2500;
    const auto ds = generate(c);
    CHECK(ds.samples.size() == 10000);
    const auto dir = std::filesystem::temp_directory_path() / "ham_test_csv";
    save_csv(ds, dir / "d.csv");
    CHECK(load_csv(dir / "d.csv").samples == ds.samples);
    std::filesystem::remove_all(dir);
  }
  SUBCASE("malformed rows report the line") {
    const std::string header = "x_0,x_1,y,domain_id,corrupted\n";
    try {
      parse_csv(header + "1,2,0,0,0\n1,2,0,0\n");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
    }
    try {
      parse_csv(header + "1,abc,0,0,0\n");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
    CHECK_THROWS_AS(parse_csv("x_0,y,domain_id\n1,0,0\n"), ParseError);
    CHECK_THROWS_AS(parse_csv(header + "1,2,0,0,2\n"), ParseError);
    CHECK_THROWS_AS(parse_csv(header + "1,2,7,0,0\n", 3), ParseError);
    CHECK_THROWS_AS(parse_csv(""), ParseError);
  }
}

TEST_CASE("generation config json") {
  const auto c = small_config(0.1);
  nlohmann::json j = c;
  CHECK(generate_config_from_json(j) == c);
  j["bogus"] = 1;
  CHECK_THROWS_AS(generate_config_from_json(j), ConfigError);
  nlohmann::json k = c;
  k["domains"][0]["scale"] = "big";
  CHECK_THROWS_AS(generate_config_from_json(k, "data"), ConfigError);
  nlohmann::json neg = c;
  neg["num_classes"] = -3;
  CHECK_THROWS_AS(generate_config_from_json(neg, "data"), ConfigError);
}
