#include <doctest.h>

#include <cmath>
#include <cstring>
#include <sstream>

#include "support.hpp"
#include "vlab/activations.hpp"
#include "vlab/error.hpp"
#include "vlab/harness.hpp"

using namespace vlab;
using testing_support::probe_corpus;

namespace {

const Model& model() {
  static const Model m = build_model(testing_support::small_config(8));
  return m;
}

const std::vector<HookSite>& sites() {
  static const std::vector<HookSite> s{HookSite{0, Stream::resid_post, 1, std::nullopt},
                                       HookSite{1, Stream::attn_out, 2, std::nullopt},
                                       HookSite{2, Stream::head_z, 1, 1}};
  return s;
}

std::string dump_bytes(const ActivationDump& d) {
  std::ostringstream os;
  write_dump(os, d);
  return os.str();
}

}  // namespace

TEST_CASE("collected rows match the cache") {
  const auto rows = collect_activations(model(), probe_corpus(), sites());
  REQUIRE(rows.size() == 3);
  CHECK(rows[2].cols() == 8);
  for (std::size_t i : {0UL, 17UL, 35UL}) {
    const ActivationCache c = model().forward_cached(probe_corpus()[i].tokens).cache;
    for (std::size_t s = 0; s < sites().size(); ++s) {
      const auto v = c.at(sites()[s]);
      const auto r = rows[s].row(i);
      CHECK(std::equal(v.begin(), v.end(), r.begin(), r.end()));
    }
  }
}

TEST_CASE("dump round trip is bit exact") {
  const ActivationDump d = make_dump(model(), probe_corpus(), sites());
  CHECK(d.config_hash == model().config_hash());
  const std::string bytes = dump_bytes(d);
  CHECK(bytes.rfind("vlab-activations 1\n", 0) == 0);
  CHECK(bytes.find("dtype f32le\n") != std::string::npos);
  CHECK(bytes.find("site head_z@L2.h1:pos-1 8\n") != std::string::npos);

  std::istringstream is(bytes);
  const ActivationDump back = read_dump(is, model().config_hash());
  CHECK(back.prompt_ids == d.prompt_ids);
  CHECK(back.sites == d.sites);
  REQUIRE(back.blocks.size() == d.blocks.size());
  for (std::size_t s = 0; s < d.blocks.size(); ++s)
    CHECK(std::memcmp(back.blocks[s].data(), d.blocks[s].data(), d.blocks[s].size() * sizeof(float)) == 0);

  const auto live = collect_activations(model(), probe_corpus(), sites());
  for (std::size_t s = 0; s < sites().size(); ++s) CHECK(back.rows(s) == round_to_float(live[s]));
  CHECK(back.find(sites()[1]) == 1);
  CHECK_THROWS_AS(back.find(HookSite{1, Stream::mlp_out, 1, std::nullopt}), DomainError);
  CHECK(dump_bytes(back) == bytes);
}

TEST_CASE("dump file helpers") {
  const ActivationDump d = make_dump(model(), probe_corpus(), sites());
  const auto path = std::filesystem::temp_directory_path() / "vlab_test_dump.bin";
  save_dump(path, d);
  CHECK(load_dump(path).blocks == d.blocks);
  CHECK_THROWS_AS(load_dump(path, std::string("0000000000000000")), DomainError);
  std::filesystem::remove(path);
  CHECK_THROWS(load_dump(path));
}

TEST_CASE("truncated and malformed dumps") {
  const std::string bytes = dump_bytes(make_dump(model(), probe_corpus(), sites()));
  const std::size_t header = bytes.find("end\n") + 4;
  for (std::size_t cut : {header + 5, bytes.size() - 1, header + 4 * 16 * 36 + 3}) {
    std::istringstream is(bytes.substr(0, cut));
    try {
      read_dump(is);
      FAIL("truncated dump accepted");
    } catch (const ParseError& e) {
      CHECK(e.offset() >= header);
      CHECK(e.offset() <= cut);
      CHECK(std::string(e.what()).find("offset") != std::string::npos);
    }
  }
  {
    std::istringstream is(bytes.substr(0, header - 10));
    CHECK_THROWS_AS(read_dump(is), ParseError);
  }
  {
    std::istringstream is(bytes + "x");
    CHECK_THROWS_AS(read_dump(is), ParseError);
  }
  {
    std::string bad = bytes;
    bad.replace(0, 16, "vlab-activations");
    bad[17] = '9';
    std::istringstream is(bad);
    CHECK_THROWS_AS(read_dump(is), ParseError);
  }
  {
    std::istringstream is(bytes);
    CHECK_THROWS_AS(read_dump(is, std::string("deadbeef")), DomainError);
  }
}

TEST_CASE("probing from a dump equals probing rounded live activations") {
  const auto& corpus = probe_corpus();
  const std::vector<HookSite> probe_sites{HookSite{1, Stream::resid_post, 1, std::nullopt},
                                          HookSite{2, Stream::mlp_out, 1, std::nullopt}};
  const auto live = collect_activations(model(), corpus, probe_sites);
  std::istringstream is(dump_bytes(make_dump(model(), corpus, probe_sites)));
  const ActivationDump d = read_dump(is, model().config_hash());

  Vector l2(corpus.size()), l3(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    l2[i] = std::sin(static_cast<double>(i));
    l3[i] = std::cos(0.5 * static_cast<double>(i));
  }
  const std::vector<Matrix> rounded{round_to_float(live[0]), round_to_float(live[1])};
  const std::vector<Matrix> from_dump{d.rows(0), d.rows(1)};
  const auto a = score_sites(probe_sites, rounded, corpus, l2, l3, ProbeSettings{});
  const auto b = score_sites(probe_sites, from_dump, corpus, l2, l3, ProbeSettings{});
  REQUIRE(a.size() == b.size());
  for (std::size_t s = 0; s < a.size(); ++s) {
    CHECK(a[s].sign_auc == b[s].sign_auc);
    CHECK(a[s].r2_pain == b[s].r2_pain);
    CHECK(a[s].rho_pleasure == b[s].rho_pleasure);
    CHECK(a[s].corr_logits == b[s].corr_logits);
  }
  // Float storage barely moves the scores relative to full precision.
  const auto exact = score_sites(probe_sites, live, corpus, l2, l3, ProbeSettings{});
  for (std::size_t s = 0; s < a.size(); ++s) CHECK(std::abs(*exact[s].r2_pain - *a[s].r2_pain) < 1e-4);
}
