#include <gtest/gtest.h>

#include <set>

#include "ugrn/data.hpp"

using namespace ugrn;
using namespace ugrn::data;

namespace {

// 10 TFs x 20 targets with a deterministic edge pattern: P = 10 (TF t -> target t).
EdgeSet diagonal_edges(std::vector<std::string>& panel, std::size_t tfs, std::size_t targets) {
    std::vector<std::string> tf;
    std::vector<Edge> e;
    for (std::size_t k = 0; k < tfs; ++k) tf.push_back("TF" + std::to_string(k));
    panel = tf;
    for (std::size_t k = 0; k < targets; ++k) panel.push_back("T" + std::to_string(k));
    for (std::size_t k = 0; k < tfs; ++k) e.push_back({tf[k], "T" + std::to_string(k)});
    return EdgeSet(e, tf);
}

}  // namespace

TEST(Synthetic, NoiselessSingleEdgeSatisfiesReluEquation) {
    SynthConfig cfg;
    cfg.genes = 2;
    cfg.tfs = 1;
    cfg.noise = 0.0;
    cfg.cells = 500;
    PlantedNetwork net;
    net.symbols = {"A", "B"};
    net.tfs = 1;
    net.weights[{0, 1}] = 2.0;
    net.bias = {0.0, 0.0};
    const auto m = simulate_expression(net, cfg);
    for (std::size_t c = 0; c < m.cells(); ++c) EXPECT_EQ(m.at(c, 1), std::max(0.0, 2.0 * m.at(c, 0)));
}

TEST(Synthetic, NoiselessDataSatisfiesPlantedEquationsEverywhere) {
    SynthConfig cfg;
    cfg.noise = 0.0;
    cfg.cells = 200;
    cfg.seed = 3;
    const auto ds = generate_synthetic(cfg);
    const auto& net = ds.planted;
    for (std::size_t c = 0; c < ds.expression.cells(); ++c) {
        for (std::size_t j = net.tfs; j < net.symbols.size(); ++j) {
            double pre = net.bias[j];
            for (const auto& [key, w] : net.weights)
                if (key.second == j) pre += w * ds.expression.at(c, key.first);
            ASSERT_EQ(ds.expression.at(c, j), std::max(0.0, pre));
        }
        for (std::size_t i = 0; i < net.tfs; ++i) {
            EXPECT_GE(ds.expression.at(c, i), 0.0);
            EXPECT_LE(ds.expression.at(c, i), cfg.tf_max);
        }
    }
}

TEST(Synthetic, SameSeedGivesIdenticalFiles) {
    SynthConfig cfg;
    cfg.cells = 50;
    cfg.seed = 42;
    const auto a = generate_synthetic(cfg);
    const auto b = generate_synthetic(cfg);
    EXPECT_EQ(expression_to_csv(a.expression), expression_to_csv(b.expression));
    EXPECT_EQ(edges_to_tsv(a.edges), edges_to_tsv(b.edges));
    cfg.seed = 43;
    EXPECT_NE(expression_to_csv(generate_synthetic(cfg).expression), expression_to_csv(a.expression));
}

TEST(Synthetic, FullDensityCountsEveryTfTargetPair) {
    SynthConfig cfg;
    cfg.genes = 10;
    cfg.tfs = 3;
    cfg.density = 1.0;
    cfg.cells = 5;
    const auto ds = generate_synthetic(cfg);
    EXPECT_EQ(ds.edges.size(), 21u);
    for (const auto& e : ds.edges.edges()) EXPECT_TRUE(ds.edges.is_tf(e.source));
}

TEST(Synthetic, RejectsInvalidConfig) {
    SynthConfig cfg;
    cfg.tfs = 0;
    EXPECT_THROW(generate_synthetic(cfg), UserError);
    cfg.tfs = 60;
    EXPECT_THROW(generate_synthetic(cfg), UserError);
    cfg = SynthConfig{};
    cfg.density = 0.0;
    EXPECT_THROW(generate_synthetic(cfg), UserError);
}

TEST(ExpressionIo, TinyCsvRoundTripsBitwise) {
    ExpressionMatrix m({"a", "b"}, 2, {0.1, 1.0 / 3.0, 2.5e-7, 6.0});
    const auto back = expression_from_csv(expression_to_csv(m));
    EXPECT_EQ(back, m);
}

TEST(ExpressionIo, RandomMatricesRoundTrip) {
    SynthConfig cfg;
    cfg.genes = 12;
    cfg.tfs = 3;
    cfg.cells = 40;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        cfg.seed = seed;
        const auto ds = generate_synthetic(cfg);
        EXPECT_EQ(expression_from_csv(expression_to_csv(ds.expression)), ds.expression);
        const auto e = edges_from_tsv(edges_to_tsv(ds.edges), nullptr, ds.edges.tfs(), nullptr);
        EXPECT_EQ(e.edges(), ds.edges.edges());
    }
}

TEST(ExpressionIo, RejectsDuplicateColumnsAndMalformedRows) {
    EXPECT_THROW(expression_from_csv("a,a\n1,2\n"), UserError);
    try {
        expression_from_csv("a,b\n1,2\n3\n");
        FAIL();
    } catch (const UserError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
    }
    EXPECT_THROW(expression_from_csv("a,b\n1,x\n"), UserError);
    EXPECT_THROW(expression_from_csv("a,b\n1,-2\n"), UserError);
    EXPECT_THROW(expression_from_csv("a,b\n"), UserError);
}

TEST(EdgeIo, UnknownSymbolIsDroppedWithWarning) {
    std::vector<std::string> known;
    for (int k = 0; k < 11; ++k) known.push_back("g" + std::to_string(k));
    std::string tsv = "# comment\n";
    for (int k = 1; k <= 9; ++k) tsv += "g0\tg" + std::to_string(k) + "\n";
    tsv += "g0\tNOPE\n";
    Warnings w;
    const auto e = edges_from_tsv(tsv, &known, std::nullopt, &w);
    EXPECT_EQ(e.size(), 9u);
    EXPECT_EQ(w.count(), 1u);
    EXPECT_EQ(e.tfs(), std::vector<std::string>{"g0"});
}

TEST(EdgeIo, EmptyFileIsValid) {
    const auto e = edges_from_tsv("# nothing here\n", nullptr, std::nullopt, nullptr);
    EXPECT_TRUE(e.empty());
}

TEST(EdgeIo, LabelColumnAndErrors) {
    const auto e = edges_from_tsv("a\tb\t1\na\tc\t0\n", nullptr, std::nullopt, nullptr);
    EXPECT_EQ(e.size(), 1u);
    EXPECT_THROW(edges_from_tsv("a\tb\t2\n", nullptr, std::nullopt, nullptr), UserError);
    EXPECT_THROW(edges_from_tsv("a b c d\n", nullptr, std::nullopt, nullptr), UserError);
    const auto pairs = pairs_from_tsv(pairs_to_tsv({{"a", "b", 1}, {"a", "c", 0}}));
    EXPECT_EQ(pairs.size(), 2u);
    EXPECT_EQ(pairs[1].label, 0);
}

TEST(EdgeSetInvariants, RejectsSelfLoopsDuplicatesAndNonTfSources) {
    EXPECT_THROW(EdgeSet({{"a", "a"}}, {"a"}), UserError);
    EXPECT_THROW(EdgeSet({{"a", "b"}, {"a", "b"}}, {"a"}), UserError);
    EXPECT_THROW(EdgeSet({{"b", "a"}}, {"a"}), UserError);
}

TEST(Hvg, FullSelectionIsIdentity) {
    SynthConfig cfg;
    cfg.genes = 8;
    cfg.tfs = 2;
    cfg.cells = 30;
    const auto m = generate_synthetic(cfg).expression;
    EXPECT_EQ(select_hvg(m, 8), m);
}

TEST(Hvg, ConstantGeneRanksLast) {
    ExpressionMatrix m({"const", "vary", "mild"}, 3, {1, 0, 1, 1, 5, 2, 1, 9, 3});
    const auto s = select_hvg(m, 2);
    EXPECT_EQ(s.symbols(), (std::vector<std::string>{"vary", "mild"}));
}

TEST(Hvg, EqualVarianceTieGoesToSmallerSymbol) {
    ExpressionMatrix m({"zeta", "alpha", "top"}, 2, {0, 0, 0, 1, 1, 9});
    const auto s = select_hvg(m, 2);
    EXPECT_EQ(s.symbols(), (std::vector<std::string>{"alpha", "top"}));
}

TEST(Hvg, TfsAreAlwaysKeptAndKMustBePositive) {
    ExpressionMatrix m({"tf", "vary", "mild"}, 3, {1, 0, 1, 1, 5, 2, 1, 9, 3});
    EXPECT_EQ(select_hvg(m, 1, {"tf"}).symbols(), (std::vector<std::string>{"tf", "vary"}));
    EXPECT_THROW(select_hvg(m, 0), UserError);
    EXPECT_THROW(select_hvg(m, 4), UserError);
}

TEST(PairSampling, BalancedRatioGivesEqualCounts) {
    std::vector<std::string> panel;
    std::vector<std::string> tf;
    std::vector<Edge> e;
    for (int k = 0; k < 5; ++k) tf.push_back("TF" + std::to_string(k));
    panel = tf;
    for (int k = 0; k < 30; ++k) panel.push_back("T" + std::to_string(k));
    for (int k = 0; k < 50; ++k) e.push_back({tf[static_cast<std::size_t>(k % 5)], "T" + std::to_string(k / 5 * 3 % 30 + k % 3)});
    std::sort(e.begin(), e.end());
    e.erase(std::unique(e.begin(), e.end()), e.end());
    // Pad to exactly 50 distinct edges.
    for (int k = 0; e.size() < 50; ++k) {
        Edge cand{tf[static_cast<std::size_t>(k % 5)], "T" + std::to_string(k % 30)};
        if (std::find(e.begin(), e.end(), cand) == e.end()) e.push_back(cand);
    }
    const EdgeSet edges(e, tf);
    const auto s = sample_pairs(edges, panel, 1.0, 9);
    EXPECT_EQ(s.positives(), 50u);
    EXPECT_EQ(s.negatives(), 50u);
}

TEST(PairSampling, HighRatioDrawsDistinctNonEdges) {
    std::vector<std::string> panel;
    // 10 TFs x 25 genes (incl. TFs): candidates = 10 * 24 - 10 = 230; use 26 -> 10*25-10 = 240.
    auto edges = diagonal_edges(panel, 10, 16);
    const std::size_t candidates = 10 * (panel.size() - 1) - 10;
    ASSERT_EQ(candidates, 240u);
    const auto s = sample_pairs(edges, panel, 10.0, 5);
    EXPECT_EQ(s.positives(), 10u);
    EXPECT_EQ(s.negatives(), 100u);
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& p : s.pairs) {
        EXPECT_TRUE(seen.insert({p.source, p.target}).second);
        EXPECT_NE(p.source, p.target);
        EXPECT_TRUE(edges.is_tf(p.source));
        if (p.label == 0) {
            EXPECT_FALSE(edges.contains(p.source, p.target));
        }
    }
}

TEST(PairSampling, SameSeedSameSampleAndRatiosNest) {
    std::vector<std::string> panel;
    auto edges = diagonal_edges(panel, 10, 20);
    EXPECT_EQ(sample_pairs(edges, panel, 3.0, 1).pairs, sample_pairs(edges, panel, 3.0, 1).pairs);
    EXPECT_NE(sample_pairs(edges, panel, 3.0, 1).pairs, sample_pairs(edges, panel, 3.0, 2).pairs);
    const auto small = sample_pairs(edges, panel, 2.0, 1).pairs;
    const auto large = sample_pairs(edges, panel, 5.0, 1).pairs;
    EXPECT_TRUE(std::equal(small.begin(), small.end(), large.begin()));
}

TEST(PairSampling, InsufficientCandidatesReportsMaximumRatio) {
    std::vector<std::string> panel;
    auto edges = diagonal_edges(panel, 2, 2);  // 2 TFs, 4 genes: candidates 2*3-2 = 4, P = 2
    try {
        sample_pairs(edges, panel, 3.0, 0);
        FAIL();
    } catch (const UserError& e) {
        EXPECT_NE(std::string(e.what()).find("maximum achievable N/P ratio 2"), std::string::npos) << e.what();
    }
}

TEST(PairSampling, ExhaustiveNegativeCheckOnSyntheticData) {
    SynthConfig cfg;
    cfg.cells = 2;
    cfg.seed = 17;
    const auto ds = generate_synthetic(cfg);
    const auto s = sample_pairs(ds.edges, ds.expression.symbols(), 2.0, 3);
    EXPECT_EQ(s.negatives(), 2 * s.positives());
    for (const auto& p : s.pairs) {
        EXPECT_TRUE(ds.edges.is_tf(p.source));
        EXPECT_EQ(p.label == 1, ds.edges.contains(p.source, p.target));
    }
}

TEST(Variants, NetworkVariantIsSubsetWithSameTfs) {
    SynthConfig cfg;
    cfg.cells = 2;
    const auto ds = generate_synthetic(cfg);
    const auto v = network_variant(ds.edges, 0.5, 1);
    EXPECT_LT(v.size(), ds.edges.size());
    for (const auto& e : v.edges()) EXPECT_TRUE(ds.edges.contains(e.source, e.target));
    EXPECT_EQ(v.tfs(), ds.edges.tfs());
}

TEST(Sampling, AllCandidatePairs) {
    auto syn = data::generate_synthetic({.genes = 10, .tfs = 3, .density = 1.0, .cells = 10, .seed = 1});
    auto all = data::all_candidate_pairs(syn.edges, syn.expression.symbols());
    EXPECT_EQ(all.positives(), 21u);
    EXPECT_EQ(all.negatives(), 3u * 9u - 21u);
}
