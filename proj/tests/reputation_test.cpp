#include <gtest/gtest.h>

#include "oracles.hpp"
#include "servnet/reputation.hpp"
#include "servnet/suites.hpp"

using namespace servnet;

namespace {

ScoreLedger ledger(std::uint64_t t, Rational pos, Rational neg) {
    ScoreLedger l = new_ledger(ServerId("s"));
    l.transactions = t;
    l.pos_accum = pos;
    l.neg_accum = neg;
    return l;
}

}  // namespace

TEST(LocalScore, OnlyPlusOrMinusOne) {
    EXPECT_EQ(LocalScore(1).value(), 1);
    EXPECT_EQ(LocalScore(-1).value(), -1);
    EXPECT_THROW(LocalScore(0), InvalidScore);
    EXPECT_THROW(LocalScore(2), InvalidScore);
}

TEST(Ledger, FreshLedgerIsZero) {
    const auto a = new_ledger(ServerId("S1"));
    EXPECT_EQ(a.transactions, 0u);
    EXPECT_EQ(a.pos_accum, 0);
    EXPECT_EQ(a.neg_accum, 0);
    EXPECT_EQ(global_reputation(a), 0);
    auto b = new_ledger(ServerId("S2"));
    EXPECT_NE(a, b);
    b.owner = a.owner;
    EXPECT_EQ(a, b);
}

TEST(Ledger, WeightedPositiveAddsScorerReputation) {
    const auto l = apply_feedback(new_ledger(ServerId("s")), LocalScore::positive(), Rational(5),
                                  WeightMode::ReputationWeighted);
    EXPECT_EQ(l, ledger(1, 5, 0));
    EXPECT_EQ(global_reputation(l), 5);
}

TEST(Ledger, ZeroReputationNegativeAddsNothing) {
    const auto l = apply_feedback(new_ledger(ServerId("s")), LocalScore::negative(), Rational(0),
                                  WeightMode::ReputationWeighted);
    EXPECT_EQ(l, ledger(1, 0, 0));
}

TEST(Ledger, UnitNegativeIgnoresScorer) {
    const auto l = apply_feedback(ledger(9, 9, 0), LocalScore::negative(), Rational(1234), WeightMode::Unit);
    EXPECT_EQ(l, ledger(10, 9, 1));
    EXPECT_EQ(global_reputation(l), 45);
}

TEST(Ledger, NegativeScorerReputationThrows) {
    EXPECT_THROW(apply_feedback(new_ledger(ServerId("s")), LocalScore::positive(), Rational(-1),
                                WeightMode::ReputationWeighted),
                 std::invalid_argument);
}

TEST(Ledger, DiscardedScoreOnlyCounts) {
    EXPECT_EQ(count_discarded(ledger(3, 2, 1)), ledger(4, 2, 1));
}

TEST(Ledger, ScorerWeight) {
    EXPECT_EQ(scorer_weight(Rational(7), WeightMode::Unit), 1);
    EXPECT_EQ(scorer_weight(Rational(7), WeightMode::ReputationWeighted), 7);
    EXPECT_EQ(scorer_weight(Rational(0), WeightMode::ReputationWeighted), 0);
}

TEST(Ledger, GlobalReputationExamples) {
    EXPECT_EQ(global_reputation(ledger(10, 9, 1)), 45);
    EXPECT_EQ(global_reputation(ledger(1, 5, 0)), 5);
    EXPECT_EQ(global_reputation(ledger(3, Rational(1, 2), Rational(1, 3))), Rational(9, 8));
}

TEST(Ledger, DoubleAndRationalAgree) {
    BasicScoreLedger<double> d{ServerId("s"), 0, 0.0, 0.0};
    ScoreLedger q = new_ledger(ServerId("s"));
    for (int i = 1; i <= 50; ++i) {
        const LocalScore s = i % 7 == 0 ? LocalScore::negative() : LocalScore::positive();
        d = apply_feedback(d, s, 1.5, WeightMode::ReputationWeighted);
        q = apply_feedback(q, s, Rational(3, 2), WeightMode::ReputationWeighted);
    }
    EXPECT_NEAR(global_reputation(d), global_reputation(q).convert_to<double>(), 1e-9);
}

TEST(Ledger, PositiveFromStrongerScorerHelpsMore) {
    const auto base = ledger(6, 4, 2);
    const Rational before = global_reputation(base);
    for (int hi = 1; hi <= 20; ++hi) {
        for (int lo = 0; lo < hi; ++lo) {
            const auto gain = [&](int w) {
                return global_reputation(apply_feedback(base, LocalScore::positive(), Rational(w),
                                                        WeightMode::ReputationWeighted)) -
                       before;
            };
            EXPECT_GT(gain(hi), gain(lo));
        }
    }
}

TEST(ClosedForm, Examples) {
    EXPECT_EQ(closed_form_gr(FairnessParams{10, 10}), 45);
    EXPECT_EQ(closed_form_gr(FairnessParams{0, 5}), 0);
    EXPECT_EQ(to_decimal(closed_form_gr(FairnessParams{100, 10}), 4), "818.1818");
    EXPECT_THROW(closed_form_gr(FairnessParams{10, 1}), std::invalid_argument);
}

TEST(ClosedForm, MatchesSmoothOracle) {
    for (std::uint64_t m = 2; m <= 12; ++m) {
        for (std::uint64_t t = 0; t <= 200; ++t) {
            ASSERT_EQ(closed_form_gr(FairnessParams{t, m}), oracle::smooth_gr(t, m)) << "t=" << t << " m=" << m;
        }
    }
}

TEST(ClosedForm, PeriodicLedgerMatchesTallyOracle) {
    for (std::uint64_t m = 2; m <= 12; ++m) {
        for (std::uint64_t t = 0; t <= 200; ++t) {
            ASSERT_EQ(global_reputation(periodic_ledger(t, m)), oracle::periodic_gr(t, m)) << "t=" << t << " m=" << m;
        }
    }
}

// The closed form treats negatives as spread evenly (T/m of them), so it
// agrees with a ledger exactly when a whole number of periods has elapsed.
TEST(ClosedForm, AgreesWithLedgerOnWholePeriods) {
    for (std::uint64_t m = 2; m <= 12; ++m) {
        for (std::uint64_t t = 0; t <= 200; t += m) {
            EXPECT_EQ(global_reputation(periodic_ledger(t, m)), closed_form_gr(FairnessParams{t, m}));
        }
    }
    EXPECT_EQ(global_reputation(periodic_ledger(10, 10)), 45);
}

TEST(ClosedForm, DiffersFromLedgerBetweenPeriods) {
    EXPECT_EQ(global_reputation(periodic_ledger(5, 10)), 25);
    EXPECT_EQ(closed_form_gr(FairnessParams{5, 10}), Rational(225, 15));
}

TEST(Threshold, Examples) {
    EXPECT_EQ(fairness_threshold(20, FairnessParams{100, 10}), 58u);
    EXPECT_EQ(fairness_threshold(10, FairnessParams{50, 10}), 51u);
    EXPECT_EQ(fairness_threshold(2, FairnessParams{0, 2}), 1u);
    EXPECT_LT(closed_form_gr(FairnessParams{57, 20}), closed_form_gr(FairnessParams{100, 10}));
    EXPECT_GT(closed_form_gr(FairnessParams{58, 20}), closed_form_gr(FairnessParams{100, 10}));
}

TEST(Threshold, SamePeriodIsOneMore) {
    for (std::uint64_t m = 2; m <= 12; ++m) {
        for (std::uint64_t k = 0; k <= 60; ++k) EXPECT_EQ(fairness_threshold(m, FairnessParams{k, m}), k + 1);
    }
}

TEST(Threshold, AnalyticMatchesIntegerScan) {
    for (std::uint64_t m1 = 2; m1 <= 12; ++m1) {
        for (std::uint64_t m2 = 2; m2 <= 12; ++m2) {
            for (std::uint64_t t2 = 0; t2 <= 200; t2 += 7) {
                const auto expect = oracle::scan_threshold(m1, t2, m2);
                ASSERT_EQ(fairness_threshold(m1, FairnessParams{t2, m2}), expect);
                ASSERT_EQ(fairness_threshold_by_scan(m1, FairnessParams{t2, m2}), expect);
            }
        }
    }
}

TEST(Threshold, RejectsDegeneratePeriod) {
    EXPECT_THROW(fairness_threshold(1, FairnessParams{10, 2}), std::invalid_argument);
    EXPECT_THROW(fairness_threshold(2, FairnessParams{10, 0}), std::invalid_argument);
}

TEST(Rational, DecimalAndExactText) {
    EXPECT_EQ(to_decimal(Rational(2, 3)), "0.666667");
    EXPECT_EQ(to_decimal(Rational(0)), "0.000000");
    EXPECT_EQ(to_exact(Rational(6, 4)), "3/2");
    EXPECT_EQ(to_exact(Rational(4)), "4");
    EXPECT_EQ(parse_rational("3/2"), Rational(3, 2));
    EXPECT_EQ(parse_rational("1.25"), Rational(5, 4));
    EXPECT_EQ(parse_rational("-7"), Rational(-7));
    EXPECT_THROW(parse_rational("abc"), std::invalid_argument);
    EXPECT_THROW(parse_rational("1/0"), std::invalid_argument);
}
