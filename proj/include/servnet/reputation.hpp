// Reputation algebra: per-server score ledgers, weighted feedback
// accumulation and global reputation GR = T * POS / (NEG + 1).

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <boost/multiprecision/gmp.hpp>

#include "servnet/ids.hpp"

namespace servnet {

using Rational = boost::multiprecision::mpq_rational;
using BigInt = boost::multiprecision::mpz_int;

class InvalidScore : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A single +1 / -1 judgement one trading party gives the other.
class LocalScore {
public:
    explicit LocalScore(int value) : value_(value) {
        if (value != 1 && value != -1) {
            throw InvalidScore("local score must be +1 or -1, got " + std::to_string(value));
        }
    }

    static LocalScore positive() { return LocalScore(1); }
    static LocalScore negative() { return LocalScore(-1); }

    int value() const { return value_; }
    bool is_positive() const { return value_ > 0; }

    friend bool operator==(LocalScore, LocalScore) = default;

private:
    int value_;
};

enum class WeightMode { Unit, ReputationWeighted };

inline const char* to_string(WeightMode mode) {
    return mode == WeightMode::Unit ? "UNIT" : "REPUTATION_WEIGHTED";
}

/// Accumulator from which a server's global reputation is computed.
/// `Scalar` is `Rational` for exact bookkeeping or `double` for quick
/// analysis.
template <typename Scalar>
struct BasicScoreLedger {
    ServerId owner;
    std::uint64_t transactions = 0;
    Scalar pos_accum = 0;
    Scalar neg_accum = 0;

    friend bool operator==(const BasicScoreLedger&, const BasicScoreLedger&) = default;
};

using ScoreLedger = BasicScoreLedger<Rational>;

template <typename Scalar = Rational>
BasicScoreLedger<Scalar> new_ledger(ServerId owner) {
    return BasicScoreLedger<Scalar>{std::move(owner), 0, Scalar(0), Scalar(0)};
}

template <typename Scalar>
Scalar scorer_weight(const Scalar& rep, WeightMode mode) {
    if (mode == WeightMode::Unit) return Scalar(1);
    return rep;
}

/// Applies one feedback event. Every event counts as a transaction; the
/// score lands in POS or NEG with the scorer's weight.
template <typename Scalar>
BasicScoreLedger<Scalar> apply_feedback(BasicScoreLedger<Scalar> ledger, LocalScore score,
                                        const Scalar& scorer_reputation, WeightMode mode) {
    if (scorer_reputation < 0) {
        throw std::invalid_argument("scorer reputation must be non-negative");
    }
    const Scalar w = scorer_weight(scorer_reputation, mode);
    ledger.transactions += 1;
    if (score.is_positive()) {
        ledger.pos_accum += w;
    } else {
        ledger.neg_accum += w;
    }
    return ledger;
}

/// Counts a transaction whose score was discarded (e.g. a flagged giver).
template <typename Scalar>
BasicScoreLedger<Scalar> count_discarded(BasicScoreLedger<Scalar> ledger) {
    ledger.transactions += 1;
    return ledger;
}

template <typename Scalar>
Scalar global_reputation(const BasicScoreLedger<Scalar>& ledger) {
    return Scalar(ledger.transactions) * ledger.pos_accum / (ledger.neg_accum + Scalar(1));
}

// Fairness model: a peer with `t` transactions that receives a negative
// score once every `m` transactions, all scores unweighted.
struct FairnessParams {
    std::uint64_t t = 0;
    std::uint64_t m = 2;
};

inline void check_period(std::uint64_t m) {
    if (m < 2) throw std::invalid_argument("negative-score period m must be >= 2");
}

template <typename Scalar = Rational>
Scalar closed_form_gr(const FairnessParams& p) {
    check_period(p.m);
    const Scalar t(p.t);
    const Scalar m(p.m);
    return t * t * (m - Scalar(1)) / (t + m);
}

/// Smallest T1 with closed_form_gr(T1, m1) > closed_form_gr(peer2), from the
/// positive root of (m1-1) T^2 - k T - m1 k = 0, k = GR of peer 2.
inline std::uint64_t fairness_threshold(std::uint64_t m1, const FairnessParams& peer2) {
    check_period(m1);
    const Rational k = closed_form_gr(peer2);
    const double kd = k.convert_to<double>();
    const double a = static_cast<double>(m1 - 1);
    const double disc = kd * kd + 4.0 * a * static_cast<double>(m1) * kd;
    const double root = (kd + std::sqrt(disc)) / (2.0 * a);

    // Strict inequality: T1 must exceed the root. Floating error is bounded
    // by a couple of steps, which the exact comparisons below absorb.
    auto t1 = static_cast<std::uint64_t>(std::floor(root)) + 1;
    auto beats = [&](std::uint64_t t) { return closed_form_gr(FairnessParams{t, m1}) > k; };
    while (t1 > 1 && beats(t1 - 1)) --t1;
    while (!beats(t1)) ++t1;
    return t1;
}

/// Same answer by walking T1 = 1, 2, ... with exact comparisons.
inline std::uint64_t fairness_threshold_by_scan(std::uint64_t m1, const FairnessParams& peer2) {
    check_period(m1);
    const Rational k = closed_form_gr(peer2);
    std::uint64_t t1 = 1;
    while (!(closed_form_gr(FairnessParams{t1, m1}) > k)) ++t1;
    return t1;
}

/// Fixed-point decimal rendering, round half up. Assumes value >= 0.
inline std::string to_decimal(const Rational& value, int places = 6) {
    BigInt scale = 1;
    for (int i = 0; i < places; ++i) scale *= 10;
    const BigInt num = boost::multiprecision::numerator(value);
    const BigInt den = boost::multiprecision::denominator(value);
    const bool negative = num < 0;
    const BigInt abs_num = negative ? BigInt(-num) : num;
    BigInt scaled = (abs_num * scale * 2 + den) / (den * 2);
    const BigInt whole = scaled / scale;
    std::string frac = BigInt(scaled % scale).str();
    if (places > 0) frac.insert(0, static_cast<std::size_t>(places) - frac.size(), '0');
    std::string out = negative && scaled != 0 ? "-" : "";
    out += whole.str();
    if (places > 0) out += "." + frac;
    return out;
}

inline std::string to_exact(const Rational& value) {
    return value.str();
}

/// Accepts "p/q", integers and plain decimals ("0.5"). Throws
/// std::invalid_argument on anything else.
inline Rational parse_rational(const std::string& text) {
    auto digits_only = [](const std::string& s, bool allow_sign) {
        if (s.empty()) return false;
        std::size_t i = 0;
        if (allow_sign && (s[0] == '-' || s[0] == '+')) i = 1;
        if (i == s.size()) return false;
        for (; i < s.size(); ++i) {
            if (s[i] < '0' || s[i] > '9') return false;
        }
        return true;
    };
    const auto strip_plus = [](std::string s) {
        if (!s.empty() && s[0] == '+') s.erase(0, 1);
        return s;
    };
    if (auto slash = text.find('/'); slash != std::string::npos) {
        const std::string p = text.substr(0, slash);
        const std::string q = text.substr(slash + 1);
        if (!digits_only(p, true) || !digits_only(q, false)) {
            throw std::invalid_argument("not a rational: " + text);
        }
        const BigInt den(q);
        if (den == 0) throw std::invalid_argument("zero denominator: " + text);
        return Rational(BigInt(strip_plus(p)), den);
    }
    if (auto dot = text.find('.'); dot != std::string::npos) {
        const std::string whole = text.substr(0, dot);
        const std::string frac = text.substr(dot + 1);
        const bool whole_ok = whole.empty() || whole == "-" || whole == "+" || digits_only(whole, true);
        if (!whole_ok || !digits_only(frac, false)) {
            throw std::invalid_argument("not a decimal: " + text);
        }
        const bool negative = !whole.empty() && whole[0] == '-';
        std::string unsigned_whole = whole;
        if (!unsigned_whole.empty() && (unsigned_whole[0] == '-' || unsigned_whole[0] == '+')) {
            unsigned_whole.erase(0, 1);
        }
        BigInt scale = 1;
        for (std::size_t i = 0; i < frac.size(); ++i) scale *= 10;
        BigInt num = BigInt(unsigned_whole.empty() ? "0" : unsigned_whole) * scale + BigInt(frac);
        if (negative) num = -num;
        return Rational(num, scale);
    }
    if (!digits_only(text, true)) throw std::invalid_argument("not a number: " + text);
    return Rational(BigInt(strip_plus(text)));
}

}  // namespace servnet
