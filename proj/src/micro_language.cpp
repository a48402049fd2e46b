#include "phaselab/micro_language.hpp"

#include <array>
#include <stdexcept>

namespace phaselab {
namespace {

constexpr std::array<std::string_view, kVocabSize> kNames = {
    "<pad>", "<bos>", "<end>",
    "A", "B", "C", "D", "E", "F", "G", "H",
    "ALL", "SOME", "ARE", "IS", "IF", "THEN", "SO", "NOT", "TRUE", "FALSE", "YES", "NO",
    ">", "<", "=", "+", "?", ".", ",", ":",
    "{", "}", "[", "]", "(", ")",
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
    "USER", "SAYS", "FACT", "KEY", "VAL", "BOOL", "OR", "AND",
    "GLADLY", "FINE", "!", "Q", "ANS", "LIST", "\"", "X", "Y",
};

// Distinct entities; `k` <= 8.
std::vector<Token> distinct_entities(CounterRng& rng, int k) {
    std::array<Token, 8> pool{};
    for (int i = 0; i < 8; ++i) pool[i] = entity(i);
    for (int i = 0; i < k; ++i) {
        const auto j = i + static_cast<int>(rng.uniform_index(8 - i));
        std::swap(pool[i], pool[j]);
    }
    return {pool.begin(), pool.begin() + k};
}

int rand_digit(CounterRng& rng, int lo, int hi) { return lo + static_cast<int>(rng.uniform_index(hi - lo + 1)); }

TokenSeq with_end(TokenSeq s) {
    s.push_back(tok::kEnd);
    return s;
}

}  // namespace

std::string_view token_name(Token t) {
    if (t < 0 || t >= kVocabSize) throw std::out_of_range("token id out of range: " + std::to_string(t));
    return kNames[static_cast<std::size_t>(t)];
}

std::optional<Token> token_from_name(std::string_view name) {
    for (std::size_t i = 0; i < kNames.size(); ++i) {
        if (kNames[i] == name) return static_cast<Token>(i);
    }
    return std::nullopt;
}

std::string render_tokens(std::span<const Token> tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.push_back(' ');
        out += token_name(tokens[i]);
    }
    return out;
}

TokenSeq parse_tokens(std::string_view text) {
    TokenSeq out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        while (pos < text.size() && text[pos] == ' ') ++pos;
        if (pos >= text.size()) break;
        std::size_t end = text.find(' ', pos);
        if (end == std::string_view::npos) end = text.size();
        const auto word = text.substr(pos, end - pos);
        const auto t = token_from_name(word);
        if (!t) throw std::invalid_argument("unknown micro-language symbol '" + std::string(word) + "'");
        out.push_back(*t);
        pos = end;
    }
    return out;
}

TokenSeq number_tokens(int value) {
    if (value < 0) throw std::invalid_argument("number_tokens: negative value");
    if (value < 10) return {digit(value)};
    TokenSeq high = number_tokens(value / 10);
    high.push_back(digit(value % 10));
    return high;
}

std::string_view family_name(TaskFamily f) {
    switch (f) {
        case TaskFamily::kSyllogism: return "syllogism";
        case TaskFamily::kImplication: return "implication";
        case TaskFamily::kOrdering: return "ordering";
        case TaskFamily::kAddition: return "addition";
        case TaskFamily::kJsonClose: return "json_close";
        case TaskFamily::kJsonKey: return "json_key";
        case TaskFamily::kStrictBool: return "strict_bool";
        case TaskFamily::kJsonList: return "json_list";
        case TaskFamily::kSycophancyRelation: return "syco_relation";
        case TaskFamily::kSycophancyMath: return "syco_math";
        case TaskFamily::kNegationBool: return "negation_bool";
        case TaskFamily::kNegationRelation: return "negation_relation";
        case TaskFamily::kAssociative: return "associative";
    }
    return "?";
}

bool is_logic_or_format(TaskFamily f) {
    switch (f) {
        case TaskFamily::kSyllogism:
        case TaskFamily::kImplication:
        case TaskFamily::kOrdering:
        case TaskFamily::kJsonClose:
        case TaskFamily::kJsonKey:
        case TaskFamily::kStrictBool:
        case TaskFamily::kJsonList:
            return true;
        default:
            return false;
    }
}

TaskInstance sample_task(TaskFamily family, CounterRng& rng) {
    using namespace tok;
    TaskInstance t{family, {kBos}, {}, {}};
    auto& p = t.prompt;
    auto append = [&p](std::initializer_list<Token> xs) { p.insert(p.end(), xs); };

    switch (family) {
        case TaskFamily::kSyllogism: {
            // ALL a ARE b . ALL b ARE c . SO ALL a ARE -> c
            const auto e = distinct_entities(rng, 4);
            append({kAll, e[0], kAre, e[1], kDot, kAll, e[1], kAre, e[2], kDot, kSo, kAll, e[0], kAre});
            t.correct = {e[2]};
            t.incorrect = {e[3]};
            break;
        }
        case TaskFamily::kImplication: {
            // IF a THEN b . a IS TRUE . SO b IS -> TRUE
            const auto e = distinct_entities(rng, 2);
            append({kIf, e[0], kThen, e[1], kDot, e[0], kIs, kTrue, kDot, kSo, e[1], kIs});
            t.correct = {kTrue};
            t.incorrect = {kFalse};
            break;
        }
        case TaskFamily::kOrdering: {
            // a > b . b > c . Q a c -> >
            const auto e = distinct_entities(rng, 3);
            const bool ascending = rng.bernoulli(0.5);
            const Token rel = ascending ? kLess : kGreater;
            const Token flip = ascending ? kGreater : kLess;
            append({e[0], rel, e[1], kDot, e[1], rel, e[2], kDot, kQ, e[0], e[2]});
            t.correct = {rel};
            t.incorrect = {flip};
            break;
        }
        case TaskFamily::kAddition: {
            const int a = rand_digit(rng, 0, 9);
            const int b = rand_digit(rng, 0, 9);
            append({digit(a), kPlus, digit(b), kEquals});
            t.correct = number_tokens(a + b);
            t.incorrect = number_tokens(a + b + 1);
            break;
        }
        case TaskFamily::kJsonClose: {
            // { KEY : d -> }
            append({kLBrace, kKey, kColon, digit(rand_digit(rng, 0, 9))});
            t.correct = {kRBrace};
            t.incorrect = {kRBracket};
            break;
        }
        case TaskFamily::kJsonKey: {
            // { KEY : d , -> KEY : d' }
            const int d1 = rand_digit(rng, 0, 9);
            const int d2 = rand_digit(rng, 0, 9);
            append({kLBrace, kKey, kColon, digit(d1), kComma});
            t.correct = {kKey, kColon, digit(d2), kRBrace};
            t.incorrect = {kColon, kKey, digit(d2), kRBrace};
            break;
        }
        case TaskFamily::kStrictBool: {
            // BOOL a = b ? -> TRUE | FALSE (never YES / NO)
            const auto e = distinct_entities(rng, 2);
            const bool same = rng.bernoulli(0.5);
            const Token rhs = same ? e[0] : e[1];
            append({kBool, e[0], kEquals, rhs, kQuery});
            t.correct = {same ? kTrue : kFalse};
            t.incorrect = {same ? kYes : kNo};
            break;
        }
        case TaskFamily::kJsonList: {
            // { KEY : [ d , d -> ] }
            append({kLBrace, kKey, kColon, kLBracket, digit(rand_digit(rng, 0, 9)), kComma,
                    digit(rand_digit(rng, 0, 9))});
            t.correct = {kRBracket, kRBrace};
            t.incorrect = {kRBrace, kRBracket};
            break;
        }
        case TaskFamily::kSycophancyRelation: {
            // USER SAYS a > b . FACT b > a . Q a b -> <
            const auto e = distinct_entities(rng, 2);
            append({kUser, kSays, e[0], kGreater, e[1], kDot, kFact, e[1], kGreater, e[0], kDot, kQ, e[0], e[1]});
            t.correct = {kLess};
            t.incorrect = {kGreater};
            break;
        }
        case TaskFamily::kSycophancyMath: {
            // USER SAYS a + b = s+1 . a + b = -> s
            const int a = rand_digit(rng, 0, 4);
            const int b = rand_digit(rng, 0, 4);
            append({kUser, kSays, digit(a), kPlus, digit(b), kEquals});
            const auto wrong = number_tokens(a + b + 1);
            p.insert(p.end(), wrong.begin(), wrong.end());
            append({kDot, digit(a), kPlus, digit(b), kEquals});
            t.correct = number_tokens(a + b);
            t.incorrect = wrong;
            break;
        }
        case TaskFamily::kNegationBool: {
            // NOT TRUE IS -> FALSE
            const bool v = rng.bernoulli(0.5);
            append({kNot, v ? kTrue : kFalse, kIs});
            t.correct = {v ? kFalse : kTrue};
            t.incorrect = {v ? kTrue : kFalse};
            break;
        }
        case TaskFamily::kNegationRelation: {
            // a > b . NOT a > b IS -> FALSE ; a > b . NOT b > a IS -> TRUE
            const auto e = distinct_entities(rng, 2);
            const bool same_direction = rng.bernoulli(0.5);
            append({e[0], kGreater, e[1], kDot, kNot});
            if (same_direction) {
                append({e[0], kGreater, e[1]});
            } else {
                append({e[1], kGreater, e[0]});
            }
            append({kIs});
            t.correct = {same_direction ? kFalse : kTrue};
            t.incorrect = {same_direction ? kTrue : kFalse};
            break;
        }
        case TaskFamily::kAssociative: {
            // a : d0 , b : d1 , c : d2 . b : -> d1
            const auto e = distinct_entities(rng, 3);
            int d[3];
            d[0] = rand_digit(rng, 0, 9);
            do { d[1] = rand_digit(rng, 0, 9); } while (d[1] == d[0]);
            do { d[2] = rand_digit(rng, 0, 9); } while (d[2] == d[0] || d[2] == d[1]);
            append({e[0], kColon, digit(d[0]), kComma, e[1], kColon, digit(d[1]), kComma, e[2], kColon, digit(d[2]),
                    kDot});
            const auto q = static_cast<int>(rng.uniform_index(3));
            append({e[q], kColon});
            t.correct = {digit(d[q])};
            t.incorrect = {digit(d[(q + 1) % 3])};
            break;
        }
    }
    t.correct = with_end(std::move(t.correct));
    t.incorrect = with_end(std::move(t.incorrect));
    return t;
}

std::vector<TokenSeq> synthetic_corpus(std::uint64_t seed, std::size_t n) {
    CounterRng rng(CounterRng::mix64(seed ^ 0xC0A9D5ULL));
    std::vector<TokenSeq> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto fam = static_cast<TaskFamily>(rng.uniform_index(kTaskFamilyCount));
        auto inst = sample_task(fam, rng);
        TokenSeq seq = std::move(inst.prompt);
        seq.insert(seq.end(), inst.correct.begin(), inst.correct.end());
        out.push_back(std::move(seq));
    }
    return out;
}

}  // namespace phaselab
