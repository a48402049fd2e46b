#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "phaselab/rng.hpp"

namespace phaselab {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

// Closed 64-symbol vocabulary of the micro-language.
namespace tok {
enum : Token {
    kPad = 0, kBos, kEnd,
    kEntityA, kEntityB, kEntityC, kEntityD, kEntityE, kEntityF, kEntityG, kEntityH,
    kAll, kSome, kAre, kIs, kIf, kThen, kSo, kNot, kTrue, kFalse, kYes, kNo,
    kGreater, kLess, kEquals, kPlus, kQuery, kDot, kComma, kColon,
    kLBrace, kRBrace, kLBracket, kRBracket, kLParen, kRParen,
    kDigit0, kDigit1, kDigit2, kDigit3, kDigit4, kDigit5, kDigit6, kDigit7, kDigit8, kDigit9,
    kUser, kSays, kFact, kKey, kVal, kBool, kOr, kAnd,
    kGladly, kFine, kBang, kQ, kAns, kList, kQuote, kX, kY,
    kCount
};
}  // namespace tok

inline constexpr int kVocabSize = tok::kCount;
static_assert(kVocabSize == 64);

std::string_view token_name(Token t);
std::optional<Token> token_from_name(std::string_view name);

// Space-separated rendering; `parse_tokens` inverts `render_tokens` exactly.
std::string render_tokens(std::span<const Token> tokens);
TokenSeq parse_tokens(std::string_view text);

inline Token entity(int i) { return static_cast<Token>(tok::kEntityA + i); }
inline Token digit(int d) { return static_cast<Token>(tok::kDigit0 + d); }
TokenSeq number_tokens(int value);

enum class TaskFamily {
    kSyllogism,
    kImplication,
    kOrdering,
    kAddition,
    kJsonClose,
    kJsonKey,
    kStrictBool,
    kJsonList,
    kSycophancyRelation,
    kSycophancyMath,
    kNegationBool,
    kNegationRelation,
    kAssociative,
};

inline constexpr int kTaskFamilyCount = 13;

std::string_view family_name(TaskFamily f);
// Families whose answers the conflicting preference pairs are allowed to corrupt.
bool is_logic_or_format(TaskFamily f);

// One instance of a task template. `correct`/`incorrect` end with kEnd.
struct TaskInstance {
    TaskFamily family;
    TokenSeq prompt;
    TokenSeq correct;
    TokenSeq incorrect;
};

TaskInstance sample_task(TaskFamily family, CounterRng& rng);

// Teacher-forcing corpus of prompt ++ correct answer sequences over every family.
std::vector<TokenSeq> synthetic_corpus(std::uint64_t seed, std::size_t n);

}  // namespace phaselab
