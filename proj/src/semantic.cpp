#include "geoshield/semantic.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "geoshield/errors.hpp"
#include "geoshield/text.hpp"

namespace geoshield {

namespace {

using Tokens = std::vector<std::string>;

Tokens checked_tokens(std::string_view text, const char* which) {
  Tokens t = tokenize(text);
  if (t.empty()) throw DomainError(std::string(which) + " caption has no tokens");
  return t;
}

std::map<std::vector<std::string>, int> ngram_counts(const Tokens& t, std::size_t n) {
  std::map<std::vector<std::string>, int> counts;
  for (std::size_t i = 0; i + n <= t.size(); ++i)
    ++counts[std::vector<std::string>(t.begin() + i, t.begin() + i + n)];
  return counts;
}

double bleu(const Tokens& ref, const Tokens& cand) {
  constexpr std::size_t kMaxOrder = 4;
  double log_sum = 0.0;
  int orders = 0;
  for (std::size_t n = 1; n <= kMaxOrder && n <= cand.size(); ++n) {
    const auto c = ngram_counts(cand, n);
    const auto r = ngram_counts(ref, n);
    int matched = 0, total = 0;
    for (const auto& [gram, count] : c) {
      total += count;
      const auto it = r.find(gram);
      if (it != r.end()) matched += std::min(count, it->second);
    }
    double p = n == 1 ? static_cast<double>(matched) / total
                      : (matched + 1.0) / (total + 1.0);
    if (p <= 0.0) return 0.0;
    log_sum += std::log(p);
    ++orders;
  }
  const double c = static_cast<double>(cand.size());
  const double r = static_cast<double>(ref.size());
  const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return std::clamp(bp * std::exp(log_sum / orders), 0.0, 1.0);
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const Tokens& ref, const Tokens& cand) {
  const double lcs = static_cast<double>(lcs_length(ref, cand));
  if (lcs == 0.0) return 0.0;
  const double precision = lcs / cand.size();
  const double recall = lcs / ref.size();
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

double sentence_bleu(std::string_view reference, std::string_view candidate) {
  return bleu(checked_tokens(reference, "reference"), checked_tokens(candidate, "candidate"));
}

double rouge_l_f1(std::string_view reference, std::string_view candidate) {
  return rouge_l(checked_tokens(reference, "reference"), checked_tokens(candidate, "candidate"));
}

SemanticReport semantic_consistency(std::string_view reference, std::string_view candidate,
                                    const SemanticScorer& bert_scorer) {
  const Tokens ref = checked_tokens(reference, "reference");
  const Tokens cand = checked_tokens(candidate, "candidate");
  SemanticReport report{bleu(ref, cand), rouge_l(ref, cand), std::nullopt};
  if (bert_scorer) {
    const double s = bert_scorer(reference, candidate);
    if (!(s >= 0.0 && s <= 1.0)) throw ContractError("semantic scorer returned a value outside [0, 1]");
    report.bert_s = s;
  }
  return report;
}

}  // namespace geoshield
