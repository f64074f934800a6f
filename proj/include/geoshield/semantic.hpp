#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace geoshield {

struct SemanticReport {
  double bleu = 0.0;
  double rouge = 0.0;
  std::optional<double> bert_s;  // only with a registered scorer
};

/// Sentence BLEU over tokenize()d words: geometric mean of clipped 1..4-gram
/// precisions times the brevity penalty. Precisions for n >= 2 use add-one
/// smoothing; orders the candidate is too short for are left out of the mean.
double sentence_bleu(std::string_view reference, std::string_view candidate);

/// ROUGE-L F1 from the longest common token subsequence.
double rouge_l_f1(std::string_view reference, std::string_view candidate);

/// Plug-in slot for a learned similarity (e.g. BERTScore); must return a value in [0, 1].
using SemanticScorer = std::function<double(std::string_view reference, std::string_view candidate)>;

/// Both strings must contain at least one token, otherwise DomainError.
SemanticReport semantic_consistency(std::string_view reference, std::string_view candidate,
                                    const SemanticScorer& bert_scorer = {});

}  // namespace geoshield
