#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dualpf/data.hpp"
#include "dualpf/model.hpp"

namespace dualpf {

// Feeds back its own argmax token until EOS or `max_len` tokens. The result
// excludes SOS and EOS. Ties go to the lowest id.
std::vector<int> greedy_decode(const TranslationModel& model, std::span<const int> source, std::size_t max_len);

// Corpus-level BLEU-4 in percent: clipped n-gram precisions, add-one
// smoothing for n >= 2, brevity penalty. Tokens are lowercased first unless
// `case_sensitive`. Throws ContractError on an empty or misaligned corpus.
double bleu4(std::span<const Sentence> hypotheses, std::span<const Sentence> references,
             bool case_sensitive = false);

struct AdequacyRates {
  double under = 0.0;  // reference tokens missing from the hypothesis
  double over = 0.0;   // surplus hypothesis tokens, capped at 1
};

// Multiset deficit/surplus of hypotheses against references, pooled over
// the corpus and divided by the total reference length.
AdequacyRates adequacy_proxy(std::span<const Sentence> hypotheses, std::span<const Sentence> references);

}  // namespace dualpf
