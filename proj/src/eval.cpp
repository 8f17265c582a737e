#include "dualpf/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include "dualpf/errors.hpp"

namespace dualpf {

std::vector<int> greedy_decode(const TranslationModel& model, std::span<const int> source, std::size_t max_len) {
  Tape tape(false);
  const EncoderOutput enc = model.transformer().encode(tape, source);
  std::vector<int> prefix{kSos};
  std::vector<int> out;
  while (out.size() < max_len) {
    Tensor z = model.transformer().decode_step(tape, prefix, enc);
    Tensor omega = model.has_capsules() ? model.student_capsules(tape, enc, z) : Tensor{};
    auto logits = model.output_logits(tape, z, omega).data();
    const int next = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (next == kEos) break;
    out.push_back(next);
    prefix.push_back(next);
  }
  return out;
}

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, std::size_t> ngram_counts(const Sentence& s, std::size_t n) {
  std::map<Ngram, std::size_t> counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++counts[Ngram(s.begin() + i, s.begin() + i + n)];
  return counts;
}

Sentence fold(const Sentence& s, bool case_sensitive) {
  if (case_sensitive) return s;
  Sentence out = s;
  for (auto& t : out)
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

void require_aligned(std::size_t hyps, std::size_t refs, const char* what) {
  if (hyps != refs)
    throw ContractError(std::string(what) + ": " + std::to_string(hyps) + " hypotheses for " + std::to_string(refs) +
                        " references");
}

}  // namespace

double bleu4(std::span<const Sentence> hypotheses, std::span<const Sentence> references, bool case_sensitive) {
  require_aligned(hypotheses.size(), references.size(), "bleu4");
  if (hypotheses.empty()) throw ContractError("bleu4: empty corpus");
  double matches[4] = {0, 0, 0, 0}, totals[4] = {0, 0, 0, 0};
  double hyp_len = 0, ref_len = 0;
  for (std::size_t k = 0; k < hypotheses.size(); ++k) {
    const Sentence h = fold(hypotheses[k], case_sensitive);
    const Sentence r = fold(references[k], case_sensitive);
    hyp_len += static_cast<double>(h.size());
    ref_len += static_cast<double>(r.size());
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto hc = ngram_counts(h, n);
      const auto rc = ngram_counts(r, n);
      for (const auto& [g, c] : hc) {
        auto it = rc.find(g);
        if (it != rc.end()) matches[n - 1] += static_cast<double>(std::min(c, it->second));
      }
      if (h.size() >= n) totals[n - 1] += static_cast<double>(h.size() - n + 1);
    }
  }
  if (matches[0] == 0.0 || hyp_len == 0.0) return 0.0;
  double log_p = std::log(matches[0] / totals[0]);
  for (std::size_t n = 1; n < 4; ++n) log_p += std::log((matches[n] + 1.0) / (totals[n] + 1.0));
  const double bp = hyp_len < ref_len ? std::exp(1.0 - ref_len / hyp_len) : 1.0;
  return 100.0 * bp * std::exp(log_p / 4.0);
}

AdequacyRates adequacy_proxy(std::span<const Sentence> hypotheses, std::span<const Sentence> references) {
  require_aligned(hypotheses.size(), references.size(), "adequacy_proxy");
  double under = 0, over = 0, ref_total = 0;
  for (std::size_t k = 0; k < hypotheses.size(); ++k) {
    std::map<std::string, long> diff;
    for (const auto& t : references[k]) ++diff[t];
    for (const auto& t : hypotheses[k]) --diff[t];
    for (const auto& [tok, d] : diff) {
      if (d > 0) under += static_cast<double>(d);
      if (d < 0) over += static_cast<double>(-d);
    }
    ref_total += static_cast<double>(references[k].size());
  }
  if (ref_total == 0.0) return {0.0, over > 0.0 ? 1.0 : 0.0};
  return {under / ref_total, std::min(1.0, over / ref_total)};
}

}  // namespace dualpf
