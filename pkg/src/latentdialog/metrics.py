"""Automatic evaluation: smoothed BLEU, distinct-n, ASL, TTR, KN perplexity.

All functions operate on plain token lists (no BOS/EOS framing). The BLEU
smoothing rule is frozen here and covered by golden tests: a zero-count
n-gram precision is replaced by 1 / (2 * total n-grams of that order),
and orders with no n-grams at all (hypothesis shorter than n) are left
out of the geometric mean.
"""

import math
from collections import Counter
from dataclasses import dataclass, fields


def ngrams(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def bleu_smoothed(hypothesis, reference, max_n=4):
    """Sentence BLEU in [0, 1] with the frozen smoothing rule above."""
    if not reference:
        raise ValueError("bleu_smoothed: reference must be nonempty")
    if not hypothesis:
        return 0.0
    log_precisions = []
    for n in range(1, max_n + 1):
        hyp_ngrams = Counter(ngrams(hypothesis, n))
        total = max(len(hypothesis) - n + 1, 0)
        if total == 0:
            continue
        ref_ngrams = Counter(ngrams(reference, n))
        clipped = sum((hyp_ngrams & ref_ngrams).values())
        if clipped > 0:
            precision = clipped / total
        else:
            precision = 1.0 / (2.0 * total)
        log_precisions.append(math.log(precision))
    geo_mean = sum(log_precisions) / len(log_precisions)
    brevity = min(0.0, 1.0 - len(reference) / len(hypothesis))
    return math.exp(brevity + geo_mean)


def bleu_aggregate(scores):
    """(avg, max, harmonic mean) of one query's sampled-response scores."""
    if not scores:
        raise ValueError("bleu_aggregate: need at least one score")
    avg = sum(scores) / len(scores)
    mx = max(scores)
    hm = 0.0 if avg + mx == 0.0 else 2.0 * avg * mx / (avg + mx)
    return avg, mx, hm


def intra_distinct(tokens, n):
    """Unique / total n-grams of one response.

    Responses shorter than n have no n-grams; by convention they score
    1.0 when nonempty and 0.0 when empty.
    """
    if len(tokens) < n:
        return 1.0 if tokens else 0.0
    grams = ngrams(tokens, n)
    return len(set(grams)) / len(grams)


def inter_distinct(responses, n):
    """Unique / total n-grams pooled over one query's k responses.

    The same short-input convention as intra_distinct applies to the
    pooled collection.
    """
    if not responses:
        raise ValueError("inter_distinct: need at least one response")
    pooled = []
    for toks in responses:
        pooled.extend(ngrams(toks, n))
    if not pooled:
        return 1.0 if any(responses) else 0.0
    return len(set(pooled)) / len(pooled)


def average_sentence_length(responses):
    """Mean token count per response."""
    if not responses:
        raise ValueError("average_sentence_length: empty response set")
    return sum(len(r) for r in responses) / len(responses)


def type_token_ratio(responses):
    """Unique word types over total tokens, across the whole output set."""
    total = sum(len(r) for r in responses)
    if total == 0:
        raise ValueError("type_token_ratio: no tokens")
    types = set()
    for r in responses:
        types.update(r)
    return len(types) / total


BOS_MARK = "<s>"
EOS_MARK = "</s>"
UNK_MARK = "<unk>"


class KneserNeyLm:
    """Interpolated Kneser-Ney trigram model with a fixed discount.

    Lower orders use continuation counts; the unigram level interpolates
    with the uniform distribution over the prediction vocabulary, so every
    probability is strictly positive and each context distribution sums
    to one.
    """

    def __init__(self, sentences, discount=0.75):
        if not sentences:
            raise ValueError("KneserNeyLm: training corpus is empty")
        if not 0.0 < discount < 1.0:
            raise ValueError("KneserNeyLm: discount must be in (0, 1)")
        self.discount = discount
        vocab = set()
        tri = Counter()
        for sent in sentences:
            toks = [str(t) for t in sent]
            vocab.update(toks)
            padded = [BOS_MARK, BOS_MARK] + toks + [EOS_MARK]
            for i in range(2, len(padded)):
                tri[(padded[i - 2], padded[i - 1], padded[i])] += 1
        vocab.add(EOS_MARK)
        vocab.add(UNK_MARK)
        self.vocab = vocab

        # continuation counts: cc2[(v,w)] = |{u: c(u,v,w) > 0}|,
        # cc1[w] = |{v: cc2[(v,w)] > 0}|
        cc2 = Counter()
        for (u, v, w) in tri:
            cc2[(v, w)] += 1
        cc1 = Counter()
        for (v, w) in cc2:
            cc1[w] += 1

        self._tri = tri
        self._tri_denom = Counter()
        self._tri_types = Counter()
        for (u, v, w), c in tri.items():
            self._tri_denom[(u, v)] += c
            self._tri_types[(u, v)] += 1

        self._cc2 = cc2
        self._bi_denom = Counter()
        self._bi_types = Counter()
        for (v, w), c in cc2.items():
            self._bi_denom[v] += c
            self._bi_types[v] += 1

        self._cc1 = cc1
        self._uni_denom = sum(cc1.values())
        self._uni_types = len(cc1)

    def _norm(self, token):
        return token if token in self.vocab else UNK_MARK

    def prob_unigram(self, w):
        d = self.discount
        base = 1.0 / len(self.vocab)
        if self._uni_denom == 0:
            return base
        return (
            max(self._cc1.get(w, 0) - d, 0.0) / self._uni_denom
            + d * self._uni_types / self._uni_denom * base
        )

    def prob_bigram(self, w, v):
        denom = self._bi_denom.get(v, 0)
        if denom == 0:
            return self.prob_unigram(w)
        d = self.discount
        return (
            max(self._cc2.get((v, w), 0) - d, 0.0) / denom
            + d * self._bi_types[v] / denom * self.prob_unigram(w)
        )

    def prob(self, w, u, v):
        """p(w | u, v); all tokens are normalized to the LM vocabulary."""
        w, u, v = self._norm(w), self._norm(u), self._norm(v)
        denom = self._tri_denom.get((u, v), 0)
        if denom == 0:
            return self.prob_bigram(w, v)
        d = self.discount
        return (
            max(self._tri.get((u, v, w), 0) - d, 0.0) / denom
            + d * self._tri_types[(u, v)] / denom * self.prob_bigram(w, v)
        )

    def sentence_logprob(self, tokens):
        """Sum of log p over the tokens plus the end marker."""
        padded = [BOS_MARK, BOS_MARK] + [str(t) for t in tokens] + [EOS_MARK]
        total = 0.0
        for i in range(2, len(padded)):
            p = self.prob(padded[i], padded[i - 2], padded[i - 1])
            if p <= 0.0:
                raise ArithmeticError(
                    f"KneserNeyLm: zero probability for {padded[i]!r}"
                )
            total += math.log(p)
        return total

    def perplexity(self, responses):
        """exp(mean negative log prob per token), end markers included."""
        total_lp = 0.0
        total_tokens = 0
        for toks in responses:
            total_lp += self.sentence_logprob(toks)
            total_tokens += len(toks) + 1  # + end marker
        if total_tokens == 0:
            raise ValueError("perplexity: no tokens to score")
        return math.exp(-total_lp / total_tokens)


@dataclass
class MetricReport:
    bleu_avg: float
    bleu_max: float
    bleu_hm: float
    intra1: float
    intra2: float
    inter1: float
    inter2: float
    asl: float
    ttr: float
    ppl: float

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def evaluate_responses(grouped, lm):
    """Corpus-level report from per-query (reference, hypotheses) pairs.

    grouped: list of (reference tokens, [hypothesis tokens, ...]).
    BLEU avg/max are per-query aggregates averaged over queries; the
    harmonic mean is taken of those two corpus-level numbers.
    """
    if not grouped:
        raise ValueError("evaluate_responses: no queries")
    avgs, maxes = [], []
    intra = {1: [], 2: []}
    inter = {1: [], 2: []}
    all_hyps = []
    for reference, hyps in grouped:
        if not hyps:
            raise ValueError("evaluate_responses: query with no hypotheses")
        scores = [bleu_smoothed(h, reference) for h in hyps]
        a, m, _ = bleu_aggregate(scores)
        avgs.append(a)
        maxes.append(m)
        for n in (1, 2):
            intra[n].extend(intra_distinct(h, n) for h in hyps)
            inter[n].append(inter_distinct(hyps, n))
        all_hyps.extend(hyps)
    bleu_avg = sum(avgs) / len(avgs)
    bleu_max = sum(maxes) / len(maxes)
    denom = bleu_avg + bleu_max
    bleu_hm = 0.0 if denom == 0.0 else 2.0 * bleu_avg * bleu_max / denom
    return MetricReport(
        bleu_avg=bleu_avg,
        bleu_max=bleu_max,
        bleu_hm=bleu_hm,
        intra1=sum(intra[1]) / len(intra[1]),
        intra2=sum(intra[2]) / len(intra[2]),
        inter1=sum(inter[1]) / len(inter[1]),
        inter2=sum(inter[2]) / len(inter[2]),
        asl=average_sentence_length(all_hyps),
        ttr=type_token_ratio(all_hyps),
        ppl=lm.perplexity(all_hyps),
    )
