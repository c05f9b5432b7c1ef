"""Ranking-stability scores (quartile BLEU and Jaccard) and SHAP variance sums."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

N_QUARTILES = 4
MIN_LEN_BLEU = 8
MIN_LEN_JACCARD = 4


@dataclass(frozen=True)
class QuartileScores:
    per_quartile: tuple[float, float, float, float]
    average: float

    @classmethod
    def from_quartiles(cls, values) -> QuartileScores:
        values = tuple(float(v) for v in values)
        return cls(values, sum(values) / N_QUARTILES)


def _order(r) -> list:
    order = getattr(r, "order", r)
    return list(np.asarray(order).tolist()) if isinstance(order, np.ndarray) else list(order)


def _check_pair(a, b, min_len):
    if len(a) != len(b):
        raise ValueError(f"rankings differ in length: {len(a)} vs {len(b)}")
    if len(set(a)) != len(a) or set(a) != set(b):
        raise ValueError("rankings must be permutations of the same items")
    if len(a) < min_len:
        raise ValueError(f"need at least {min_len} ranked variables, got {len(a)}")


def quartile_bounds(length: int) -> list[tuple[int, int]]:
    """[start, stop) of each quartile: floor((q-1) V / 4) .. floor(q V / 4)."""
    return [((q * length) // N_QUARTILES, ((q + 1) * length) // N_QUARTILES) for q in range(N_QUARTILES)]


def quartile_split(order, min_len: int = MIN_LEN_JACCARD) -> list[list]:
    seq = _order(order)
    if len(seq) < min_len:
        raise ValueError(f"need at least {min_len} ranked variables, got {len(seq)}")
    return [seq[lo:hi] for lo, hi in quartile_bounds(len(seq))]


def _bigrams(seq) -> set:
    return set(zip(seq[:-1], seq[1:]))


def bigram_precisions(a, b) -> list[float]:
    """Per-quartile fraction of b's within-quartile bigrams that also occur in a's."""
    a, b = _order(a), _order(b)
    _check_pair(a, b, MIN_LEN_BLEU)
    out = []
    for qa, qb in zip(quartile_split(a, MIN_LEN_BLEU), quartile_split(b, MIN_LEN_BLEU)):
        ref = _bigrams(qb)
        out.append(len(_bigrams(qa) & ref) / len(ref))
    return out


def bleu_q(a, b) -> QuartileScores:
    """Quartile BLEU: mean over quartiles of the 4th root of the bigram precision."""
    return QuartileScores.from_quartiles(p ** 0.25 if p > 0 else 0.0 for p in bigram_precisions(a, b))


def jaccard_q(a, b) -> QuartileScores:
    """Quartile Jaccard: mean over quartiles of |A_q & B_q| / |A_q | B_q|."""
    a, b = _order(a), _order(b)
    _check_pair(a, b, MIN_LEN_JACCARD)
    scores = []
    for qa, qb in zip(quartile_split(a), quartile_split(b)):
        sa, sb = set(qa), set(qb)
        scores.append(len(sa & sb) / len(sa | sb))
    return QuartileScores.from_quartiles(scores)


def _ngrams(seq, n) -> Counter:
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def bleu(candidate, reference, max_n: int = 2) -> float:
    """Sequence BLEU with n-gram weights 1/2^n and a brevity penalty.

    Precision for each order uses clipped counts over the candidate's n-grams.
    For two permutations of one item set the unigram precision and the brevity
    penalty are both 1.
    """
    cand, ref = _order(candidate), _order(reference)
    if max_n < 1 or max_n > min(len(cand), len(ref)):
        raise ValueError(f"max_n must lie in [1, {min(len(cand), len(ref))}]")
    score = float(np.exp(min(0.0, 1.0 - len(cand) / len(ref))))
    for n in range(1, max_n + 1):
        cc, rc = _ngrams(cand, n), _ngrams(ref, n)
        p = sum((cc & rc).values()) / sum(cc.values())
        if p == 0.0:
            return 0.0
        score *= p ** (1.0 / 2 ** n)
    return score


METRICS: dict[str, Callable] = {"bleu_q": bleu_q, "jaccard_q": jaccard_q}


def mean_pairwise(rankings: Sequence, metric) -> tuple[float, tuple[float, ...]]:
    """Mean score over all unordered pairs, of the average and of each quartile.

    Pairs are visited in lexicographic index order and summed sequentially.
    """
    fn = METRICS[metric] if isinstance(metric, str) else metric
    if len(rankings) < 2:
        raise ValueError(f"need at least 2 rankings, got {len(rankings)}")
    lengths = {len(_order(r)) for r in rankings}
    if len(lengths) != 1:
        raise ValueError(f"rankings have differing lengths {sorted(lengths)}")
    avg = 0.0
    quart = [0.0] * N_QUARTILES
    n_pairs = 0
    for ra, rb in combinations(rankings, 2):
        s = fn(ra, rb)
        avg += s.average
        for q in range(N_QUARTILES):
            quart[q] += s.per_quartile[q]
        n_pairs += 1
    return avg / n_pairs, tuple(v / n_pairs for v in quart)


def variance_sums(shap_stack) -> np.ndarray:
    """Per variable: sum over instances of the sample variance (ddof=1) of |shap| across simulations.

    ``shap_stack`` has shape (S, N, V); signs are discarded before the variance.
    """
    stack = np.abs(np.asarray(shap_stack, dtype=np.float64))
    if stack.ndim != 3:
        raise ValueError(f"expected an (S, N, V) stack, got shape {stack.shape}")
    if stack.shape[0] < 2:
        raise ValueError(f"need at least 2 simulations, got {stack.shape[0]}")
    # Shift by the first simulation so identical samples give exactly zero.
    dev = stack - stack[0]
    dev -= dev.mean(axis=0)
    return (np.square(dev).sum(axis=0) / (stack.shape[0] - 1)).sum(axis=0)


def variance_sum(shap_stack, j: int) -> float:
    return float(variance_sums(shap_stack)[j])
