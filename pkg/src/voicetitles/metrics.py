"""ROUGE-1/2/L F1 and duplicate-unigram counts over lower-cased whitespace words."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass


def tokenize(text):
    return text.lower().split()


def _f1(overlap, n_cand, n_ref):
    if overlap == 0 or n_cand == 0 or n_ref == 0:
        return 0.0
    p = overlap / n_cand
    r = overlap / n_ref
    return 2 * p * r / (p + r)


def ngrams(words, n):
    return Counter(tuple(words[i:i + n]) for i in range(len(words) - n + 1))


def rouge_n(candidate, reference, n):
    if n not in (1, 2):
        raise ValueError(f"n must be 1 or 2, got {n}")
    cand, ref = ngrams(candidate, n), ngrams(reference, n)
    overlap = sum((cand & ref).values())
    return _f1(overlap, sum(cand.values()), sum(ref.values()))


def lcs_length(a, b):
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference):
    return _f1(lcs_length(candidate, reference), len(candidate), len(reference))


def duplicate_unigrams(words):
    return len(words) - len(set(words))


@dataclass
class EvalReport:
    rouge1_f1: float
    rouge2_f1: float
    rougeL_f1: float
    avg_duplicates: float
    n_examples: int

    def lines(self):
        return [f"rouge1_f1={self.rouge1_f1:.4f}", f"rouge2_f1={self.rouge2_f1:.4f}",
                f"rougeL_f1={self.rougeL_f1:.4f}", f"avg_duplicates={self.avg_duplicates:.4f}",
                f"n_examples={self.n_examples}"]

    def summary_row(self):
        return (f"{self.rouge1_f1:.4f},{self.rouge2_f1:.4f},{self.rougeL_f1:.4f},"
                f"{self.avg_duplicates:.4f},{self.n_examples}")


def evaluate(predictions, references):
    """Per-example scores averaged over the corpus."""
    if len(predictions) != len(references):
        raise ValueError(f"{len(predictions)} predictions but {len(references)} references")
    if not predictions:
        raise ValueError("nothing to evaluate")
    r1 = r2 = rl = dup = 0.0
    for pred, ref in zip(predictions, references):
        c, r = tokenize(pred), tokenize(ref)
        r1 += rouge_n(c, r, 1)
        r2 += rouge_n(c, r, 2)
        rl += rouge_l(c, r)
        dup += duplicate_unigrams(c)
    n = len(predictions)
    return EvalReport(r1 / n, r2 / n, rl / n, dup / n, n)


def read_lines(path):
    # Blank lines are kept: an empty prediction is still an example.
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def evaluate_corpus(pred_path, ref_path):
    preds, refs = read_lines(pred_path), read_lines(ref_path)
    if len(preds) != len(refs):
        raise ValueError(f"line-count mismatch: {len(preds)} predictions vs {len(refs)} references")
    return evaluate(preds, refs)
