"""Evaluation suite: BLEU-1/2/3/4, ROUGE-1/2/L, and the proactive
questioning score (PQA) over question/suggestion confusion counts.

Conventions, stated in every report header:
  - BLEU-n is the cumulative score (brevity penalty times the geometric
    mean of clipped precisions for orders 1..n); no smoothing unless
    requested.  Corpus BLEU aggregates clipped counts and lengths over
    all pairs before computing.
  - Corpus ROUGE is the arithmetic mean of per-sample F1.
  - All metrics are reported on a 0..1 scale.

The PQA "paper" variant evaluates the published equations cell-exactly,
including the recall denominator that uses the both-suggestion count;
the "f1" variant is conventional question-class F1.  Zero denominators
yield 0 with a degenerate flag so batch evaluation never aborts.
"""
from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from .core import AnswerKind
from .llm import LlmClient, PolishError

# --- tokenizers ---

_ASCII_RUN = re.compile(r"[A-Za-z0-9]+|\S")


def char_tokenize(text: str) -> list[str]:
    """Character-level tokens; contiguous ASCII alphanumeric runs stay
    whole so mixed Chinese/Latin text is not shredded per letter."""
    return _ASCII_RUN.findall(text)


def whitespace_tokenize(text: str) -> list[str]:
    return text.split()


class DictTokenizer:
    """Greedy forward maximum matching against a lexicon file (one word
    per line); unmatched positions fall back to single characters."""

    def __init__(self, lexicon_path):
        with open(lexicon_path, "r", encoding="utf-8") as fh:
            self.lexicon = {w.strip() for w in fh if w.strip()}
        self.max_len = max((len(w) for w in self.lexicon), default=1)

    def __call__(self, text: str) -> list[str]:
        tokens = []
        i = 0
        while i < len(text):
            if text[i].isspace():
                i += 1
                continue
            for size in range(min(self.max_len, len(text) - i), 1, -1):
                if text[i : i + size] in self.lexicon:
                    tokens.append(text[i : i + size])
                    i += size
                    break
            else:
                tokens.append(text[i])
                i += 1
        return tokens


TOKENIZERS: dict[str, Callable[[str], list[str]]] = {
    "char": char_tokenize,
    "whitespace": whitespace_tokenize,
}


def get_tokenizer(spec: str) -> Callable[[str], list[str]]:
    """Resolve "char", "whitespace", or "dict:<lexicon path>"."""
    if spec in TOKENIZERS:
        return TOKENIZERS[spec]
    if spec.startswith("dict:"):
        return DictTokenizer(spec[len("dict:"):])
    raise KeyError(f"unknown tokenizer {spec!r}")


# --- question/suggestion classifier ---

DEFAULT_INTERROGATIVES = (
    "吗", "呢", "多久", "是否", "有没有", "什么", "哪", "请问",
)

_TRAILING_PUNCT = "。！!，,；;、．.…～~ \t"


def classify_answer(
    text: str, interrogatives: Sequence[str] = DEFAULT_INTERROGATIVES
) -> AnswerKind:
    """Question iff the text carries a question mark or an interrogative
    lexicon entry in sentence-leading or sentence-final position;
    everything else is a suggestion.  Deterministic and total."""
    if "？" in text or "?" in text:
        return AnswerKind.QUESTION
    for segment in re.split(r"[。！!；;]", text):
        segment = segment.strip().rstrip(_TRAILING_PUNCT)
        if not segment:
            continue
        for word in interrogatives:
            if segment.startswith(word) or segment.endswith(word):
                return AnswerKind.QUESTION
    return AnswerKind.SUGGESTION


_CLASSIFIERS: dict[str, Callable[[str], AnswerKind]] = {"default": classify_answer}


def register_classifier(name: str, fn: Callable[[str], AnswerKind]):
    _CLASSIFIERS[name] = fn


def get_classifier(name: str) -> Callable[[str], AnswerKind]:
    return _CLASSIFIERS[name]


# --- BLEU ---

@dataclass(frozen=True)
class BleuScore:
    bleu: tuple[float, float, float, float]  # cumulative BLEU-1..4
    precisions: tuple[float, float, float, float]
    brevity_penalty: float
    degenerate: bool = False


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _clipped_counts(
    hyp: Sequence[str], ref: Sequence[str], max_order: int
) -> list[tuple[int, int]]:
    """(clipped match count, hypothesis n-gram count) per order 1..max_order."""
    out = []
    for n in range(1, max_order + 1):
        hyp_ngrams = _ngrams(hyp, n)
        ref_ngrams = _ngrams(ref, n)
        matches = sum(min(c, ref_ngrams[g]) for g, c in hyp_ngrams.items())
        out.append((matches, sum(hyp_ngrams.values())))
    return out


def _bleu_from_stats(
    stats: list[tuple[int, int]], hyp_len: int, ref_len: int, smooth: bool
) -> BleuScore:
    if hyp_len == 0:
        return BleuScore((0.0,) * 4, (0.0,) * 4, 0.0, degenerate=True)
    precisions = []
    for matches, total in stats:
        if smooth:
            precisions.append((matches + 1) / (total + 1))
        else:
            precisions.append(matches / total if total else 0.0)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    scores = []
    for n in range(1, len(precisions) + 1):
        head = precisions[:n]
        if any(p == 0.0 for p in head):
            scores.append(0.0)
        else:
            scores.append(bp * math.exp(sum(math.log(p) for p in head) / n))
    while len(scores) < 4:
        scores.append(0.0)
        precisions.append(0.0)
    return BleuScore(tuple(scores[:4]), tuple(precisions[:4]), bp)


def bleu(
    hyp: Sequence[str], ref: Sequence[str], max_order: int = 4, smooth: bool = False
) -> BleuScore:
    """Sentence-level cumulative BLEU with clipped n-gram precisions."""
    if not 1 <= max_order <= 4:
        raise ValueError("max_order must be in 1..4")
    stats = _clipped_counts(hyp, ref, max_order)
    return _bleu_from_stats(stats, len(hyp), len(ref), smooth)


def corpus_bleu(
    pairs: Iterable[tuple[Sequence[str], Sequence[str]]],
    max_order: int = 4,
    smooth: bool = False,
) -> BleuScore:
    """Corpus BLEU: clipped counts and lengths aggregated over all pairs."""
    totals = [[0, 0] for _ in range(max_order)]
    hyp_len = ref_len = 0
    for hyp, ref in pairs:
        hyp_len += len(hyp)
        ref_len += len(ref)
        for i, (m, t) in enumerate(_clipped_counts(hyp, ref, max_order)):
            totals[i][0] += m
            totals[i][1] += t
    return _bleu_from_stats([tuple(t) for t in totals], hyp_len, ref_len, smooth)


# --- ROUGE ---

@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float
    degenerate: bool = False


def _prf(overlap: int, hyp_total: int, ref_total: int) -> RougeScore:
    if hyp_total == 0 or ref_total == 0:
        return RougeScore(0.0, 0.0, 0.0, degenerate=True)
    p = overlap / hyp_total
    r = overlap / ref_total
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return RougeScore(p, r, f1)


def rouge_n(hyp: Sequence[str], ref: Sequence[str], n: int) -> RougeScore:
    """ROUGE-N with clipped (multiset) n-gram overlap."""
    hyp_ngrams = _ngrams(hyp, n)
    ref_ngrams = _ngrams(ref, n)
    overlap = sum(min(c, ref_ngrams[g]) for g, c in hyp_ngrams.items())
    return _prf(overlap, sum(hyp_ngrams.values()), sum(ref_ngrams.values()))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence length, O(len(a) * len(b))."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(hyp: Sequence[str], ref: Sequence[str]) -> RougeScore:
    lcs = lcs_length(hyp, ref)
    return _prf(lcs, len(hyp), len(ref))


# --- PQA ---

PQA_PAPER = "paper"
PQA_F1 = "f1"


@dataclass(frozen=True)
class PqaConfusion:
    q_tp: int = 0        # question target, question prediction
    q_t_notp: int = 0    # question target, suggestion prediction
    q_nott_p: int = 0    # suggestion target, question prediction
    q_nott_notp: int = 0  # suggestion target, suggestion prediction

    def __post_init__(self):
        if min(self.q_tp, self.q_t_notp, self.q_nott_p, self.q_nott_notp) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.q_tp + self.q_t_notp + self.q_nott_p + self.q_nott_notp


def pqa(conf: PqaConfusion, variant: str = PQA_PAPER) -> tuple[float, bool]:
    """Proactive questioning score; returns (score, degenerate flag).

    The paper variant uses the both-suggestion count in the recall
    denominator, exactly as published; the f1 variant is standard
    question-class F1.  Any zero denominator yields (0.0, True).
    """
    if variant == PQA_PAPER:
        p_den = conf.q_tp + conf.q_t_notp
        r_den = conf.q_tp + conf.q_nott_notp
    elif variant == PQA_F1:
        p_den = conf.q_tp + conf.q_nott_p
        r_den = conf.q_tp + conf.q_t_notp
    else:
        raise ValueError(f"unknown PQA variant {variant!r}")
    if p_den == 0 or r_den == 0:
        return 0.0, True
    p = conf.q_tp / p_den
    r = conf.q_tp / r_den
    if p + r == 0:
        return 0.0, True
    return 2 * p * r / (p + r), False


# --- report assembly ---

@dataclass
class EvalReport:
    dataset: str
    model: str
    bleu_1: float
    bleu_2: float
    bleu_3: float
    bleu_4: float
    rouge_1: float
    rouge_2: float
    rouge_l: float
    pqa: float
    pqa_degenerate: bool
    pqa_variant: str
    sample_count: int
    missing: int
    classifier: str = "default"
    scale: str = "0-1"
    conventions: str = (
        "cumulative corpus BLEU (aggregated counts); ROUGE = mean per-sample F1"
    )

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def to_table(self) -> str:
        cols = ["BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "R-1", "R-2", "R-L", "PQA"]
        vals = [
            self.bleu_1, self.bleu_2, self.bleu_3, self.bleu_4,
            self.rouge_1, self.rouge_2, self.rouge_l, self.pqa,
        ]
        name = f"{self.dataset}/{self.model}"
        header = f"{'':24s}" + "".join(f"{c:>9s}" for c in cols)
        row = f"{name[:24]:24s}" + "".join(f"{v:9.4f}" for v in vals)
        return header + "\n" + row


def _read_jsonl_map(path, key_field: str, value_field: str) -> dict[str, str]:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            out[str(obj[key_field])] = str(obj[value_field])
    return out


def evaluate(
    pred_path,
    ref_path,
    tokenizer: Callable[[str], list[str]] = char_tokenize,
    classifier: Callable[[str], AnswerKind] = classify_answer,
    variant: str = PQA_PAPER,
    dataset: str = "",
    model: str = "",
    smooth: bool = False,
) -> EvalReport:
    """Score a prediction file against a reference file, matched by id.

    Files are JSONL: predictions {"id", "prediction"}, references
    {"id", "target"}.  Reference ids missing from the predictions are
    counted and excluded; zero matched pairs is fatal.
    """
    preds = _read_jsonl_map(pred_path, "id", "prediction")
    refs = _read_jsonl_map(ref_path, "id", "target")
    unknown = set(preds) - set(refs)
    if unknown:
        raise ValueError(
            f"{len(unknown)} prediction ids missing from references, e.g. "
            f"{sorted(unknown)[:3]}"
        )
    matched = [(pid, preds[pid], refs[pid]) for pid in refs if pid in preds]
    missing = len(refs) - len(matched)
    if not matched:
        raise ValueError("no matched prediction/reference pairs")

    token_pairs = [(tokenizer(p), tokenizer(r)) for _, p, r in matched]
    bleu_score = corpus_bleu(token_pairs, smooth=smooth)
    r1 = sum(rouge_n(h, r, 1).f1 for h, r in token_pairs) / len(token_pairs)
    r2 = sum(rouge_n(h, r, 2).f1 for h, r in token_pairs) / len(token_pairs)
    rl = sum(rouge_l(h, r).f1 for h, r in token_pairs) / len(token_pairs)

    cells = Counter()
    for _, p, r in matched:
        t_q = classifier(r) is AnswerKind.QUESTION
        p_q = classifier(p) is AnswerKind.QUESTION
        cells[(t_q, p_q)] += 1
    conf = PqaConfusion(
        q_tp=cells[(True, True)],
        q_t_notp=cells[(True, False)],
        q_nott_p=cells[(False, True)],
        q_nott_notp=cells[(False, False)],
    )
    pqa_score, degenerate = pqa(conf, variant)

    return EvalReport(
        dataset=dataset,
        model=model,
        bleu_1=bleu_score.bleu[0],
        bleu_2=bleu_score.bleu[1],
        bleu_3=bleu_score.bleu[2],
        bleu_4=bleu_score.bleu[3],
        rouge_1=r1,
        rouge_2=r2,
        rouge_l=rl,
        pqa=pqa_score,
        pqa_degenerate=degenerate,
        pqa_variant=variant,
        sample_count=len(matched),
        missing=missing,
    )


# --- prediction generation ---

@dataclass(frozen=True)
class GenerationConfig:
    top_p: float = 0.75
    temperature: float = 0.95
    max_new_units: int = 512

    def __post_init__(self):
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")


def generate_predictions(
    client: LlmClient,
    contexts: Iterable[tuple[str, str]],
    gen: GenerationConfig,
    out_path,
) -> tuple[int, int]:
    """Generate one prediction per (id, input) context into a JSONL file.

    Order is preserved.  A per-sample failure records an empty prediction
    flagged failed; returns (written, failed)."""
    written = failed = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for sample_id, context in contexts:
            record = {"id": sample_id, "prediction": "", "failed": False}
            try:
                record["prediction"] = client.complete(
                    context,
                    temperature=gen.temperature,
                    top_p=gen.top_p,
                    max_tokens=gen.max_new_units,
                )
            except PolishError as exc:
                if exc.kind == "fatal":
                    raise
                record["failed"] = True
                failed += 1
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
            written += 1
    return written, failed
