"""Text normalization, error rates, difficulty normalization, fairness.

WER and CER are corpus-pooled: total edit distance over total reference
length, not the mean of per-utterance rates.
"""
from __future__ import annotations

import json
import math
import unicodedata
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import ValidationError

WORD = "word"
CHAR = "char"


def normalize_text(raw: str, level: str = WORD) -> list[str]:
    """Lowercase, strip Unicode punctuation, collapse whitespace, tokenize.

    Word level splits on whitespace; character level returns the characters
    with spaces excluded.  Apostrophes inside words count as punctuation
    and are removed with the rest.
    """
    out = []
    for ch in raw.lower():
        if ch.isspace():
            out.append(" ")
        elif not unicodedata.category(ch).startswith("P"):
            out.append(ch)
    cleaned = "".join(out)
    if level == WORD:
        return cleaned.split()
    if level == CHAR:
        return [ch for ch in cleaned if ch != " "]
    raise ValueError(f"level must be {WORD!r} or {CHAR!r}, got {level!r}")


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance with unit-cost substitution/insertion/deletion."""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, tok_a in enumerate(a, 1):
        current = [i]
        for j, tok_b in enumerate(b, 1):
            current.append(
                min(
                    previous[j] + 1,
                    current[j - 1] + 1,
                    previous[j - 1] + (tok_a != tok_b),
                )
            )
        previous = current
    return previous[-1]


@dataclass(frozen=True)
class EvalRecord:
    """One scored utterance under one model and scenario."""

    utterance_id: str
    model_id: str
    scenario_kind: str
    severity: Optional[int]
    edit_distance: int
    ref_len: int
    gender: Optional[str] = None
    language: Optional[str] = None
    dataset: Optional[str] = None

    def __post_init__(self):
        if self.edit_distance < 0 or self.ref_len < 0:
            raise ValueError("edit_distance and ref_len must be non-negative")
        if self.gender not in (None, "m", "f"):
            raise ValueError(f"gender must be 'm', 'f', or None, got {self.gender!r}")


def score_pair(ref: str, hyp: str, level: str = WORD) -> tuple[int, int]:
    """(edit distance, reference length) of one normalized pair."""
    ref_toks = normalize_text(ref, level)
    hyp_toks = normalize_text(hyp, level)
    return edit_distance(ref_toks, hyp_toks), len(ref_toks)


def corpus_error_rate(records: Iterable[EvalRecord]) -> float:
    """Pooled error rate: 100 * sum(edit_distance) / sum(ref_len)."""
    total_ed = 0
    total_len = 0
    for rec in records:
        total_ed += rec.edit_distance
        total_len += rec.ref_len
    if total_len == 0:
        raise ValueError("total reference length is zero; error rate undefined")
    return 100.0 * total_ed / total_len


def cer(hyp: str, ref: str) -> float:
    """Character error rate of hyp against ref, both normalized.

    An empty reference gives 0.0 for an empty hypothesis and +inf
    otherwise.
    """
    ref_chars = normalize_text(ref, CHAR)
    hyp_chars = normalize_text(hyp, CHAR)
    if not ref_chars:
        return 0.0 if not hyp_chars else float("inf")
    return edit_distance(hyp_chars, ref_chars) / len(ref_chars)


def werd(scenario_records: Iterable[EvalRecord], clean_records: Iterable[EvalRecord]) -> float:
    """WER degradation in percentage points; negative means improvement."""
    return corpus_error_rate(scenario_records) - corpus_error_rate(clean_records)


def normalize_difficulty(raw_scores: Mapping) -> dict:
    """Affine-normalize one metric's scores to mean 50, population sd 25."""
    if len(raw_scores) < 2:
        raise ValueError("need at least 2 cells to normalize")
    keys = list(raw_scores)
    values = np.array([float(raw_scores[k]) for k in keys])
    mean = float(values.mean())
    sd = float(values.std())
    if sd == 0.0:
        raise ValueError("zero variance across cells; normalization undefined")
    return {k: 50.0 + 25.0 * (float(raw_scores[k]) - mean) / sd for k in keys}


def nwerd(werd_value: float, difficulty: float) -> float:
    """Difficulty-normalized degradation: 100 * werd / difficulty."""
    if difficulty <= 0.0:
        raise ValueError(f"difficulty must be positive, got {difficulty}")
    return 100.0 * werd_value / difficulty


def lwerr(
    female_records: Iterable[EvalRecord], male_records: Iterable[EvalRecord]
) -> Optional[float]:
    """log2(WER_female / WER_male); positive means biased against females.

    Undefined (None) when either subset is empty or has zero WER.
    """
    female = list(female_records)
    male = list(male_records)
    if not female or not male:
        return None
    if sum(r.ref_len for r in female) == 0 or sum(r.ref_len for r in male) == 0:
        return None
    wer_f = corpus_error_rate(female)
    wer_m = corpus_error_rate(male)
    if wer_f <= 0.0 or wer_m <= 0.0:
        return None
    return math.log2(wer_f / wer_m)


# ---------------------------------------------------------------------------
# difficulty table


@dataclass(frozen=True)
class DifficultyScore:
    """One cell of a difficulty table built from raw quality scores."""

    kind: str
    severity: Optional[int]
    raw_dnsmos: Optional[float]
    raw_pesq: Optional[float]
    normalized_avg: float


class DifficultyTable:
    """Per-(row, severity) difficulty scores on the mean-50 scale.

    Rows hold up to three columns (avg, dnsmos, pesq) of per-severity
    values; single-valued rows cover the named real scenarios.
    """

    def __init__(self, rows: Mapping[str, Mapping[str, Optional[list]]]):
        self.rows = {name: dict(cols) for name, cols in rows.items()}

    def lookup(self, row: str, severity: Optional[int] = None, column: str = "avg") -> Optional[float]:
        cols = self.rows.get(row)
        if cols is None:
            return None
        values = cols.get(column)
        if values is None:
            return None
        index = 0 if severity is None else severity - 1
        if not 0 <= index < len(values):
            return None
        value = values[index]
        return None if value is None else float(value)

    @classmethod
    def builtin(cls) -> "DifficultyTable":
        data = resources.files("srb.data").joinpath("difficulty.json").read_text("utf-8")
        return cls(json.loads(data))

    @classmethod
    def load(cls, path) -> "DifficultyTable":
        path = Path(path)
        if path.suffix.lower() == ".toml":
            try:
                import tomllib as toml_parser
            except ModuleNotFoundError:
                import tomli as toml_parser

            raw = toml_parser.loads(path.read_text("utf-8"))
        else:
            raw = json.loads(path.read_text("utf-8"))
        if not isinstance(raw, dict):
            raise ValidationError(f"{path}: difficulty table must be a mapping")
        return cls(raw)

    @classmethod
    def from_raw_scores(
        cls,
        dnsmos: Optional[Mapping] = None,
        pesq: Optional[Mapping] = None,
    ) -> tuple["DifficultyTable", list[DifficultyScore]]:
        """Build a table from negated-MOS maps keyed by (row, severity).

        Each metric is normalized to mean 50 / population sd 25 across its
        cells; a cell's AVG is the mean of whichever normalized metrics
        exist for it.
        """
        per_metric = {}
        if dnsmos:
            per_metric["dnsmos"] = normalize_difficulty(dnsmos)
        if pesq:
            per_metric["pesq"] = normalize_difficulty(pesq)
        if not per_metric:
            raise ValueError("need at least one metric's raw scores")
        cells = sorted({key for scores in per_metric.values() for key in scores})
        rows: dict[str, dict[str, list]] = {}
        scores_out = []
        for row_name, severity in cells:
            available = [
                per_metric[m][(row_name, severity)]
                for m in per_metric
                if (row_name, severity) in per_metric[m]
            ]
            avg = sum(available) / len(available)
            cols = rows.setdefault(
                row_name, {"avg": [None] * 4, "dnsmos": [None] * 4, "pesq": [None] * 4}
            )
            index = (severity or 1) - 1
            cols["avg"][index] = avg
            if "dnsmos" in per_metric and (row_name, severity) in per_metric["dnsmos"]:
                cols["dnsmos"][index] = per_metric["dnsmos"][(row_name, severity)]
            if "pesq" in per_metric and (row_name, severity) in per_metric["pesq"]:
                cols["pesq"][index] = per_metric["pesq"][(row_name, severity)]
            scores_out.append(
                DifficultyScore(
                    kind=row_name,
                    severity=severity,
                    raw_dnsmos=dnsmos.get((row_name, severity)) if dnsmos else None,
                    raw_pesq=pesq.get((row_name, severity)) if pesq else None,
                    normalized_avg=avg,
                )
            )
        return cls(rows), scores_out


# ---------------------------------------------------------------------------
# record persistence


def save_records(path, records: Iterable[EvalRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")


def load_records(path) -> list[EvalRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(EvalRecord(**json.loads(line)))
            except (json.JSONDecodeError, TypeError) as exc:
                raise ValidationError(f"{path}:{lineno}: bad record: {exc}") from exc
    return records
