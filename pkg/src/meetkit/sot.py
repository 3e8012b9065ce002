"""Serialized-output-training transcripts, CER scoring and Kaldi-style manifests."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from pathlib import Path

SC = "<sc>"


class TranscriptError(ValueError):
    pass


@dataclass(frozen=True)
class SotTranscript:
    """Character tokens with ``<sc>`` between consecutive speakers' utterances."""

    tokens: tuple[str, ...]

    def __init__(self, tokens):
        object.__setattr__(self, "tokens", tuple(tokens))
        if self.tokens and (self.tokens[0] == SC or self.tokens[-1] == SC):
            raise TranscriptError("SOT transcript cannot begin or end with <sc>")
        if any(a == SC and b == SC for a, b in zip(self.tokens, self.tokens[1:])):
            raise TranscriptError("SOT transcript has adjacent <sc> tokens")

    def __str__(self) -> str:
        return f" {SC} ".join(sot_split(self))

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def parse(cls, text: str) -> "SotTranscript":
        """Inverse of ``str()``: segments separated by ``<sc>``, surrounding spaces dropped."""
        text = text.strip()
        if not text:
            return cls([])
        parts = [p.strip() for p in text.split(SC)]
        if any(not p for p in parts):
            raise TranscriptError(f"malformed SOT text {text!r}")
        tokens: list[str] = []
        for i, p in enumerate(parts):
            if i:
                tokens.append(SC)
            tokens.extend(p)
        return cls(tokens)


def sot_serialize(utterances) -> SotTranscript:
    """Order ``(transcript, start_s, speaker)`` triples first-in-first-out and join with ``<sc>``.

    Ties in start time are broken by speaker id.
    """
    items = list(utterances)
    if not items:
        raise TranscriptError("no utterances to serialize")
    for text, start, _ in items:
        if not text or not text.strip():
            raise TranscriptError("empty transcript")
        if not math.isfinite(start):
            raise TranscriptError("non-finite start time")
    ordered = sorted(items, key=lambda u: (u[1], str(u[2])))
    tokens: list[str] = []
    for i, (text, _, _) in enumerate(ordered):
        if i:
            tokens.append(SC)
        tokens.extend(text.strip())
    return SotTranscript(tokens)


def sot_split(t: SotTranscript) -> list[str]:
    if not isinstance(t, SotTranscript):
        t = SotTranscript(t)
    out, cur = [], []
    for tok in t.tokens:
        if tok == SC:
            out.append("".join(cur))
            cur = []
        else:
            cur.append(tok)
    if cur or out:
        out.append("".join(cur))
    return out


# ---------------------------------------------------------------------------
# CER
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CerReport:
    substitutions: int
    deletions: int
    insertions: int
    reference_length: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def cer(self) -> float:
        return self.errors / self.reference_length if self.reference_length else 0.0

    def __add__(self, other: "CerReport") -> "CerReport":
        return CerReport(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.reference_length + other.reference_length,
        )


def normalize(text, strip_sc: bool = True, remove_space: bool = True) -> list[str]:
    """Character units for scoring; ``<sc>`` and whitespace removed by default."""
    if isinstance(text, SotTranscript):
        tokens = list(text.tokens)
    elif isinstance(text, str):
        tokens = list(SotTranscript.parse(text).tokens) if SC in text else list(text)
    else:
        tokens = list(text)
    if strip_sc:
        tokens = [t for t in tokens if t != SC]
    if remove_space:
        tokens = [t for t in tokens if not t.isspace()]
    return tokens


def align_counts(ref, hyp) -> tuple[int, int, int]:
    """Unit-cost edit alignment; returns (S, D, I).

    Backtrace prefers substitution/match, then insertion, then deletion.
    """
    n, m = len(ref), len(hyp)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        d[i][0] = i
    for j in range(m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        ri = ref[i - 1]
        row, prev = d[i], d[i - 1]
        for j in range(1, m + 1):
            row[j] = min(prev[j - 1] + (ri != hyp[j - 1]), row[j - 1] + 1, prev[j] + 1)
    S = D = I = 0
    i, j = n, m
    while i or j:
        if i and j and d[i][j] == d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            S += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif j and d[i][j] == d[i][j - 1] + 1:
            I += 1
            j -= 1
        else:
            D += 1
            i -= 1
    return S, D, I


def cer(reference, hypothesis, strip_sc: bool = True, remove_space: bool = True) -> CerReport:
    ref = normalize(reference, strip_sc, remove_space)
    hyp = normalize(hypothesis, strip_sc, remove_space)
    if not ref:
        raise TranscriptError("empty reference")
    S, D, I = align_counts(ref, hyp)
    return CerReport(S, D, I, len(ref))


MAX_STREAMS = 4


def permutation_cer(references, hypotheses, strip_sc: bool = True, remove_space: bool = True) -> CerReport:
    """Best stream assignment (exhaustive over permutations); unmatched streams count as all-deletion/insertion."""
    refs = [normalize(r, strip_sc, remove_space) for r in references]
    hyps = [normalize(h, strip_sc, remove_space) for h in hypotheses]
    if not refs or not hyps:
        raise TranscriptError("need at least one reference and one hypothesis stream")
    if len(refs) > MAX_STREAMS or len(hyps) > MAX_STREAMS:
        raise TranscriptError(f"at most {MAX_STREAMS} streams per side")
    if sum(len(r) for r in refs) == 0:
        raise TranscriptError("empty reference")
    k = max(len(refs), len(hyps))
    refs += [[]] * (k - len(refs))
    hyps += [[]] * (k - len(hyps))
    cache: dict[tuple[int, int], tuple[int, int, int]] = {}
    best = None
    for perm in itertools.permutations(range(k)):
        total = [0, 0, 0]
        for i, j in enumerate(perm):
            if (i, j) not in cache:
                cache[(i, j)] = align_counts(refs[i], hyps[j])
            for a in range(3):
                total[a] += cache[(i, j)][a]
        if best is None or sum(total) < sum(best):
            best = total
    return CerReport(best[0], best[1], best[2], sum(len(r) for r in refs))


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


def read_table(path: str | Path, n_fields: int | None = None) -> list[list[str]]:
    """Tab-separated UTF-8 rows; blank lines and ``#`` comments skipped."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if n_fields is not None and len(parts) != n_fields:
                raise TranscriptError(f"{path}:{lineno}: expected {n_fields} fields, got {len(parts)}")
            rows.append(parts)
    return rows


def write_table(path: str | Path, rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write("\t".join(str(v) for v in row) + "\n")


def read_scp(path) -> dict[str, str]:
    """``utt-id <TAB> path`` (wav.scp)."""
    return {k: v for k, v in read_table(path, 2)}


def read_text(path) -> dict[str, str]:
    """``utt-id <TAB> transcript``; a missing transcript field reads as empty."""
    out = {}
    for row in read_table(path):
        out[row[0]] = row[1] if len(row) > 1 else ""
    return out


@dataclass(frozen=True)
class TimelineEntry:
    utt_id: str
    speaker: str
    start: float
    duration: float


def read_timeline(path) -> list[TimelineEntry]:
    return [TimelineEntry(u, s, float(a), float(d)) for u, s, a, d in read_table(path, 4)]


def write_timeline(path, entries) -> None:
    write_table(path, [(e.utt_id, e.speaker, f"{e.start:.4f}", f"{e.duration:.4f}") for e in entries])
