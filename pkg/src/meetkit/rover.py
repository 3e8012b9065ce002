"""ROVER: fold hypotheses into a word transition network by DP alignment, then vote per slot."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

NULL = None


class RoverError(ValueError):
    pass


@dataclass(frozen=True)
class AlignCosts:
    match: int = 0
    substitution: int = 4
    insertion: int = 3
    deletion: int = 3

    def __post_init__(self):
        if self.match < 0 or self.match > self.substitution:
            raise RoverError("costs need 0 <= match <= substitution")
        if self.insertion <= 0 or self.deletion <= 0:
            raise RoverError("insertion and deletion costs must be positive")

    @classmethod
    def parse(cls, text: str) -> "AlignCosts":
        try:
            m, s, i, d = (int(v) for v in text.split(","))
        except ValueError as exc:
            raise RoverError(f"costs must be four comma-separated integers, got {text!r}") from exc
        return cls(m, s, i, d)


@dataclass
class WordTransitionNetwork:
    """Slots of per-system ``(token or None, confidence)`` entries."""

    slots: list[list[tuple]] = field(default_factory=list)
    n_systems: int = 0

    @classmethod
    def from_hypothesis(cls, hyp) -> "WordTransitionNetwork":
        return cls([[entry] for entry in _with_conf(hyp)], 1)

    def validate(self) -> None:
        for k, slot in enumerate(self.slots):
            if len(slot) != self.n_systems:
                raise RoverError(f"slot {k} has {len(slot)} entries for {self.n_systems} systems")

    def system(self, k: int) -> list:
        """Tokens of system ``k`` with NULLs dropped."""
        return [s[k][0] for s in self.slots if s[k][0] is not NULL]

    def __len__(self) -> int:
        return len(self.slots)


def _with_conf(hyp) -> list[tuple]:
    out = []
    for t in hyp:
        if isinstance(t, tuple):
            tok, conf = t
            out.append((tok, float(conf)))
        else:
            out.append((t, 1.0))
    return out


def _slot_cost(slot, tok, costs: AlignCosts) -> int:
    return costs.match if any(e[0] == tok for e in slot if e[0] is not NULL) else costs.substitution


def alignment_table(slots, tokens, costs: AlignCosts) -> list[list[int]]:
    n, m = len(slots), len(tokens)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        d[i][0] = i * costs.deletion
    for j in range(1, m + 1):
        d[0][j] = j * costs.insertion
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i][j] = min(
                d[i - 1][j - 1] + _slot_cost(slots[i - 1], tokens[j - 1], costs),
                d[i - 1][j] + costs.deletion,
                d[i][j - 1] + costs.insertion,
            )
    return d


def align_to_wtn(wtn: WordTransitionNetwork, hyp, costs: AlignCosts = AlignCosts()) -> WordTransitionNetwork:
    """Align one more system into the network; returns a new network."""
    if wtn.n_systems < 1:
        raise RoverError("cannot align against an empty network")
    entries = _with_conf(hyp)
    tokens = [e[0] for e in entries]
    slots = wtn.slots
    d = alignment_table(slots, tokens, costs)
    prior = wtn.n_systems
    out: list[list[tuple]] = []
    i, j = len(slots), len(tokens)
    # backtrace preference on ties: match, substitution, deletion, insertion
    while i or j:
        if i and j:
            c = _slot_cost(slots[i - 1], tokens[j - 1], costs)
            if d[i][j] == d[i - 1][j - 1] + c:
                out.append(slots[i - 1] + [entries[j - 1]])
                i, j = i - 1, j - 1
                continue
        if i and d[i][j] == d[i - 1][j] + costs.deletion:
            out.append(slots[i - 1] + [(NULL, 0.0)])
            i -= 1
        else:
            out.append([(NULL, 0.0)] * prior + [entries[j - 1]])
            j -= 1
    out.reverse()
    return WordTransitionNetwork(out, prior + 1)


def alignment_cost(wtn: WordTransitionNetwork, hyp, costs: AlignCosts = AlignCosts()) -> int:
    tokens = [e[0] for e in _with_conf(hyp)]
    return alignment_table(wtn.slots, tokens, costs)[-1][-1]


def vote(wtn: WordTransitionNetwork, alpha: float = 1.0, null_confidence: float = 0.0) -> list:
    """Per-slot argmax of ``alpha*frequency + (1-alpha)*mean confidence``; a winning NULL emits nothing."""
    if not 0 <= alpha <= 1:
        raise RoverError("alpha must lie in [0, 1]")
    out = []
    for slot in wtn.slots:
        first: dict = {}
        confs: dict = {}
        for k, (tok, conf) in enumerate(slot):
            first.setdefault(tok, k)
            confs.setdefault(tok, []).append(null_confidence if tok is NULL else conf)
        best, best_score = None, None
        for tok in sorted(first, key=first.get):
            c = confs[tok]
            score = alpha * len(c) / len(slot) + (1 - alpha) * sum(c) / len(c)
            if best_score is None or score > best_score + 1e-12:
                best, best_score = tok, score
        if best is not NULL:
            out.append(best)
    return out


def build_wtn(hypotheses, costs: AlignCosts = AlignCosts()) -> WordTransitionNetwork:
    if len(hypotheses) < 1:
        raise RoverError("no hypotheses")
    wtn = WordTransitionNetwork.from_hypothesis(hypotheses[0])
    for hyp in hypotheses[1:]:
        wtn = align_to_wtn(wtn, hyp, costs)
    return wtn


def rover(hypotheses, alpha: float = 1.0, costs: AlignCosts = AlignCosts()) -> list:
    if len(hypotheses) < 2:
        raise RoverError("ROVER needs at least two hypotheses")
    return vote(build_wtn(hypotheses, costs), alpha)


def tokenize(text: str, unit: str = "char") -> list[str]:
    if unit == "char":
        return [c for c in text if not c.isspace()]
    if unit == "word":
        return text.split()
    raise RoverError(f"unknown unit {unit!r}")


def detokenize(tokens, unit: str = "char") -> str:
    return ("" if unit == "char" else " ").join(tokens)


def read_ctm(path: str | Path) -> dict[str, list[tuple[str, float]]]:
    """CTM rows ``recording channel start dur token [confidence]`` grouped per recording, sorted by start."""
    rows: dict[str, list] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith(";;"):
                continue
            if len(parts) not in (5, 6):
                raise RoverError(f"{path}:{lineno}: expected 5 or 6 CTM fields")
            conf = float(parts[5]) if len(parts) == 6 else 1.0
            if not 0 <= conf <= 1:
                raise RoverError(f"{path}:{lineno}: confidence outside [0, 1]")
            rows.setdefault(parts[0], []).append((float(parts[2]), parts[4], conf))
    return {k: [(t, c) for _, t, c in sorted(v, key=lambda r: r[0])] for k, v in rows.items()}
