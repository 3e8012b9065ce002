import numpy as np
import pytest

from meetkit.rover import (
    NULL,
    AlignCosts,
    RoverError,
    WordTransitionNetwork,
    align_to_wtn,
    alignment_cost,
    build_wtn,
    detokenize,
    read_ctm,
    rover,
    tokenize,
    vote,
)


def all_alignment_costs(slots, tokens, costs):
    """Every alignment path enumerated explicitly (no memoisation); yields total costs."""
    if not slots and not tokens:
        yield 0
        return
    if slots and tokens:
        hit = any(e[0] == tokens[0] for e in slots[0] if e[0] is not NULL)
        step = costs.match if hit else costs.substitution
        for rest in all_alignment_costs(slots[1:], tokens[1:], costs):
            yield step + rest
    if slots:
        for rest in all_alignment_costs(slots[1:], tokens, costs):
            yield costs.deletion + rest
    if tokens:
        for rest in all_alignment_costs(slots, tokens[1:], costs):
            yield costs.insertion + rest


class TestAlignCosts:
    def test_defaults(self):
        assert AlignCosts() == AlignCosts(0, 4, 3, 3)

    def test_parse(self):
        assert AlignCosts.parse("0,2,1,1") == AlignCosts(0, 2, 1, 1)

    @pytest.mark.parametrize("text", ["0,4,3", "a,b,c,d", "5,4,3,3", "0,4,0,3"])
    def test_invalid(self, text):
        with pytest.raises(RoverError):
            AlignCosts.parse(text)


class TestAlign:
    def test_identical_adds_column(self):
        wtn = WordTransitionNetwork.from_hypothesis(list("abc"))
        out = align_to_wtn(wtn, list("abc"))
        assert out.n_systems == 2 and len(out) == 3
        assert [[e[0] for e in s] for s in out.slots] == [["a", "a"], ["b", "b"], ["c", "c"]]
        assert len(wtn.slots[0]) == 1  # input network untouched

    def test_forced_deletion(self):
        out = align_to_wtn(WordTransitionNetwork.from_hypothesis(list("abc")), list("ac"))
        assert len(out) == 3
        assert out.slots[1] == [("b", 1.0), (NULL, 0.0)]

    def test_insertion_creates_slot(self):
        out = align_to_wtn(WordTransitionNetwork.from_hypothesis(list("ac")), list("abc"))
        assert len(out) == 3
        assert out.slots[1] == [(NULL, 0.0), ("b", 1.0)]
        out.validate()

    def test_matches_any_entry(self):
        wtn = build_wtn([list("ab"), list("xb")])
        assert alignment_cost(wtn, list("xb")) == 0
        assert alignment_cost(wtn, list("ab")) == 0

    def test_empty_network(self):
        with pytest.raises(RoverError):
            align_to_wtn(WordTransitionNetwork(), list("a"))

    @pytest.mark.parametrize("costs", [AlignCosts(), AlignCosts(0, 1, 1, 1), AlignCosts(0, 5, 2, 3)])
    def test_exhaustive_oracle(self, costs):
        rng = np.random.default_rng(0)
        for _ in range(60):
            a, b, c = (list(rng.choice(list("abcd"), int(rng.integers(0, 7)))) for _ in range(3))
            if not a:
                a = ["a"]
            wtn = build_wtn([a, b], costs)
            expected = min(all_alignment_costs(wtn.slots, c, costs))
            assert alignment_cost(wtn, c, costs) == expected
            grown = align_to_wtn(wtn, c, costs)
            assert len(grown) >= len(wtn)
            grown.validate()
            # the new column, NULLs removed, is exactly the aligned hypothesis
            assert grown.system(2) == c

    def test_tie_break_prefers_deletion_over_insertion(self):
        # "ab" vs "ba": sub+sub (8) loses to del+ins (6), and two such paths tie. Walking back
        # from the end, deleting slot "b" is preferred over inserting "a"
        out = align_to_wtn(WordTransitionNetwork.from_hypothesis(list("ab")), list("ba"))
        assert [[e[0] for e in s] for s in out.slots] == [[NULL, "b"], ["a", "a"], ["b", NULL]]


class TestVote:
    def test_majority(self):
        assert rover([list("abc"), list("axc"), list("abd")]) == list("abc")

    def test_majority_with_deletion(self):
        assert rover([list("ac"), list("abc"), list("abc")]) == list("abc")

    def test_null_can_win(self):
        assert rover([list("ac"), list("ac"), list("abc")]) == list("ac")

    def test_unanimity(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            h = list(rng.choice(list("甲乙丙丁"), int(rng.integers(1, 12))))
            assert rover([h] * int(rng.integers(2, 6))) == h

    def test_tie_lowest_first_system(self):
        assert rover([list("a"), list("b")]) == ["a"]
        assert rover([list("b"), list("a")]) == ["b"]

    def test_alpha_one_ignores_confidence(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            hyps = [list(rng.choice(list("abcd"), int(rng.integers(1, 8)))) for _ in range(3)]
            confs = [[(t, float(rng.uniform())) for t in h] for h in hyps]
            assert rover(hyps, alpha=1.0) == rover(confs, alpha=1.0)

    def test_confidence_breaks_frequency_tie(self):
        hyps = [[("a", 0.2)], [("b", 0.9)]]
        assert rover(hyps, alpha=0.0) == ["b"]
        assert rover(hyps, alpha=1.0) == ["a"]

    def test_alpha_range(self):
        with pytest.raises(RoverError):
            vote(build_wtn([list("a"), list("a")]), alpha=1.5)

    def test_needs_two(self):
        with pytest.raises(RoverError):
            rover([list("abc")])

    def test_deterministic(self):
        hyps = [list("abcde"), list("abxde"), list("bcde")]
        assert rover(hyps) == rover(hyps)


class TestTokens:
    def test_char(self):
        assert tokenize("今天 天气") == list("今天天气")
        assert detokenize(list("今天")) == "今天"

    def test_word(self):
        assert tokenize("the cat  sat", "word") == ["the", "cat", "sat"]
        assert detokenize(["a", "b"], "word") == "a b"

    def test_unknown_unit(self):
        with pytest.raises(RoverError):
            tokenize("x", "phone")


class TestCtm:
    def test_read_sorted(self, tmp_path):
        p = tmp_path / "a.ctm"
        p.write_text(";; comment\nrec1 1 0.50 0.1 乙 0.8\nrec1 1 0.10 0.1 甲 0.9\nrec2 1 0.0 0.2 丙\n", encoding="utf-8")
        assert read_ctm(p) == {"rec1": [("甲", 0.9), ("乙", 0.8)], "rec2": [("丙", 1.0)]}

    def test_bad_rows(self, tmp_path):
        p = tmp_path / "a.ctm"
        p.write_text("rec1 1 0.5 乙\n", encoding="utf-8")
        with pytest.raises(RoverError):
            read_ctm(p)
        p.write_text("rec1 1 0.5 0.1 乙 1.5\n", encoding="utf-8")
        with pytest.raises(RoverError):
            read_ctm(p)
