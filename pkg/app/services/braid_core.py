"""Braid words on n strands and the invariants computed from them.

Words are disc-braid representatives; sphere relations are not applied.
Letter +i is sigma_i, -i its inverse. Strands are labelled by their
starting position, 1-based.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from app.utils.logging import get_logger
from app.utils.validation import GGError

LOGGER = get_logger("services.braid_core")

REDUCIBLE_THRESHOLD = 1e-3
DEFAULT_ENTROPY_ITERS = 200
BOUNDED_NORM = 10_000
DEEP_NORM = 100

_TOKEN = re.compile(r"\S+")


class StrandMismatch(GGError):
    pass


class NotPure(GGError):
    pass


class BraidParseError(GGError, ValueError):
    def __init__(self, message: str, column: int) -> None:
        super().__init__(f"column {column}: {message}")
        self.column = column


def free_reduce(letters: Iterable[int]) -> Tuple[int, ...]:
    stack: List[int] = []
    for letter in letters:
        if stack and stack[-1] == -letter:
            stack.pop()
        else:
            stack.append(letter)
    return tuple(stack)


@dataclass(frozen=True)
class BraidWord:
    n: int
    letters: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"strand count must be positive, got {self.n}")
        letters = tuple(int(x) for x in self.letters)
        for letter in letters:
            if letter == 0 or abs(letter) >= self.n:
                raise ValueError(f"letter {letter} is not a generator of B_{self.n}")
        object.__setattr__(self, "letters", letters)

    def __len__(self) -> int:
        return len(self.letters)

    def reduced(self) -> "BraidWord":
        return BraidWord(self.n, free_reduce(self.letters))

    def is_trivial(self) -> bool:
        return not free_reduce(self.letters)

    def inverse(self) -> "BraidWord":
        return BraidWord(self.n, tuple(-x for x in reversed(self.letters)))

    def power(self, p: int) -> "BraidWord":
        base = self if p >= 0 else self.inverse()
        return BraidWord(self.n, free_reduce(base.letters * abs(p)))

    def __mul__(self, other: "BraidWord") -> "BraidWord":
        return compose(self, other)

    def __str__(self) -> str:
        return format_braid(self)


def compose(u: BraidWord, v: BraidWord) -> BraidWord:
    if u.n != v.n:
        raise StrandMismatch(f"cannot compose words on {u.n} and {v.n} strands")
    return BraidWord(u.n, free_reduce(u.letters + v.letters))


def parse_braid(text: str) -> BraidWord:
    """Parse `n; l1 l2 ...`. Errors carry the 1-based column of the bad token."""
    head, sep, tail = text.partition(";")
    if not sep:
        raise BraidParseError("expected 'n; letters'", len(text) + 1)
    head_match = _TOKEN.search(head)
    if head_match is None:
        raise BraidParseError("missing strand count", 1)
    try:
        n = int(head_match.group())
    except ValueError:
        raise BraidParseError(f"strand count {head_match.group()!r} is not an integer", head_match.start() + 1)
    if n < 1 or _TOKEN.search(head, head_match.end()):
        raise BraidParseError("strand count must be one positive integer", head_match.start() + 1)
    offset = len(head) + 1
    letters: List[int] = []
    for match in _TOKEN.finditer(tail):
        column = offset + match.start() + 1
        try:
            letter = int(match.group())
        except ValueError:
            raise BraidParseError(f"letter {match.group()!r} is not an integer", column)
        if letter == 0 or abs(letter) >= n:
            raise BraidParseError(f"letter {letter} out of range for {n} strands", column)
        letters.append(letter)
    return BraidWord(n, tuple(letters))


def format_braid(w: BraidWord) -> str:
    if not w.letters:
        return f"{w.n};"
    return f"{w.n}; " + " ".join(str(x) for x in w.letters)


def random_word(rng: np.random.Generator, n: int, length: int) -> BraidWord:
    if n < 2 or length == 0:
        return BraidWord(n)
    gens = rng.integers(1, n, size=length)
    signs = rng.choice(np.array([-1, 1]), size=length)
    return BraidWord(n, tuple(int(g * s) for g, s in zip(gens, signs)))


@dataclass(frozen=True)
class StrandPermutation:
    """images[i - 1] is the final position of the strand starting at i."""

    images: Tuple[int, ...]

    def __post_init__(self) -> None:
        if sorted(self.images) != list(range(1, len(self.images) + 1)):
            raise ValueError(f"not a permutation: {self.images}")

    @classmethod
    def identity(cls, n: int) -> "StrandPermutation":
        return cls(tuple(range(1, n + 1)))

    def is_identity(self) -> bool:
        return all(image == idx for idx, image in enumerate(self.images, start=1))

    def __mul__(self, other: "StrandPermutation") -> "StrandPermutation":
        """Apply self, then other."""
        return StrandPermutation(tuple(other.images[image - 1] for image in self.images))

    def cycles(self) -> List[Tuple[int, ...]]:
        seen = set()
        out: List[Tuple[int, ...]] = []
        for start in range(1, len(self.images) + 1):
            if start in seen:
                continue
            cycle = [start]
            seen.add(start)
            nxt = self.images[start - 1]
            while nxt != start:
                cycle.append(nxt)
                seen.add(nxt)
                nxt = self.images[nxt - 1]
            if len(cycle) > 1:
                out.append(tuple(cycle))
        return out

    def __str__(self) -> str:
        cycles = self.cycles()
        if not cycles:
            return "id"
        return "".join("(" + " ".join(str(x) for x in c) + ")" for c in cycles)


def _strand_walk(w: BraidWord) -> Iterable[Tuple[int, int, int, List[int]]]:
    """Yield (letter, lower_strand, upper_strand, positions) per letter.

    `positions[k]` is the strand label at position k + 1 before the letter acts.
    """
    positions = list(range(1, w.n + 1))
    for letter in w.letters:
        k = abs(letter) - 1
        yield letter, positions[k], positions[k + 1], positions
        positions[k], positions[k + 1] = positions[k + 1], positions[k]


def permutation(w: BraidWord) -> StrandPermutation:
    final = list(range(1, w.n + 1))
    positions = list(range(1, w.n + 1))
    for letter in w.letters:
        k = abs(letter) - 1
        positions[k], positions[k + 1] = positions[k + 1], positions[k]
    for position, strand in enumerate(positions, start=1):
        final[strand - 1] = position
    return StrandPermutation(tuple(final))


def exponent_sum(w: BraidWord) -> int:
    return sum(1 if letter > 0 else -1 for letter in w.letters)


def linking_number(w: BraidWord, i: int, j: int) -> Fraction:
    if not 1 <= i < j <= w.n:
        raise ValueError(f"need 1 <= i < j <= {w.n}, got ({i}, {j})")
    if not permutation(w).is_identity():
        raise NotPure(f"linking numbers need a pure braid; permutation is {permutation(w)}")
    pair = {i, j}
    total = 0
    for letter, lower, upper, _ in _strand_walk(w):
        if {lower, upper} == pair:
            total += 1 if letter > 0 else -1
    return Fraction(total, 2)


def linking_matrix(w: BraidWord) -> np.ndarray:
    """Symmetric matrix of pairwise signed crossing counts (twice the linking numbers)."""
    counts = np.zeros((w.n, w.n), dtype=int)
    for letter, lower, upper, _ in _strand_walk(w):
        sign = 1 if letter > 0 else -1
        counts[lower - 1, upper - 1] += sign
        counts[upper - 1, lower - 1] += sign
    return counts


def delete_strands(w: BraidWord, keep: Iterable[int]) -> BraidWord:
    kept = set(keep)
    if not kept:
        raise ValueError("keep must name at least one strand")
    if not kept <= set(range(1, w.n + 1)):
        raise ValueError(f"strands {sorted(kept)} not all in 1..{w.n}")
    letters: List[int] = []
    for letter, lower, upper, positions in _strand_walk(w):
        if lower in kept and upper in kept:
            k = abs(letter) - 1
            rank = sum(1 for strand in positions[:k] if strand in kept) + 1
            letters.append(rank if letter > 0 else -rank)
    return BraidWord(len(kept), free_reduce(letters))


# Dynnikov coordinates (a_1..a_{n-2}, b_1..b_{n-2}) of integral laminations on
# the n-punctured disc. Update rules are the standard piecewise-linear ones;
# pos/neg are max(x, 0) and min(x, 0).


def _pos(x: int) -> int:
    return x if x > 0 else 0


def _neg(x: int) -> int:
    return x if x < 0 else 0


@dataclass(frozen=True)
class DynnikovCoords:
    a: Tuple[int, ...]
    b: Tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.a) != len(self.b) or not self.a:
            raise ValueError("Dynnikov coordinates need matching nonempty a and b")
        if not any(self.a) and not any(self.b):
            raise ValueError("the zero vector encodes no curve system")

    @property
    def n(self) -> int:
        return len(self.a) + 2

    @classmethod
    def from_vector(cls, values: Sequence[int]) -> "DynnikovCoords":
        half = len(values) // 2
        return cls(tuple(int(v) for v in values[:half]), tuple(int(v) for v in values[half:]))

    def vector(self) -> Tuple[int, ...]:
        return self.a + self.b

    def norm1(self) -> int:
        return sum(abs(v) for v in self.a) + sum(abs(v) for v in self.b)


def dynnikov_step(c: DynnikovCoords, letter: int) -> DynnikovCoords:
    n = c.n
    i = abs(letter)
    if n < 3:
        raise ValueError("Dynnikov coordinates need at least 3 strands")
    if not 1 <= i <= n - 1:
        raise ValueError(f"letter {letter} is not a generator of B_{n}")
    a = list(c.a)
    b = list(c.b)
    if letter > 0:
        if i == 1:
            a0, b0 = a[0], b[0]
            a[0] = -b0 + _pos(a0 + _pos(b0))
            b[0] = a0 + _pos(b0)
        elif i == n - 1:
            a0, b0 = a[-1], b[-1]
            a[-1] = -b0 + _neg(a0 + _neg(b0))
            b[-1] = a0 + _neg(b0)
        else:
            j, k = i - 2, i - 1
            aj, bj, ak, bk = a[j], b[j], a[k], b[k]
            cc = aj - ak - _pos(bk) + _neg(bj)
            a[j] = aj - _pos(bj) - _pos(_pos(bk) + cc)
            b[j] = bk + _neg(cc)
            a[k] = ak - _neg(bk) - _neg(_neg(bj) - cc)
            b[k] = bj - _neg(cc)
    else:
        if i == 1:
            a0, b0 = a[0], b[0]
            a[0] = b0 - _pos(_pos(b0) - a0)
            b[0] = _pos(b0) - a0
        elif i == n - 1:
            a0, b0 = a[-1], b[-1]
            a[-1] = b0 - _neg(_neg(b0) - a0)
            b[-1] = _neg(b0) - a0
        else:
            j, k = i - 2, i - 1
            aj, bj, ak, bk = a[j], b[j], a[k], b[k]
            d = aj - ak + _pos(bk) - _neg(bj)
            a[j] = aj + _pos(bj) + _pos(_pos(bk) - d)
            b[j] = bk - _pos(d)
            a[k] = ak + _neg(bk) + _neg(_neg(bj) + d)
            b[k] = bj + _pos(d)
    return DynnikovCoords(tuple(a), tuple(b))


def apply_word(c: DynnikovCoords, w: BraidWord) -> DynnikovCoords:
    for letter in w.letters:
        c = dynnikov_step(c, letter)
    return c


def _starting_coordinates(n: int) -> List[DynnikovCoords]:
    size = n - 2
    starts = [DynnikovCoords((0,) * size, (-1,) * size)]
    for idx in range(2 * size):
        vec = [0] * (2 * size)
        vec[idx] = 1
        starts.append(DynnikovCoords.from_vector(vec))
    return starts


def _orbit_growth(w: BraidWord, start: DynnikovCoords, iters: int) -> Tuple[float, bool, DynnikovCoords]:
    """Slope of log |c_k|_1 over the last half, a boundedness flag, and the final point."""
    norms: List[int] = []
    c = start
    for _ in range(iters):
        c = apply_word(c, w)
        norms.append(c.norm1())
    logs = np.array([_big_log(value) for value in norms])
    ks = np.arange(1, iters + 1, dtype=float)
    half = iters // 2
    slope = float(np.polyfit(ks[half:], logs[half:], 1)[0])
    bounded = max(norms[half:]) <= 2 * max(norms[:half]) and norms[-1] < BOUNDED_NORM
    return slope, bounded, c


def _big_log(value: int) -> float:
    # float() overflows past ~1e308
    shift = max(0, value.bit_length() - 60)
    return float(np.log(float(value >> shift))) + shift * float(np.log(2.0))


def _linear_growth(w: BraidWord, c: DynnikovCoords) -> float:
    """Log spectral radius of the word's linear piece at c.

    The Dynnikov action is piecewise linear and homogeneous, so at a point
    deep inside a cell the integer difference quotients give the exact
    matrix of that piece.
    """
    base = np.array(apply_word(c, w).vector(), dtype=object)
    vec = list(c.vector())
    columns = []
    for idx in range(len(vec)):
        bumped = list(vec)
        bumped[idx] += 1
        image = np.array(apply_word(DynnikovCoords.from_vector(bumped), w).vector(), dtype=object)
        columns.append([int(x) for x in image - base])
    matrix = np.array(columns, dtype=float).T
    radius = float(np.max(np.abs(np.linalg.eigvals(matrix))))
    return float(np.log(radius)) if radius > 1.0 else 0.0


def braid_entropy_estimate(w: BraidWord, iters: int = DEFAULT_ENTROPY_ITERS) -> float:
    if w.n < 3:
        raise ValueError("entropy estimation needs at least 3 strands")
    if iters < 10:
        raise ValueError("iters must be at least 10")
    reduced = w.reduced()
    if not reduced.letters:
        return 0.0
    best = 0.0
    tolerance = 0.05 + 2.0 * np.log(iters) / iters
    for start in _starting_coordinates(w.n):
        slope, bounded, final = _orbit_growth(reduced, start, iters)
        if bounded:
            continue
        estimate = slope
        if final.norm1() >= DEEP_NORM:
            # the linear piece is exact once the orbit sits deep in one cell
            linear = _linear_growth(reduced, final)
            if abs(linear - slope) < tolerance:
                estimate = linear
        best = max(best, estimate)
    return max(0.0, best)


@dataclass(frozen=True)
class ReducibilityVerdict:
    reducible: bool
    reason: str
    entropy: float
    witness: Tuple[int, ...] | None = None


def crossing_support(w: BraidWord) -> Tuple[int, ...]:
    """Strands that take part in at least one crossing."""
    involved = set()
    for _, lower, upper, _ in _strand_walk(w.reduced()):
        involved.update((lower, upper))
    return tuple(sorted(involved))


def is_probably_reducible(
    w: BraidWord,
    iters: int = DEFAULT_ENTROPY_ITERS,
    threshold: float = REDUCIBLE_THRESHOLD,
) -> ReducibilityVerdict:
    if w.n < 3:
        raise ValueError("reducibility detection needs at least 3 strands")
    reduced = w.reduced()
    support = crossing_support(reduced)
    if not reduced.letters:
        return ReducibilityVerdict(True, "trivial", 0.0, ())
    # strands outside the support never cross, so a round curve encloses the rest
    if len(support) < w.n:
        return ReducibilityVerdict(True, "crossings_confined", 0.0, support)
    entropy = braid_entropy_estimate(reduced, iters)
    if entropy < threshold:
        return ReducibilityVerdict(True, "entropy_below_threshold", entropy, None)
    return ReducibilityVerdict(False, "positive_entropy", entropy, None)
