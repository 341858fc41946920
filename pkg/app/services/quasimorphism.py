"""Computable quasimorphisms on braid words.

Signature of the trace closure is computed from a checkerboard coloring of
the closed braid diagram (Goeritz form plus the crossing-type correction).
Conventions: the closure of sigma_1^3 (right-handed trefoil) has
signature -2, and sigma_1^k closes to a link of signature -(k - 1).

Diagram layout: column 0 is the unbounded region, column i (0 < i < n) lies
between strands i and i+1 and is cut into c_i segments by its crossings,
column n is the innermost disc. Even columns are white, odd columns black.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from app.services.braid_core import (
    BraidWord,
    NotPure,
    exponent_sum,
    free_reduce,
    linking_matrix,
    linking_number,
    permutation,
    random_word,
)
from app.utils.logging import get_logger, log_event
from app.utils.validation import ValidationError

LOGGER = get_logger("services.quasimorphism")

DEFAULT_SCHEDULE = (8, 16, 32)
EIGEN_TOL = 1e-8

Evaluator = Callable[[BraidWord], float]
PairSampler = Callable[[np.random.Generator], Tuple[BraidWord, BraidWord]]


@dataclass(frozen=True)
class QuasimorphismSpec:
    name: str
    evaluator: Evaluator = field(compare=False)
    schedule: Tuple[int, ...] = DEFAULT_SCHEDULE
    exact_defect: bool = False
    # per-sample value c of the analytic stand-in when exactly n-1 points are in the support
    stand_in: float | None = None

    @property
    def is_synthetic(self) -> bool:
        return self.stand_in is not None

    def __call__(self, w: BraidWord) -> float:
        return float(self.evaluator(w.reduced()))

    def sample_value(self, inside: int, n: int) -> float:
        """Value of the analytic stand-in for a sample with `inside` points in the support."""
        if self.stand_in is None:
            raise TypeError(f"{self.name} is evaluated on braids, not on support counts")
        if inside == n:
            return 1.0
        if inside == n - 1:
            return self.stand_in
        return 0.0


@dataclass(frozen=True)
class DiagramCrossing:
    index: int
    letter: int
    column: int
    regions: Tuple[int, int]
    eta: int
    type_two: bool


@dataclass
class GoeritzData:
    crossings: List[DiagramCrossing]
    matrix: np.ndarray
    mu: int
    region_count: int
    blocks: int

    @property
    def crossing_count(self) -> int:
        return len(self.crossings)


def _split_blocks(w: BraidWord) -> List[Tuple[int, List[int]]]:
    """Split the closure at empty columns into (strand_count, letters) blocks."""
    used = {abs(x) for x in w.letters}
    blocks: List[Tuple[int, List[int]]] = []
    start = 1
    for column in range(1, w.n + 1):
        if column == w.n or column not in used:
            size = column - start + 1
            offset = start - 1
            letters = [
                (abs(x) - offset) * (1 if x > 0 else -1)
                for x in w.letters
                if start <= abs(x) < column
            ]
            blocks.append((size, letters))
            start = column + 1
    return blocks


def _block_diagram(n: int, letters: Sequence[int], first_index: int) -> Tuple[List[DiagramCrossing], np.ndarray, int, int]:
    """Crossings, Goeritz matrix, correction term and region count of one connected block."""
    if n == 1:
        return [], np.zeros((0, 0), dtype=np.int64), 0, 2
    times: Dict[int, List[int]] = {}
    for t, letter in enumerate(letters):
        times.setdefault(abs(letter), []).append(t)

    # white region ids: 0 = unbounded, then segments of even columns, then the inner disc if white
    region_id: Dict[Tuple[int, int], int] = {(0, 0): 0}
    for column in range(2, n, 2):
        for seg in range(len(times[column])):
            region_id[(column, seg)] = len(region_id)
    if n % 2 == 0:
        region_id[(n, 0)] = len(region_id)
    size = len(region_id)

    def segment_at(column: int, t: int) -> int:
        if column == 0 or column == n:
            return region_id[(column, 0)]
        before = sum(1 for s in times[column] if s < t)
        return region_id[(column, before % len(times[column]))]

    crossings: List[DiagramCrossing] = []
    g = np.zeros((size, size), dtype=np.int64)
    mu = 0
    for t, letter in enumerate(letters):
        column = abs(letter)
        sign = 1 if letter > 0 else -1
        if column % 2 == 1:
            a, b = segment_at(column - 1, t), segment_at(column + 1, t)
            eta, type_two = sign, True
            mu += eta
        else:
            seg = sum(1 for s in times[column] if s < t)
            count = len(times[column])
            a = region_id[(column, seg % count)]
            b = region_id[(column, (seg + 1) % count)]
            eta, type_two = -sign, False
        if a != b:
            g[a, b] -= eta
            g[b, a] -= eta
        crossings.append(DiagramCrossing(first_index + t, letter, column, (a, b), eta, type_two))
    np.fill_diagonal(g, 0)
    np.fill_diagonal(g, -g.sum(axis=1))
    return crossings, g[1:, 1:], mu, len(letters) + 2


def closure_diagram(w: BraidWord) -> GoeritzData:
    reduced = w.reduced()
    crossings: List[DiagramCrossing] = []
    matrices: List[np.ndarray] = []
    mu = 0
    regions = 0
    blocks = _split_blocks(reduced)
    for size, letters in blocks:
        block_crossings, matrix, block_mu, block_regions = _block_diagram(size, letters, len(crossings))
        crossings.extend(block_crossings)
        matrices.append(matrix)
        mu += block_mu
        regions += block_regions
    total = sum(m.shape[0] for m in matrices)
    combined = np.zeros((total, total), dtype=np.int64)
    offset = 0
    for matrix in matrices:
        k = matrix.shape[0]
        combined[offset : offset + k, offset : offset + k] = matrix
        offset += k
    return GoeritzData(crossings, combined, mu, regions, len(blocks))


def matrix_signature(matrix: np.ndarray) -> int:
    if matrix.size == 0:
        return 0
    eigs = np.linalg.eigvalsh(np.asarray(matrix, dtype=float))
    scale = max(1.0, float(np.max(np.abs(eigs))))
    return int(np.sum(eigs > EIGEN_TOL * scale) - np.sum(eigs < -EIGEN_TOL * scale))


def signature_of_closure(w: BraidWord) -> int:
    data = closure_diagram(w)
    return matrix_signature(data.matrix) - data.mu


def seifert_matrix(w: BraidWord) -> np.ndarray:
    """Seifert matrix of the braided surface: one disc per strand, one band per crossing.

    Generators run through consecutive bands of the same column. Split
    blocks give a block-diagonal matrix.
    """
    letters = free_reduce(w.letters)
    bands: Dict[int, List[Tuple[int, int]]] = {}
    for t, letter in enumerate(letters):
        bands.setdefault(abs(letter), []).append((t, 1 if letter > 0 else -1))
    # (column, index, first band time, second band time)
    gens: List[Tuple[int, int, int, int]] = []
    for column in sorted(bands):
        seq = bands[column]
        for k in range(len(seq) - 1):
            gens.append((column, k, seq[k][0], seq[k + 1][0]))
    size = len(gens)
    v = np.zeros((size, size), dtype=np.int64)
    for idx, (column, k, a, b) in enumerate(gens):
        ea = bands[column][k][1]
        eb = bands[column][k + 1][1]
        v[idx, idx] = -(ea + eb) // 2
        for jdx, (col2, k2, c, d) in enumerate(gens):
            if col2 == column and k2 == k + 1:
                if eb > 0:
                    v[idx, jdx] = 1
                else:
                    v[jdx, idx] = -1
            elif col2 == column + 1:
                if a < c < b < d:
                    v[idx, jdx] = -1
                elif c < a < d < b:
                    v[jdx, idx] = 1
    return v


def seifert_signature(w: BraidWord) -> int:
    v = seifert_matrix(w)
    return matrix_signature(v + v.T)


@dataclass(frozen=True)
class Homogenization:
    value: float
    sequence: Tuple[Tuple[int, float], ...]

    def __float__(self) -> float:
        return self.value


def richardson(points: Sequence[Tuple[int, float]]) -> float:
    """Extrapolate a_p = L + C/p from the last two (p, a_p) points."""
    if len(points) == 1:
        return points[0][1]
    (p1, a1), (p2, a2) = points[-2], points[-1]
    return (p2 * a2 - p1 * a1) / (p2 - p1)


def homogenize(q: QuasimorphismSpec, w: BraidWord, schedule: Sequence[int] | None = None) -> Homogenization:
    powers = tuple(schedule or q.schedule)
    if not powers or any(b <= a for a, b in zip(powers, powers[1:])):
        raise ValueError(f"schedule must be nonempty and increasing, got {powers}")
    if w.is_trivial():
        return Homogenization(0.0, tuple((p, 0.0) for p in powers))
    sequence = tuple((p, q(w.power(p)) / p) for p in powers)
    value = sequence[-1][1] if q.exact_defect else richardson(sequence)
    return Homogenization(float(value), sequence)


def empirical_defect(
    q: QuasimorphismSpec | Evaluator,
    sampler: PairSampler,
    trials: int,
    rng: np.random.Generator,
) -> float:
    """max |q(uv) - q(u) - q(v)| over sampled pairs: a lower bound for the defect."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    worst = 0.0
    for _ in range(trials):
        u, v = sampler(rng)
        gap = abs(float(q(u * v)) - float(q(u)) - float(q(v)))
        worst = max(worst, gap)
    log_event(LOGGER, "defect_sampled", quasimorphism=getattr(q, "name", "custom"), trials=trials, defect=worst)
    return worst


def word_pair_sampler(n: int, max_length: int) -> PairSampler:
    def sample(rng: np.random.Generator) -> Tuple[BraidWord, BraidWord]:
        lu, lv = rng.integers(0, max_length + 1, size=2)
        return random_word(rng, n, int(lu)), random_word(rng, n, int(lv))

    return sample


def pure_generator(n: int, i: int, j: int, sign: int = 1) -> BraidWord:
    """A_ij: strand j loops once around strand i (1 <= i < j <= n)."""
    head = list(range(j - 1, i, -1))
    letters = head + [i * sign, i * sign] + [-x for x in reversed(head)]
    return BraidWord(n, tuple(letters))


def random_pure_word(rng: np.random.Generator, n: int, length: int) -> BraidWord:
    word = BraidWord(n)
    for _ in range(length):
        i, j = sorted(rng.choice(np.arange(1, n + 1), size=2, replace=False))
        word = word * pure_generator(n, int(i), int(j), int(rng.choice([-1, 1])))
    return word


def pure_pair_sampler(n: int, max_length: int) -> PairSampler:
    def sample(rng: np.random.Generator) -> Tuple[BraidWord, BraidWord]:
        lu, lv = rng.integers(0, max_length + 1, size=2)
        return random_pure_word(rng, n, int(lu)), random_pure_word(rng, n, int(lv))

    return sample


def linking_total(w: BraidWord) -> float:
    """Sum of all pairwise linking numbers of a pure braid."""
    counts = linking_matrix(w)
    if not permutation(w).is_identity():
        raise NotPure(f"linking numbers need a pure braid; permutation is {permutation(w)}")
    return float(np.triu(counts, 1).sum()) / 2.0


def _linking_evaluator(i: int, j: int) -> Evaluator:
    def evaluate(w: BraidWord) -> float:
        return float(linking_number(w, i, j))

    return evaluate


def _no_braid_value(w: BraidWord) -> float:
    raise TypeError("the synthetic stand-in has no braid evaluator")


def relabel_quasimorphism(q: QuasimorphismSpec, labels: Sequence[int]) -> QuasimorphismSpec:
    """Rewrite point indices of `linking:i,j` into braid strand labels.

    `labels[k]` is the braid strand of input point k + 1.
    """
    if not q.name.startswith("linking:"):
        return q
    i, j = (int(part) for part in q.name.split(":", 1)[1].split(","))
    a, b = sorted((int(labels[i - 1]), int(labels[j - 1])))
    return QuasimorphismSpec(q.name, _linking_evaluator(a, b), q.schedule, exact_defect=True)


def resolve_quasimorphism(name: str, schedule: Sequence[int] = DEFAULT_SCHEDULE) -> QuasimorphismSpec:
    schedule = tuple(schedule)
    if name == "exponent_sum":
        return QuasimorphismSpec(name, exponent_sum, schedule, exact_defect=True)
    if name == "linking_total":
        return QuasimorphismSpec(name, linking_total, schedule, exact_defect=True)
    if name == "signature":
        return QuasimorphismSpec(name, signature_of_closure, schedule)
    if name == "synthetic" or name.startswith("synthetic:"):
        try:
            c = float(name.split(":", 1)[1]) if ":" in name else 0.5
        except ValueError:
            raise ValidationError("estimator.quasimorphism", f"expected synthetic:c, got {name!r}")
        return QuasimorphismSpec(name, _no_braid_value, schedule, exact_defect=True, stand_in=c)
    if name.startswith("linking:"):
        try:
            i, j = (int(part) for part in name.split(":", 1)[1].split(","))
        except ValueError:
            raise ValidationError("estimator.quasimorphism", f"expected linking:i,j, got {name!r}")
        if not 1 <= i < j:
            raise ValidationError("estimator.quasimorphism", f"linking needs 1 <= i < j, got {i},{j}")
        return QuasimorphismSpec(name, _linking_evaluator(i, j), schedule, exact_defect=True)
    raise ValidationError("estimator.quasimorphism", f"unknown quasimorphism {name!r}")
