"""Projection correlation between a scalar and a vector variable.

The statistic pairs rank indicators on the scalar side with angles between
difference vectors on the vector side. For a sample ``(X_i, y_i)``,
``i = 1..n``, and every triple ``(i, j, k)``::

    a_ijk = 1{X_i <= X_k} * 1{X_j <= X_k}
    b_ijk = angle(y_i - y_k, y_j - y_k)

Each ``n x n`` slice (fixed ``k``) is double-centered to ``A``, ``B``; the
squared projection covariance is ``n**-3 * sum(A * B)`` and the squared
correlation divides by ``sqrt(sum(A**2)/n**3 * sum(B**2)/n**3)``. The
statistic is zero in population iff the two sides are independent.

The indicator slice factorizes: with ``w_ik = 1{X_i <= X_k} - mean_i``, the
centered slice is the outer product ``w_.k w_.k^T``, which this module
exploits for an O(n^2)-memory evaluation and for fast permutation nulls.

Sign convention: mixing rank indicators on one side with angles on the
other makes the raw triple sum NEGATIVE under monotone dependence (for 1-D
vectors the centered angle slice is exactly -2*pi times the centered
indicator slice), while independence keeps it near zero. The squared
projection covariance is therefore taken as the magnitude of the raw sum,
which restores pc = 1 for exact monotone dependence and gives the
permutation test two-sided power.

The asymptotic null of the statistic involves a normalizing constant the
source material never defines, so the independence decision here is a
permutation test: scalars are randomly re-paired with vectors and the
observed squared projection covariance is ranked among the re-paired ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError

__all__ = [
    "PCSample",
    "PCStatistic",
    "IndependenceResult",
    "angle",
    "projection_correlation",
    "independence_test",
]

# hard cap on the O(n^3) evaluation; larger samples are subsampled
MAX_SAMPLE_SIZE = 512

# hold the full (k, i, j) angle tensor in memory up to this n
_MAX_TENSOR_N = 181


@dataclass(frozen=True)
class PCSample:
    """Paired observations: n scalars against n points in R^d."""

    scalars: np.ndarray  # (n,)
    vectors: np.ndarray  # (n, d)

    def __post_init__(self):
        x = np.asarray(self.scalars, dtype=np.float64)
        y = np.asarray(self.vectors, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        if x.ndim != 1 or y.ndim != 2 or x.shape[0] != y.shape[0]:
            raise ValueError(f"mismatched sample shapes: scalars {x.shape}, vectors {y.shape}")
        if x.shape[0] < 3:
            raise ValueError(f"need at least 3 observations, got {x.shape[0]}")
        if y.shape[1] < 1:
            raise ValueError("vectors must have dimension >= 1")
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise ValueError("sample entries must be finite")
        object.__setattr__(self, "scalars", x)
        object.__setattr__(self, "vectors", y)

    @property
    def n(self) -> int:
        return self.scalars.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class PCStatistic:
    pcov_sq: float
    cvar_x_sq: float
    cvar_y_sq: float
    pc: float

    def to_dict(self) -> dict:
        return {
            "pc": self.pc,
            "pcov_sq": self.pcov_sq,
            "cvar_x_sq": self.cvar_x_sq,
            "cvar_y_sq": self.cvar_y_sq,
        }


@dataclass(frozen=True)
class IndependenceResult:
    statistic: PCStatistic
    p_value: float
    reject: bool
    alpha: float
    permutations: int
    n: int
    d: int

    def to_dict(self) -> dict:
        return {
            "pc": self.statistic.pc,
            "pcov_sq": self.statistic.pcov_sq,
            "p_value": self.p_value,
            "reject": self.reject,
            "alpha": self.alpha,
            "permutations": self.permutations,
            "n": self.n,
            "d": self.d,
        }


def _pairwise_angles(diffs: np.ndarray) -> np.ndarray:
    """Angles between all row pairs of ``diffs`` (n, d), in [0, pi].

    Zero rows yield angle 0 against everything (the zero-vector convention)
    and the diagonal is exactly 0. All contractions go through einsum so the
    scalar ``angle`` below, which routes through this function, is bitwise
    consistent with the sliced statistic.
    """
    n, d = diffs.shape
    if d == 1:
        # 1-D case: 0 for same-sign operands, pi for opposite signs
        s = np.sign(diffs[:, 0])
        ang = np.where(np.multiply.outer(s, s) < 0, np.pi, 0.0)
        return ang
    sq = np.einsum("id,id->i", diffs, diffs)
    dots = np.einsum("id,jd->ij", diffs, diffs)
    zero = sq == 0.0
    norms = np.sqrt(sq)
    denom = np.multiply.outer(norms, norms)
    denom[denom == 0.0] = 1.0
    cos = np.clip(dots / denom, -1.0, 1.0)
    ang = np.arccos(cos)
    np.fill_diagonal(ang, 0.0)
    ang[zero, :] = 0.0
    ang[:, zero] = 0.0
    return ang


def angle(u, v) -> float:
    """Angle in [0, pi] between two d-vectors; 0 if either vector is zero."""
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    if u.shape != v.shape:
        raise ValueError(f"shape mismatch: {u.shape} vs {v.shape}")
    if np.array_equal(u, v):
        return 0.0
    return float(_pairwise_angles(np.stack([u, v]))[0, 1])


def _centered_indicator_columns(scalars: np.ndarray) -> np.ndarray:
    """w[i, k] = 1{X_i <= X_k} - column mean; each column sums to zero."""
    u = (scalars[:, None] <= scalars[None, :]).astype(np.float64)
    return u - u.mean(axis=0)


def _center_slice(b: np.ndarray) -> np.ndarray:
    return b - b.mean(axis=1, keepdims=True) - b.mean(axis=0, keepdims=True) + b.mean()


def _maybe_subsample(sample: PCSample, max_n: int, seed: int) -> PCSample:
    if sample.n <= max_n:
        return sample
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(sample.n, size=max_n, replace=False))
    return PCSample(sample.scalars[idx], sample.vectors[idx])


def projection_correlation(
    sample: PCSample, *, max_n: int = MAX_SAMPLE_SIZE, subsample_seed: int = 0
) -> PCStatistic:
    """Evaluate the projection correlation statistic on a sample.

    Samples larger than ``max_n`` are deterministically subsampled (the
    statistic costs O(n^3) time). Raises DegenerateInputError when either
    conditional variance vanishes (all scalars equal, or all vectors equal).
    """
    sample = _maybe_subsample(sample, max_n, subsample_seed)
    x, y = sample.scalars, sample.vectors
    n = sample.n

    w = _centered_indicator_columns(x)
    col_sq = np.einsum("ik,ik->k", w, w)
    cvar_x_sq = float((col_sq**2).sum() / n**3)

    pcov_raw = 0.0
    cvar_y_raw = 0.0
    for k in range(n):
        b_slice = _center_slice(_pairwise_angles(y - y[k]))
        wk = w[:, k]
        pcov_raw += float(wk @ b_slice @ wk)
        cvar_y_raw += float((b_slice**2).sum())
    pcov_sq = abs(pcov_raw) / n**3
    cvar_y_sq = cvar_y_raw / n**3

    if cvar_x_sq <= 1e-300:
        raise DegenerateInputError("all scalars are equal; projection correlation undefined")
    if cvar_y_sq <= 1e-300:
        raise DegenerateInputError("all vectors are equal; projection correlation undefined")

    pc_sq = pcov_sq / np.sqrt(cvar_x_sq * cvar_y_sq)
    pc = float(np.clip(np.sqrt(max(pc_sq, 0.0)), 0.0, 1.0))
    return PCStatistic(pcov_sq=pcov_sq, cvar_x_sq=cvar_x_sq, cvar_y_sq=cvar_y_sq, pc=pc)


def _quadratic_forms_tensor(
    b_tensor: np.ndarray, w: np.ndarray, perms: np.ndarray
) -> np.ndarray:
    """sum_k w'_k^T b_k w'_k for each permutation, via batched matmul.

    ``b_tensor`` is (k, i, j); ``perms`` is (P, n). Re-pairing scalars with
    permutation p turns w[i, k] into w[p[i], p[k]], and because each column
    of w sums to zero the raw (uncentered) angle slices give the same
    quadratic form as the centered ones.
    """
    n = w.shape[0]
    out = np.empty(perms.shape[0])
    block = max(1, int(64 * 2**20 / (8 * n * n)))  # ~64 MB working set
    for lo in range(0, perms.shape[0], block):
        chunk = perms[lo : lo + block]
        wp = np.empty((n, n, len(chunk)))
        for t, p in enumerate(chunk):
            wp[:, :, t] = w[np.ix_(p, p)]
        # (k, i, p): for each slice k, b_k @ w'_{., k, p}
        prod = np.matmul(b_tensor, wp.transpose(1, 0, 2))
        out[lo : lo + len(chunk)] = np.einsum("kip,kip->p", wp.transpose(1, 0, 2), prod)
    return out


def _quadratic_forms_streaming(
    y: np.ndarray, w: np.ndarray, perms: np.ndarray
) -> np.ndarray:
    """Same as the tensor path but recomputes each angle slice on the fly."""
    n = w.shape[0]
    perms_t = perms.T  # (n, P)
    out = np.zeros(perms.shape[0])
    for k in range(n):
        b_slice = _pairwise_angles(y - y[k])
        cols = w[:, perms_t[k]]  # column p: w[:, perm_p[k]]
        wp = np.take_along_axis(cols, perms_t, axis=0)
        out += np.einsum("ip,ip->p", wp, b_slice @ wp)
    return out


def independence_test(
    sample: PCSample,
    alpha: float = 0.05,
    permutations: int = 500,
    seed: int = 0,
    *,
    max_n: int = MAX_SAMPLE_SIZE,
) -> IndependenceResult:
    """Permutation test of independence between the scalar and vector sides.

    The observed squared projection covariance is ranked among values
    obtained by re-pairing scalars to vectors uniformly at random; the
    p-value uses the add-one convention (1 + #greater-or-equal)/(1 + P).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if permutations < 100:
        raise ValueError(f"need at least 100 permutations, got {permutations}")

    sample = _maybe_subsample(sample, max_n, seed)
    stat = projection_correlation(sample, max_n=max_n, subsample_seed=seed)

    n = sample.n
    w = _centered_indicator_columns(sample.scalars)
    rng = np.random.default_rng(seed)
    perms = np.stack([rng.permutation(n) for _ in range(permutations)])
    identity = np.arange(n)[None, :]

    if n <= _MAX_TENSOR_N:
        y = sample.vectors
        b_tensor = np.empty((n, n, n))
        for k in range(n):
            b_tensor[k] = _pairwise_angles(y - y[k])
        observed = _quadratic_forms_tensor(b_tensor, w, identity)[0]
        null = _quadratic_forms_tensor(b_tensor, w, perms)
    else:
        observed = _quadratic_forms_streaming(sample.vectors, w, identity)[0]
        null = _quadratic_forms_streaming(sample.vectors, w, perms)

    greater = int((np.abs(null) >= abs(observed)).sum())
    p_value = (1 + greater) / (1 + permutations)
    return IndependenceResult(
        statistic=stat,
        p_value=p_value,
        reject=p_value <= alpha,
        alpha=alpha,
        permutations=permutations,
        n=n,
        d=sample.d,
    )
