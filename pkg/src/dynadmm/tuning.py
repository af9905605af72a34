"""Smoothness constants, the dual-difference constant tables and penalty selection.

Tables are indexed ``[j, i]`` with ``0 <= i <= j <= n - 1``; entries above
the diagonal are unused and held at zero.  Every ratio
``(1 - M**m) / (1 - M)`` is evaluated as the geometric sum
``G_m = sum_{t < m} M**t`` so ``M_phi = 1`` needs no special case.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .banded import as_dense
from .errors import DimensionError, ParameterError, TuningError
from .lagrangian import as_positive
from .problem import Shape, as_blocks, constraint_residuals

log = logging.getLogger(__name__)

__all__ = [
    "BoxWatch",
    "SmoothnessConstants",
    "ConstantsTable",
    "RowReport",
    "Certificate",
    "geometric_sums",
    "default_box",
    "estimate_constants",
    "constants_table",
    "check_condition",
    "choose_penalties",
    "dual_bound_diagnostic",
]

INFLATION = 1.1


@dataclass(frozen=True)
class SmoothnessConstants:
    """Bounds on the objective and dynamics over a working box.

    ``diameters`` has one entry per block; ``rho_ref`` holds the reference
    penalties of the bounded-level-set assumption and ``init_residual_sq``
    the squared constraint residuals of the initialization.
    """

    M_f: float
    L_f: float
    C_phi: float
    M_phi: float
    L_phi: float
    diameters: np.ndarray
    rho_ref: np.ndarray
    init_residual_sq: np.ndarray

    def __post_init__(self):
        for name in ("M_f", "L_f", "C_phi", "M_phi", "L_phi"):
            if not getattr(self, name) >= 0:
                raise ParameterError(f"{name} must be nonnegative")
        object.__setattr__(self, "diameters", np.asarray(self.diameters, dtype=float))
        object.__setattr__(self, "rho_ref", np.asarray(self.rho_ref, dtype=float))
        object.__setattr__(self, "init_residual_sq", np.asarray(self.init_residual_sq, dtype=float))
        if np.any(self.diameters <= 0):
            raise ParameterError("block diameters must be positive")

    @property
    def n(self):
        return self.diameters.shape[0] - 1

    @classmethod
    def simple(cls, n, M_f=1.0, L_f=1.0, M_phi=0.5, L_phi=1.0, C_phi=1.0, diameter=1.0):
        """Uniform constants, convenient for hand-built certificates."""
        return cls(M_f, L_f, C_phi, M_phi, L_phi, np.full(n + 1, float(diameter)),
                   np.ones(n), np.zeros(n))

    def to_dict(self):
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in asdict(self).items()}


def geometric_sums(M, count):
    """``G_0 .. G_{count-1}`` with ``G_m = sum_{t<m} M**t``."""
    G = np.zeros(count)
    power = 1.0
    for m in range(1, count):
        G[m] = G[m - 1] + power
        power *= M
    return G


def default_box(x_init, factor=3.0):
    """Per-block box ``x_i +- factor * spread`` around an initial trajectory.

    ``spread`` is the componentwise range across blocks; flat components
    get a unit half-width.
    """
    x = np.asarray(x_init, dtype=float)
    spread = x.max(axis=0) - x.min(axis=0)
    half = factor * np.where(spread > 0, spread, 1.0)
    return x - half, x + half


class BoxWatch:
    """Solver callback that warns once when an iterate leaves the certificate box.

    The constants behind a certificate only hold inside the box they were
    sampled over, so an exit voids the guarantee without stopping the run.
    """

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.exited_at = None

    def __call__(self, state):
        if self.exited_at is None:
            x = state.x
            if np.any(x < self.lo) or np.any(x > self.hi):
                self.exited_at = state.record.iteration if state.record else 0
                log.warning("iterate %d left the certificate box; the penalty certificate "
                            "no longer applies", self.exited_at)
        return False


def _sample_box(rng, lo, hi, count):
    return lo + (hi - lo) * rng.random((count, lo.shape[0]))


def _close_partner(rng, pts, lo, hi, scale=1e-3):
    step = scale * (hi - lo) * rng.standard_normal(pts.shape)
    return pts + step


def estimate_constants(problem, box, samples=200, rng=None, rho_ref=1.0, x_init=None):
    """Sampled smoothness constants over a per-block box.

    Parameters
    ----------
    problem : DynamicsProblem
    box : (lo, hi)
        Two ``(n + 1, d)`` arrays bounding each block.
    samples : int
        Points per block (at least 100).  Lipschitz constants use the
        difference quotients of each point with a close partner and with
        the next sampled point.
    rng : numpy.random.Generator, optional
    rho_ref : float or array_like
        Reference penalties of the level-set assumption.
    x_init : array_like, optional
        Initialization whose constraint residuals are recorded.

    Returns
    -------
    SmoothnessConstants
        Maxima inflated by 10%.
    """
    if samples < 100:
        raise ParameterError("estimate_constants needs at least 100 samples per block")
    rng = np.random.default_rng(0) if rng is None else rng
    n, d = problem.n, problem.d
    lo = as_blocks(box[0], n + 1, d, name="box lower bound")
    hi = as_blocks(box[1], n + 1, d, name="box upper bound")
    if np.any(hi < lo):
        raise DimensionError("box upper bound below lower bound")
    M_f = L_f = C_phi = M_phi = L_phi = 0.0
    for i, term in enumerate(problem.terms):
        pts = _sample_box(rng, lo[i], hi[i], samples)
        partners = np.vstack([_close_partner(rng, pts, lo[i], hi[i]), np.roll(pts, 1, axis=0)])
        grads = np.array([term.grad(p) for p in pts])
        M_f = max(M_f, float(np.max(np.linalg.norm(grads, axis=1))))
        pg = np.array([term.grad(q) for q in partners])
        base = np.vstack([grads, grads])
        dist = np.linalg.norm(np.vstack([pts, pts]) - partners, axis=1)
        ok = dist > 0
        if np.any(ok):
            L_f = max(L_f, float(np.max(np.linalg.norm(base - pg, axis=1)[ok] / dist[ok])))
    # the dynamics act on block j (explicit, semi-implicit) or j + 1 (implicit)
    offset = 1 if problem.shape is Shape.IMPLICIT else 0
    for j in range(n):
        dmap = problem.step_map(j)
        b = j + offset
        pts = _sample_box(rng, lo[b], hi[b], samples)
        partners = np.vstack([_close_partner(rng, pts, lo[b], hi[b]), np.roll(pts, 1, axis=0)])
        vals = [dmap.value_and_jacobian(p) for p in pts]
        C_phi = max(C_phi, max(float(np.linalg.norm(v)) for v, _ in vals))
        jacs = [as_dense(J) for _, J in vals]
        M_phi = max(M_phi, max(float(np.linalg.norm(J, 2)) for J in jacs))
        for k, q in enumerate(partners):
            p = pts[k % samples]
            dist = float(np.linalg.norm(p - q))
            if dist > 0:
                Jq = dmap.jacobian_matrix(q)
                L_phi = max(L_phi, float(np.linalg.norm(jacs[k % samples] - Jq, 2)) / dist)
    diam = np.linalg.norm(hi - lo, axis=1)
    diam = np.where(diam > 0, diam, 1.0)
    if x_init is not None:
        r = constraint_residuals(problem, x_init)
        init_sq = np.sum(r * r, axis=1)
    else:
        init_sq = np.zeros(n)
    return SmoothnessConstants(
        M_f=INFLATION * M_f, L_f=INFLATION * L_f, C_phi=INFLATION * C_phi,
        M_phi=INFLATION * M_phi, L_phi=INFLATION * L_phi, diameters=diam,
        rho_ref=np.broadcast_to(np.asarray(rho_ref, dtype=float), (n,)).copy(),
        init_residual_sq=init_sq,
    )


@dataclass(frozen=True)
class ConstantsTable:
    """``B``, ``C``, ``C~`` tables (``(n, n)``, lower triangle) and ``c``, ``c~`` (``n + 1``)."""

    B: np.ndarray
    C: np.ndarray
    C_tilde: np.ndarray
    c: np.ndarray
    c_tilde: np.ndarray
    G: np.ndarray

    @property
    def n(self):
        return self.C.shape[0]


def _c_entry(consts, rho, eta, G, powers, n, j, i):
    if j == i:
        return G[n - i - 1] * consts.M_f * consts.L_phi + consts.L_f + 1.0 / eta[i + 1]
    p = powers[j - i]
    k = j - i
    return (p * G[n - 1 - j] * consts.M_f * consts.L_phi + p * consts.L_f
            + (2 * k + 1) * p / eta[j + 1] + (2 * k - 1) * rho[j] * p)


def _ct_entry(rho, eta, powers, j, i):
    if j == i:
        return 1.0 / eta[i + 1]
    p = powers[j - i]
    return p / eta[j + 1] + rho[j] * p


def constants_table(consts, rho, eta):
    """Populate the tables for penalties ``rho`` (``n``) and proximal weights ``eta`` (``n + 1``)."""
    n = consts.n
    rho = as_positive(rho, n, "rho")
    eta = as_positive(eta, n + 1, "eta")
    M = consts.M_phi
    G = geometric_sums(M, n + 2)
    powers = M ** np.arange(n + 1, dtype=float)
    powers[0] = 1.0
    B = np.zeros((n, n))
    C = np.zeros((n, n))
    Ct = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            C[j, i] = _c_entry(consts, rho, eta, G, powers, n, j, i)
            Ct[j, i] = _ct_entry(rho, eta, powers, j, i)
            B[j, i] = Ct[j, i]
    c = 1.0 / (4.0 * eta)
    ct = c.copy()
    weights = 2.0 * (n - np.arange(n)) / rho
    for i in range(1, n + 1):
        c[i] -= float(np.sum(weights[:i] * C[i - 1, :i] ** 2))
        ct[i] -= float(np.sum(weights[:i] * Ct[i - 1, :i] ** 2))
    return ConstantsTable(B=B, C=C, C_tilde=Ct, c=c, c_tilde=ct, G=G)


@dataclass(frozen=True)
class RowReport:
    row: int
    total: float
    bound: float

    @property
    def passed(self):
        return self.total < self.bound


def check_condition(table, rho, eta):
    """Per-row sums ``sum_{j<i} 2(n-j)/rho_j C[i-1, j]**2`` against ``1/(4 eta_i)``.

    Returns ``(rows, passed)`` for ``i = 1 .. n``.
    """
    n = table.n
    rho = as_positive(rho, n, "rho")
    eta = as_positive(eta, n + 1, "eta")
    weights = 2.0 * (n - np.arange(n)) / rho
    rows = []
    for i in range(1, n + 1):
        total = float(np.sum(weights[:i] * table.C[i - 1, :i] ** 2))
        rows.append(RowReport(i, total, 1.0 / (4.0 * eta[i])))
    return rows, all(r.passed for r in rows)


@dataclass
class Certificate:
    """Output of :func:`choose_penalties`."""

    rho: np.ndarray
    eta: np.ndarray
    margin: float
    rows: list
    passed: bool
    c: np.ndarray
    c_tilde: np.ndarray
    floors: np.ndarray
    m_init: float
    level_set_floor: bool
    table: ConstantsTable = field(repr=False)

    @property
    def certified(self):
        return self.passed and bool(np.all(self.c > 0)) and bool(np.all(self.c_tilde > 0))

    def to_dict(self):
        return {
            "rho": self.rho.tolist(),
            "eta": self.eta.tolist(),
            "margin": self.margin,
            "rows": [{"row": r.row, "total": float(r.total), "bound": float(r.bound), "passed": bool(r.passed)}
                     for r in self.rows],
            "passed": bool(self.passed),
            "certified": self.certified,
            "c": self.c.tolist(),
            "c_tilde": self.c_tilde.tolist(),
            "floors": self.floors.tolist(),
            "m_init": self.m_init,
            "level_set_floor": self.level_set_floor,
        }


def _guard(value, row):
    if not np.isfinite(value) or value > 1e300:
        raise TuningError(f"penalty overflow while fixing row {row}", row=row)
    return value


def _ratchet(consts, rho, eta, G, powers, floors, D, margin, share, level_set_floor):
    # rows n..1, raising rho in place
    n = consts.n
    for i in range(n, 0, -1):
        k = i - 1
        budget = margin / (4.0 * eta[i])
        s = share(i)
        if not 0.0 < s <= 1.0:
            raise ParameterError(f"diagonal share {s!r} for row {i} outside (0, 1]")
        cdiag = _c_entry(consts, rho, eta, G, powers, n, k, k)
        need = 2.0 * (n - k) * cdiag ** 2 / (s * budget)
        floor = 2.0 * consts.rho_ref[k]
        if level_set_floor:
            lam_bound = G[n - k] * consts.M_f + sum(
                _ct_entry(rho, eta, powers, j, k) * D[j + 1] for j in range(k, n))
            floor = max(floor, lam_bound ** 2)
        floors[k] = floor * (1.0 + 1e-9)
        rho[k] = _guard(max(rho[k], need, floors[k]), i)
        if k == 0:
            continue
        off = (1.0 - s) * budget / k
        if off <= 0:
            raise ParameterError(f"row {i}: diagonal share leaves no off-diagonal budget")
        for j in range(k):
            cij = _c_entry(consts, rho, eta, G, powers, n, k, j)
            rho[j] = _guard(max(rho[j], 2.0 * (n - j) * cij ** 2 / off), i)


def choose_penalties(consts, eta, margin=0.9, rho_init=None, diag_share=None,
                     level_set_floor=True):
    """Bottom-up penalty selection so every row of the descent condition holds.

    Row ``i`` (processed ``n, ..., 1``) first fixes ``rho_{i-1}`` so its
    diagonal entry uses at most ``diag_share(i) * margin / (4 eta_i)``, then
    raises ``rho_0 .. rho_{i-2}`` so each off-diagonal entry takes an equal
    part of the remainder.  Penalties only ever increase.

    Parameters
    ----------
    consts : SmoothnessConstants
    eta : float or array_like
        Proximal weights ``eta_0 .. eta_n``, chosen first.
    margin : float
        In ``(0, 1)``; the fraction of ``1/(4 eta_i)`` a row may use.
    rho_init : array_like, optional
        Starting penalties; by default the floors and row needs decide.
    diag_share : callable, optional
        ``i -> share`` of the row budget given to the diagonal; defaults to
        ``1 / i``.
    level_set_floor : bool
        Also enforce ``rho_i > max(2 rho_i^0, (G_{n-i} M_f + sum_j B[j, i] D_{j+1})**2)``.
        The squared term compounds through ``B`` and can overflow.

    Returns
    -------
    Certificate
    """
    if not 0.0 < margin < 1.0:
        raise ParameterError("margin must lie in (0, 1)")
    n = consts.n
    eta = as_positive(eta, n + 1, "eta")
    share = (lambda i: 1.0 / i) if diag_share is None else diag_share
    M = consts.M_phi
    G = geometric_sums(M, n + 2)
    powers = M ** np.arange(n + 1, dtype=float)
    powers[0] = 1.0
    rho = np.full(n, 0.0) if rho_init is None else np.array(as_positive(rho_init, n, "rho"))
    floors = np.zeros(n)
    D = consts.diameters
    with np.errstate(over="ignore"):
        _ratchet(consts, rho, eta, G, powers, floors, D, margin, share, level_set_floor)
    table = constants_table(consts, rho, eta)
    rows, passed = check_condition(table, rho, eta)
    m_init = float(np.max(rho * consts.init_residual_sq)) if n else 0.0
    return Certificate(rho=rho, eta=eta, margin=margin, rows=rows, passed=passed, c=table.c,
                       c_tilde=table.c_tilde, floors=floors, m_init=m_init,
                       level_set_floor=level_set_floor, table=table)


def dual_bound_diagnostic(table, consts, step_norms):
    """Upper bounds on ``||lambda_i||`` from the latest block step norms.

    ``step_norms`` holds ``||x_i^{k+1} - x_i^k||`` for ``i = 0 .. n``; the
    result has one entry per multiplier,
    ``G_{n-i} M_f + sum_{j >= i} B[j, i] step_norms[j + 1]``.
    """
    n = table.n
    s = np.asarray(step_norms, dtype=float)
    if s.shape != (n + 1,):
        raise DimensionError(f"step_norms has shape {s.shape}, expected ({n + 1},)")
    return np.array([table.G[n - i] * consts.M_f + float(table.B[i:, i] @ s[i + 1:])
                     for i in range(n)])
