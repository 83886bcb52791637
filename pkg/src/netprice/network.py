"""Network instances: construction, validation, serialization, generation,
and the derived matrices of the observable/latent block decomposition.

A network couples each agent's linear-quadratic utility (marginal value a_i,
concavity b_i) to its neighbors through a nonnegative influence matrix G.
The interaction matrix is M = diag(2 b) - G; diagonal dominance with gap
zeta on both rows and columns makes M invertible with all p-norm inverses
bounded by 1/zeta.  Partitioning nodes into observable and latent sets
yields the Schur complement H = M_OO - M_OL M_LL^{-1} M_LO, whose inverse is
the price-response matrix the estimation stage targets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    DefinitionViolatedError,
    DivergenceError,
    SingularityError,
    StructuralError,
)
from .stats import RngStream

__all__ = [
    "DerivedMatrices",
    "NetworkInstance",
    "ValidationReport",
    "bonacich",
    "derive",
    "generate_banded",
    "generate_bounded_growth",
    "generate_polynomial_decay",
    "is_strongly_connected",
    "load_network",
    "network_from_dict",
    "network_to_dict",
    "save_network",
    "validate",
]

_COND_LIMIT = 1e12
_BLOCK_AGREE_TOL = 1e-9
# Recorded dominance gaps are shaved by this relative amount so that the
# validation inequality 2b_i - sum_j G_ij >= zeta holds in float arithmetic
# even when the rescaling made it tight.
_GAP_SHAVE = 1e-12


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class NetworkInstance:
    """Immutable network primitive.

    g[i, j] > 0 means j's consumption raises i's marginal utility.  zeta is
    the declared dominance gap: every row and column of G must sum to at
    most 2 b_i - zeta.  observable lists the node ids whose consumption and
    prices are recorded; the rest are latent.
    """

    g: np.ndarray
    a: np.ndarray
    b: np.ndarray
    observable: tuple
    p_bar: float
    zeta: float
    labeling: tuple = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "g", _readonly(np.atleast_2d(self.g)))
        object.__setattr__(self, "a", _readonly(np.atleast_1d(self.a)))
        object.__setattr__(self, "b", _readonly(np.atleast_1d(self.b)))
        object.__setattr__(self, "observable", tuple(int(i) for i in self.observable))
        object.__setattr__(self, "p_bar", float(self.p_bar))
        object.__setattr__(self, "zeta", float(self.zeta))
        if self.labeling is None:
            object.__setattr__(self, "labeling", tuple(range(self.g.shape[0])))
        else:
            object.__setattr__(self, "labeling", tuple(int(v) for v in self.labeling))

    @property
    def n_nodes(self) -> int:
        return self.g.shape[0]

    @property
    def nodes(self) -> tuple:
        return tuple(range(self.n_nodes))

    @property
    def latent(self) -> tuple:
        obs = set(self.observable)
        return tuple(i for i in range(self.n_nodes) if i not in obs)

    @property
    def lam(self) -> np.ndarray:
        """diag(2 b)."""
        return np.diag(2.0 * self.b)

    @property
    def m(self) -> np.ndarray:
        """Interaction matrix diag(2 b) - G."""
        return self.lam - self.g

    def equals(self, other: "NetworkInstance") -> bool:
        """Exact (bitwise on floats) payload equality; used by round-trip tests."""
        return (
            np.array_equal(self.g, other.g)
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.b, other.b)
            and self.observable == other.observable
            and self.p_bar == other.p_bar
            and self.zeta == other.zeta
            and self.labeling == other.labeling
            and self.metadata == other.metadata
        )


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violations: tuple

    def __bool__(self) -> bool:
        return self.ok


def validate(instance: NetworkInstance) -> ValidationReport:
    """Check every model invariant; structural defects raise instead.

    Raises StructuralError when shapes or index sets are malformed (those
    are programming errors, not model violations).  Returns a report with
    one entry per violated invariant, including node index and margin.
    """
    g, a, b = instance.g, instance.a, instance.b
    n = g.shape[0]
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise StructuralError(f"influence matrix must be square, got {g.shape}")
    if a.shape != (n,) or b.shape != (n,):
        raise StructuralError(
            f"vector lengths {a.shape}/{b.shape} do not match {n} nodes"
        )
    if not (np.isfinite(g).all() and np.isfinite(a).all() and np.isfinite(b).all()):
        raise StructuralError("non-finite entries in g, a, or b")
    obs = instance.observable
    if len(obs) == 0:
        raise StructuralError("observable set must contain at least one node")
    if len(set(obs)) != len(obs) or list(obs) != sorted(obs):
        raise StructuralError(f"observable ids must be sorted and distinct: {obs}")
    if obs[0] < 0 or obs[-1] >= n:
        raise StructuralError(f"observable ids out of range 0..{n - 1}: {obs}")
    if len(instance.labeling) != n:
        raise StructuralError("labeling length does not match node count")
    if sorted(instance.labeling) != list(range(n)):
        raise StructuralError("labeling must be a permutation of 0..n-1")

    v: list = []
    zeta = instance.zeta
    if not zeta > 0.0:
        v.append(f"dominance gap must be positive: zeta={zeta}")
    if not instance.p_bar > 0.0:
        v.append(f"outside-option price must be positive: p_bar={instance.p_bar}")
    diag = np.diag(g)
    for i in np.flatnonzero(diag != 0.0):
        v.append(f"self-influence must be zero: g[{i},{i}]={diag[i]}")
    neg = np.argwhere(g < 0.0)
    for i, j in neg[:20]:
        v.append(f"influence weights must be nonnegative: g[{i},{j}]={g[i, j]}")
    row_margin = 2.0 * b - g.sum(axis=1) - zeta
    for i in np.flatnonzero(row_margin < 0.0):
        v.append(f"row dominance violated at node {i}: margin {row_margin[i]:.6g}")
    col_margin = 2.0 * b - g.sum(axis=0) - zeta
    for i in np.flatnonzero(col_margin < 0.0):
        v.append(f"column dominance violated at node {i}: margin {col_margin[i]:.6g}")
    for i in np.flatnonzero(~(b > 0.0)):
        v.append(f"concavity must be positive at node {i}: b={b[i]}")
    surplus = a - instance.p_bar
    for i in np.flatnonzero(~(surplus > 0.0)):
        v.append(
            f"marginal value must exceed the outside price at node {i}: "
            f"a={a[i]}, p_bar={instance.p_bar}"
        )
    return ValidationReport(ok=not v, violations=tuple(v))


@dataclass(frozen=True, eq=False)
class DerivedMatrices:
    """All block quantities implied by a network instance.

    h_inv is returned as the observable block of M^{-1}; derive()
    cross-checks it against the direct inverse of the Schur complement.
    v_o is the baseline consumption level when latent prices are pinned at
    the outside option.
    """

    instance: NetworkInstance
    m: np.ndarray
    m_inv: np.ndarray
    h: np.ndarray
    h_inv: np.ndarray
    s_ol: np.ndarray
    s_lo: np.ndarray
    v_o: np.ndarray

    def __post_init__(self):
        for name in ("m", "m_inv", "h", "h_inv", "s_ol", "s_lo", "v_o"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))


def _check_condition(mat: np.ndarray, label: str) -> None:
    if mat.shape[0] == 0:
        return
    cond = np.linalg.cond(mat)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise SingularityError(
            f"{label} is numerically singular (condition estimate {cond:.3g}); "
            "the dominance assumption is likely violated or the gap mis-declared"
        )


def derive(instance: NetworkInstance) -> DerivedMatrices:
    """Compute M, its inverse, the Schur complement H of the latent block,
    the cross blocks S_OL / S_LO, and the baseline consumption v_O.

    Requires a valid instance.  h_inv is computed both as inv(H) and as the
    observable block of inv(M); disagreement beyond 1e-9 entrywise is an
    internal error, and the block-of-M^{-1} version is returned.
    """
    report = validate(instance)
    if not report.ok:
        raise ConfigurationError(
            "cannot derive matrices from an invalid instance: "
            + "; ".join(report.violations[:5])
        )
    m = instance.m
    o = np.array(instance.observable, dtype=int)
    l = np.array(instance.latent, dtype=int)
    m_oo = m[np.ix_(o, o)]
    m_ol = m[np.ix_(o, l)]
    m_lo = m[np.ix_(l, o)]
    m_ll = m[np.ix_(l, l)]

    _check_condition(m_ll, "latent block M_LL")
    if l.size:
        s_ol = np.linalg.solve(m_ll.T, m_ol.T).T
        s_lo = np.linalg.solve(m_ll, m_lo)
    else:
        s_ol = np.zeros((o.size, 0))
        s_lo = np.zeros((0, o.size))
    h = m_oo - s_ol @ m_lo
    _check_condition(h, "price-response block H")
    h_inv_direct = np.linalg.inv(h)

    _check_condition(m, "interaction matrix M")
    m_inv = np.linalg.inv(m)
    h_inv_block = m_inv[np.ix_(o, o)]
    gap = np.max(np.abs(h_inv_block - h_inv_direct)) if o.size else 0.0
    if gap > _BLOCK_AGREE_TOL:
        raise SingularityError(
            f"block-inverse cross-check failed: max discrepancy {gap:.3g} "
            f"exceeds {_BLOCK_AGREE_TOL}"
        )

    a_o = instance.a[o]
    a_l = instance.a[l]
    v_o = h_inv_block @ a_o - h_inv_block @ (s_ol @ (a_l - instance.p_bar))
    return DerivedMatrices(
        instance=instance,
        m=m,
        m_inv=m_inv,
        h=h,
        h_inv=h_inv_block,
        s_ol=s_ol,
        s_lo=s_lo,
        v_o=v_o,
    )


# ---------------------------------------------------------------------------
# Generators


def _apply_jitter(base: float, n: int, jitter: float, gen: np.random.Generator):
    if jitter <= 0.0:
        return np.full(n, float(base))
    u = gen.uniform(-1.0, 1.0, size=n)
    return base * (1.0 + jitter * u)


def _rescale_for_dominance(
    g0: np.ndarray, b: np.ndarray, target_gap: float
) -> np.ndarray:
    """Scale the candidate weights down (never up) so both row and column
    sums leave at least target_gap of slack under 2b."""
    slack = 2.0 * b - target_gap
    if np.any(slack <= 0.0):
        bad = int(np.argmin(slack))
        raise ConfigurationError(
            f"dominance target infeasible at node {bad}: 2b={2 * b[bad]:.6g} "
            f"<= target gap {target_gap:.6g}"
        )
    factor = 1.0
    for sums in (g0.sum(axis=1), g0.sum(axis=0)):
        pos = sums > 0.0
        if np.any(pos):
            factor = min(factor, float(np.min(slack[pos] / sums[pos])))
    return g0 * factor


def _realized_gap(g: np.ndarray, b: np.ndarray) -> float:
    margins = np.concatenate([2.0 * b - g.sum(axis=1), 2.0 * b - g.sum(axis=0)])
    gap = float(np.min(margins))
    if gap <= 0.0:
        raise ConfigurationError("generated weights leave no dominance gap")
    return gap * (1.0 - _GAP_SHAVE)


def _pick_observable(n: int, latent_fraction: float, gen: np.random.Generator):
    """Draw the latent set uniformly at the given fraction (rounded), keeping
    at least one observable node, and return the observable complement."""
    if not 0.0 <= latent_fraction < 1.0:
        raise ConfigurationError(
            f"latent fraction must lie in [0, 1), got {latent_fraction}"
        )
    k = int(round(latent_fraction * n))
    k = min(max(k, 0), n - 1)
    latent = set(gen.choice(n, size=k, replace=False).tolist()) if k else set()
    return tuple(i for i in range(n) if i not in latent)


def _finalize(
    g0: np.ndarray,
    latent_fraction: float,
    b_value: float,
    a_value: float,
    p_bar: float,
    stream: RngStream,
    weight_margin: float,
    jitter: float,
    generator: str,
    seed: int,
    params: dict,
) -> NetworkInstance:
    n = g0.shape[0]
    if not weight_margin > 0.0:
        raise ConfigurationError(f"weight margin must be positive, got {weight_margin}")
    b = _apply_jitter(b_value, n, jitter, stream.child("jitter-b").generator())
    a = _apply_jitter(a_value, n, jitter, stream.child("jitter-a").generator())
    if np.any(a <= p_bar):
        raise ConfigurationError(
            f"marginal value {a_value} (after jitter) does not exceed the "
            f"outside price {p_bar}"
        )
    target_gap = weight_margin * float(np.min(b))
    g = _rescale_for_dominance(g0, b, target_gap)
    zeta = _realized_gap(g, b)
    observable = _pick_observable(n, latent_fraction, stream.child("latent").generator())
    instance = NetworkInstance(
        g=g,
        a=a,
        b=b,
        observable=observable,
        p_bar=p_bar,
        zeta=zeta,
        metadata={"generator": generator, "seed": int(seed), "params": params},
    )
    report = validate(instance)
    if not report.ok:
        raise ConfigurationError(
            "generator produced an invalid instance: " + "; ".join(report.violations)
        )
    return instance


def generate_banded(
    n_nodes: int,
    bandwidth: int,
    weight_scale: float = 1.0,
    latent_fraction: float = 0.2,
    b_value: float = 1.0,
    a_value: float = 4.0,
    p_bar: float = 1.0,
    seed: int = 0,
    weight_margin: float = 0.5,
    jitter: float = 0.0,
) -> NetworkInstance:
    """Banded influence structure: G_ij can be nonzero only for
    0 < |i - j| <= bandwidth under the identity labeling.

    Candidate weights are i.i.d. uniform on (0, weight_scale] over the band,
    then rescaled (down only) so that row/column sums respect the dominance
    target weight_margin * b.  The realized gap is recorded as zeta.
    """
    if n_nodes < 1:
        raise ConfigurationError(f"need at least one node, got {n_nodes}")
    if bandwidth < 0:
        raise ConfigurationError(f"bandwidth must be nonnegative, got {bandwidth}")
    if weight_scale <= 0.0:
        raise ConfigurationError(f"weight scale must be positive, got {weight_scale}")
    stream = RngStream(int(seed), ("generate", "banded"))
    gen = stream.child("weights").generator()
    idx = np.arange(n_nodes)
    band = (np.abs(idx[:, None] - idx[None, :]) <= bandwidth) & (
        idx[:, None] != idx[None, :]
    )
    g0 = np.zeros((n_nodes, n_nodes))
    # 1 - U[0,1) lies in (0, 1]: keeps weights strictly positive on the band
    g0[band] = weight_scale * (1.0 - gen.random(int(band.sum())))
    return _finalize(
        g0,
        latent_fraction,
        b_value,
        a_value,
        p_bar,
        stream,
        weight_margin,
        jitter,
        "banded",
        seed,
        {
            "n_nodes": n_nodes,
            "bandwidth": bandwidth,
            "weight_scale": weight_scale,
            "latent_fraction": latent_fraction,
            "b_value": b_value,
            "a_value": a_value,
            "p_bar": p_bar,
            "weight_margin": weight_margin,
            "jitter": jitter,
        },
    )


def generate_polynomial_decay(
    n_nodes: int,
    theta: float,
    c_scale: float = 1.0,
    latent_fraction: float = 0.2,
    b_value: float = 1.0,
    a_value: float = 4.0,
    p_bar: float = 1.0,
    seed: int = 0,
    weight_margin: float = 0.5,
    jitter: float = 0.0,
) -> NetworkInstance:
    """Dense influence with polynomially decaying magnitude:
    G_ij <= c_scale / (1 + |i - j|)^theta for i != j.

    The envelope holds entrywise after generation because rescaling only
    shrinks weights.
    """
    if n_nodes < 1:
        raise ConfigurationError(f"need at least one node, got {n_nodes}")
    if not theta > 1.0:
        raise ConfigurationError(
            f"decay exponent must exceed 1 for summable interactions, got {theta}"
        )
    if c_scale <= 0.0:
        raise ConfigurationError(f"decay scale must be positive, got {c_scale}")
    stream = RngStream(int(seed), ("generate", "polynomial_decay"))
    gen = stream.child("weights").generator()
    idx = np.arange(n_nodes)
    dist = np.abs(idx[:, None] - idx[None, :]).astype(float)
    envelope = c_scale / (1.0 + dist) ** theta
    np.fill_diagonal(envelope, 0.0)
    u = 1.0 - gen.random((n_nodes, n_nodes))
    g0 = envelope * u
    return _finalize(
        g0,
        latent_fraction,
        b_value,
        a_value,
        p_bar,
        stream,
        weight_margin,
        jitter,
        "polynomial_decay",
        seed,
        {
            "n_nodes": n_nodes,
            "theta": theta,
            "c_scale": c_scale,
            "latent_fraction": latent_fraction,
            "b_value": b_value,
            "a_value": a_value,
            "p_bar": p_bar,
            "weight_margin": weight_margin,
            "jitter": jitter,
        },
    )


def _hop_distances(adj: np.ndarray) -> np.ndarray:
    """All-pairs BFS hop distances over the directed support; unreachable = -1."""
    n = adj.shape[0]
    neighbors = [np.flatnonzero(adj[i]) for i in range(n)]
    dist = np.full((n, n), -1, dtype=int)
    for src in range(n):
        dist[src, src] = 0
        frontier = [src]
        d = 0
        while frontier:
            d += 1
            nxt = []
            for u in frontier:
                for w in neighbors[u]:
                    if dist[src, w] < 0:
                        dist[src, w] = d
                        nxt.append(w)
            frontier = nxt
    return dist


def verify_growth(g: np.ndarray, kind: str, c: float, d: float):
    """BFS-check the neighborhood growth bound on the support of g.

    The ball around i at radius k counts nodes within k hops in either
    direction.  Exponential: |ball| <= c * d^k; polynomial: |ball| <= c * k^d,
    checked for k >= 1 (the polynomial form vanishes at k = 0).  Returns
    (ok, worst_ratio, witness) where witness is (node, k) attaining the worst
    ratio.
    """
    support = g > 0.0
    dist_out = _hop_distances(support)
    dist_in = _hop_distances(support.T)
    n = g.shape[0]
    finite = np.concatenate([dist_out[dist_out >= 0], dist_in[dist_in >= 0]])
    k_max = int(finite.max()) if finite.size else 0
    worst = 0.0
    witness = (0, 1)
    for i in range(n):
        do = dist_out[i]
        di = dist_in[i]
        for k in range(1, max(k_max, 1) + 1):
            ball = np.count_nonzero(
                ((do >= 0) & (do <= k)) | ((di >= 0) & (di <= k))
            )
            bound = c * d**k if kind == "exponential" else c * k**d
            ratio = ball / bound
            if ratio > worst:
                worst = ratio
                witness = (i, k)
    return worst <= 1.0, worst, witness


def _permutation_union_graph(n: int, r: int, gen: np.random.Generator) -> np.ndarray:
    support = np.zeros((n, n), dtype=bool)
    for _ in range(r):
        perm = gen.permutation(n)
        support[np.arange(n), perm] = True
    np.fill_diagonal(support, False)
    return support


def _lattice_graph(n: int, dim: int) -> np.ndarray:
    """First n points of a near-cubic dim-dimensional box, edges between
    lattice neighbors in both directions."""
    side = max(2, int(np.ceil(n ** (1.0 / dim))))
    shape = tuple([side] * dim)
    coords = np.stack(
        np.unravel_index(np.arange(n), shape), axis=1
    )  # row-major fill of the box
    support = np.zeros((n, n), dtype=bool)
    coord_to_id = {tuple(c): i for i, c in enumerate(coords)}
    for i, c in enumerate(coords):
        for axis in range(dim):
            for step in (-1, 1):
                cc = list(c)
                cc[axis] += step
                j = coord_to_id.get(tuple(cc))
                if j is not None:
                    support[i, j] = True
    return support


def generate_bounded_growth(
    n_nodes: int,
    growth: dict,
    weight_scale: float = 1.0,
    latent_fraction: float = 0.2,
    b_value: float = 1.0,
    a_value: float = 4.0,
    p_bar: float = 1.0,
    seed: int = 0,
    weight_margin: float = 0.5,
    jitter: float = 0.0,
) -> NetworkInstance:
    """Generate a graph whose hop-neighborhoods satisfy a declared growth
    bound, BFS-verified on the result.

    growth is {"kind": "exponential", "C": C_e, "d": d_e} (ball size at
    radius k at most C_e * d_e^k, built from a union of round(d_e) random
    permutation digraphs) or {"kind": "polynomial", "C": C_p, "d": d_p}
    (ball size at most C_p * k^{d_p}, built from a d_p-dimensional lattice).
    An unachievable bound raises a configuration error.
    """
    if n_nodes < 1:
        raise ConfigurationError(f"need at least one node, got {n_nodes}")
    try:
        kind = growth["kind"]
        c_g = float(growth["C"])
        d_g = float(growth["d"])
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(
            "growth must be a dict with keys 'kind', 'C', 'd'"
        ) from exc
    if kind not in ("exponential", "polynomial"):
        raise ConfigurationError(f"unknown growth kind {kind!r}")
    if c_g <= 0.0 or d_g <= 0.0:
        raise ConfigurationError("growth constants must be positive")
    stream = RngStream(int(seed), ("generate", "bounded_growth", kind))
    gen = stream.child("support").generator()
    if kind == "exponential":
        r = max(1, int(round(d_g)))
        support = _permutation_union_graph(n_nodes, r, gen)
    else:
        dim = max(1, int(round(d_g)))
        support = _lattice_graph(n_nodes, dim)
    ok, worst, witness = verify_growth(support.astype(float), kind, c_g, d_g)
    if not ok:
        raise ConfigurationError(
            f"growth bound {kind}(C={c_g}, d={d_g}) unachievable for "
            f"{n_nodes} nodes: ball at node {witness[0]}, radius {witness[1]} "
            f"exceeds the bound by factor {worst:.3g}"
        )
    wgen = stream.child("weights").generator()
    g0 = np.zeros((n_nodes, n_nodes))
    g0[support] = weight_scale * (1.0 - wgen.random(int(support.sum())))
    return _finalize(
        g0,
        latent_fraction,
        b_value,
        a_value,
        p_bar,
        stream,
        weight_margin,
        jitter,
        f"bounded_growth_{kind}",
        seed,
        {
            "n_nodes": n_nodes,
            "growth": {"kind": kind, "C": c_g, "d": d_g},
            "weight_scale": weight_scale,
            "latent_fraction": latent_fraction,
            "b_value": b_value,
            "a_value": a_value,
            "p_bar": p_bar,
            "weight_margin": weight_margin,
            "jitter": jitter,
        },
    )


# ---------------------------------------------------------------------------
# Centrality and graph predicates


def bonacich(alpha: float, g_sub: np.ndarray) -> np.ndarray:
    """Centrality weights (I - alpha*G)^{-1} 1.

    Requires spectral radius of alpha*G below 1 (power-iteration estimate);
    the resulting inverse must be entrywise nonnegative, which for
    alpha >= 0 follows from the Neumann series.  All entries are >= 1.
    """
    g_sub = np.atleast_2d(np.asarray(g_sub, dtype=float))
    n = g_sub.shape[0]
    if g_sub.shape != (n, n):
        raise StructuralError(f"centrality needs a square matrix, got {g_sub.shape}")
    scaled = abs(alpha) * np.abs(g_sub)
    radius = _power_radius(scaled)
    if radius >= 1.0 - 1e-12:
        raise DivergenceError(
            f"spectral radius estimate {radius:.6g} of |alpha*G| is not below 1; "
            "the centrality series diverges"
        )
    inv = np.linalg.inv(np.eye(n) - alpha * g_sub)
    if inv.min() < -1e-12:
        raise DefinitionViolatedError(
            f"centrality inverse has a negative entry ({inv.min():.3g}); "
            "weights are not a valid walk count"
        )
    return inv @ np.ones(n)


def _power_radius(mat: np.ndarray, iters: int = 200) -> float:
    n = mat.shape[0]
    if n == 0 or not mat.any():
        return 0.0
    v = np.full(n, 1.0 / np.sqrt(n))
    radius = 0.0
    for _ in range(iters):
        w = mat @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        radius = norm
        v = w / norm
    # Rayleigh-style estimate; row-sum bound caps any power-iteration shortfall
    return min(float(radius), float(np.max(mat.sum(axis=1))))


def is_strongly_connected(g: np.ndarray) -> bool:
    support = np.asarray(g) > 0.0
    n = support.shape[0]
    if n <= 1:
        return True
    dist = _hop_distances(support)
    if (dist < 0).any():
        return False
    return bool((_hop_distances(support.T) >= 0).all())


# ---------------------------------------------------------------------------
# Serialization


def network_to_dict(instance: NetworkInstance) -> dict:
    return {
        "nodes": list(instance.nodes),
        "observable": list(instance.observable),
        "g": [float(x) for x in instance.g.ravel(order="C")],
        "a": [float(x) for x in instance.a],
        "b": [float(x) for x in instance.b],
        "p_bar": instance.p_bar,
        "zeta": instance.zeta,
        "labeling": list(instance.labeling),
        "metadata": instance.metadata,
    }


def network_from_dict(payload: dict) -> NetworkInstance:
    try:
        nodes = payload["nodes"]
        n = len(nodes)
        if list(nodes) != list(range(n)):
            raise StructuralError(f"node ids must be 0..{n - 1}, got {nodes[:5]}...")
        flat = np.asarray(payload["g"], dtype=float)
        if flat.size != n * n:
            raise StructuralError(
                f"influence matrix payload has {flat.size} entries, needs {n * n}"
            )
        return NetworkInstance(
            g=flat.reshape(n, n),
            a=np.asarray(payload["a"], dtype=float),
            b=np.asarray(payload["b"], dtype=float),
            observable=tuple(payload["observable"]),
            p_bar=float(payload["p_bar"]),
            zeta=float(payload["zeta"]),
            labeling=tuple(payload.get("labeling") or range(n)),
            metadata=payload.get("metadata", {}),
        )
    except KeyError as exc:
        raise StructuralError(f"network payload missing field {exc}") from exc


def save_network(instance: NetworkInstance, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(network_to_dict(instance), fh, indent=1)
        fh.write("\n")


def load_network(path) -> NetworkInstance:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise StructuralError(f"network file {path} is not valid JSON") from exc
    return network_from_dict(payload)
