"""Consumption equilibria and panel simulation.

Given a network instance, the unique consumption equilibrium under price
vector p and taste shocks xi is y = M^{-1}(a + xi - p).  Latent nodes always
face the outside price, so the observable block obeys the affine relation

    y_O = v_O - H^{-1} p_O + eps_O,
    eps_O = H^{-1} xi_O - H^{-1} S_OL xi_L,

which is the data-generating process the estimation stage inverts.  The
simulator always solves the full equilibrium (latent agents included) and
only then discards the latent columns; the affine identity is asserted, not
used, to produce data.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    DivergenceError,
    ModelViolationError,
    StructuralError,
)
from .network import DerivedMatrices, NetworkInstance, derive
from .stats import RngStream

__all__ = [
    "PanelData",
    "ShockModel",
    "UniformPriceSampler",
    "best_response_iterate",
    "export_panel_csv",
    "load_panel",
    "panel_from_dict",
    "panel_to_dict",
    "residual_shocks",
    "save_panel",
    "simulate_panel",
    "solve_equilibrium",
]

_IDENTITY_TOL = 1e-9
_MAX_REJECTION_ATTEMPTS = 1000


@dataclass(frozen=True)
class ShockModel:
    """Per-period taste shock distribution.

    gaussian_truncated: equicorrelated Gaussian (common factor weight rho),
    scaled by sigma, truncated by whole-vector rejection at +/- bound where
    bound = truncation or 0.99 * min_i(a_i - p_bar).  Rejection keeps the
    distribution symmetric, so shocks stay mean zero.

    uniform: i.i.d. uniform with standard deviation sigma, half-width
    clamped to the same bound (rho is ignored: the family is independent
    across nodes by construction).
    """

    family: str = "gaussian_truncated"
    sigma: float = 0.1
    rho: float = 0.2
    truncation: float = None

    def __post_init__(self):
        if self.family not in ("gaussian_truncated", "uniform"):
            raise ConfigurationError(f"unknown shock family {self.family!r}")
        if self.sigma < 0.0:
            raise ConfigurationError(f"shock scale must be nonnegative: {self.sigma}")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigurationError(f"equicorrelation must lie in [0,1): {self.rho}")

    def bound_for(self, instance: NetworkInstance) -> float:
        if self.truncation is not None:
            return float(self.truncation)
        return 0.99 * float(np.min(instance.a) - instance.p_bar)

    def draw(self, gen: np.random.Generator, n_nodes: int, bound: float) -> np.ndarray:
        if bound <= 0.0:
            raise ConfigurationError(
                f"shock truncation bound must be positive, got {bound}"
            )
        if self.sigma == 0.0:
            return np.zeros(n_nodes)
        if self.family == "uniform":
            width = min(self.sigma * np.sqrt(3.0), bound)
            return gen.uniform(-width, width, size=n_nodes)
        for _ in range(_MAX_REJECTION_ATTEMPTS):
            common = gen.standard_normal()
            idio = gen.standard_normal(n_nodes)
            xi = self.sigma * (
                np.sqrt(self.rho) * common + np.sqrt(1.0 - self.rho) * idio
            )
            if np.max(np.abs(xi)) < bound:
                return xi
        raise ConfigurationError(
            f"shock rejection sampling failed {_MAX_REJECTION_ATTEMPTS} times: "
            f"scale {self.sigma} is too large for truncation bound {bound:.4g}"
        )

    def meta(self) -> dict:
        return {
            "family": self.family,
            "sigma": self.sigma,
            "rho": self.rho,
            "truncation": self.truncation,
        }


@dataclass(frozen=True)
class UniformPriceSampler:
    """I.i.d. uniform prices on [low_frac * p_bar, high_frac * p_bar].

    The lower cutoff keeps the price second-moment matrix well conditioned
    on small panels while respecting the 0 <= p <= p_bar box.
    """

    low_frac: float = 0.2
    high_frac: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.low_frac < self.high_frac <= 1.0:
            raise ConfigurationError(
                f"price range fractions must satisfy 0 <= low < high <= 1, "
                f"got [{self.low_frac}, {self.high_frac}]"
            )

    def sample(self, gen: np.random.Generator, m: int, p_bar: float) -> np.ndarray:
        return gen.uniform(self.low_frac * p_bar, self.high_frac * p_bar, size=m)

    def meta(self) -> dict:
        return {"kind": "uniform", "low_frac": self.low_frac, "high_frac": self.high_frac}


@dataclass(frozen=True, eq=False)
class PanelData:
    """Observed price/consumption panel for the observable nodes.

    instance is an optional backlink to the generating network; blind
    estimation runs (and panels loaded from disk) carry None there.
    """

    prices: np.ndarray
    consumption: np.ndarray
    observable: tuple
    seed: int
    shock_meta: dict = field(default_factory=dict)
    instance: NetworkInstance = None

    def __post_init__(self):
        prices = np.array(self.prices, dtype=float)
        consumption = np.array(self.consumption, dtype=float)
        if prices.ndim != 2 or consumption.shape != prices.shape:
            raise StructuralError(
                f"prices {prices.shape} and consumption {consumption.shape} "
                "must be matching n x m matrices"
            )
        if prices.shape[1] != len(self.observable):
            raise StructuralError(
                f"panel has {prices.shape[1]} columns but "
                f"{len(self.observable)} observable ids"
            )
        if not (np.isfinite(prices).all() and np.isfinite(consumption).all()):
            raise StructuralError("panel contains non-finite entries")
        if prices.min(initial=0.0) < 0.0:
            raise StructuralError("negative prices in panel")
        p_bar = self.shock_meta.get("p_bar")
        if p_bar is not None and prices.size and prices.max() > p_bar * (1 + 1e-12):
            raise StructuralError(
                f"price {prices.max()} exceeds the outside price {p_bar}"
            )
        if consumption.size and consumption.min() <= 0.0:
            raise StructuralError(
                "non-interior consumption in panel (all quantities must be positive)"
            )
        prices.flags.writeable = False
        consumption.flags.writeable = False
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "consumption", consumption)
        object.__setattr__(self, "observable", tuple(int(i) for i in self.observable))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def n(self) -> int:
        return self.prices.shape[0]

    @property
    def n_observable(self) -> int:
        return self.prices.shape[1]


def solve_equilibrium(
    derived: DerivedMatrices, p: np.ndarray, xi: np.ndarray
) -> np.ndarray:
    """Closed-form equilibrium y = M^{-1}(a + xi - p) over all nodes.

    p is the full price vector (latent entries normally pinned at p_bar).
    Every consumption level must come out strictly positive; a nonpositive
    entry means a precondition was violated and raises.
    """
    inst = derived.instance
    p = np.asarray(p, dtype=float)
    xi = np.asarray(xi, dtype=float)
    n = inst.n_nodes
    if p.shape != (n,) or xi.shape != (n,):
        raise StructuralError(
            f"price/shock vectors must have length {n}, got {p.shape}/{xi.shape}"
        )
    if p.min() < 0.0 or p.max() > inst.p_bar * (1 + 1e-12):
        raise ModelViolationError(
            f"prices must lie in [0, {inst.p_bar}], got range "
            f"[{p.min()}, {p.max()}]"
        )
    if np.any(inst.a + xi <= inst.p_bar):
        raise ModelViolationError(
            "shock realization pushes a marginal value below the outside price"
        )
    y = derived.m_inv @ (inst.a + xi - p)
    if y.min() <= 0.0:
        raise ModelViolationError(
            f"equilibrium consumption is not interior (min {y.min():.4g})"
        )
    return y


def best_response_iterate(
    instance: NetworkInstance,
    p: np.ndarray,
    xi: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 100000,
):
    """Iterate y_i <- max(0, (a_i + xi_i - p_i + sum_j G_ij y_j) / (2 b_i))
    from y = 0 until the sup-norm update is at most tol.

    Returns (y, iterations).  Under row dominance the map is a contraction,
    so hitting max_iter indicates a bug and raises.
    """
    p = np.asarray(p, dtype=float)
    xi = np.asarray(xi, dtype=float)
    base = instance.a + xi - p
    two_b = 2.0 * instance.b
    g = instance.g
    y = np.zeros(instance.n_nodes)
    for it in range(1, max_iter + 1):
        y_next = np.maximum(0.0, (base + g @ y) / two_b)
        delta = np.max(np.abs(y_next - y))
        y = y_next
        if delta <= tol:
            return y, it
    raise DivergenceError(
        f"best-response iteration did not reach tol={tol} in {max_iter} steps"
    )


def residual_shocks(panel: PanelData, derived: DerivedMatrices) -> np.ndarray:
    """Back out eps_O^(t) = y_O^(t) - v_O + H^{-1} p_O^(t) from a panel."""
    return panel.consumption - derived.v_o + panel.prices @ derived.h_inv.T


def simulate_panel(
    instance: NetworkInstance,
    n: int,
    price_sampler: UniformPriceSampler = None,
    shock_model: ShockModel = None,
    seed: int = 0,
    derived: DerivedMatrices = None,
) -> PanelData:
    """Draw n independent (price, shock) pairs, solve the full equilibrium
    for every period, and return the observable block.

    Each observation uses its own derived RNG stream (seed, t), so the
    output is independent of evaluation order and reproducible.  The affine
    identity y_O = v_O - H^{-1} p_O + eps_O is asserted on every row against
    the full solve.
    """
    if n < 1:
        raise ConfigurationError(f"panel needs at least one observation, got {n}")
    sampler = price_sampler if price_sampler is not None else UniformPriceSampler()
    shocks = shock_model if shock_model is not None else ShockModel()
    d = derived if derived is not None else derive(instance)
    obs = np.array(instance.observable, dtype=int)
    lat = np.array(instance.latent, dtype=int)
    m = obs.size
    n_nodes = instance.n_nodes
    bound = shocks.bound_for(instance)

    base = RngStream(int(seed), ("panel",))
    prices_o = np.empty((n, m))
    xi_all = np.empty((n, n_nodes))
    for t in range(n):
        gen = base.child(t).generator()
        prices_o[t] = sampler.sample(gen, m, instance.p_bar)
        xi_all[t] = shocks.draw(gen, n_nodes, bound)

    p_full = np.full((n, n_nodes), instance.p_bar)
    p_full[:, obs] = prices_o
    y_full = (instance.a + xi_all - p_full) @ d.m_inv.T
    if y_full.min() <= 0.0:
        raise ModelViolationError(
            f"simulated equilibrium not interior (min consumption "
            f"{y_full.min():.4g}); shock scale too large for this instance"
        )
    y_o = y_full[:, obs]

    eps = xi_all[:, obs] @ d.h_inv.T - xi_all[:, lat] @ (d.h_inv @ d.s_ol).T
    formula = d.v_o + eps - prices_o @ d.h_inv.T
    worst = float(np.max(np.abs(y_o - formula))) if n else 0.0
    if worst > _IDENTITY_TOL:
        raise ModelViolationError(
            f"affine decomposition check failed: max row discrepancy {worst:.3g}"
        )

    meta = shocks.meta()
    meta["truncation_applied"] = bound
    meta["p_bar"] = instance.p_bar
    meta["price_sampler"] = sampler.meta()
    return PanelData(
        prices=prices_o,
        consumption=y_o,
        observable=instance.observable,
        seed=seed,
        shock_meta=meta,
        instance=instance,
    )


# ---------------------------------------------------------------------------
# Serialization


def panel_to_dict(panel: PanelData) -> dict:
    return {
        "n": panel.n,
        "observable_ids": list(panel.observable),
        "prices": [float(x) for x in panel.prices.ravel(order="C")],
        "consumption": [float(x) for x in panel.consumption.ravel(order="C")],
        "shock_meta": panel.shock_meta,
        "seed": panel.seed,
    }


def panel_from_dict(payload: dict) -> PanelData:
    try:
        n = int(payload["n"])
        obs = tuple(payload["observable_ids"])
        m = len(obs)
        prices = np.asarray(payload["prices"], dtype=float)
        consumption = np.asarray(payload["consumption"], dtype=float)
        if prices.size != n * m or consumption.size != n * m:
            raise StructuralError(
                f"panel payload sizes {prices.size}/{consumption.size} do not "
                f"match n*m = {n * m}"
            )
        return PanelData(
            prices=prices.reshape(n, m),
            consumption=consumption.reshape(n, m),
            observable=obs,
            seed=int(payload.get("seed", 0)),
            shock_meta=payload.get("shock_meta", {}),
        )
    except KeyError as exc:
        raise StructuralError(f"panel payload missing field {exc}") from exc


def save_panel(panel: PanelData, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(panel_to_dict(panel), fh, indent=1)
        fh.write("\n")


def load_panel(path) -> PanelData:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise StructuralError(f"panel file {path} is not valid JSON") from exc
    return panel_from_dict(payload)


def export_panel_csv(panel: PanelData, path) -> None:
    """Long-format CSV: one row per (period, observable node)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "node", "price", "consumption"])
        for t in range(panel.n):
            for j, node in enumerate(panel.observable):
                writer.writerow(
                    [
                        t,
                        node,
                        repr(float(panel.prices[t, j])),
                        repr(float(panel.consumption[t, j])),
                    ]
                )
