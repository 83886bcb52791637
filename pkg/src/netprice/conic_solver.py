"""First-order conic solver for the two row-program families of the
estimation pipeline.

Both families share one shape: minimize a convex positively-homogeneous
objective over (theta, z) subject to, for every design column j, a linear
band |c_j - (L theta)_j| <= lambda * z and a second-order-cone bound
soc_j(theta) <= z, where soc_j collects root-mean-square residuals
weighted by column j.

    dantzig_row   theta = (intercept, slope row); objective |theta|_1 + tau z;
                  per-observation residual r_t = y_t - theta_0 + theta_1:' p_t.
    debias_row    theta = one row of the decorrelating matrix; objective
                  (mean |x_t' theta|^4)^{1/4} + z.

Strategy: each cone constraint is compressed through a QR factorization of
its n-row weighted design into an equivalent (d+2)-dimensional cone, making
the per-iteration cost of the first family independent of the sample size.
The 4-norm objective is handled exactly through its convex conjugate (the
indicator of the 4/3-norm unit ball), so its dual resolvent is a ball
projection and no lift variables are needed.  The resulting saddle point
is solved by a diagonally preconditioned primal-dual splitting with fixed
extrapolation and adaptive restarts to the ergodic average; rows sharing
a design are solved in lockstep as one batched iteration.  Convergence is
declared on a certified relative duality gap (dual value of the running
dual iterate, stationarity slack charged against explicit norm bounds on
an optimal solution), so structural dual drift that a fixed-point metric
would count never blocks termination.  Returned solutions are feasibilized
exactly (z is replaced by the smallest feasible value at the returned
theta, recomputed from the raw program data), so the reported feasibility
residual sits at machine scale and the certificate combines the certified
gap with the relative cost of that feasibilization.

Programs with lambda > 0 are always strictly feasible (take theta = 0 and z
large), so the "infeasible_detected" status is reserved but never emitted.

No randomness anywhere in the solve path: identical inputs give identical
outputs bit for bit on a fixed backend.
"""

from __future__ import annotations

import copy
import csv
import itertools
import json
from dataclasses import dataclass

import numpy as np

from .backend import kernels
from .errors import ConfigurationError, NumericalError, StructuralError

__all__ = [
    "KktReport",
    "RowProgram",
    "SolveResult",
    "load_program",
    "program_from_dict",
    "program_to_dict",
    "reference_solve",
    "save_program",
    "solve_row",
    "solve_rows",
    "verify_kkt",
]

_CHECK_EVERY = 25
# primal/dual step balance, fixed after tuning against the grid oracle
_STEP_BALANCE = 1.0
# restart cadence: pull a row back to its ergodic average after its
# residual decays by _RESTART_DECAY, or once the stretch since its last
# restart exceeds max(_RESTART_MIN_SPAN, growth * last-restart-iteration)
_POLISH_EVERY = 500
_RESTART_DECAY = 0.25
_RESTART_MIN_SPAN = 400.0
_RESTART_SPAN_GROWTH = 0.5
_ORACLE_CHUNK = 2048


@dataclass(frozen=True, eq=False)
class RowProgram:
    """One row-wise convex program.

    design is the n x d matrix whose rows are (1, p_t).  lam scales the
    band width on z.  dantzig_row carries the target node's consumption
    path as response plus the z-price tau; debias_row carries the second
    moment matrix sigma_hat and targets unit vector target_row_index.
    """

    kind: str
    design: np.ndarray
    target_row_index: int
    lam: float
    response: np.ndarray = None
    tau: float = None
    sigma_hat: np.ndarray = None

    def __post_init__(self):
        design = np.array(self.design, dtype=float)
        if design.ndim != 2:
            raise StructuralError(f"design must be 2-d, got shape {design.shape}")
        n, d = design.shape
        if n < 2 or d < 2:
            raise ConfigurationError(
                f"program needs n >= 2 and d >= 2, got n={n}, d={d}"
            )
        if not np.isfinite(design).all():
            raise StructuralError("design contains non-finite values")
        if self.kind not in ("dantzig_row", "debias_row"):
            raise ConfigurationError(f"unknown program kind {self.kind!r}")
        if not self.lam > 0.0:
            raise ConfigurationError(f"lambda must be positive, got {self.lam}")
        if not 0 <= int(self.target_row_index) < d:
            raise ConfigurationError(
                f"target row {self.target_row_index} outside 0..{d - 1}"
            )
        design.flags.writeable = False
        object.__setattr__(self, "design", design)
        object.__setattr__(self, "target_row_index", int(self.target_row_index))
        object.__setattr__(self, "lam", float(self.lam))
        if self.kind == "dantzig_row":
            if self.response is None or self.tau is None:
                raise ConfigurationError(
                    "dantzig_row requires a response vector and tau"
                )
            if self.sigma_hat is not None:
                raise ConfigurationError("dantzig_row does not take sigma_hat")
            resp = np.array(self.response, dtype=float)
            if resp.shape != (n,):
                raise StructuralError(
                    f"response must have length n={n}, got shape {resp.shape}"
                )
            if not np.isfinite(resp).all():
                raise StructuralError("response contains non-finite values")
            if not self.tau > 0.0:
                raise ConfigurationError(f"tau must be positive, got {self.tau}")
            resp.flags.writeable = False
            object.__setattr__(self, "response", resp)
            object.__setattr__(self, "tau", float(self.tau))
        else:
            if self.sigma_hat is None:
                raise ConfigurationError("debias_row requires sigma_hat")
            if self.response is not None or self.tau is not None:
                raise ConfigurationError("debias_row does not take a response or tau")
            sig = np.array(self.sigma_hat, dtype=float)
            if sig.shape != (d, d):
                raise StructuralError(f"sigma_hat must be {d}x{d}, got {sig.shape}")
            if not np.isfinite(sig).all():
                raise StructuralError("sigma_hat contains non-finite values")
            sig.flags.writeable = False
            object.__setattr__(self, "sigma_hat", sig)

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def d(self) -> int:
        return self.design.shape[1]


@dataclass(frozen=True, eq=False)
class SolveResult:
    """Feasibilized solver output for one row program.

    solution is theta; z is the smallest feasible slack at that theta, so
    feasibility_residual is zero up to rounding.  certificate is the
    larger of the scaled primal/dual fixed-point residuals at exit and the
    relative objective cost of the exit feasibilization; status is
    "optimal" or "max_iter" ("infeasible_detected" is reserved).
    """

    solution: np.ndarray
    z: float
    objective: float
    feasibility_residual: float
    certificate: float
    iterations: int
    status: str

    def __post_init__(self):
        sol = np.array(self.solution, dtype=float)
        sol.flags.writeable = False
        object.__setattr__(self, "solution", sol)


@dataclass(frozen=True)
class KktReport:
    """Outcome of an a-posteriori optimality audit of a SolveResult."""

    ok: bool
    feasibility_residual: float
    objective_error: float
    best_probe_decrease: float
    probe_threshold: float
    n_probes: int


# ---------------------------------------------------------------------------
# raw-definition evaluation
#
# Used by the grid oracle, the exit feasibilization, and the KKT audit.
# Deliberately independent of the compressed representation the iterations
# run on: any bug in the reduction shows up as a mismatch here.


def _signed_design(program: RowProgram) -> np.ndarray:
    # residual r = y - theta_0 + theta_{1:}' p = y - B theta
    b = program.design.copy()
    b[:, 1:] *= -1.0
    return b


def _raw_eval_many(program: RowProgram, thetas: np.ndarray):
    """Vectorized (objective core, minimal feasible z) for a stack of
    candidate theta rows, straight from the definitions."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    x = program.design
    n, d = x.shape
    if program.kind == "dantzig_row":
        resid = program.response[:, None] - _signed_design(program) @ thetas.T
        lin = x.T @ resid / n
        soc = np.sqrt((x * x).T @ (resid * resid) / n)
        core = np.abs(thetas).sum(axis=1)
    else:
        k = program.target_row_index
        s = x @ thetas.T  # (n, G)
        lin = program.sigma_hat.T @ thetas.T
        lin[k, :] -= 1.0
        soc = np.empty((d, thetas.shape[0]))
        for j in range(d):
            dev = s * x[:, j][:, None]
            if j == k:
                dev = dev - 1.0
            soc[j] = np.sqrt(np.mean(dev * dev, axis=0))
        core = np.mean(s**4, axis=0) ** 0.25
    z_min = np.maximum(np.max(np.abs(lin), axis=0) / program.lam, np.max(soc, axis=0))
    return core, z_min


def _z_weight(program: RowProgram) -> float:
    return program.tau if program.kind == "dantzig_row" else 1.0


def _min_feasible_z(program: RowProgram, theta: np.ndarray) -> float:
    _, z_min = _raw_eval_many(program, theta)
    return float(z_min[0])


def _raw_objective(program: RowProgram, theta: np.ndarray, z: float) -> float:
    core, _ = _raw_eval_many(program, theta)
    return float(core[0]) + _z_weight(program) * z


def _feasibility_residual(program: RowProgram, theta: np.ndarray, z: float) -> float:
    return max(_min_feasible_z(program, theta) - z, -z, 0.0)


def _stable_inverse(mat: np.ndarray):
    """Inverse of a square matrix, or None when it cannot be trusted.

    Used for the change of variables that conditions the linear bands;
    the caller falls back to the raw formulation on None, so rejecting a
    marginal inverse costs speed, never correctness.
    """
    d = mat.shape[0]
    try:
        inv = np.linalg.solve(mat, np.eye(d))
    except np.linalg.LinAlgError:
        return None
    if not np.isfinite(inv).all():
        return None
    if np.abs(mat @ inv - np.eye(d)).max() > 1e-8:
        return None
    return inv


# ---------------------------------------------------------------------------
# compressed representation shared across a batch of rows


class _Reduction:
    """Compressed constraint data for rows sharing one design.

    For every column j the n-dimensional cone || q_j - T_j theta || <= z,
    with T_j = n^{-1/2} diag(x_j) B, collapses onto the (d+2)-dimensional
    cone (z, R_j theta - u_j, rho_j) via the reduced QR T_j = Q_j R_j;
    R_j is shared across the batch while (u_j, rho_j) carry the per-row
    offsets.  The identity holds for rank-deficient T_j too because Q_j
    has orthonormal columns regardless.

    dantzig rows are normalized by the RMS of their response; positive
    homogeneity of the whole program makes undoing the scaling exact.

    Both families are solved in transformed variables eta = S theta where
    S is the matrix of their linear band (the signed gram for dantzig
    rows, sigma_hat' for debias rows).  The bands become |c - eta| and
    |eta - e_k| <= lam z, which removes the gram conditioning from the
    iteration, and the solution is O(1) regardless of how collinear the
    design is.  The substitution composes linearly with every other term;
    for dantzig rows the l1 objective becomes the composite ||A eta||_1
    (A = S^{-1}) and moves to a dual block with a clamp resolvent, since
    soft thresholding only commutes with diagonal maps.  Falls back to
    the raw variables when the band matrix is too ill-conditioned to
    invert cleanly.
    """

    def __init__(self, kind, design, lam, tau=None, responses=None,
                 sigma_hat=None, k_indices=None):
        x = np.asarray(design, dtype=float)
        n, d = x.shape
        self.kind = kind
        self.n = n
        self.d = d
        self.lam = lam
        self.tau = tau
        self.x = x
        base = x.copy()
        if kind == "dantzig_row":
            base[:, 1:] *= -1.0
        sqrt_n = np.sqrt(n)

        if kind == "dantzig_row":
            y = np.asarray(responses, dtype=float)  # (n, m)
            self.m_rows = y.shape[1]
            self.scales = np.maximum(np.sqrt(np.mean(y * y, axis=0)), 1e-12)
            y_n = y / self.scales
            self.c = x.T @ y_n / n  # (d, m)
            sig_d = x.T @ base / n  # (d, d) signed gram
            self.transform = _stable_inverse(sig_d)
            if self.transform is not None:
                base = base @ self.transform
                self.l_mat = np.eye(d)
                # |eta*|_inf <= max|S| * |theta*|_1, used by the gap bound
                self.band_absmax = float(np.abs(sig_d).max())
                self.sig_full = sig_d  # forward map, used by the polish step
            else:
                self.l_mat = sig_d
            self.kappa = 0.0
        else:
            self.m_rows = len(k_indices)
            self.scales = np.ones(self.m_rows)
            self.c = np.zeros((d, self.m_rows))
            for col, k in enumerate(k_indices):
                self.c[k, col] = 1.0
            sig_t = np.asarray(sigma_hat, dtype=float).T
            self.transform = _stable_inverse(sig_t)
            self.kappa = float(n) ** -0.25
            if self.transform is not None:
                base = x @ self.transform
                self.l_mat = np.eye(d)
            else:
                self.l_mat = sig_t
                # raw-variable fallback: any direction outside the row
                # space of every constraint and objective map is free, so
                # some optimum lies in that row space and its norm is
                # bounded through the smallest positive singular value
                stack = np.vstack([sig_t, self.kappa * x])
                sv = np.linalg.svd(stack, compute_uv=False)
                cut = float(sv.max(initial=0.0)) * max(n + d, 1) * np.finfo(float).eps
                pos = sv[sv > cut]
                self.sig_min_pos = float(pos.min()) if pos.size else 1.0
            self.obj_base = base

        r_stack = np.empty((d, d, d))
        u_stack = np.empty((d, d, self.m_rows))
        rho = np.empty((d, self.m_rows))
        for j in range(d):
            t_j = (x[:, j] / sqrt_n)[:, None] * base
            q_j, r_j = np.linalg.qr(t_j, mode="reduced")
            r_stack[j] = r_j
            if kind == "dantzig_row":
                q_rows = (x[:, j] / sqrt_n)[:, None] * y_n
            else:
                q_rows = np.zeros((n, self.m_rows))
                for col, k in enumerate(k_indices):
                    if k == j:
                        q_rows[:, col] = 1.0 / sqrt_n
            u_j = q_j.T @ q_rows
            u_stack[j] = u_j
            rho2 = np.einsum("tm,tm->m", q_rows, q_rows) - np.einsum(
                "am,am->m", u_j, u_j
            )
            rho[j] = np.sqrt(np.maximum(rho2, 0.0))
        self.r_stack = r_stack
        self.r_flat = np.ascontiguousarray(r_stack.reshape(d * d, d))
        self.u_stack = u_stack
        self.rho = rho

    def to_raw(self, theta_cols):
        """Map solver-space columns back to the original theta variables."""
        if self.transform is not None:
            theta_cols = self.transform @ theta_cols
        if self.kind == "dantzig_row":
            theta_cols = theta_cols * self.scales[None, :]
        return theta_cols

    def reduced_z_min(self, theta, rows=None):
        """Smallest feasible z per row at theta, from compressed data."""
        c = self.c if rows is None else self.c[:, rows]
        u = self.u_stack if rows is None else self.u_stack[:, :, rows]
        rho = self.rho if rows is None else self.rho[:, rows]
        lin = np.abs(c - self.l_mat @ theta)
        mid = (self.r_flat @ theta).reshape(self.d, self.d, -1) - u
        soc = np.sqrt(np.einsum("jam,jam->jm", mid, mid) + rho**2)
        return np.maximum(lin.max(axis=0) / self.lam, soc.max(axis=0))


class _BatchOperator:
    """The saddle-point linear map, offsets, prox, and step sizes for one
    batched solve.

    Primal layout per row: [theta (d), z] for both families.  Dual blocks:

        lin   (d, 2, m)    (lam z, c_j - (L theta)_j) in SOC
        soc   (d, d+2, m)  (z, R_j theta - u_j, rho_j) in SOC
        four  (n, m)       kappa X theta, paired with the 4-norm objective
        ell1  (d, m)       A theta, paired with the composite l1 objective

    Nonsmooth objective terms ride on dual blocks through their convex
    conjugates.  The 4-norm of the debias family resolves as a Euclidean
    projection onto the unit 4/3-norm ball, which keeps the epigraph
    exact without lift variables whose coupling grows with n; kappa =
    n^{-1/4} turns ||kappa X theta||_4 into the mean-power form.  The l1
    norm of a dantzig row in transformed variables is ||A theta||_1 with
    A the inverse band matrix, and resolves as a clamp to [-1, 1]; in the
    raw-variable fallback it stays in the primal prox as soft
    thresholding.

    Step sizes follow the alpha = 1 diagonal preconditioning rule: each
    primal coordinate gets gamma over its column absolute sum, each cone
    (and the four block) a scalar 1/gamma over the largest row absolute
    sum among its coordinates; a scalar per cone keeps the plain cone and
    ball projections valid, and taking the max only shrinks the step,
    which preserves convergence.  The clamp is coordinatewise, so the
    ell1 block gets per coordinate sigmas.
    """

    def __init__(self, red: _Reduction, gamma: float = None):
        if gamma is None:
            gamma = _STEP_BALANCE
        self.red = red
        d, n, m = red.d, red.n, red.m_rows
        self.d, self.n, self.m = d, n, m
        self.debias = red.kind == "debias_row"
        # l1 objective as a dual clamp block when solving in transformed
        # variables; plain primal soft thresholding otherwise
        self.ell1 = (not self.debias) and red.transform is not None
        self.theta_sl = slice(0, d)
        self.z_ix = d
        self.n_primal = d + 1
        if self.debias:
            self.x4 = red.kappa * red.obj_base  # (n, d), solver variables
        self.z_weight = red.tau if red.kind == "dantzig_row" else 1.0

        self.off_lin = np.zeros((d, 2, m))
        self.off_lin[:, 1, :] = red.c
        self.off_soc = np.zeros((d, d + 2, m))
        self.off_soc[:, 1 : d + 1, :] = -red.u_stack
        self.off_soc[:, d + 1, :] = red.rho

        col = np.zeros(self.n_primal)
        col[self.theta_sl] = np.abs(red.l_mat).sum(axis=0) + np.abs(
            red.r_flat
        ).sum(axis=0)
        col[self.z_ix] = d * red.lam + d
        if self.debias:
            col[self.theta_sl] += np.abs(self.x4).sum(axis=0)
        if self.ell1:
            col[self.theta_sl] += np.abs(red.transform).sum(axis=0)
        self._col = np.maximum(col, 1e-12 * (1.0 + col.max()))
        self._rs_lin = np.maximum(red.lam, np.abs(red.l_mat).sum(axis=1))
        self._rs_soc = np.maximum(1.0, np.abs(red.r_stack).sum(axis=2).max(axis=1))
        if self.debias:
            self._rs_four = max(float(np.abs(self.x4).sum(axis=1).max()), 1e-12)
        if self.ell1:
            self._rs_ell1 = np.maximum(np.abs(red.transform).sum(axis=1), 1e-12)
        self.rescale(gamma)

    def rescale(self, gamma: float) -> None:
        """Set all step sizes for a given primal/dual balance."""
        self.gamma = float(gamma)
        self.step_p = (gamma / self._col)[:, None]  # (N, 1)
        self.sig_lin = (1.0 / (gamma * self._rs_lin))[:, None, None]
        self.sig_soc = (1.0 / (gamma * self._rs_soc))[:, None, None]
        if self.debias:
            self.sig_four = 1.0 / (gamma * self._rs_four)
        if self.ell1:
            # clamp resolvent is coordinatewise, so sigma can be too
            self.sig_ell1 = (1.0 / (gamma * self._rs_ell1))[:, None]

    def value(self, x):
        """Apply the constraint map (without offsets) to primal iterates."""
        red, d = self.red, self.d
        m = x.shape[-1]  # full batch or a single polished column
        theta = x[self.theta_sl]
        z = x[self.z_ix]
        lin = np.empty((d, 2, m))
        lin[:, 0, :] = red.lam * z[None, :]
        lin[:, 1, :] = -(red.l_mat @ theta)
        soc = np.empty((d, d + 2, m))
        soc[:, 0, :] = z[None, :]
        soc[:, 1 : d + 1, :] = (red.r_flat @ theta).reshape(d, d, m)
        soc[:, d + 1, :] = 0.0
        blocks = {"lin": lin, "soc": soc}
        if self.debias:
            blocks["four"] = self.x4 @ theta  # (n, m)
        if self.ell1:
            blocks["ell1"] = red.transform @ theta  # (d, m)
        return blocks

    def adjoint(self, y):
        red, d = self.red, self.d
        m = y["lin"].shape[-1]  # full batch or a single polished column
        out = np.zeros((self.n_primal, m))
        y_mid = np.ascontiguousarray(y["soc"][:, 1 : d + 1, :]).reshape(d * d, m)
        out[self.theta_sl] = red.r_flat.T @ y_mid - red.l_mat.T @ y["lin"][:, 1, :]
        out[self.z_ix] = red.lam * y["lin"][:, 0, :].sum(axis=0) + y["soc"][
            :, 0, :
        ].sum(axis=0)
        if self.debias:
            out[self.theta_sl] += self.x4.T @ y["four"]
        if self.ell1:
            out[self.theta_sl] += red.transform.T @ y["ell1"]
        return out

    def prox(self, v):
        """Resolvent of the objective in the diagonal primal metric."""
        out = v.copy()
        step_z = self.step_p[self.z_ix, 0]
        out[self.z_ix] = np.maximum(v[self.z_ix] - step_z * self.z_weight, 0.0)
        if not (self.debias or self.ell1):
            out[self.theta_sl] = kernels.soft_threshold(
                np.ascontiguousarray(v[self.theta_sl]), self.step_p[: self.d, 0]
            )
        return out

    def sig(self, name):
        return getattr(self, "sig_" + name)

    def offset(self, name):
        if name == "lin":
            return self.off_lin
        if name == "soc":
            return self.off_soc
        return None


def _polar_project(arg):
    """w - Pi_cone(w), blockwise; the dual resolvent for cone constraints."""
    proj = arg.copy()
    kernels.project_soc(proj)
    return arg - proj


def _project_l43_ball(v, mu):
    """Columnwise Euclidean projection onto the unit 4/3-norm ball.

    This is the dual resolvent of the 4-norm objective term (the conjugate
    of ||.||_4 is the indicator of that ball).  The projection solves, per
    column, y_i + (4 mu / 3) y_i^{1/3} = |v_i| coupled with
    sum_i y_i^{4/3} = 1: the inner equation is a depressed cubic in
    y_i^{1/3} with a closed-form single real root, and the multiplier mu
    is found by safeguarded Newton on the norm equation.  mu carries warm
    starts between calls (one value per column); columns already inside
    the ball pass through untouched.  Fully deterministic.
    """
    v = np.asarray(v, dtype=float)
    n, m = v.shape
    av = np.abs(v)
    phi0 = (av ** (4.0 / 3.0)).sum(axis=0)
    outside = phi0 > 1.0
    out = v.copy()
    if not np.any(outside):
        return out, np.zeros(m)
    idx = np.nonzero(outside)[0]
    a = av[:, idx]  # (n, k)
    vmax = a.max(axis=0)
    hi = 0.75 * vmax * float(n) ** 0.25 + 1e-12
    lo = np.zeros_like(hi)
    mu_k = np.clip(mu[idx], lo, hi)

    def cubic_root(p, q):
        # unique real root of s^3 + p s = q for p >= 0, q >= 0, computed
        # via s = t - p / (3 t) with t^3 = q/2 + sqrt(q^2/4 + p^3/27),
        # which avoids the cancellation of the textbook two-cbrt form
        w = np.sqrt(0.25 * q * q + (p * p * p) / 27.0)
        t = np.cbrt(0.5 * q + w)
        s = np.where(t > 0.0, t - p / np.maximum(3.0 * t, 1e-300), 0.0)
        return np.maximum(s, 0.0)

    s = None
    for _ in range(80):
        p = (4.0 / 3.0) * mu_k
        s = cubic_root(p[None, :], a)
        s2 = s * s
        s4 = s2 * s2
        phi = s4.sum(axis=0)
        err = phi - 1.0
        if np.all(np.abs(err) <= 1e-12):
            break
        gt = err > 0.0
        lo = np.where(gt, mu_k, lo)
        hi = np.where(gt, hi, mu_k)
        dphi = -(16.0 / 3.0) * (s4 / (3.0 * s2 + p[None, :] + 1e-300)).sum(axis=0)
        step = np.where(np.abs(dphi) > 1e-300, err / dphi, 0.0)
        cand = mu_k - step
        bad = (cand <= lo) | (cand >= hi) | ~np.isfinite(cand)
        mu_k = np.where(bad, 0.5 * (lo + hi), cand)
    out[:, idx] = np.sign(v[:, idx]) * s * s * s
    mu_out = np.zeros(m)
    mu_out[idx] = mu_k
    return out, mu_out


def _match(row_vec, block):
    """Broadcast a per-row vector against a dual block of either layout."""
    if block.ndim == 2:
        return row_vec[None, :]
    return row_vec[None, None, :]


def _core_cols(op, theta):
    """Normalized objective core per row, in solver variables."""
    red = op.red
    if op.debias:
        return np.mean((red.obj_base @ theta) ** 4, axis=0) ** 0.25
    if red.transform is not None:
        return np.abs(red.transform @ theta).sum(axis=0)
    return np.abs(theta).sum(axis=0)


def _gap_rows(op, x_pr, y, kty, rows=None):
    """Certified relative duality gap per row.

    Upper bound: the feasibilized normalized objective at theta (z
    replaced by the smallest feasible slack).  Lower bound: the dual
    value <y, offsets>, valid because every dual block is kept inside
    the domain of its conjugate by construction; slack in the theta and
    z stationarity conditions is charged against explicit norm bounds on
    some optimal solution, so the bound stays valid for inexact duals.
    A difference-based fixed-point residual would be blind here: the
    constant-offset cone coordinates left by the QR compression admit
    dual micro-cycles in the null space of K', which stall that metric
    at a floor while the iterate itself is long converged.

    rows selects a subset of the batch (matching the width of x_pr and
    the dual blocks); None means the full batch.
    """
    red = op.red
    d = op.d
    c = red.c if rows is None else red.c[:, rows]
    u_stack = red.u_stack if rows is None else red.u_stack[:, :, rows]
    rho = red.rho if rows is None else red.rho[:, rows]
    theta = x_pr[op.theta_sl]
    z_min = np.maximum(red.reduced_z_min(theta, rows), 0.0)
    upper = _core_cols(op, theta) + op.z_weight * z_min

    dual = np.einsum("jm,jm->m", y["lin"][:, 1, :], c)
    dual -= np.einsum("jam,jam->m", y["soc"][:, 1 : d + 1, :], u_stack)
    dual += np.einsum("jm,jm->m", y["soc"][:, d + 1, :], rho)

    s_th = kty[op.theta_sl]
    s_z = kty[op.z_ix]
    if op.debias:
        if red.transform is not None:
            # band |eta - e_k| <= lam z bounds any optimum directly
            radius = 1.0 + red.lam * upper / op.z_weight
        else:
            radius = (
                np.sqrt(d) * (1.0 + red.lam * upper / op.z_weight)
                + float(red.n) ** 0.25 * upper
            ) / red.sig_min_pos
        pen_th = np.abs(s_th).sum(axis=0) * radius
    elif red.transform is not None:
        # eta* = S theta* with |theta*|_1 <= upper, entries of S bounded
        pen_th = np.abs(s_th).sum(axis=0) * red.band_absmax * upper
    else:
        pen_th = np.maximum(np.abs(s_th).max(axis=0) - 1.0, 0.0) * upper
    pen_z = np.maximum(-(op.z_weight + s_z), 0.0) * (upper / op.z_weight)

    gap = (upper - dual + pen_th + pen_z) / (1.0 + np.abs(upper))
    return np.maximum(gap, 0.0)


def _polish_point(op, theta, row, act_tol):
    """Multiplier reconstruction for one row at one candidate point.

    The multiplier directions are pinned by the active geometry
    (boundary normals of active cones and bands, the sign pattern on
    the l1 block, the exact 4-norm gradient); the magnitudes solve from
    a least-squares fit of the stationarity equations.  act_tol sets
    how close a constraint must be to its boundary to count as active:
    too loose lets positive-slack cones carry weight (a spurious
    complementarity defect), too tight can leave stationarity out of
    reach, so the caller tries both and keeps the better certificate.
    Returns (primal column, dual blocks, their adjoint) or None when
    the geometry is too degenerate to pin the directions.
    """
    red = op.red
    d = op.d
    c_k = red.c[:, row]
    u_k = red.u_stack[:, :, row]
    rho_k = red.rho[:, row]

    g = c_k - red.l_mat @ theta
    w_mid = np.einsum("jab,b->ja", red.r_stack, theta) - u_k  # (d, d)
    nu = np.sqrt(np.einsum("ja,ja->j", w_mid, w_mid) + rho_k**2)
    z = max(float(np.abs(g).max()) / red.lam, float(nu.max()))
    if z <= 1e-12:
        return None

    tol_act = act_tol * (1.0 + z)
    lin_act = np.nonzero(red.lam * z - np.abs(g) <= tol_act * red.lam)[0]
    lin_act = lin_act[np.abs(g[lin_act]) > 1e-9 * (1.0 + red.lam * z)]
    soc_act = np.nonzero(z - nu <= tol_act)[0]
    soc_act = soc_act[nu[soc_act] > 1e-12]

    cols = []
    lo = []
    hi = []
    for j in lin_act:
        col = np.zeros(d + 1)
        col[:d] = -np.sign(g[j]) * red.l_mat[j, :]
        col[d] = -red.lam
        cols.append(col)
        lo.append(0.0)
        hi.append(np.inf)
    for j in soc_act:
        col = np.zeros(d + 1)
        col[:d] = red.r_stack[j].T @ (w_mid[j] / nu[j])
        col[d] = -1.0
        cols.append(col)
        lo.append(0.0)
        hi.append(np.inf)

    fixed = np.zeros(d + 1)
    if op.ell1:
        t = red.transform @ theta
        t_scale = 1e-6 * (1.0 + float(np.abs(t).max()))
        on = np.abs(t) > t_scale
        fixed[:d] += red.transform.T @ (np.sign(t) * on)
        for i in np.nonzero(~on)[0]:
            col = np.zeros(d + 1)
            col[:d] = red.transform[i, :]
            cols.append(col)
            lo.append(-1.0)
            hi.append(1.0)
    if op.debias:
        t4 = op.x4 @ theta
        q4 = float(np.sum(t4**4)) ** 0.25
        if q4 <= 1e-12 * (1.0 + float(np.abs(theta).max())):
            return None
        y4 = (t4 / q4) ** 3
        fixed[:d] += op.x4.T @ y4
    if not cols:
        return None

    m_sys = np.stack(cols, axis=1)
    lo = np.asarray(lo)
    hi = np.asarray(hi)
    target = np.zeros(d + 1)
    target[d] = -op.z_weight
    rhs = target - fixed

    keep = np.arange(m_sys.shape[1])
    sol = np.linalg.lstsq(m_sys, rhs, rcond=None)[0]
    # one pruning pass: multipliers that come out materially negative
    # mark constraints that are not actually active
    bad = (sol < -1e-8) & (lo == 0.0)
    if np.any(bad) and np.any(~bad):
        keep = np.nonzero(~bad)[0]
        sol = np.linalg.lstsq(m_sys[:, keep], rhs, rcond=None)[0]
    elif np.any(bad):
        return None
    sol = np.clip(sol, lo[keep], hi[keep])

    full = np.zeros(m_sys.shape[1])
    full[keep] = sol
    n_lin = len(lin_act)
    n_soc = len(soc_act)
    alphas = full[:n_lin]
    betas = full[n_lin : n_lin + n_soc]
    frees = full[n_lin + n_soc :]

    y_lin = np.zeros((d, 2, 1))
    y_lin[lin_act, 0, 0] = -alphas
    y_lin[lin_act, 1, 0] = np.sign(g[lin_act]) * alphas
    y_soc = np.zeros((d, d + 2, 1))
    y_soc[soc_act, 0, 0] = -betas
    y_soc[soc_act, 1 : d + 1, 0] = (w_mid[soc_act] / nu[soc_act, None]) * betas[
        :, None
    ]
    y_soc[soc_act, d + 1, 0] = (rho_k[soc_act] / nu[soc_act]) * betas
    blocks = {"lin": y_lin, "soc": y_soc}
    if op.debias:
        blocks["four"] = y4[:, None]
    if op.ell1:
        y_e = np.sign(t) * on
        y_e[np.nonzero(~on)[0]] = frees
        blocks["ell1"] = y_e[:, None]

    x_col = np.zeros((op.n_primal, 1))
    x_col[op.theta_sl, 0] = theta
    x_col[op.z_ix, 0] = z
    return x_col, blocks, op.adjoint(blocks)


def _gn_refit(op, row, t0, z0, sup, lin_act, signs, soc_act):
    """Solve the active constraints with equality near a conjectured vertex.

    The unknowns are the supported raw coefficients and the slack; the
    equations hold the active bands at their signed width and the active
    cone norms at the slack.  Linear in the bands, quadratic in the cone
    norms: a few Gauss-Newton passes from a nearby point converge at
    second order.  The active set may pin only a face, so the step is
    the minimum-norm correction, which keeps the refit anchored at the
    entry point rather than jumping along the flat directions.  Returns
    the refit point in solver variables, or None.
    """
    red = op.red
    d = red.d
    transformed = red.transform is not None
    b_mat = red.sig_full if transformed else red.l_mat
    c_k = red.c[:, row]
    u_k = red.u_stack[:, :, row]
    rho_k = red.rho[:, row]
    if sup.size == 0 or lin_act.size + soc_act.size == 0:
        return None

    cur = np.concatenate([t0[sup], [z0]])
    prev = np.inf
    for _ in range(8):
        t_full = np.zeros(d)
        t_full[sup] = cur[:-1]
        zc = cur[-1]
        eta = b_mat @ t_full if transformed else t_full
        g = c_k - b_mat @ t_full
        w_mid = np.einsum("jab,b->ja", red.r_stack, eta) - u_k
        nu = np.sqrt(np.einsum("ja,ja->j", w_mid, w_mid) + rho_k**2)
        res = np.concatenate(
            [g[lin_act] - signs * red.lam * zc, nu[soc_act] - zc]
        )
        worst = float(np.abs(res).max()) if res.size else 0.0
        if worst <= 1e-14 * (1.0 + zc) or worst >= 0.5 * prev:
            break
        prev = worst
        # d eta / d t[sup] feeds both constraint families
        eta_jac = b_mat[:, sup] if transformed else np.eye(d)[:, sup]
        j_lin = np.hstack(
            [-b_mat[np.ix_(lin_act, sup)], (-signs * red.lam)[:, None]]
        )
        dirs = w_mid[soc_act] / np.maximum(nu[soc_act, None], 1e-300)
        j_soc = np.hstack(
            [
                np.einsum(
                    "ja,jab->jb", dirs, red.r_stack[soc_act] @ eta_jac
                ),
                -np.ones((soc_act.size, 1)),
            ]
        )
        jac = np.vstack([j_lin, j_soc])
        delta = np.linalg.lstsq(jac, -res, rcond=None)[0]
        if not np.isfinite(delta).all():
            return None
        cur = cur + delta
    if not np.isfinite(cur).all() or cur[-1] < -1e-12:
        return None
    t_hat = np.zeros(d)
    t_hat[sup] = cur[:-1]
    return b_mat @ t_hat if transformed else t_hat


def _lp_finish(op, theta, row):
    """Cutting-plane finisher for one piecewise-linear row.

    Both variable spaces of the side-regression family are linear
    programs once the cone norms are replaced by supporting tangents:
    the bands are linear, and the l1 objective splits into positive and
    negative parts.  Tangents are taken at the entry point, the LP
    solves to an exact vertex with exact multipliers, fresh tangents are
    added wherever the solution leaves a cone, and a few rounds settle
    the support and the active set together, which point ladders cannot
    do when the coefficient spectrum has no clean cut.  Since tangents
    only relax the cones, every round is an outer approximation: its
    exact duals, mapped onto the cone parametrization (band pair
    weights combine into the two-dimensional cone element, each tangent
    weight rides the polar boundary ray of its cone, and the l1 clamp
    element falls out of stationarity), price a valid lower bound even
    before the cuts suffice.

    Pure cutting planes stall when many cones are active: the tangent
    relaxation approaches the curved boundary only linearly in the cut
    count.  Each round therefore hands the LP's complementarity pattern
    (support from the vertex, active set and band signs from the
    multipliers) to a Gauss-Newton solve of the active constraints with
    equality, and the multipliers are rebuilt from the geometry of the
    refit point, where the genuinely active constraints hold to
    rounding.  The certificate goes through the same audited gap as the
    iteration itself; nothing is trusted on the LP solver's word alone.

    Returns (gap, primal column, dual blocks, adjoint) or None.
    """
    try:
        from scipy.optimize import linprog
    except ImportError:  # pragma: no cover - scipy is a declared dependency
        return None
    red = op.red
    d = red.d
    rows = np.array([row])
    c_k = red.c[:, row]
    u_k = red.u_stack[:, :, row]
    rho_k = red.rho[:, row]
    transformed = red.transform is not None
    # eta = E t links the LP variable (raw coefficients) to the solver
    # variable; bands read |c - B t| <= lam z in LP variables either way
    if transformed:
        b_mat = red.sig_full
        r_eff = red.r_stack @ red.sig_full
    else:
        b_mat = red.l_mat
        r_eff = red.r_stack

    def cone_state(eta):
        w_mid = np.einsum("jab,b->ja", red.r_stack, eta) - u_k
        nu = np.sqrt(np.einsum("ja,ja->j", w_mid, w_mid) + rho_k**2)
        return w_mid, nu

    obj = np.concatenate([np.ones(2 * d), [op.z_weight]])
    band_plus = np.hstack([b_mat, -b_mat, np.full((d, 1), -red.lam)])
    band_minus = np.hstack([-b_mat, b_mat, np.full((d, 1), -red.lam)])
    a_band = np.vstack([band_plus, band_minus])
    b_band = np.concatenate([c_k, -c_k])

    cuts = []  # (cone index, tangent row over t, rhs, direction)
    last_dir = {}

    def add_cuts(eta, z_ref, margin):
        w_mid, nu = cone_state(eta)
        fresh = 0
        for j in np.nonzero(nu >= z_ref - margin * (1.0 + z_ref))[0]:
            if nu[j] <= 1e-300:
                continue
            dir_j = np.concatenate([w_mid[j], [rho_k[j]]]) / nu[j]
            prev = last_dir.get(j)
            if prev is not None and float(np.abs(dir_j - prev).max()) <= 1e-12:
                continue
            last_dir[j] = dir_j
            row_t = dir_j[:d] @ r_eff[j]
            rhs = float(dir_j[:d] @ u_k[j] - dir_j[d] * rho_k[j])
            cuts.append((j, np.concatenate([row_t, -row_t, [-1.0]]), rhs, dir_j))
            fresh += 1
        return fresh

    best = None

    def audit(x_col, blocks):
        nonlocal best
        kty = op.adjoint(blocks)
        gap = float(_gap_rows(op, x_col, blocks, kty, rows)[0])
        if best is None or gap < best[0]:
            best = (gap, x_col, blocks, kty)
        return gap

    z_entry = float(red.reduced_z_min(theta[:, None], rows)[0])
    add_cuts(theta, z_entry, 0.05)

    stall = 0
    prev_best = np.inf
    for _ in range(24):
        if cuts:
            a_ub = np.vstack([a_band] + [cut[1][None, :] for cut in cuts])
            b_ub = np.concatenate([b_band, [cut[2] for cut in cuts]])
        else:
            a_ub, b_ub = a_band, b_band
        sol = linprog(obj, A_ub=a_ub, b_ub=b_ub, bounds=(0.0, None),
                      method="highs")
        if sol.status != 0 or sol.x is None or sol.ineqlin is None:
            break
        t_star = sol.x[:d] - sol.x[d : 2 * d]
        z_lp = float(sol.x[2 * d])
        eta = b_mat @ t_star if transformed else t_star
        mult = np.maximum(-np.asarray(sol.ineqlin.marginals), 0.0)
        mu_plus = mult[:d]
        mu_minus = mult[d : 2 * d]
        mu_cut = mult[2 * d :]

        y_lin = np.zeros((d, 2, 1))
        y_lin[:, 0, 0] = -(mu_plus + mu_minus)
        y_lin[:, 1, 0] = mu_minus - mu_plus
        y_soc = np.zeros((d, d + 2, 1))
        cone_wgt = np.zeros(d)
        for wgt, (j, _, _, dir_j) in zip(mu_cut, cuts):
            if wgt <= 0.0:
                continue
            cone_wgt[j] += wgt
            y_soc[j, 0, 0] -= wgt
            y_soc[j, 1:, 0] += wgt * dir_j
        blocks = {"lin": y_lin, "soc": y_soc}
        if op.ell1:
            partial = red.r_flat.T @ y_soc[:, 1 : d + 1, 0].reshape(d * d)
            partial -= red.l_mat.T @ y_lin[:, 1, 0]
            blocks["ell1"] = np.clip(-(red.sig_full.T @ partial), -1.0, 1.0)[
                :, None
            ]

        x_col = np.zeros((op.n_primal, 1))
        x_col[op.theta_sl, 0] = eta
        x_col[op.z_ix, 0] = max(
            z_lp, float(red.reduced_z_min(eta[:, None], rows)[0])
        )
        if audit(x_col, blocks) <= 1e-11:
            break

        # hand the LP's complementarity pattern to the local solve, then
        # rebuild the multipliers from the refit geometry
        band_wgt = mu_plus + mu_minus
        w_floor = 1e-9 * max(float(band_wgt.max(initial=0.0)),
                             float(cone_wgt.max(initial=0.0)), 1e-12)
        lin_act = np.nonzero(band_wgt > w_floor)[0]
        soc_act = np.nonzero(cone_wgt > w_floor)[0]
        signs = np.where(mu_minus[lin_act] >= mu_plus[lin_act], 1.0, -1.0)
        sup = np.nonzero(np.abs(t_star) > 1e-12)[0]
        refit = _gn_refit(op, row, t_star, z_lp, sup, lin_act, signs, soc_act)
        if refit is not None:
            done = False
            for act_tol in (1e-9, 1e-4):
                got = _polish_point(op, refit, row, act_tol)
                if got is not None and audit(got[0], got[1]) <= 1e-11:
                    done = True
                    break
            if done:
                break
            # tangents at the refit point track the curved boundary far
            # more closely than tangents at the relaxed vertex
            z_ref = float(red.reduced_z_min(refit[:, None], rows)[0])
            add_cuts(refit, z_ref, 1e-5)
        if len(cuts) > 12 * d:
            break
        # more tangents where the relaxed point leaves the cones, while
        # the rounds keep paying for themselves
        fresh = add_cuts(eta, z_lp, 1e-7)
        stall = stall + 1 if best[0] > 0.7 * prev_best else 0
        prev_best = best[0]
        if fresh == 0 or stall >= 3:
            break
    return best


def _live_refit(op, theta, row, live):
    """Refit one piecewise-linear row on the live dual's active pattern.

    Deep into a run the iterate's dual column has settled on the truly
    active constraints even while the primal still drifts along the
    optimal face, and it separates clustered near-active constraints
    that any slack threshold misreads.  Active bands and cones are read
    off the dual magnitudes, band sides off the dual signs, the support
    off the coefficient pattern; the local solve puts the conjectured
    vertex exactly on those constraints, and fresh multipliers are
    rebuilt from its geometry.  Returns (gap, primal column, dual
    blocks, adjoint) or None.
    """
    red = op.red
    transformed = red.transform is not None
    alpha = -live["lin"][:, 0, 0]
    beta = -live["soc"][:, 0, 0]
    floor = 1e-5 * max(float(alpha.max(initial=0.0)),
                       float(beta.max(initial=0.0)), 1e-12)
    lin_act = np.nonzero(alpha > floor)[0]
    soc_act = np.nonzero(beta > floor)[0]
    signs = np.sign(live["lin"][lin_act, 1, 0])
    signs[signs == 0.0] = 1.0
    t_raw = red.transform @ theta if transformed else theta
    t_max = float(np.abs(t_raw).max())
    rows = np.array([row])
    z0 = float(red.reduced_z_min(theta[:, None], rows)[0])
    best = None
    # the trailing coefficients may still be drifting toward zero, so the
    # support is settled by certification over a small cut ladder
    for cut in (1e-8 * (1.0 + t_max), 1e-3 * t_max, 3e-3 * t_max):
        sup = np.nonzero(np.abs(t_raw) > cut)[0]
        refit = _gn_refit(op, row, t_raw, z0, sup, lin_act, signs, soc_act)
        if refit is None:
            continue
        for act_tol in (1e-9, 1e-4):
            got = _polish_point(op, refit, row, act_tol)
            if got is None:
                continue
            gap = float(_gap_rows(op, got[0], got[1], got[2], rows)[0])
            if best is None or gap < best[0]:
                best = (gap, got[0], got[1], got[2])
        if best is not None and best[0] <= 1e-11:
            break
    return best


def _polish_duals(op, theta, row, live=None):
    """Polish one row at a near-frozen primal point.

    The slow modes of the plain iteration are a constant-velocity dual
    crawl along the constant-offset cone coordinates and, for the
    piecewise-linear family, a tangential primal drift toward the
    optimal vertex.  The piecewise-linear rows refit on the live dual's
    active pattern and fall back to the cutting-plane finisher when
    that does not certify; the smooth-objective rows rebuild
    multipliers from the active geometry at the iterate, trying both
    active tolerances and keeping the better certificate.  The caller
    accepts the result only when it beats the live iterate, so this is
    a pure accelerator with no correctness weight on it.

    Returns (gap, primal column, dual blocks, adjoint) or None.
    """
    if not op.debias:
        best = None
        if live is not None:
            best = _live_refit(op, theta, row, live)
            if best is not None and best[0] <= 1e-11:
                return best
        out = _lp_finish(op, theta, row)
        if out is not None and (best is None or out[0] < best[0]):
            best = out
        if best is not None:
            return best
        if op.red.transform is None:
            return None
    rows = np.array([row])
    best = None
    for act_tol in (1e-9, 1e-4):
        got = _polish_point(op, theta, row, act_tol)
        if got is None:
            continue
        gap = float(_gap_rows(op, got[0], got[1], got[2], rows)[0])
        if best is None or gap < best[0]:
            best = (gap, got[0], got[1], got[2])
    return best


def _slice_rows(red, keep):
    """Shallow copy of a reduction restricted to a subset of its rows.

    Row-independent data (design factors, band matrix, transform, step
    geometry inputs) is shared; only the per-row payload is sliced, so
    the surviving columns iterate exactly as they would at full width.
    """
    sub = copy.copy(red)
    sub.c = red.c[:, keep]
    sub.u_stack = red.u_stack[:, :, keep]
    sub.rho = red.rho[:, keep]
    sub.scales = red.scales[keep]
    sub.m_rows = int(sub.scales.shape[0])
    return sub


def _pdhg(op: _BatchOperator, tol_opt: float, max_iter: int, trace=None):
    """Run the batched primal-dual iteration.  Returns the best primal
    block per row, per-row certified gaps, and the iteration count.

    Columns are independent: the constraint map, the proximal steps, the
    restarts, and the ball projection all act per row.  Rows whose best
    certificate clears the tolerance are therefore frozen out of the
    working batch, which shrinks every per-iteration matmul while leaving
    the surviving rows' trajectories bit for bit unchanged.
    """
    red = op.red
    m = op.m
    names = ["lin", "soc"]
    if op.debias:
        names.append("four")
    if op.ell1:
        names.append("ell1")

    x = np.zeros((op.n_primal, m))
    x[op.z_ix] = red.reduced_z_min(np.zeros((op.d, m)))
    y = {nm: np.zeros_like(block) for nm, block in op.value(x).items()}
    kx = op.value(x)
    kty = op.adjoint(y)  # zeros, but keeps the loop uniform
    mu = np.zeros(m)  # warm multipliers for the 4/3-ball projection

    best_gap = np.full(m, np.inf)
    best_x = x.copy()
    live = np.arange(m)  # original index of each working column

    # per-row restart state: running sums of the post-restart iterates,
    # the residual at the last restart, and when it happened
    sx = np.zeros_like(x)
    sy = {nm: np.zeros_like(block) for nm, block in y.items()}
    cnt = np.zeros(m)
    anchor = np.full(m, np.inf)
    started = np.zeros(m)

    it = 0
    while it < max_iter:
        it += 1
        xn = op.prox(x - op.step_p * kty)
        kxn = op.value(xn)
        yn = {}
        for nm in names:
            sig = op.sig(nm)
            off = op.offset(nm)
            ext = 2.0 * kxn[nm] - kx[nm]
            if off is not None:
                ext = ext + off
            arg = y[nm] + sig * ext
            if nm == "four":
                yn[nm], mu = _project_l43_ball(arg, mu)
            elif nm == "ell1":
                yn[nm] = np.clip(arg, -1.0, 1.0)
            else:
                yn[nm] = _polar_project(arg)
        sx += xn
        for nm in names:
            sy[nm] += yn[nm]
        cnt += 1.0

        if it % _CHECK_EVERY == 0 or it == max_iter:
            ktyn = op.adjoint(yn)
            if not np.isfinite(xn).all() or not np.isfinite(ktyn).all():
                raise NumericalError("solver iterates became non-finite")
            res_row = _gap_rows(op, xn, yn, ktyn)
            if trace is not None and live.size and live[0] == 0:
                theta0 = xn[op.theta_sl, :1]
                z_min0 = float(red.reduced_z_min(theta0)[0])
                core0 = float(_core_cols(op, theta0)[0])
                scale0 = float(red.scales[0])
                obj0 = scale0 * (core0 + op.z_weight * max(z_min0, 0.0))
                short0 = scale0 * max(0.0, z_min0 - float(xn[op.z_ix, 0]))
                trace.append((it, obj0, short0))
            x, kx, y, kty = xn, kxn, yn, ktyn
            if it % _POLISH_EVERY == 0 or it == max_iter:
                window = np.nonzero(
                    (res_row > tol_opt)
                    & (res_row < 1e-2)
                    & (best_gap[live] > tol_opt)
                )[0]
                # record only: steering the live iterate toward polished
                # candidates turns modest improvements into limit cycles
                for k in window:
                    duals = {nm: y[nm][..., k : k + 1] for nm in names}
                    pol = _polish_duals(op, x[op.theta_sl, k], k, duals)
                    if pol is None:
                        continue
                    gap_k, x_col = pol[0], pol[1]
                    gk = live[k]
                    if gap_k < best_gap[gk]:
                        best_gap[gk] = gap_k
                        best_x[:, gk] = x_col[:, 0]
            better = res_row < best_gap[live]
            if np.any(better):
                hit_g = live[better]
                best_gap[hit_g] = res_row[better]
                best_x[:, hit_g] = x[:, better]
            if np.all(best_gap <= tol_opt):
                break

            done = best_gap[live] <= tol_opt
            if np.any(done):
                keep = ~done
                live = live[keep]
                x = np.ascontiguousarray(x[:, keep])
                sx = np.ascontiguousarray(sx[:, keep])
                y = {nm: np.ascontiguousarray(y[nm][..., keep]) for nm in names}
                sy = {nm: np.ascontiguousarray(sy[nm][..., keep]) for nm in names}
                mu = mu[keep]
                cnt = cnt[keep]
                anchor = anchor[keep]
                started = started[keep]
                res_row = res_row[keep]
                red = _slice_rows(red, keep)
                op = _BatchOperator(red, op.gamma)
                kx = op.value(x)
                kty = op.adjoint(y)

            safe_cnt = np.maximum(cnt, 1.0)
            xa = sx / safe_cnt
            ya = {nm: sy[nm] / _match(safe_cnt, sy[nm]) for nm in names}
            res_avg = _gap_rows(op, xa, ya, op.adjoint(ya))
            take_avg = res_avg < res_row
            cand = np.where(take_avg, res_avg, res_row)
            # sufficient-decay or overdue restart, per row; long plateaus
            # get pulled back to their ergodic average, which is where
            # the primal-dual orbit is actually contracting
            overdue = (it - started) >= np.maximum(
                _RESTART_MIN_SPAN, _RESTART_SPAN_GROWTH * started
            )
            # near the tolerance the plain iteration contracts on its
            # own; overdue pullbacks there would only disturb the tail
            overdue &= cand > 100.0 * tol_opt
            hit = (cand <= _RESTART_DECAY * anchor) | (overdue & (cand < anchor))
            hit &= cand > tol_opt
            if np.any(hit):
                pick = hit & take_avg
                if np.any(pick):
                    x[:, pick] = xa[:, pick]
                    for nm in names:
                        y[nm][..., pick] = ya[nm][..., pick]
                    kx = op.value(x)
                    kty = op.adjoint(y)
                sx[:, hit] = 0.0
                for nm in names:
                    sy[nm][..., hit] = 0.0
                cnt[hit] = 0.0
                anchor[hit] = cand[hit]
                started[hit] = it
        else:
            x, kx, y = xn, kxn, yn
            kty = op.adjoint(y)
    return best_x, best_gap, it


# ---------------------------------------------------------------------------
# public solve entry points


def _check_tols(tol_feas, tol_opt, max_iter):
    if not tol_feas > 0.0 or not tol_opt > 0.0:
        raise ConfigurationError("tolerances must be positive")
    if int(max_iter) < 1:
        raise ConfigurationError("max_iter must be at least 1")
    return int(max_iter)


def _assemble_result(program, theta, z_iter, res, iterations, tol_feas, tol_opt):
    core, z_min = _raw_eval_many(program, theta)
    z_fin = float(z_min[0])
    objective = float(core[0]) + _z_weight(program) * z_fin
    # z is the recomputed minimal slack, so the residual is zero by
    # construction; keep the subtraction so any future drift in the
    # evaluation path shows up here
    feas = max(_min_feasible_z(program, theta) - z_fin, 0.0)
    bump = _z_weight(program) * max(0.0, z_fin - z_iter) / (1.0 + abs(objective))
    certificate = float(max(res, bump))
    status = "optimal" if (res <= tol_opt and feas <= tol_feas) else "max_iter"
    return SolveResult(
        solution=theta,
        z=z_fin,
        objective=objective,
        feasibility_residual=feas,
        certificate=certificate,
        iterations=iterations,
        status=status,
    )


def _reduction_for(programs):
    p0 = programs[0]
    if p0.kind == "dantzig_row":
        responses = np.stack([p.response for p in programs], axis=1)
        return _Reduction(
            p0.kind, p0.design, p0.lam, tau=p0.tau, responses=responses
        )
    return _Reduction(
        p0.kind,
        p0.design,
        p0.lam,
        sigma_hat=p0.sigma_hat,
        k_indices=[p.target_row_index for p in programs],
    )


def solve_rows(programs, tol_feas=1e-7, tol_opt=1e-6, max_iter=200000):
    """Solve several row programs sharing one design as a single batched
    iteration.  All programs must agree on kind, design, and lambda (and
    tau or sigma_hat).  Returns one SolveResult per program, in order."""
    programs = list(programs)
    if not programs:
        raise ConfigurationError("no programs to solve")
    max_iter = _check_tols(tol_feas, tol_opt, max_iter)
    p0 = programs[0]
    for p in programs[1:]:
        if p.kind != p0.kind:
            raise ConfigurationError("batched programs must share a kind")
        if p.design is not p0.design and not np.array_equal(p.design, p0.design):
            raise ConfigurationError("batched programs must share the design")
        if p.lam != p0.lam:
            raise ConfigurationError("batched programs must share lambda")
        if p0.kind == "dantzig_row" and p.tau != p0.tau:
            raise ConfigurationError("batched programs must share tau")
        if p0.kind == "debias_row" and not np.array_equal(
            p.sigma_hat, p0.sigma_hat
        ):
            raise ConfigurationError("batched programs must share sigma_hat")

    red = _reduction_for(programs)
    op = _BatchOperator(red)
    x, res_row, iterations = _pdhg(op, tol_opt, max_iter)
    theta_raw = red.to_raw(x[op.theta_sl, :])
    results = []
    for k, program in enumerate(programs):
        theta = theta_raw[:, k]
        z_iter = float(red.scales[k]) * float(x[op.z_ix, k])
        results.append(
            _assemble_result(
                program, theta, z_iter, float(res_row[k]), iterations,
                tol_feas, tol_opt,
            )
        )
    return results


def solve_row(program, tol_feas=1e-7, tol_opt=1e-6, max_iter=200000,
              trace_path=None):
    """Solve a single row program.  If trace_path is given, write a CSV
    with columns iteration, objective, feasibility_residual sampled at
    every convergence check (the objective column reports the feasibilized
    upper bound for the iterate)."""
    max_iter = _check_tols(tol_feas, tol_opt, max_iter)
    red = _reduction_for([program])
    op = _BatchOperator(red)
    trace = [] if trace_path is not None else None
    x, res_row, iterations = _pdhg(op, tol_opt, max_iter, trace=trace)
    theta = red.to_raw(x[op.theta_sl, :1])[:, 0]
    z_iter = float(red.scales[0]) * float(x[op.z_ix, 0])
    result = _assemble_result(
        program, theta, z_iter, float(res_row[0]), iterations, tol_feas, tol_opt
    )
    if trace_path is not None:
        with open(trace_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "objective", "feasibility_residual"])
            for row in trace:
                writer.writerow([row[0], repr(float(row[1])), repr(float(row[2]))])
    return result


# ---------------------------------------------------------------------------
# slow reference oracle and optimality audit


def reference_solve(program, target_cell=1e-4, half_width=5.0, points=21):
    """Brute-force the program on an iteratively refined grid over theta,
    with z set to its minimal feasible value at each grid point.

    Starts from a symmetric box around the origin and repeatedly zooms on
    the incumbent (new half-width = three grid cells) until the cell size
    drops below target_cell.  Convexity of the objective-at-minimal-z makes
    the zoom safe once the optimum is inside the box.  Exponential in d;
    intended for cross-checking the iterative solver on small programs.
    """
    if not target_cell > 0.0 or not half_width > 0.0 or points < 3:
        raise ConfigurationError("oracle needs target_cell > 0, half_width > 0, points >= 3")
    d = program.d
    weight = _z_weight(program)
    center = np.zeros(d)
    h = float(half_width)
    evals = 0
    best_theta = center.copy()
    best_obj = np.inf
    while True:
        axes = [center[i] + np.linspace(-h, h, points) for i in range(d)]
        best_in_pass = None
        for chunk in _grid_chunks(axes, _ORACLE_CHUNK):
            core, z_min = _raw_eval_many(program, chunk)
            objs = core + weight * z_min
            i = int(np.argmin(objs))
            evals += chunk.shape[0]
            if best_in_pass is None or objs[i] < best_in_pass[0]:
                best_in_pass = (float(objs[i]), chunk[i].copy())
        if best_in_pass[0] < best_obj:
            best_obj, best_theta = best_in_pass[0], best_in_pass[1]
        center = best_theta.copy()
        spacing = 2.0 * h / (points - 1)
        if spacing <= target_cell:
            break
        h = 3.0 * spacing
    z_fin = _min_feasible_z(program, best_theta)
    return SolveResult(
        solution=best_theta,
        z=z_fin,
        objective=_raw_objective(program, best_theta, z_fin),
        feasibility_residual=0.0,
        certificate=spacing,
        iterations=evals,
        status="optimal",
    )


def _grid_chunks(axes, chunk_size):
    combos = itertools.product(*axes)
    while True:
        block = list(itertools.islice(combos, chunk_size))
        if not block:
            return
        yield np.array(block, dtype=float)


def verify_kkt(program: RowProgram, result: SolveResult, n_random=50,
               probe_step=1e-4, threshold_scale=1e-5):
    """Audit a SolveResult against the raw program definitions.

    Checks (a) the reported z is feasible and matches the minimal feasible
    slack at the solution, (b) the reported objective is consistent, and
    (c) no probe direction (random unit vectors plus all +-coordinate
    axes, each stepped by probe_step scaled to the solution size, with z
    re-minimized at the probe point) decreases the objective by more than
    threshold_scale * (1 + |objective|).  Deterministic: the probe
    directions come from a fixed-seed generator.
    """
    theta = np.asarray(result.solution, dtype=float)
    d = program.d
    gen = np.random.Generator(np.random.Philox(20260819))
    dirs = gen.standard_normal((max(int(n_random), 0), d))
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = dirs / np.maximum(norms, 1e-12)
    eye = np.eye(d)
    dirs = np.vstack([dirs, eye, -eye])

    feas = _feasibility_residual(program, theta, result.z)
    obj = _raw_objective(program, theta, result.z)
    obj_err = abs(result.objective - obj)

    step = probe_step * (1.0 + float(np.abs(theta).max()))
    probes = theta[None, :] + step * dirs
    core, z_min = _raw_eval_many(program, probes)
    probe_objs = core + _z_weight(program) * z_min
    decrease = float(obj - probe_objs.min())
    threshold = threshold_scale * (1.0 + abs(obj))
    ok = (
        feas <= 1e-9 * (1.0 + abs(result.z))
        and obj_err <= 1e-9 * (1.0 + abs(obj))
        and decrease <= threshold
    )
    return KktReport(
        ok=bool(ok),
        feasibility_residual=float(feas),
        objective_error=float(obj_err),
        best_probe_decrease=decrease,
        probe_threshold=float(threshold),
        n_probes=int(dirs.shape[0]),
    )


# ---------------------------------------------------------------------------
# serialization


def program_to_dict(program: RowProgram) -> dict:
    n, d = program.n, program.d
    payload = {
        "kind": program.kind,
        "n": n,
        "d": d,
        "lam": float(program.lam),
        "target_row_index": int(program.target_row_index),
        "design": [float(v) for v in program.design.ravel()],
    }
    if program.kind == "dantzig_row":
        payload["response"] = [float(v) for v in program.response]
        payload["tau"] = float(program.tau)
    else:
        payload["sigma_hat"] = [float(v) for v in program.sigma_hat.ravel()]
    return payload


def _require(payload, key, kinds):
    if key not in payload:
        raise StructuralError(f"program payload missing key {key!r}")
    value = payload[key]
    if not isinstance(value, kinds):
        raise StructuralError(f"program payload key {key!r} has wrong type")
    return value


def program_from_dict(payload: dict) -> RowProgram:
    if not isinstance(payload, dict):
        raise StructuralError("program payload must be a mapping")
    kind = _require(payload, "kind", str)
    n = _require(payload, "n", int)
    d = _require(payload, "d", int)
    design = _require(payload, "design", list)
    if n < 1 or d < 1 or len(design) != n * d:
        raise StructuralError("program payload design length mismatch")
    try:
        design = np.array(design, dtype=float).reshape(n, d)
    except (TypeError, ValueError) as exc:
        raise StructuralError(f"malformed design payload: {exc}") from exc
    kwargs = {}
    if "response" in payload:
        resp = _require(payload, "response", list)
        if len(resp) != n:
            raise StructuralError("program payload response length mismatch")
        kwargs["response"] = np.array(resp, dtype=float)
    if "tau" in payload:
        kwargs["tau"] = float(_require(payload, "tau", (int, float)))
    if "sigma_hat" in payload:
        sig = _require(payload, "sigma_hat", list)
        if len(sig) != d * d:
            raise StructuralError("program payload sigma_hat length mismatch")
        kwargs["sigma_hat"] = np.array(sig, dtype=float).reshape(d, d)
    return RowProgram(
        kind=kind,
        design=design,
        target_row_index=_require(payload, "target_row_index", int),
        lam=float(_require(payload, "lam", (int, float))),
        **kwargs,
    )


def save_program(program: RowProgram, path) -> None:
    with open(path, "w") as fh:
        json.dump(program_to_dict(program), fh, indent=1)
        fh.write("\n")


def load_program(path) -> RowProgram:
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise StructuralError(f"invalid program file: {exc}") from exc
    return program_from_dict(payload)
