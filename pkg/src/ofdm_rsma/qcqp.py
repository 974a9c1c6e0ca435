"""Convex QCQP solver: primal log-barrier with damped Newton steps.

Problems are ``min x^T Q0 x + q0^T x + c0`` subject to quadratic
inequalities ``x^T Qi x + qi^T x + ci <= 0`` and optional per-coordinate
nonnegativity.  Every quadratic matrix must be positive semidefinite,
which is certified when the problem is built.

Quadratic forms may carry a full matrix or just its diagonal; when every
form in a problem is diagonal the solver evaluates all constraints with
a handful of matrix products per Newton step, which is what keeps the
precoder subproblems cheap.

The barrier parameter starts at mu = 1 and shrinks by a fixed factor per
outer iteration (equivalently t = 1/mu grows) until the duality-gap and
complementarity targets implied by ``kkt_tol`` are met.  Warm starts are
projected into the strict interior when possible; otherwise a phase-1
slack-minimization problem is solved first.

Also hosts the subproblem assemblers that translate the WMMSE step
parameters into this QCQP form, plus a plain-text dump/load of assembled
problems for debugging.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "QuadForm",
    "QcqpProblem",
    "QcqpSolution",
    "InfeasibleProblem",
    "solve",
    "assemble_noma_subproblem",
    "assemble_rsma_subproblem",
    "assemble_mixed_noma_subproblem",
    "SubproblemLayout",
    "dump_problem",
    "load_problem",
]


class InfeasibleProblem(Exception):
    """Raised when no strictly feasible point exists (phase-1 certified)."""


@dataclass
class QuadForm:
    """One term ``x^T Q x + lin^T x + const`` with Q given full or diagonal."""

    lin: np.ndarray
    const: float = 0.0
    diag: np.ndarray | None = None
    full: np.ndarray | None = None

    def __post_init__(self):
        self.lin = np.asarray(self.lin, dtype=float)
        if self.full is not None:
            self.full = np.asarray(self.full, dtype=float)
            self.full = 0.5 * (self.full + self.full.T)
        if self.diag is not None:
            self.diag = np.asarray(self.diag, dtype=float)

    @property
    def dim(self) -> int:
        return self.lin.size

    def value(self, x: np.ndarray) -> float:
        quad = 0.0
        if self.diag is not None:
            quad += float(x @ (self.diag * x))
        if self.full is not None:
            quad += float(x @ self.full @ x)
        return quad + float(self.lin @ x) + self.const

    def grad(self, x: np.ndarray) -> np.ndarray:
        g = self.lin.copy()
        if self.diag is not None:
            g += 2.0 * self.diag * x
        if self.full is not None:
            g += 2.0 * self.full @ x
        return g

    def hess(self) -> np.ndarray:
        h = np.zeros((self.dim, self.dim))
        if self.diag is not None:
            h[np.diag_indices(self.dim)] += 2.0 * self.diag
        if self.full is not None:
            h += 2.0 * self.full
        return h

    def dense_matrix(self) -> np.ndarray:
        q = np.zeros((self.dim, self.dim))
        if self.diag is not None:
            q[np.diag_indices(self.dim)] += self.diag
        if self.full is not None:
            q += self.full
        return q

    def certify_convex(self, label: str = "form"):
        """PSD check: nonnegative diagonal, Cholesky with a small jitter."""
        if self.diag is not None and (self.diag < -1e-10).any():
            raise ValueError(f"{label}: negative diagonal curvature")
        if self.full is not None:
            q = self.full
            scale = max(1.0, float(np.abs(q).max()))
            jitter = 1e-10 * scale * np.eye(self.dim)
            try:
                np.linalg.cholesky(q + jitter)
            except np.linalg.LinAlgError:
                raise ValueError(f"{label}: quadratic matrix is not PSD") from None


@dataclass
class QcqpProblem:
    """Objective, inequality constraints and nonnegativity mask."""

    objective: QuadForm
    constraints: list
    nonneg: np.ndarray | None = None
    names: list | None = None

    def __post_init__(self):
        d = self.objective.dim
        for i, con in enumerate(self.constraints):
            if con.dim != d:
                raise ValueError(f"constraint {i} dimension mismatch")
        if self.nonneg is not None:
            self.nonneg = np.asarray(self.nonneg, dtype=bool)
            if self.nonneg.size != d:
                raise ValueError("nonneg mask dimension mismatch")
        self.objective.certify_convex("objective")
        for i, con in enumerate(self.constraints):
            name = self.names[i] if self.names else f"constraint {i}"
            con.certify_convex(name)

    @property
    def dim(self) -> int:
        return self.objective.dim

    def constraint_values(self, x: np.ndarray) -> np.ndarray:
        return np.array([c.value(x) for c in self.constraints])


@dataclass
class QcqpSolution:
    """Solver outcome; ``status`` is optimal, infeasible or max_iter."""

    x: np.ndarray
    objective_value: float
    status: str
    kkt_residual: float
    multipliers: np.ndarray
    mask_multipliers: np.ndarray | None = None
    barrier_t: float = 0.0
    iterations: int = 0


class _Batch:
    """Stacked constraint evaluation; one code path for diag, one for full."""

    def __init__(self, constraints, dim):
        self.m = len(constraints)
        self.dim = dim
        self.lin = np.zeros((self.m, dim))
        self.const = np.zeros(self.m)
        self.all_diag = all(c.full is None for c in constraints)
        if self.all_diag:
            self.diag = np.zeros((self.m, dim))
            for i, c in enumerate(constraints):
                if c.diag is not None:
                    self.diag[i] = c.diag
                self.lin[i] = c.lin
                self.const[i] = c.const
        else:
            self.quads = np.zeros((self.m, dim, dim))
            for i, c in enumerate(constraints):
                self.quads[i] = c.dense_matrix()
                self.lin[i] = c.lin
                self.const[i] = c.const

    def values(self, x):
        if self.m == 0:
            return np.zeros(0)
        if self.all_diag:
            return self.diag @ (x * x) + self.lin @ x + self.const
        return np.einsum("ijk,j,k->i", self.quads, x, x) + self.lin @ x + self.const

    def grads(self, x):
        if self.m == 0:
            return np.zeros((0, self.dim))
        if self.all_diag:
            return 2.0 * self.diag * x[None, :] + self.lin
        return 2.0 * (self.quads @ x) + self.lin

    def hess_weighted(self, w):
        """Sum of w_i * (2 Q_i) as a dense matrix (or its diagonal)."""
        if self.m == 0:
            return 0.0
        if self.all_diag:
            h = np.zeros((self.dim, self.dim))
            h[np.diag_indices(self.dim)] = 2.0 * (w @ self.diag)
            return h
        return np.tensordot(w, 2.0 * self.quads, axes=1)

    def quad_along(self, u):
        """Per-constraint curvature u^T Q_i u along a ray direction."""
        if self.m == 0:
            return np.zeros(0)
        if self.all_diag:
            return self.diag @ (u * u)
        return np.einsum("ijk,j,k->i", self.quads, u, u)


def _objective_scale(obj: QuadForm) -> float:
    s = float(np.abs(obj.lin).max()) if obj.lin.size else 0.0
    if obj.diag is not None and obj.diag.size:
        s = max(s, float(np.abs(obj.diag).max()))
    if obj.full is not None and obj.full.size:
        s = max(s, float(np.abs(obj.full).max()))
    return max(s, 1e-12)


def _center(x, t, obj, obj_scale, batch, mask, max_inner=30, tol=1e-10):
    """Newton with exact ray search on the barrier potential at fixed t.

    Restricted to a ray the potential is convex (quadratic objective plus
    -log of concave slacks), so the step size is located by bisecting the
    sign of the directional derivative.  Comparing derivative signs stays
    reliable at barrier weights where potential differences would cancel
    in floating point.  Returns (x, steps, ok, decrement at x).
    """
    d = x.size
    steps = 0
    best_x = None
    best_dec = np.inf
    stall = 0
    decrement = np.inf
    h0 = obj.hess()
    for _ in range(max_inner):
        f = batch.values(x)
        if (f >= 0).any() or not np.isfinite(f).all():
            return x, steps, False, np.inf
        inv_neg = 1.0 / (-f)
        grads = batch.grads(x)
        g = t * obj.grad(x) / obj_scale + grads.T @ inv_neg
        h = (t / obj_scale) * h0
        h += (grads * (inv_neg ** 2)[:, None]).T @ grads
        h += batch.hess_weighted(inv_neg)
        if mask is not None:
            g[mask] -= 1.0 / x[mask]
            diag_view = np.einsum("ii->i", h)
            diag_view[mask] += 1.0 / x[mask] ** 2
        # Jacobi equilibration keeps the solve usable when barrier terms
        # near active constraints dwarf the rest of the spectrum
        dj = np.sqrt(np.maximum(np.abs(np.diagonal(h)), 1e-300))
        hs = h / dj[:, None] / dj[None, :]
        gs = g / dj
        ridge = 0.0
        while True:
            try:
                step = np.linalg.solve(
                    hs + ridge * np.eye(d) if ridge else hs, -gs) / dj
            except np.linalg.LinAlgError:
                step = None
            if step is not None and np.isfinite(step).all() and g @ step < 0:
                break
            ridge = 1e-12 if ridge == 0.0 else ridge * 100.0
            if ridge > 1e-2:
                return x, steps, False, np.inf
        decrement = -0.5 * (g @ step)
        if decrement <= tol:
            return x, steps, True, decrement
        if decrement < best_dec:
            best_dec = decrement
            best_x = x.copy()
            stall = 0
        elif best_dec < 1e-2:
            # near the center the decrement shrinks monotonically, so
            # growth or stagnation means the step solve is producing
            # rounding noise: keep the best point seen
            stall += 1
            if decrement > 4.0 * best_dec or stall >= 8:
                return best_x, steps, True, best_dec

        # ray restriction g_i(x + s step) = a_c s^2 + b_c s + c_c
        a_c = batch.quad_along(step)
        b_c = grads @ step
        c_c = f
        a0 = 0.5 * float(step @ (h0 @ step))
        b0 = float(obj.grad(x) @ step)
        tf = t / obj_scale

        # span to the nearest constraint wall along the ray
        s_max = np.inf
        if batch.m:
            quad = a_c > 0
            safe_a = np.where(quad, a_c, 1.0)
            disc = np.maximum(b_c * b_c - 4.0 * a_c * c_c, 0.0)
            roots = np.where(quad, (-b_c + np.sqrt(disc)) / (2.0 * safe_a), np.inf)
            lin = (~quad) & (b_c > 0)
            roots = np.where(lin, -c_c / np.where(lin, b_c, 1.0), roots)
            s_max = float(roots.min())
        if mask is not None:
            falling = step[mask] < 0
            if falling.any():
                s_max = min(s_max, float(
                    (x[mask][falling] / -step[mask][falling]).min()))

        def dphi(s):
            vals = (a_c * s + b_c) * s + c_c
            if (vals >= 0).any():
                return np.inf  # past a wall, derivative effectively +inf
            out = tf * (2.0 * a0 * s + b0)
            if vals.size:
                out += float(((2.0 * a_c * s + b_c) / -vals).sum())
            if mask is not None:
                pos = x[mask] + s * step[mask]
                if (pos <= 0).any():
                    return np.inf
                out += float((-step[mask] / pos).sum())
            return out

        if np.isfinite(s_max):
            hi = (1.0 - 1e-9) * s_max
        else:
            hi = 1.0
            while dphi(hi) < 0 and hi < 1e12:
                hi *= 4.0
        if dphi(hi) <= 0:
            s_star = hi
        else:
            lo = 0.0
            if hi > 1.0 and dphi(1.0) <= 0:
                lo = 1.0  # unit Newton step, optimal near the center
            for _ in range(60):
                if hi - lo <= 1e-3 * hi:
                    break
                mid = 0.5 * (lo + hi)
                if dphi(mid) < 0:
                    lo = mid
                else:
                    hi = mid
            s_star = lo
        moved = False
        for _ in range(80):  # rounding near s_max can overshoot the wall
            cand = x + s_star * step
            fc = batch.values(cand)
            feas = (fc < 0).all() and np.isfinite(fc).all()
            if feas and mask is not None:
                feas = (cand[mask] > 0).all()
            if feas and s_star > 0:
                moved = True
                break
            s_star *= 0.5
        steps += 1
        if not moved or np.array_equal(cand, x):  # below float resolution
            if best_x is not None and best_dec < decrement:
                return best_x, steps, True, best_dec
            return x, steps, True, decrement
        x = cand
    if best_dec < 1e-2 and best_x is not None:
        return best_x, steps, True, best_dec
    return x, steps, True, decrement


def _strict_interior(problem: QcqpProblem, x0: np.ndarray | None):
    """Project a candidate onto the strict interior or return None."""
    d = problem.dim
    x = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float).copy()
    if problem.nonneg is not None:
        floor = 1e-8 * max(1.0, float(np.abs(x).max()))
        x[problem.nonneg] = np.maximum(x[problem.nonneg], floor)
    vals = problem.constraint_values(x) if problem.constraints else np.zeros(0)
    if vals.size == 0 or (vals < -1e-12 * (1.0 + np.abs(vals))).all():
        return x
    return None


def _phase1(problem: QcqpProblem, x0: np.ndarray | None):
    """Minimize a shared slack variable over the constraint set.

    Returns (feasible_x or None, best_point): the second entry is the
    least-violating point found, useful for naming the blocking constraint.
    """
    d = problem.dim
    x = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float).copy()
    aug = d + 1
    cons = []
    for c in problem.constraints:
        cons.append(QuadForm(
            lin=np.concatenate([c.lin, [-1.0]]), const=c.const,
            diag=None if c.diag is None else np.concatenate([c.diag, [0.0]]),
            full=None if c.full is None else _pad_full(c.full),
        ))
    if problem.nonneg is not None:
        for j in np.flatnonzero(problem.nonneg):
            lin = np.zeros(aug)
            lin[j] = -1.0
            lin[-1] = -1.0
            cons.append(QuadForm(lin=lin))
    s0 = 1.0
    raw_vals = [c.value(np.concatenate([x, [0.0]])) for c in cons]
    if raw_vals:
        s0 = max(raw_vals) + 1.0
    radius = 100.0 * (float(np.linalg.norm(x)) + abs(s0) + 1.0)
    ball = QuadForm(lin=np.zeros(aug), const=-radius ** 2,
                    diag=np.ones(aug))
    cons.append(ball)
    obj = QuadForm(lin=np.concatenate([np.zeros(d), [1.0]]))
    batch = _Batch(cons, aug)
    z = np.concatenate([x, [s0]])
    t = 1.0
    for _ in range(40):
        z, _, ok, _ = _center(z, t, obj, 1.0, batch, None)
        if not ok:
            break
        if z[-1] < -1e-9 * (1.0 + abs(s0)):
            return z[:d], z[:d]
        if len(cons) / t < 1e-12:
            break
        t *= 10.0
    if z[-1] < 0:
        return z[:d], z[:d]
    return None, z[:d]


def _pad_full(q: np.ndarray) -> np.ndarray:
    d = q.shape[0]
    out = np.zeros((d + 1, d + 1))
    out[:d, :d] = q
    return out


def solve(problem: QcqpProblem, warm_start: np.ndarray | None = None,
          kkt_tol: float = 1e-7, mu_factor: float = 10.0,
          t0: float = 1.0, max_outer: int = 60,
          warm_mults: np.ndarray | None = None,
          warm_mask_mults: np.ndarray | None = None) -> QcqpSolution:
    """Solve a convex QCQP to the requested KKT residual.

    The returned multipliers are barrier estimates for the original
    (unscaled) problem; ``kkt_residual`` is the maximum of the relative
    stationarity norm and the per-constraint complementarity gap.  An
    infeasible problem yields status "infeasible" with x at the
    least-violating point phase-1 could find.

    When multiplier estimates from a related solve are passed along with
    the warm start, the barrier weight enters at the duality-gap estimate
    they imply (m / sum of lambda_i * (-f_i)) instead of at ``t0``, which
    skips the part of the schedule below the warm point.
    """
    d = problem.dim
    obj = problem.objective
    obj_scale = _objective_scale(obj)
    mask = problem.nonneg if problem.nonneg is not None and problem.nonneg.any() else None
    batch = _Batch(problem.constraints, d)
    m_total = batch.m + (int(mask.sum()) if mask is not None else 0)

    x = _strict_interior(problem, warm_start)
    if x is None:
        x, best = _phase1(problem, warm_start)
        if x is None:
            return QcqpSolution(best, float("nan"), "infeasible", float("inf"),
                                np.full(batch.m, np.nan))

    if m_total == 0:
        x, steps, _, _ = _center(x, 1.0, obj, obj_scale, batch, None, tol=1e-14)
        g = obj.grad(x)
        res = float(np.abs(g).max()) / max(1.0, float(np.abs(g).max()))
        return QcqpSolution(x, obj.value(x), "optimal", res, np.zeros(0),
                            None, 0.0, steps)

    if warm_mults is not None and batch.m:
        # classic warm entry: lambda and nu imply a duality-gap estimate at
        # the start point, and t = m / gap puts the schedule right there
        lam = np.maximum(np.asarray(warm_mults, dtype=float), 0.0)
        if lam.shape == (batch.m,):
            gap = float(lam @ -batch.values(x))
            if mask is not None and warm_mask_mults is not None \
                    and np.shape(warm_mask_mults) == (int(mask.sum()),):
                gap += float(np.maximum(warm_mask_mults, 0.0) @ x[mask])
            if np.isfinite(gap) and gap > 0.0:
                t0 = float(np.clip(m_total * obj_scale / gap, 1.0, 1e10))

    # escalate the barrier weight by mu_factor after each completed
    # centering; a centering that exhausts its Newton budget subdivides the
    # escalation (sqrt of the factor, kept for the rest of the solve) so
    # the path is re-entered from a nearer target
    t = t0
    total_steps = 0
    status = "optimal"
    fac = mu_factor
    t_centered = None
    exhausted = 0
    for outer in range(max_outer):
        x, steps, ok, dec = _center(x, t, obj, obj_scale, batch, mask)
        total_steps += steps
        if not ok:
            status = "max_iter"
            break
        if dec <= 1e-3:
            exhausted = 0
            t_centered = t
            f0 = abs(obj.value(x)) / obj_scale
            gap_ok = m_total / t <= kkt_tol * max(1.0, f0)
            compl_ok = 1.0 / t <= kkt_tol
            if gap_ok and compl_ok:
                break
            t *= fac
        else:
            exhausted += 1
            if exhausted >= 5:  # stuck at every target tried, cut losses
                status = "max_iter"
                break
            if t_centered is not None and fac > 1.05:
                fac = max(np.sqrt(fac), 1.05)
                t = t_centered * fac
            elif t_centered is None and t > 0.011 * t0:
                t /= fac  # warm point too far from this target, walk down
            # else: factor floor reached, retry with a fresh budget
    else:
        status = "max_iter"

    fvals = batch.values(x)
    lam_scaled = 1.0 / (t * (-fvals)) if batch.m else np.zeros(0)
    grads = batch.grads(x)
    r_stat = obj.grad(x) / obj_scale + (grads.T @ lam_scaled if batch.m else 0.0)
    nu_scaled = None
    if mask is not None:
        nu_scaled = 1.0 / (t * x[mask])
        r_stat[mask] -= nu_scaled
    denom = max(1.0, float(np.abs(obj.grad(x)).max()) / obj_scale)
    kkt = float(np.abs(r_stat).max()) / denom if d else 0.0
    kkt = max(kkt, 1.0 / t)
    if batch.m:
        kkt = max(kkt, float(np.maximum(fvals, 0.0).max()))
    if status == "optimal" and kkt > kkt_tol:
        status = "max_iter"
    return QcqpSolution(
        x=x,
        objective_value=obj.value(x),
        status=status,
        kkt_residual=kkt,
        multipliers=lam_scaled * obj_scale,
        mask_multipliers=None if nu_scaled is None else nu_scaled * obj_scale,
        barrier_t=t,
        iterations=total_steps,
    )


# ---------------------------------------------------------------------------
# Subproblem assembly from WMMSE step parameters
# ---------------------------------------------------------------------------

@dataclass
class SubproblemLayout:
    """Where each precoder block lives inside the QCQP variable vector."""

    kind: str
    n_private: int
    n_users: int
    n_symbols: int = 0
    n_common: int = 0
    private_users: tuple = ()
    qos_users: tuple = ()

    @property
    def private_size(self) -> int:
        return self.n_private * len(self.private_users)

    @property
    def common_size(self) -> int:
        return self.n_symbols * self.n_common

    @property
    def s_size(self) -> int:
        if self.kind != "rsma":
            return 0
        pool = 1 if len(self.qos_users) < self.n_users else 0
        return len(self.qos_users) + pool

    def pack(self, P: np.ndarray, P_c: np.ndarray | None = None,
             s_common: np.ndarray | None = None) -> np.ndarray:
        """Build a warm-start vector.

        For rsma, ``s_common`` (s_size,) holds the common AWMSE slacks:
        one per rate-floored user (``qos_users`` order) plus a pooled
        slot for everyone else.  A strictly feasible point needs their
        sum above every user's summed common AWMSE at (P, P_c).
        """
        parts = [P[:, list(self.private_users)].ravel(order="F")]
        if self.kind in ("rsma", "mixed"):
            parts.append(P_c.ravel())
        if self.kind == "rsma":
            parts.append(np.zeros(self.s_size) if s_common is None
                         else np.asarray(s_common, float).ravel())
        return np.concatenate(parts)

    def unpack(self, x: np.ndarray):
        P = np.zeros((self.n_private, self.n_users))
        block = x[:self.private_size].reshape(self.n_private, len(self.private_users),
                                              order="F")
        P[:, list(self.private_users)] = block
        if self.kind == "noma":
            return P, np.zeros((self.n_symbols, self.n_common))
        off = self.private_size
        P_c = x[off:off + self.common_size].reshape(self.n_symbols, self.n_common)
        return P, P_c


def _private_pieces(params):
    """Column energies, linear pulls and constants of the private AWMSE sums."""
    k_users, n_p = params.alpha.shape
    col_energy = (params.beta.real ** 2 + params.beta.imag ** 2).sum(axis=1)  # (K, N_p)
    pull = -2.0 * np.real(np.einsum("kqq->kq", params.f))  # (K, N_p)
    consts = (params.sigma2 * params.alpha.sum(axis=1)
              + (params.u_private - params.upsilon).sum(axis=1))  # (K,)
    return col_energy, pull, consts


def assemble_noma_subproblem(params, p_total: float, r_min=None):
    """QCQP over the private amplitudes for the SIC sum-AWMSE objective.

    Columns are assumed in decoding order.  Receiver k's AWMSE is quadratic
    in its own column and in every later-decoded column; the objective sums
    those over users, the per-user QoS constraints cap each sum separately.
    """
    k_users, n_p = params.alpha.shape
    r_min = np.zeros(k_users) if r_min is None else np.asarray(r_min, dtype=float)
    col_energy, pull, consts = _private_pieces(params)
    d = n_p * k_users
    layout = SubproblemLayout("noma", n_p, k_users,
                              params.n_symbols, params.n_common,
                              private_users=tuple(range(k_users)))

    cum = np.cumsum(col_energy, axis=0)  # receiver sums k<=i
    obj_diag = cum.ravel()  # column i of P gets sum_{k<=i} energy_k
    obj_lin = pull.ravel()
    obj = QuadForm(lin=obj_lin, const=float(consts.sum()), diag=obj_diag)

    cons = []
    names = []
    cons.append(QuadForm(lin=np.zeros(d), const=-p_total, diag=np.ones(d)))
    names.append("power")
    # rate floors only for positive minimums: at r_min = 0 the bound is met
    # by any point but only with equality when a user's stale rate is zero,
    # which would leave no strict interior
    for k in range(k_users):
        if r_min[k] <= 0:
            continue
        diag = np.zeros((k_users, n_p))
        diag[k:] = col_energy[k]
        lin = np.zeros((k_users, n_p))
        lin[k] = pull[k]
        cons.append(QuadForm(lin=lin.ravel(), diag=diag.ravel(),
                             const=float(consts[k] - (n_p - r_min[k]))))
        names.append(f"qos_user{k}")
    prob = QcqpProblem(obj, cons, nonneg=np.ones(d, dtype=bool), names=names)
    return prob, layout


def _common_pieces(params):
    """Row-wise quadratic data of the common-stream AWMSE per (k, m, n)."""
    own = params.beta_c.real ** 2 + params.beta_c.imag ** 2  # (K,M,N_c,N_c)
    cross = params.beta_cp.real ** 2 + params.beta_cp.imag ** 2  # (K,M,N_c,N_p)
    pull = -2.0 * np.real(np.einsum("kmnn->kmn", params.f_c))  # (K,M,N_c)
    consts = (params.sigma2 * params.alpha_c
              + params.u_common - params.upsilon_c)  # (K,M,N_c)
    return own, cross, pull, consts


def assemble_rsma_subproblem(params, p_total: float, r_min=None):
    """QCQP over (P, P_c, s) for the rate-splitting step.

    Every receiver must decode the whole common stream, so the credited
    common rate over the frame is the weakest user's total.  In AWMSE
    form that is a shared epigraph: slack variables s, one constraint
    per user pushing its summed common AWMSE below sum(s), and sum(s)
    in the objective next to the private AWMSE sums.  At the optimum
    sum(s) hits the largest per-user common AWMSE total, i.e. M N_c
    minus the weakest user's common rate, so minimizing the objective
    maximizes the credited sum rate.  Only the total of s is pinned, so
    a user gets its own slot only when a rate floor identifies it: the
    QoS row then caps that slot plus the private AWMSE sum, crediting
    the full common rate against the floor.  All other users share one
    pooled slot (their split is immaterial, and separate slots would
    leave the barrier Hessian singular along the free directions).  How
    the credit is split across users is bookkeeping after the solve.
    """
    k_users, n_p = params.alpha.shape
    m_sym, n_c = params.n_symbols, params.n_common
    r_min = np.zeros(k_users) if r_min is None else np.asarray(r_min, dtype=float)
    col_energy, pull, consts = _private_pieces(params)
    own, cross, cpull, cconsts = _common_pieces(params)

    qos_users = tuple(k for k in range(k_users) if r_min[k] > 0)
    sz_p = n_p * k_users
    sz_c = m_sym * n_c
    layout = SubproblemLayout("rsma", n_p, k_users, m_sym, n_c,
                              private_users=tuple(range(k_users)),
                              qos_users=qos_users)
    d = sz_p + sz_c + layout.s_size
    off_c, off_s = sz_p, sz_p + sz_c

    # objective: all receivers hear every private column
    obj_diag = np.zeros(d)
    obj_diag[:sz_p] = np.tile(col_energy.sum(axis=0), k_users)
    obj_lin = np.zeros(d)
    obj_lin[:sz_p] = pull.ravel()
    obj_lin[off_s:] = 1.0
    obj = QuadForm(lin=obj_lin, const=float(consts.sum()), diag=obj_diag)

    cons = []
    names = []
    power_diag = np.zeros(d)
    power_diag[:off_s] = 1.0
    cons.append(QuadForm(lin=np.zeros(d), const=-p_total, diag=power_diag))
    names.append("power")

    # every private column leaks into each receiver's common grid
    cross_tot = cross.sum(axis=(1, 2))  # (K, N_p)
    own_tot = own.sum(axis=2)  # (K, M, N_c) column energies over grid rows
    for k in range(k_users):
        diag = np.zeros(d)
        diag[:sz_p] = np.tile(cross_tot[k], k_users)
        diag[off_c:off_s] = own_tot[k].ravel()
        lin = np.zeros(d)
        lin[off_c:off_s] = cpull[k].ravel()
        lin[off_s:] = -1.0
        cons.append(QuadForm(lin=lin, diag=diag, const=float(cconsts[k].sum())))
        names.append(f"common_total_u{k}")

    # rate floors only for positive minimums (see assemble_noma_subproblem)
    for i, k in enumerate(qos_users):
        diag = np.zeros(d)
        diag[:sz_p] = np.tile(col_energy[k], k_users)
        lin = np.zeros(d)
        lin[k * n_p:(k + 1) * n_p] = pull[k]
        lin[off_s + i] = 1.0
        cons.append(QuadForm(lin=lin, diag=diag,
                             const=float(consts[k] - (m_sym * n_c + n_p - r_min[k]))))
        names.append(f"qos_user{k}")

    nonneg = np.zeros(d, dtype=bool)
    nonneg[:off_s] = True  # amplitudes only; the common slacks are free
    prob = QcqpProblem(obj, cons, nonneg=nonneg, names=names)
    return prob, layout


def assemble_mixed_noma_subproblem(params, p_total: float, r_min=None):
    """NOMA step when the first-decoded user occupies the common grid.

    That user's AWMSE (interfered by every private column) goes straight
    into the objective; private users have the common stream cancelled and
    apply SIC among themselves in column order.
    """
    k_users, n_p = params.alpha.shape
    m_sym, n_c = params.n_symbols, params.n_common
    r_min = np.zeros(k_users) if r_min is None else np.asarray(r_min, dtype=float)
    col_energy, pull, consts = _private_pieces(params)
    own, cross, cpull, cconsts = _common_pieces(params)

    priv_users = tuple(range(1, k_users))
    sz_p = n_p * len(priv_users)
    sz_c = m_sym * n_c
    d = sz_p + sz_c
    off_c = sz_p
    layout = SubproblemLayout("mixed", n_p, k_users, m_sym, n_c,
                              private_users=priv_users)

    obj_diag = np.zeros(d)
    obj_lin = np.zeros(d)
    # private SIC terms among users 1..K-1: receiver k hears columns i >= k
    for pos, i in enumerate(priv_users):
        obj_diag[pos * n_p:(pos + 1) * n_p] = col_energy[1:i + 1].sum(axis=0)
        obj_lin[pos * n_p:(pos + 1) * n_p] = pull[i]
    # common-grid user 0 hears itself plus every private column
    obj_diag[:sz_p] += np.tile(cross[0].sum(axis=(0, 1)), len(priv_users))
    own_sum = own[0].sum(axis=1)  # (M, N_c) column energies per symbol
    obj_diag[off_c:] = own_sum.ravel()
    obj_lin[off_c:] = cpull[0].ravel()
    obj_const = float(consts[1:].sum() + cconsts[0].sum())
    obj = QuadForm(lin=obj_lin, const=obj_const, diag=obj_diag)

    cons = []
    names = []
    cons.append(QuadForm(lin=np.zeros(d), const=-p_total, diag=np.ones(d)))
    names.append("power")
    # rate floors only for positive minimums (see assemble_noma_subproblem);
    # user 0 is the common-grid user
    if r_min[0] > 0:
        diag = np.zeros(d)
        diag[:sz_p] = np.tile(cross[0].sum(axis=(0, 1)), len(priv_users))
        diag[off_c:] = own_sum.ravel()
        lin = np.zeros(d)
        lin[off_c:] = cpull[0].ravel()
        cons.append(QuadForm(lin=lin, diag=diag,
                             const=float(cconsts[0].sum() - (m_sym * n_c - r_min[0]))))
        names.append("qos_user0")
    for pos, k in enumerate(priv_users):
        if r_min[k] <= 0:
            continue
        diag = np.zeros(d)
        for pos_i, i in enumerate(priv_users):
            if i >= k:
                diag[pos_i * n_p:(pos_i + 1) * n_p] = col_energy[k]
        lin = np.zeros(d)
        lin[pos * n_p:(pos + 1) * n_p] = pull[k]
        cons.append(QuadForm(lin=lin, diag=diag,
                             const=float(consts[k] - (n_p - r_min[k]))))
        names.append(f"qos_user{k}")
    prob = QcqpProblem(obj, cons, nonneg=np.ones(d, dtype=bool), names=names)
    return prob, layout


# ---------------------------------------------------------------------------
# Plain-text dump of assembled problems
# ---------------------------------------------------------------------------

def dump_problem(problem: QcqpProblem, path):
    """Write a problem as plain text.

    Format: first line ``dim m``, then for the objective and each
    constraint three lines: ``Q`` followed by d*d row-major entries on one
    line, ``q`` followed by d entries, ``c`` followed by the constant.  A
    final line ``mask`` lists the nonnegative coordinates as 0/1.
    """
    d = problem.dim
    forms = [problem.objective] + list(problem.constraints)
    with open(path, "w") as fh:
        fh.write(f"{d} {len(problem.constraints)}\n")
        for form in forms:
            fh.write("Q " + " ".join(repr(v) for v in form.dense_matrix().ravel()) + "\n")
            fh.write("q " + " ".join(repr(v) for v in form.lin) + "\n")
            fh.write(f"c {form.const!r}\n")
        mask = problem.nonneg if problem.nonneg is not None else np.zeros(d, dtype=bool)
        fh.write("mask " + " ".join(str(int(v)) for v in mask) + "\n")


def load_problem(path) -> QcqpProblem:
    """Read back a problem written by :func:`dump_problem`."""
    with open(path) as fh:
        lines = fh.read().split("\n")
    d, m = (int(v) for v in lines[0].split())
    forms = []
    pos = 1
    for _ in range(m + 1):
        q = np.array([float(v) for v in lines[pos].split()[1:]]).reshape(d, d)
        lin = np.array([float(v) for v in lines[pos + 1].split()[1:]])
        const = float(lines[pos + 2].split()[1])
        forms.append(QuadForm(lin=lin, const=const, full=q))
        pos += 3
    mask = np.array([bool(int(v)) for v in lines[pos].split()[1:]])
    return QcqpProblem(forms[0], forms[1:], nonneg=mask)
