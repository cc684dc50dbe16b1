"""Reaction-diffusion dynamics on a 2D grid with zero-flux boundaries.

State lives on a uniform H x W grid with unit cell spacing. Time is measured
in months. The spatial operator is a 5-point Laplacian whose out-of-domain
neighbours are replaced by the boundary cell's own value (reflection), which
makes the discrete operator conservative: the grid sum of the Laplacian is
exactly zero.

Integration is an adaptive Dormand-Prince 5(4) pair with a quartic dense
interpolant, compiled with numba. Parameter gradients come from forward
sensitivity equations integrated jointly with the state.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from numba import njit


class StepFailure(RuntimeError):
    """Adaptive controller could not meet tolerance above the minimum step."""


class NonFinite(RuntimeError):
    """Integration state left the finite range (blow-up)."""


class ReactionKind(Enum):
    LOGISTIC0 = "logistic0"  # u(1-u)
    LOGISTIC1 = "logistic1"  # u(1-u)^2
    LOGISTIC2 = "logistic2"  # u^2(1-u)
    NONE = "none"            # pure diffusion

    @property
    def code(self) -> int:
        return _KIND_CODES[self]


_KIND_CODES = {
    ReactionKind.LOGISTIC0: 0,
    ReactionKind.LOGISTIC1: 1,
    ReactionKind.LOGISTIC2: 2,
    ReactionKind.NONE: 3,
}

DEFAULT_RTOL = 1e-6
DEFAULT_ATOL = 1e-8


def validate_field(values: np.ndarray) -> np.ndarray:
    """Check a 2D concentration field and return it as float64."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"field must be 2D, got shape {arr.shape}")
    if arr.shape[0] < 3 or arr.shape[1] < 3:
        raise ValueError(f"grid must be at least 3x3, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("field contains non-finite values")
    return arr


@dataclass(frozen=True)
class PdeParams:
    """Physical parameters of one candidate PDE."""

    z_x: float  # diffusion coefficient, cell^2 / month
    z_r: float  # reaction rate, 1 / month
    kind: ReactionKind

    def __post_init__(self):
        if not (self.z_x > 0):
            raise ValueError(f"z_x must be positive, got {self.z_x}")
        if self.z_r < 0:
            raise ValueError(f"z_r must be non-negative, got {self.z_r}")
        if (self.kind is ReactionKind.NONE) != (self.z_r == 0):
            raise ValueError("z_r must be 0 exactly when kind is NONE")


@dataclass
class Trajectory:
    times: np.ndarray   # (T,), strictly increasing
    frames: np.ndarray  # (T, H, W)


@dataclass
class SensitivityBundle:
    trajectory: Trajectory
    d_dzx: np.ndarray  # (T, H, W), du/dz_x per output time
    d_dzr: np.ndarray  # (T, H, W), du/dz_r per output time


def laplacian_neumann(field: np.ndarray) -> np.ndarray:
    """5-point Laplacian with reflected (replicated-edge) ghost cells."""
    u = validate_field(field)
    p = np.pad(u, 1, mode="edge")
    return p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4.0 * u


def reaction_term(kind: ReactionKind, u: np.ndarray, z_r: float) -> np.ndarray:
    """Pointwise z_r * f_r(u) for the given reaction kind."""
    if z_r < 0:
        raise ValueError("z_r must be non-negative")
    u = np.asarray(u, dtype=np.float64)
    if kind is ReactionKind.LOGISTIC0:
        return z_r * u * (1.0 - u)
    if kind is ReactionKind.LOGISTIC1:
        return z_r * u * (1.0 - u) ** 2
    if kind is ReactionKind.LOGISTIC2:
        return z_r * u ** 2 * (1.0 - u)
    return np.zeros_like(u)


def reaction_deriv(kind: ReactionKind, u: np.ndarray) -> np.ndarray:
    """Pointwise f_r'(u), the exact derivative of the reaction kind."""
    u = np.asarray(u, dtype=np.float64)
    if kind is ReactionKind.LOGISTIC0:
        return 1.0 - 2.0 * u
    if kind is ReactionKind.LOGISTIC1:
        return (1.0 - u) * (1.0 - 3.0 * u)
    if kind is ReactionKind.LOGISTIC2:
        return u * (2.0 - 3.0 * u)
    return np.zeros_like(u)


def rhs(params: PdeParams, u: np.ndarray) -> np.ndarray:
    """Method-of-lines right-hand side: z_x * lap(u) + z_r * f_r(u)."""
    return params.z_x * laplacian_neumann(u) + reaction_term(params.kind, u, params.z_r)


# Dormand-Prince 5(4) tableau, error weights, and quartic dense-output
# coefficients (Shampine interpolant).
_DP_A = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [1 / 5, 0.0, 0.0, 0.0, 0.0],
    [3 / 40, 9 / 40, 0.0, 0.0, 0.0],
    [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
])
_DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_DP_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920,
                  -17253 / 339200, 22 / 525, -1 / 40])
_DP_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608,
     -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933,
     87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304,
     -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408,
     701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883,
     -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_MAX_STEPS = 1_000_000

_OK, _STEP_FAIL, _NON_FINITE = 0, 1, 2


@njit(cache=True)
def _rd_rhs(y, dy, nfields, H, W, zx, zr, kind):
    """du/dt and, when nfields == 3, forward sensitivities ds/dt.

    y and dy are (nfields, H, W). Field 0 is u, 1 is s_x = du/dz_x,
    2 is s_r = du/dz_r. Laplacian indices clamp at the boundary
    (reflected ghost cells).
    """
    for f in range(nfields):
        for i in range(H):
            im = i - 1 if i > 0 else 0
            ip = i + 1 if i < H - 1 else H - 1
            for j in range(W):
                jm = j - 1 if j > 0 else 0
                jp = j + 1 if j < W - 1 else W - 1
                dy[f, i, j] = (y[f, im, j] + y[f, ip, j] + y[f, i, jm]
                               + y[f, i, jp] - 4.0 * y[f, i, j])
    for i in range(H):
        for j in range(W):
            u = y[0, i, j]
            if kind == 0:
                fr = u * (1.0 - u)
                dfr = 1.0 - 2.0 * u
            elif kind == 1:
                fr = u * (1.0 - u) * (1.0 - u)
                dfr = (1.0 - u) * (1.0 - 3.0 * u)
            elif kind == 2:
                fr = u * u * (1.0 - u)
                dfr = u * (2.0 - 3.0 * u)
            else:
                fr = 0.0
                dfr = 0.0
            lap_u = dy[0, i, j]
            dy[0, i, j] = zx * lap_u + zr * fr
            if nfields == 3:
                dy[1, i, j] = lap_u + zx * dy[1, i, j] + zr * dfr * y[1, i, j]
                dy[2, i, j] = fr + zx * dy[2, i, j] + zr * dfr * y[2, i, j]


@njit(cache=True)
def _err_norm(err, y, y_new, rtol, atol):
    n = err.size
    acc = 0.0
    for i in range(n):
        ay = abs(y.flat[i])
        ayn = abs(y_new.flat[i])
        sc = atol + rtol * (ay if ay > ayn else ayn)
        e = err.flat[i] / sc
        acc += e * e
    return np.sqrt(acc / n)


@njit(cache=True)
def _dp45_integrate(y0, nfields, H, W, zx, zr, kind, times, rtol, atol,
                    A, B, E, P):
    """Adaptive DP5(4) over the reaction-diffusion system.

    Returns (out, status) with out shaped (len(times), nfields, H, W).
    Integration always starts at t = 0 with state y0.
    """
    T = times.shape[0]
    out = np.empty((T, nfields, H, W))
    it = 0
    if times[0] == 0.0:
        out[0] = y0
        it = 1
    if it == T:
        return out, _OK

    t_end = times[-1]
    t = 0.0
    y = y0.copy()
    n = y.size
    K = np.empty((7, nfields, H, W))
    dy = np.empty((nfields, H, W))
    ytmp = np.empty((nfields, H, W))
    y_new = np.empty((nfields, H, W))
    err = np.empty((nfields, H, W))

    _rd_rhs(y, dy, nfields, H, W, zx, zr, kind)
    K[0] = dy

    # initial step: match scipy's heuristic (order-5 local error model)
    d0 = 0.0
    d1 = 0.0
    for i in range(n):
        sc = atol + rtol * abs(y.flat[i])
        d0 += (y.flat[i] / sc) ** 2
        d1 += (dy.flat[i] / sc) ** 2
    d0 = np.sqrt(d0 / n)
    d1 = np.sqrt(d1 / n)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    for i in range(n):
        ytmp.flat[i] = y.flat[i] + h0 * dy.flat[i]
    _rd_rhs(ytmp, err, nfields, H, W, zx, zr, kind)
    d2 = 0.0
    for i in range(n):
        sc = atol + rtol * abs(y.flat[i])
        d2 += ((err.flat[i] - dy.flat[i]) / sc) ** 2
    d2 = np.sqrt(d2 / n) / h0
    dm = d1 if d1 > d2 else d2
    if dm <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / dm) ** 0.2
    h = min(100.0 * h0, h1, t_end)

    nonfinite_seen = False
    for _ in range(_MAX_STEPS):
        if it >= T:
            return out, _OK
        min_step = 1e-13 * max(1.0, abs(t))
        if h < min_step:
            if nonfinite_seen:
                return out, _NON_FINITE
            return out, _STEP_FAIL
        if t + h > t_end:
            h = t_end - t

        # stages 1..5
        for s in range(1, 6):
            for i in range(n):
                acc = 0.0
                for q in range(s):
                    acc += A[s, q] * K[q].flat[i]
                ytmp.flat[i] = y.flat[i] + h * acc
            _rd_rhs(ytmp, dy, nfields, H, W, zx, zr, kind)
            K[s] = dy
        for i in range(n):
            acc = 0.0
            for q in range(6):
                acc += B[q] * K[q].flat[i]
            y_new.flat[i] = y.flat[i] + h * acc
        _rd_rhs(y_new, dy, nfields, H, W, zx, zr, kind)
        K[6] = dy
        for i in range(n):
            acc = 0.0
            for q in range(7):
                acc += E[q] * K[q].flat[i]
            err.flat[i] = h * acc

        en = _err_norm(err, y, y_new, rtol, atol)
        if not np.isfinite(en):
            nonfinite_seen = True
            h *= 0.2
            continue
        if en <= 1.0:
            # dense output at requested times inside (t, t + h]
            t_next = t + h
            while it < T and times[it] <= t_next + 1e-12 * max(1.0, t_next):
                theta = (times[it] - t) / h
                if theta > 1.0:
                    theta = 1.0
                p1 = theta
                p2 = theta * p1
                p3 = theta * p2
                p4 = theta * p3
                for i in range(n):
                    acc = 0.0
                    for q in range(7):
                        acc += K[q].flat[i] * (P[q, 0] * p1 + P[q, 1] * p2
                                               + P[q, 2] * p3 + P[q, 3] * p4)
                    out[it].flat[i] = y.flat[i] + h * acc
                it += 1
            t = t_next
            tmp = y
            y = y_new
            y_new = tmp
            K[0] = K[6]
            if en == 0.0:
                factor = 10.0
            else:
                factor = 0.9 * en ** -0.2
                if factor > 10.0:
                    factor = 10.0
            h *= factor
            nonfinite_seen = False
        else:
            factor = 0.9 * en ** -0.2
            if factor < 0.2:
                factor = 0.2
            h *= factor
    return out, _STEP_FAIL


def _check_times(times) -> np.ndarray:
    t = np.asarray(times, dtype=np.float64)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("times must be a non-empty 1D sequence")
    if t[0] < 0:
        raise ValueError("times must start at or after 0")
    if t.size > 1 and not (np.diff(t) > 0).all():
        raise ValueError("times must be strictly increasing")
    return t


def _run(params: PdeParams, u0: np.ndarray, times: np.ndarray, nfields: int,
         rtol: float, atol: float) -> np.ndarray:
    u0 = validate_field(u0)
    H, W = u0.shape
    y0 = np.zeros((nfields, H, W))
    y0[0] = u0
    out, status = _dp45_integrate(
        y0, nfields, H, W, params.z_x, params.z_r, params.kind.code,
        times, rtol, atol, _DP_A, _DP_B, _DP_E, _DP_P)
    if status == _NON_FINITE:
        raise NonFinite(f"state left finite range (params={params})")
    if status == _STEP_FAIL:
        raise StepFailure(f"step size underflow (params={params})")
    if not np.isfinite(out).all():
        raise NonFinite(f"non-finite output frames (params={params})")
    return out


def integrate(params: PdeParams, u0: np.ndarray, times,
              rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL) -> Trajectory:
    """Integrate du/dt = rhs(params, u) from t = 0, sampled at `times`."""
    t = _check_times(times)
    out = _run(params, u0, t, 1, rtol, atol)
    return Trajectory(times=t, frames=out[:, 0])


def integrate_with_sensitivities(params: PdeParams, u0: np.ndarray, times,
                                 rtol: float = DEFAULT_RTOL,
                                 atol: float = DEFAULT_ATOL) -> SensitivityBundle:
    """Integrate state plus forward sensitivities du/dz_x, du/dz_r."""
    t = _check_times(times)
    out = _run(params, u0, t, 3, rtol, atol)
    traj = Trajectory(times=t, frames=out[:, 0])
    return SensitivityBundle(trajectory=traj, d_dzx=out[:, 1], d_dzr=out[:, 2])
