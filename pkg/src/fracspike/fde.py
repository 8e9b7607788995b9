"""Fractional calculus core.

Explicit fractional Adams-Bashforth-Moulton (ABM) predictor for left-sided
Caputo systems, its time-mirrored counterpart for right-sided systems, the
classical Euler step for the integer-order case, short-memory truncation and
the Mittag-Leffler function used as a closed-form reference.

Conventions
-----------
A left-sided problem ``D^alpha y = f(t, y)`` with ``y(a) = y0`` is advanced as::

    y_k = y_0 + 1/Gamma(alpha) * sum_{j<k} mu_{j,k} f(t_j, y_j)
    mu_{j,k} = h^alpha / alpha * ((k - j)^alpha - (k - 1 - j)^alpha)

A right-sided problem with terminal value ``lambda(b)`` uses the mirrored
weights ``mu_{j,k}`` with ``j > k``; for ``alpha = 1`` it is reverse-time Euler.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import mpmath
import numpy as np
from scipy import integrate, special

from .exceptions import DivergenceError, IndexOrderError, PrecisionError

METHODS = ("abm_predictor", "euler")

#: Below this argument the Mittag-Leffler series is replaced by its
#: algebraic asymptotic expansion.
ML_CROSSOVER = 20.0
#: Hard cap on the number of series terms before giving up.
ML_MAX_TERMS = 20000
ML_REL_TOL = 1e-15


def check_alpha(alpha) -> float:
    """Return ``alpha`` as a float, rejecting values outside ``(0, 1]``."""
    alpha = float(alpha)
    if not (0.0 < alpha <= 1.0):
        raise ValueError(f"fractional order must lie in (0, 1], got {alpha!r}")
    return alpha


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = a + k*h`` for ``k = 0..N`` with ``h = (b - a)/N``."""

    a: float
    b: float
    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N!r}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))
        if not (np.isfinite(self.a) and np.isfinite(self.b)) or self.b <= self.a:
            raise ValueError(f"need finite a < b, got a={self.a}, b={self.b}")

    @classmethod
    def from_step(cls, h: float, N: int, a: float = 0.0) -> "TimeGrid":
        """Grid with ``N`` steps of size ``h`` starting at ``a``."""
        if h <= 0:
            raise ValueError(f"step size must be positive, got {h}")
        return cls(a, a + N * h, N)

    @property
    def h(self) -> float:
        return (self.b - self.a) / self.N

    def t(self, k: int) -> float:
        if k == self.N:
            return self.b
        return self.a + k * self.h

    def points(self) -> np.ndarray:
        return np.linspace(self.a, self.b, self.N + 1)

    def index_of(self, t: float) -> int:
        """Nearest grid index for time ``t`` (clipped to the grid)."""
        k = int(round((t - self.a) / self.h))
        return min(max(k, 0), self.N)

    def __len__(self):
        return self.N + 1


@dataclass(frozen=True)
class SolverOptions:
    """Integrator choice and optional short-memory window ``K``."""

    method: str = "abm_predictor"
    memory_window: Optional[int] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.memory_window is not None and int(self.memory_window) < 1:
            raise ValueError("memory_window must be a positive integer")

    def validate(self, alpha: float, N: int) -> None:
        if self.method == "euler" and alpha != 1.0:
            raise ValueError("the euler method requires alpha == 1 exactly")
        if self.memory_window is not None and self.memory_window > N:
            raise ValueError(f"memory_window {self.memory_window} exceeds N={N}")


@dataclass(frozen=True)
class Trajectory:
    """Solution values and the stored right-hand side evaluations.

    Both arrays have leading length ``N + 1`` and are read-only.
    """

    grid: TimeGrid
    values: np.ndarray
    rhs_evals: np.ndarray = field(repr=False)

    def __post_init__(self):
        n = self.grid.N + 1
        if len(self.values) != n or len(self.rhs_evals) != n:
            raise ValueError("trajectory arrays must have N + 1 entries")
        if self.values.shape != self.rhs_evals.shape:
            raise ValueError("values and rhs_evals must share one shape")
        self.values.flags.writeable = False
        self.rhs_evals.flags.writeable = False

    @property
    def times(self) -> np.ndarray:
        return self.grid.points()

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]


def abm_weight(k: int, j: int, h: float, alpha: float) -> float:
    """ABM predictor weight ``mu_{j,k}`` coupling history point ``j`` into step ``k``."""
    if not 0 <= j < k:
        raise IndexOrderError(f"need 0 <= j < k, got j={j}, k={k}")
    if h <= 0:
        raise ValueError("h must be positive")
    alpha = check_alpha(alpha)
    return h**alpha / alpha * ((k - j) ** alpha - (k - 1 - j) ** alpha)


def lag_weights(n: int, h: float, alpha: float) -> np.ndarray:
    """Normalised ABM weights by lag.

    Entry ``m`` (``1 <= m <= n``) is ``mu_{k-m,k} / Gamma(alpha)``; entry 0 is
    unused and set to zero. For ``alpha = 1`` every entry equals ``h``.
    """
    alpha = check_alpha(alpha)
    m = np.arange(n + 1, dtype=np.float64)
    w = np.zeros(n + 1)
    if alpha == 1.0:
        w[1:] = h
        return w
    w[1:] = (m[1:] ** alpha - m[:-1] ** alpha) * (h**alpha / (alpha * math.gamma(alpha)))
    return w


def _check_finite(arr, k, what="rhs"):
    if not np.all(np.isfinite(arr)):
        raise DivergenceError(f"non-finite {what} output at step {k}", step=k)


def solve_caputo_forward(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    y0,
    grid: TimeGrid,
    alpha: float,
    opts: Optional[SolverOptions] = None,
    project: Optional[Callable[[float, np.ndarray], np.ndarray]] = None,
) -> Trajectory:
    """Integrate ``D^alpha y = rhs(t, y)`` on ``grid`` from ``y(a) = y0``.

    ``y0`` may have any shape (a batch of states is integrated in one pass).

    ``project``, if given, maps each state after its right-hand side has been
    evaluated (e.g. a hard reset). The jump ``project(y) - y`` is carried into
    the base value of every later step, so for ``alpha = 1`` it behaves like
    an ordinary post-step projection under both methods.
    """
    opts = opts or SolverOptions()
    alpha = check_alpha(alpha)
    opts.validate(alpha, grid.N)
    N, h = grid.N, grid.h
    y0 = np.array(y0, dtype=np.float64)
    values = np.empty((N + 1,) + y0.shape)
    F = np.empty_like(values)
    w = lag_weights(N, h, alpha)
    K = opts.memory_window
    ts = grid.points()

    base = y0
    y = y0
    for k in range(N + 1):
        if k > 0:
            if opts.method == "euler":
                y = values[k - 1] + h * F[k - 1]
            else:
                lo = 0 if K is None else max(0, k - K)
                # einsum (not BLAS) so a sample's result does not depend on the batch size
                y = base + np.einsum("m,m...->...", w[k - lo : 0 : -1], F[lo:k])
        fk = np.asarray(rhs(ts[k], y), dtype=np.float64)
        if fk.shape != y0.shape:
            raise ValueError(f"rhs returned shape {fk.shape}, expected {y0.shape}")
        _check_finite(fk, k)
        F[k] = fk
        if project is not None:
            yp = project(ts[k], y)
            base = base + (yp - y)
            y = yp
        values[k] = y
    return Trajectory(grid, values, F)


def solve_caputo_backward(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    lambda_b,
    grid: TimeGrid,
    alpha: float,
    opts: Optional[SolverOptions] = None,
) -> Trajectory:
    """Integrate a right-sided Caputo system from ``t = b`` down to ``t = a``.

    Uses the forward weights mirrored in time::

        lam_k = lam_N + 1/Gamma(alpha) * sum_{j>k} mu'_{j,k} rhs(t_j, lam_j)

    which is reverse-time Euler (``lam_k = lam_{k+1} + h*rhs_{k+1}``) for
    ``alpha = 1``.
    """
    opts = opts or SolverOptions()
    alpha = check_alpha(alpha)
    opts.validate(alpha, grid.N)
    N, h = grid.N, grid.h
    lam_b = np.array(lambda_b, dtype=np.float64)
    values = np.empty((N + 1,) + lam_b.shape)
    G = np.empty_like(values)
    w = lag_weights(N, h, alpha)
    K = opts.memory_window
    ts = grid.points()

    lam = lam_b
    for k in range(N, -1, -1):
        if k < N:
            if opts.method == "euler":
                lam = values[k + 1] + h * G[k + 1]
            else:
                hi = N if K is None else min(N, k + K)
                lam = lam_b + np.einsum("m,m...->...", w[1 : hi - k + 1], G[k + 1 : hi + 1])
        gk = np.asarray(rhs(ts[k], lam), dtype=np.float64)
        if gk.shape != lam_b.shape:
            raise ValueError(f"rhs returned shape {gk.shape}, expected {lam_b.shape}")
        _check_finite(gk, k)
        G[k] = gk
        values[k] = lam
    return Trajectory(grid, values, G)


# -- Mittag-Leffler ---------------------------------------------------------


def mittag_leffler(alpha, z):
    """One-parameter Mittag-Leffler function ``E_alpha(z) = sum z^k / Gamma(alpha k + 1)``.

    Accepts a scalar or an array of real arguments. Evaluation strategy:

    * ``alpha == 1``: ``exp(z)``.
    * ``z >= 0`` or small ``|z|``: the power series in double precision,
      used whenever its largest term is small enough not to cancel.
    * ``z < -20``: the algebraic asymptotic expansion
      ``-sum_{k>=1} z^-k / Gamma(1 - alpha k)`` truncated at its smallest
      term, when that term is below double precision.
    * other negative ``z``: the positive integral
      ``sin(pi a)/(pi a) int_0^inf exp(-(xu)^(1/a)) / (u^2 + 2u cos(pi a) + 1) du``
      with ``x = -z``, which has no cancellation; the power series in
      extended precision (mpmath, digits sized from the largest term) is
      the last resort if quadrature does not reach double precision.

    Arrays are evaluated with the double-precision series vectorised over
    all safe points; the rest go through the scalar path.

    Raises PrecisionError rather than returning an unconverged value.
    """
    alpha = check_alpha(alpha)
    if np.ndim(z):
        z = np.asarray(z, dtype=np.float64)
        if not np.all(np.isfinite(z)):
            raise ValueError("Mittag-Leffler argument must be finite")
        if alpha == 1.0:
            return np.exp(z)
        flat = z.ravel()
        out, done = _ml_series_vec(alpha, flat)
        hard = []
        for i in np.flatnonzero(~done):
            v = _ml_double(alpha, float(flat[i]))
            if v is None:
                hard.append(i)
            else:
                out[i] = v
        if hard:
            out[hard] = _ml_series_mp(alpha, flat[hard])
        return out.reshape(z.shape)
    z = float(z)
    v = _ml_double(alpha, z)
    return v if v is not None else float(_ml_series_mp(alpha, np.array([z]))[0])


def _ml_series_vec(alpha: float, z: np.ndarray):
    """Double-precision series for every point where it is safe, all at once.

    Returns ``(values, done)``; points not marked done (cancellation-prone
    negative arguments, or series too long) are left for the scalar path.
    """
    x = np.abs(z)
    out = np.ones(z.shape)
    # points whose terms never exceed about e^5 (no cancellation worth
    # mentioning) and whose series is short
    cand = (x > 0) & (x ** (1.0 / alpha) <= np.where(z > 0, 50.0, 5.0))
    if not cand.any():
        return out, x == 0
    lx = np.log(x[cand])
    lmax = lx.max()
    K = 1
    while K < ML_MAX_TERMS and not (K * alpha > math.exp(lmax / alpha) + 2 and K * lmax - math.lgamma(alpha * K + 1.0) < -50.0):
        K += 1
    if K >= ML_MAX_TERMS or K * lx.size > 5_000_000:
        return out, x == 0
    k = np.arange(1, K + 1)
    logs = k * lx[:, None] - special.gammaln(alpha * k + 1.0)
    terms = np.exp(logs)
    neg = z[cand] < 0
    terms[neg] *= np.where(k % 2, -1.0, 1.0)
    peak = np.maximum(logs.max(axis=1), 0.0)
    ok = ~neg | (peak < math.log(100.0))
    vals = 1.0 + terms.sum(axis=1)
    idx = np.flatnonzero(cand)
    out[idx[ok]] = vals[ok]
    done = x == 0
    done[idx[ok]] = True
    return out, done


def _ml_double(alpha: float, z: float) -> Optional[float]:
    """Value in double precision, or ``None`` when extended precision is needed."""
    if not math.isfinite(z):
        raise ValueError(f"Mittag-Leffler argument must be finite, got {z}")
    if z == 0.0:
        return 1.0
    if alpha == 1.0:
        return math.exp(z)
    if z < -ML_CROSSOVER:
        value, err = _ml_asymptotic(alpha, z)
        if err <= 1e-13 * abs(value):
            return value
    if z > 0 or _log_peak_term(alpha, -z, cap=math.log(100.0)) < math.log(100.0):
        return _ml_series_float(alpha, z)
    value, err = _ml_integral(alpha, z)
    if err <= 1e-13 * abs(value):
        return value
    return None


def _ml_integral(alpha: float, z: float):
    """``E_alpha(z)`` for ``z < 0``, ``0 < alpha < 1`` as a positive integral.

    Laplace form of the completely monotone ``E_alpha(-t^alpha)`` after the
    substitution ``u = r^alpha``; returns ``(value, error_estimate)``.
    """
    t = (-z) ** (1.0 / alpha)
    p = 1.0 / alpha
    c = math.cos(math.pi * alpha)

    def f(u):
        return math.exp(-t * u**p) / (u * u + 2.0 * u * c + 1.0)

    total = err = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        # the denominator peaks near u = 1 as alpha -> 1
        for lo, hi in ((0.0, 1.0), (1.0, 2.0), (2.0, math.inf)):
            v, e = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=2e-14, limit=200)
            total += v
            err += e
    k = math.sin(math.pi * alpha) / (math.pi * alpha)
    return k * total, k * err


def _log_peak_term(alpha: float, x: float, cap: float = math.inf) -> float:
    """Log of the largest series term magnitude for ``|z| = x``.

    The search stops early once a term reaches ``cap``.
    """
    lx = math.log(x)
    best, k = 0.0, 1
    while k <= ML_MAX_TERMS and best < cap:
        v = k * lx - math.lgamma(alpha * k + 1.0)
        if v < best and k * alpha > x ** (1.0 / alpha) + 2:
            break
        best = max(best, v)
        k += 1
    return best


def _ml_series_float(alpha: float, z: float) -> float:
    lx = math.log(abs(z))
    neg = z < 0
    s = 1.0
    prev = 1.0
    for k in range(1, ML_MAX_TERMS):
        mag = math.exp(k * lx - math.lgamma(alpha * k + 1.0))
        term = -mag if (neg and k % 2) else mag
        s += term
        if mag < ML_REL_TOL * abs(s) and mag <= prev:
            return s
        prev = mag
    raise PrecisionError(f"E_{alpha}({z}) series did not converge in {ML_MAX_TERMS} terms")


def _ml_series_mp(alpha: float, z: np.ndarray) -> np.ndarray:
    """Power series in extended precision for the cancellation-prone points ``z``.

    Working digits cover the largest term plus 25; each point is summed by
    Horner's rule up to the first term past the peak below ``1e-30``, with
    the coefficients ``1/Gamma(alpha k + 1)`` shared across points.
    """
    lengths, digits = [], 0
    for zi in z:
        x = abs(float(zi))
        lx = math.log(x)
        digits = max(digits, int(_log_peak_term(alpha, x) / math.log(10.0)) + 25 if zi < 0 else 25)
        k = 1
        while not (k * alpha > x ** (1.0 / alpha) + 2 and k * lx - math.lgamma(alpha * k + 1.0) < -69.0):
            k += 1
            if k >= ML_MAX_TERMS:
                raise PrecisionError(f"E_{alpha}({zi}) series did not converge in {ML_MAX_TERMS} terms")
        lengths.append(k)
    out = np.empty(len(z))
    with mpmath.workdps(digits):
        a = mpmath.mpf(alpha)
        coef = [mpmath.rgamma(a * k + 1) for k in range(max(lengths) + 1)]
        for i, (zi, K) in enumerate(zip(z, lengths)):
            zz = mpmath.mpf(float(zi))
            acc = coef[K]
            for k in range(K - 1, -1, -1):
                acc = acc * zz + coef[k]
            out[i] = float(acc)
    return out


def _ml_asymptotic(alpha: float, z: float):
    """Optimally truncated asymptotic sum for ``z < 0``; returns ``(value, error_estimate)``.

    Terms are ``-z^-k / Gamma(1 - alpha k)``, evaluated through the reflection
    formula ``1/Gamma(1 - y) = Gamma(y) sin(pi y) / pi`` so nothing overflows.
    The sum is cut where the envelope ``|z|^-k Gamma(alpha k) / pi`` stops
    decreasing; the next envelope value is the error estimate.
    """
    lx = math.log(-z)
    s = 0.0
    prev_env = math.inf
    for k in range(1, ML_MAX_TERMS):
        log_env = math.lgamma(alpha * k) - k * lx - math.log(math.pi)
        env = math.exp(log_env) if log_env < 700 else math.inf
        if env > prev_env:
            return s, prev_env
        # (-1)^(k+1) from -z^-k with z < 0
        sign = 1.0 if k % 2 else -1.0
        s += sign * env * math.sin(math.pi * alpha * k)
        if env < 1e-17 * abs(s):
            return s, env
        prev_env = env
    return s, prev_env
