"""Preconditioned conjugate gradients and Lanczos condition-number estimation.

Both routines accept the operator and the preconditioner as callables. The
Lanczos recurrence runs on the preconditioned pencil with C-inner products
(pairs of residual-like and preconditioned vectors), with full
reorthogonalization for robustness; extreme Ritz values of the tridiagonal
matrix converge to the extreme eigenvalues of C A.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal

__all__ = ["SpectrumEstimate", "IndefiniteOperatorError", "pcg", "estimate_condition"]


class IndefiniteOperatorError(RuntimeError):
    """Negative curvature or indefinite preconditioner detected."""


@dataclass
class SpectrumEstimate:
    lambda_min: float
    lambda_max: float
    kappa: float
    ritz_residual: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list, repr=False)


def pcg(apply_a, apply_c, rhs, tol=1e-10, max_it=1000, x0=None, callback=None):
    """Preconditioned CG; stops when the preconditioned residual norm drops
    below tol relative to its initial value.

    Returns (solution, iterations, residual_history). Negative curvature
    raises IndefiniteOperatorError.
    """
    rhs = np.asarray(rhs, dtype=float)
    x = np.zeros_like(rhs) if x0 is None else np.array(x0, dtype=float)
    r = rhs - apply_a(x) if x0 is not None else rhs.copy()
    z = apply_c(r)
    rz = float(r @ z)
    if rz < 0:
        raise IndefiniteOperatorError("preconditioner is not positive definite")
    history = [np.sqrt(rz)]
    if history[0] == 0.0:
        return x, 0, history
    p = z.copy()
    it = 0
    for it in range(1, max_it + 1):
        q = apply_a(p)
        pq = float(p @ q)
        if pq <= 0:
            raise IndefiniteOperatorError(
                f"negative curvature at iteration {it}: p^T A p = {pq:g}"
            )
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        z = apply_c(r)
        rz_new = float(r @ z)
        if rz_new < 0:
            raise IndefiniteOperatorError("preconditioner is not positive definite")
        history.append(np.sqrt(rz_new))
        if callback is not None:
            callback(x, r, it)
        if history[-1] <= tol * history[0]:
            rz = rz_new
            break
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, it, history


def _lanczos_pass(apply_a, apply_c, n, rng, tol, max_it, window=3):
    v_prev = None
    r = rng.standard_normal(n)
    z = apply_c(r)
    beta = np.sqrt(float(r @ z))
    if beta <= 0:
        raise IndefiniteOperatorError("preconditioner is not positive definite")
    v = r / beta
    w = z / beta
    vs, ws = [v], [w]
    alphas, betas = [], []
    prev = None
    stable = 0
    history = []
    for it in range(1, max_it + 1):
        s = apply_a(w)
        if v_prev is not None:
            s = s - betas[-1] * v_prev
        alpha = float(s @ w)
        alphas.append(alpha)
        s = s - alpha * v
        # full reorthogonalization in the C-weighted pairing
        for vj, wj in zip(vs, ws):
            s = s - (s @ wj) * vj
        t = apply_c(s)
        beta2 = float(s @ t)
        if beta2 < 0:
            raise IndefiniteOperatorError("preconditioner is not positive definite")
        beta = np.sqrt(beta2)
        ev, evec = eigh_tridiagonal(
            np.array(alphas), np.array(betas), select="a"
        )
        lam_min, lam_max = float(ev[0]), float(ev[-1])
        resid = beta * float(
            max(abs(evec[-1, 0]), abs(evec[-1, -1]))
        )
        history.append((lam_min, lam_max))
        if prev is not None:
            d1 = abs(lam_min - prev[0]) / max(abs(lam_min), 1e-300)
            d2 = abs(lam_max - prev[1]) / max(abs(lam_max), 1e-300)
            stable = stable + 1 if max(d1, d2) < tol else 0
        prev = (lam_min, lam_max)
        converged = stable >= window or len(alphas) >= n
        if converged or beta <= 1e-13 * max(abs(lam_max), 1.0):
            return SpectrumEstimate(
                lam_min,
                lam_max,
                lam_max / lam_min if lam_min > 0 else np.inf,
                resid,
                it,
                converged,
                history,
            )
        betas.append(beta)
        v_prev = v
        v = s / beta
        w = t / beta
        vs.append(v)
        ws.append(w)
    return SpectrumEstimate(
        prev[0],
        prev[1],
        prev[1] / prev[0] if prev[0] > 0 else np.inf,
        resid,
        max_it,
        False,
        history,
    )


def estimate_condition(apply_a, apply_c, n, tol=1e-4, max_it=None, seed=0, restarts=3):
    """Extreme eigenvalues and condition number of the preconditioned
    operator C A (both factors SPD).

    Lanczos breakdown restarts with a fresh random vector up to ``restarts``
    times before giving up.
    """
    if max_it is None:
        max_it = min(n, 400)
    rng = np.random.default_rng(seed)
    last_exc = None
    for attempt in range(restarts):
        try:
            est = _lanczos_pass(apply_a, apply_c, n, rng, tol, max_it)
        except IndefiniteOperatorError:
            raise
        except (np.linalg.LinAlgError, ValueError) as exc:  # breakdown
            last_exc = exc
            continue
        if est.lambda_min <= 0:
            raise IndefiniteOperatorError(
                f"nonpositive Ritz value {est.lambda_min:g}: operator not SPD"
            )
        return est
    raise RuntimeError(f"Lanczos failed after {restarts} restarts: {last_exc}")
