"""Vectorised adaptive Gauss-Kronrod quadrature.

A batch of independent integrals is refined together: every pass evaluates
the integrand on all freshly bisected intervals of all unfinished integrals
in one call, so the Python overhead is per pass rather than per interval.
This is what makes the nested TLS integrals (an outer energy integral whose
integrand is itself a batch of inner integrals) cheap enough to evaluate at
many temperatures.

Error estimates follow QUADPACK's G7/K15 heuristic.  An integrand may also
return its own per-node error (e.g. from an inner integral), which is
folded into the interval error so that nested errors propagate.
"""
import numpy as np

from .errors import NumericalError

# Kronrod 15-point nodes on [-1, 1] (positive half, descending) and weights.
_XK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
])
_WK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
# Gauss 7-point weights, living on the odd Kronrod nodes _XK[1::2].
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

NODES = np.concatenate([-_XK[:-1], _XK[::-1]])
KRONROD_WEIGHTS = np.concatenate([_WK[:-1], _WK[::-1]])
GAUSS_WEIGHTS = np.zeros(15)
GAUSS_WEIGHTS[1:7:2] = _WG[:3]
GAUSS_WEIGHTS[7] = _WG[3]
GAUSS_WEIGHTS[9:15:2] = _WG[2::-1]

_EPS = np.finfo(float).eps
_UFLOW = np.finfo(float).tiny


class QuadratureError(NumericalError):
    """Raised when an integral cannot be brought within tolerance.

    The best available estimate and its error are attached as ``estimate``
    and ``error`` so callers can decide whether the result is still usable.
    """

    def __init__(self, message, estimate, error):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


def _gk15(func, lo, hi, owner):
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    x = center[:, None] + half[:, None] * NODES[None, :]
    out = func(x, owner)
    if isinstance(out, tuple):
        fx, node_err = out
    else:
        fx, node_err = out, None
    fx = np.asarray(fx, dtype=float)

    kron = fx @ KRONROD_WEIGHTS
    gauss = fx @ GAUSS_WEIGHTS
    mean = 0.5 * kron
    resabs = np.abs(fx) @ KRONROD_WEIGHTS
    resasc = np.abs(fx - mean[:, None]) @ KRONROD_WEIGHTS

    err = np.abs(kron - gauss)
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = resasc * np.minimum(1.0, (200.0 * err / resasc) ** 1.5)
    err = np.where((resasc != 0) & (err != 0), scaled, err)
    err = np.where(resabs > _UFLOW / (50 * _EPS), np.maximum(50 * _EPS * resabs, err), err)

    val = kron * half
    err = err * np.abs(half)
    if node_err is not None:
        err = err + np.abs(half) * (np.abs(np.asarray(node_err, dtype=float)) @ KRONROD_WEIGHTS)
    return val, err


def integrate_batch(func, a, b, rtol=1e-7, atol=1e-300, max_intervals=2000):
    """Integrate a batch of 1-D integrals over ``[a[i], b[i]]``.

    Parameters
    ----------
    func : callable
        ``func(x, idx)`` where ``x`` has shape ``(m, 15)`` and ``idx`` of
        shape ``(m,)`` tells which integral each row belongs to.  Returns an
        ``(m, 15)`` array of integrand values, or a ``(values, errors)`` pair
        whose second member is a per-node absolute error to propagate.
    a, b : array_like
        Integration limits, shape ``(n,)``.
    rtol, atol : float
        Each integral is accepted once ``err <= max(atol, rtol*|value|)``.
    max_intervals : int
        Subdivision budget per integral.

    Returns
    -------
    value, error : ndarray
        Integral estimates and absolute error estimates, shape ``(n,)``.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    a, b = np.broadcast_arrays(a, b)
    n = a.size
    a = a.ravel()
    b = b.ravel()

    value = np.zeros(n)
    error = np.zeros(n)
    finished = np.zeros(n, dtype=bool)

    lo, hi, owner = a.copy(), b.copy(), np.arange(n)
    val, err = _gk15(func, lo, hi, owner)

    while True:
        tot_val = np.bincount(owner, weights=val, minlength=n)
        tot_err = np.bincount(owner, weights=err, minlength=n)
        n_leaf = np.bincount(owner, minlength=n)
        tol = np.maximum(atol, rtol * np.abs(tot_val))

        live = ~finished
        done_now = live & (tot_err <= tol)
        value[done_now] = tot_val[done_now]
        error[done_now] = tot_err[done_now]
        finished |= done_now

        keep = ~finished[owner]
        if not keep.any():
            break
        lo, hi, owner, val, err = lo[keep], hi[keep], owner[keep], val[keep], err[keep]

        share = tol[owner] / n_leaf[owner]
        width_ok = (hi - lo) > 64 * _EPS * np.maximum(np.abs(lo), np.abs(hi))
        split = (err > share) & width_ok
        stuck = np.bincount(owner, weights=split, minlength=n) == 0
        over = n_leaf >= max_intervals
        failed = ~finished & (stuck | over)
        if failed.any():
            value[failed] = tot_val[failed]
            error[failed] = tot_err[failed]
            raise QuadratureError(
                f"{int(failed.sum())} of {n} integrals did not reach rtol={rtol:g} "
                f"(worst relative error {np.max(tot_err[failed] / np.abs(tot_val[failed] + _UFLOW)):.3g})",
                estimate=value.copy(),
                error=error.copy(),
            )

        mid = 0.5 * (lo[split] + hi[split])
        new_lo = np.concatenate([lo[split], mid])
        new_hi = np.concatenate([mid, hi[split]])
        new_owner = np.concatenate([owner[split], owner[split]])
        new_val, new_err = _gk15(func, new_lo, new_hi, new_owner)

        stay = ~split
        lo = np.concatenate([lo[stay], new_lo])
        hi = np.concatenate([hi[stay], new_hi])
        owner = np.concatenate([owner[stay], new_owner])
        val = np.concatenate([val[stay], new_val])
        err = np.concatenate([err[stay], new_err])

    return value, error


def integrate(f, a, b, rtol=1e-7, atol=1e-300, max_intervals=2000):
    """Adaptive integral of a vectorised scalar function ``f`` over ``[a, b]``.

    Returns ``(value, error)``.  ``f`` receives an ndarray of abscissae and
    must return an array of the same shape.

    >>> val, err = integrate(lambda x: x**2, 0.0, 1.0)
    >>> round(val, 12)
    0.333333333333
    """
    val, err = integrate_batch(lambda x, idx: f(x), [a], [b], rtol, atol, max_intervals)
    return float(val[0]), float(err[0])
