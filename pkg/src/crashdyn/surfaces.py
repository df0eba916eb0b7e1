"""Closed-form model surfaces and a deterministic simplex least-squares fitter.

Three parametric families are provided: a nonstationary potential (sine
profile in the return, exponential envelopes in return and time, glued
across the crash instant by a signed-cube-root smoothing factor), a
power-law diffusion shock relaxing to the pre-crash noise level, and a
two-exponential decaying sinusoid for the averaged index.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import DataError

POTENTIAL = "potential"
DIFFUSION = "diffusion"
INDEX = "index"
MODELS = (POTENTIAL, DIFFUSION, INDEX)

# Width of the band around x = 0 in which the analytic potential gradient is
# replaced by a symmetric finite difference (the cube-root derivative is
# singular there), and the step used for that difference.
_FD_BAND = 1e-8
_FD_STEP = 6e-6


def _vector_methods(cls):
    """Attach as_vector/from_vector using the declared field order."""

    names = tuple(f.name for f in fields(cls))

    def as_vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in names], dtype=float)

    @classmethod
    def from_vector(klass, vec):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (len(names),):
            raise DataError(f"{klass.__name__} expects {len(names)} parameters")
        return klass(**{n: float(v) for n, v in zip(names, vec)})

    cls.field_names = names
    cls.as_vector = as_vector
    cls.from_vector = from_vector
    return cls


@_vector_methods
@dataclass(frozen=True)
class PotentialParams:
    """Parameters of the nonstationary potential surface.

    A and B scale the pre- and post-crash branches, omega sets the period of
    the well/hill alternation in x, omega1 and b the post-crash oscillation
    in t, alpha the x-asymmetry, beta1/beta2 the temporal decay on each side,
    and (a, gamma) the cube-root smoothing factor that joins the branches.
    """

    A: float
    B: float
    omega: float
    omega1: float
    alpha: float
    beta1: float
    beta2: float
    a: float
    b: float
    gamma: float

    def __post_init__(self):
        vals = [getattr(self, f.name) for f in fields(self)]
        if not all(math.isfinite(v) for v in vals):
            raise DataError("potential parameters must be finite")
        if self.omega <= 0 or self.gamma <= 0:
            raise DataError("potential parameters require omega > 0 and gamma > 0")


@_vector_methods
@dataclass(frozen=True)
class DiffusionParams:
    """Power-law diffusion shock: level B before the crash, A * t^-p after."""

    A: float
    B: float
    p: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.A, self.B, self.p)):
            raise DataError("diffusion parameters must be finite")
        if self.A <= 0 or self.B <= 0 or self.p <= 0:
            raise DataError("diffusion parameters must be positive")


@_vector_methods
@dataclass(frozen=True)
class IndexFitParams:
    """Two-exponential decaying sinusoid for the averaged index level."""

    A0: float
    A1: float
    A2: float
    alpha1: float
    alpha2: float
    omega: float
    gamma: float

    def __post_init__(self):
        vals = [getattr(self, f.name) for f in fields(self)]
        if not all(math.isfinite(v) for v in vals):
            raise DataError("index-fit parameters must be finite")
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise DataError("index-fit decay rates must be nonnegative")


# Least-squares calibration for the October 1987 crash ensemble.
OCT87_POTENTIAL = PotentialParams(
    A=8.6e-3, B=1.4e-2, omega=3.9, omega1=1.0, alpha=0.6,
    beta1=0.5, beta2=0.1, a=0.96, b=2.5, gamma=0.9,
)
OCT87_DIFFUSION = DiffusionParams(A=7.6e-3, B=9.3e-4, p=0.57)
OCT87_INDEX_FIT = IndexFitParams(
    A0=0.787, A1=0.05, A2=0.031, alpha1=0.09, alpha2=0.64, omega=1.0, gamma=-2.41,
)

_PARAM_CLASSES = {POTENTIAL: PotentialParams, DIFFUSION: DiffusionParams, INDEX: IndexFitParams}


def params_to_dict(params) -> dict:
    return asdict(params)


def params_from_dict(cls, doc: dict):
    names = cls.field_names
    missing = [n for n in names if n not in doc]
    extra = [k for k in doc if k not in names]
    if missing or extra:
        raise DataError(
            f"{cls.__name__}: missing fields {missing}, unexpected fields {extra}"
        )
    return cls(**{n: float(doc[n]) for n in names})


def params_to_json(params) -> str:
    return json.dumps(params_to_dict(params), indent=2, sort_keys=True)


def params_from_json(cls, text: str):
    return params_from_dict(cls, json.loads(text))


def _flatten(x, t):
    x_arr = np.asarray(x, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    shape = np.broadcast_shapes(x_arr.shape, t_arr.shape)
    xf = np.broadcast_to(x_arr, shape).astype(float).ravel()
    tf = np.broadcast_to(t_arr, shape).astype(float).ravel()
    return xf, tf, shape


def _unflatten(out, shape):
    out = out.reshape(shape)
    return float(out) if shape == () else out


def _branch_amplitude(params: PotentialParams, tf: np.ndarray) -> np.ndarray:
    amp = np.empty_like(tf)
    neg = tf < 0.0
    amp[neg] = params.A * np.exp(params.beta1 * tf[neg])
    pos = ~neg  # t = 0 evaluated on the post-crash branch
    amp[pos] = params.B * np.sin(params.omega1 * tf[pos] + params.b) * np.exp(-params.beta2 * tf[pos])
    return amp


def eval_potential(params: PotentialParams, x, t):
    """Potential surface value; scalar or array inputs broadcast together."""
    xf, tf, shape = _flatten(x, t)
    smooth = 1.0 - params.a * np.cbrt(xf) * np.exp(-params.gamma * np.abs(tf))
    profile = np.sin(params.omega * xf) * np.exp(-params.alpha * xf)
    return _unflatten(smooth * profile * _branch_amplitude(params, tf), shape)


def potential_gradient(params: PotentialParams, x, t):
    """Analytic d/dx of the potential; finite difference inside the x=0 band."""
    xf, tf, shape = _flatten(x, t)
    decay = np.exp(-params.gamma * np.abs(tf))
    amp = _branch_amplitude(params, tf)
    envelope = np.exp(-params.alpha * xf)
    profile = np.sin(params.omega * xf) * envelope
    dprofile = (params.omega * np.cos(params.omega * xf) - params.alpha * np.sin(params.omega * xf)) * envelope
    smooth = 1.0 - params.a * np.cbrt(xf) * decay
    with np.errstate(divide="ignore", invalid="ignore"):
        dsmooth = -(params.a / 3.0) * np.abs(xf) ** (-2.0 / 3.0) * decay
        grad = amp * (dsmooth * profile + smooth * dprofile)
    near = np.abs(xf) < _FD_BAND
    if np.any(near):
        up = eval_potential(params, xf[near] + _FD_STEP, tf[near])
        dn = eval_potential(params, xf[near] - _FD_STEP, tf[near])
        grad[near] = (np.asarray(up) - np.asarray(dn)) / (2.0 * _FD_STEP)
    return _unflatten(grad, shape)


def eval_diffusion(params: DiffusionParams, t, t_floor: float):
    """Diffusion level at time ``t``; the post-crash power law is floored at t_floor."""
    if not t_floor > 0.0:
        raise DataError("t_floor must be positive")
    tf = np.asarray(t, dtype=float)
    shape = tf.shape
    tf = tf.ravel()
    out = np.empty_like(tf)
    neg = tf < 0.0
    out[neg] = params.B
    out[~neg] = params.A * np.maximum(tf[~neg], t_floor) ** (-params.p)
    return _unflatten(out, shape)


def eval_index_model(params: IndexFitParams, t):
    """Decaying-sinusoid index level at time ``t``."""
    tf = np.asarray(t, dtype=float)
    shape = tf.shape
    envelope = params.A1 * np.exp(-params.alpha1 * tf) + params.A2 * np.exp(-params.alpha2 * tf)
    out = envelope * np.sin(params.omega * tf + params.gamma) + params.A0
    return float(out) if shape == () else out


@dataclass(frozen=True)
class FitReport:
    """Outcome of a least-squares fit.

    ``params`` is the fitted vector in declared field order; ``converged``
    means the relative residual spread fell below tolerance before the
    iteration budget ran out.
    """

    params: tuple
    residual_sum: float
    iterations: int
    converged: bool
    n_data: int
    n_params: int

    @property
    def underdetermined(self) -> bool:
        return self.n_data < self.n_params

    def to_dict(self) -> dict:
        return {
            "params": list(self.params),
            "residual_sum": self.residual_sum,
            "iterations": self.iterations,
            "converged": self.converged,
            "n_data": self.n_data,
            "n_params": self.n_params,
            "underdetermined": self.underdetermined,
        }


def _predictor(model: str, coords: np.ndarray, t_floor: float):
    cls = _PARAM_CLASSES[model]

    def predict(theta):
        try:
            params = cls.from_vector(theta)
        except DataError:
            return None  # out of the parameter domain
        if model == POTENTIAL:
            return eval_potential(params, coords[:, 0], coords[:, 1])
        if model == DIFFUSION:
            return eval_diffusion(params, coords, t_floor)
        return eval_index_model(params, coords)

    return predict


def _initial_simplex(x0: np.ndarray) -> np.ndarray:
    # 5% step per coordinate, absolute step where the coordinate is zero
    n = x0.size
    sim = np.tile(x0, (n + 1, 1))
    for i in range(n):
        sim[i + 1, i] = x0[i] * 1.05 if x0[i] != 0.0 else 2.5e-4
    return sim


def _nelder_mead(f, x0: np.ndarray, tol: float, max_iter: int):
    """Classic reflect/expand/contract/shrink descent, fully deterministic."""
    sim = _initial_simplex(x0)
    fs = np.array([f(v) for v in sim])
    iterations = 0
    converged = False
    while iterations < max_iter:
        order = np.argsort(fs, kind="stable")
        sim, fs = sim[order], fs[order]
        spread = 2.0 * abs(fs[-1] - fs[0]) / (abs(fs[-1]) + abs(fs[0]) + 1e-12)
        if spread <= tol:
            converged = True
            break
        iterations += 1
        centroid = sim[:-1].mean(axis=0)
        xr = centroid + (centroid - sim[-1])
        fr = f(xr)
        if fr < fs[0]:
            xe = centroid + 2.0 * (centroid - sim[-1])
            fe = f(xe)
            if fe < fr:
                sim[-1], fs[-1] = xe, fe
            else:
                sim[-1], fs[-1] = xr, fr
        elif fr < fs[-2]:
            sim[-1], fs[-1] = xr, fr
        else:
            if fr < fs[-1]:
                xc = centroid + 0.5 * (xr - centroid)
                fc = f(xc)
                accept = fc <= fr
            else:
                xc = centroid - 0.5 * (centroid - sim[-1])
                fc = f(xc)
                accept = fc < fs[-1]
            if accept:
                sim[-1], fs[-1] = xc, fc
            else:
                sim[1:] = sim[0] + 0.5 * (sim[1:] - sim[0])
                fs[1:] = [f(v) for v in sim[1:]]
    order = np.argsort(fs, kind="stable")
    return sim[order[0]], float(fs[order[0]]), iterations, converged


def fit(
    model: str,
    coords,
    values,
    init,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    t_floor: float = 1e-6,
) -> FitReport:
    """Least-squares fit of a named model by deterministic simplex descent.

    ``coords`` is (m, 2) columns (x, t) for the potential model and a length-m
    time array otherwise.  After each convergence the simplex is rebuilt
    around the current best point and descent continues until a restart stops
    improving, which makes the mild non-convexity of the sinusoid models much
    less of a trap.  Hitting the iteration budget is reported via
    ``converged=False``, never raised.
    """
    if model not in MODELS:
        raise DataError(f"unknown model {model!r}; expected one of {MODELS}")
    values = np.asarray(values, dtype=float)
    coords = np.asarray(coords, dtype=float)
    if values.size == 0:
        raise DataError("fit requires at least one data point")
    if model == POTENTIAL:
        if coords.ndim != 2 or coords.shape[1] != 2 or coords.shape[0] != values.size:
            raise DataError("potential fit expects (m, 2) coords for m values")
    elif coords.shape != values.shape:
        raise DataError("coords and values must have matching lengths")
    x0 = np.asarray(init, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise DataError("initial parameters must be finite")
    predict = _predictor(model, coords, t_floor)

    def objective(theta):
        pred = predict(theta)
        if pred is None:
            return math.inf
        r = np.asarray(pred) - values
        total = float(np.dot(r, r))
        return total if math.isfinite(total) else math.inf

    best_f = objective(x0)
    if not math.isfinite(best_f):
        raise DataError("initial parameters are outside the model domain")
    best_x = x0
    total_iter = 0
    converged = False
    for _ in range(8):  # restart rounds; usually 2 suffice
        xr, fr, used, conv = _nelder_mead(objective, best_x, tol, max_iter - total_iter)
        total_iter += used
        gain = best_f - fr
        if fr < best_f:
            best_x, best_f = xr, fr
        converged = conv
        if not conv or gain <= tol * (abs(best_f) + 1e-12):
            break
    return FitReport(
        params=tuple(float(v) for v in best_x),
        residual_sum=best_f,
        iterations=total_iter,
        converged=converged,
        n_data=int(values.size),
        n_params=int(x0.size),
    )
