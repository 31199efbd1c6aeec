"""Reference data pairs and the JSON model description format.

A description is a dict ``{"N", "class", "A": {"kind", "params"}, "S": {"variant", "params"}}``.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .mde import DataPair
from .selfenergy import (COMPLEX, DenseTensor, FilterSelfEnergy, VarianceProfile, WignerScalar,
                         normalize_class, polynomial_kernel)


def semicircle_model(N: int = 2, klass=COMPLEX) -> DataPair:
    """A = 0 with the normalized Wigner self-energy; density sqrt(4 - E^2)/(2 pi)."""
    return DataPair(np.zeros(N), WignerScalar(N, klass), klass, name="semicircle")


def two_level_A(d: float, N: int) -> np.ndarray:
    """Diagonal with the first half of the entries equal to -d and the rest +d."""
    a = np.full(N, float(d))
    a[: N // 2] = -float(d)
    return a


def two_level_model(d: float, N: int = 2, klass=COMPLEX, scale: float = 1.0) -> DataPair:
    """A = diag(-d, ..., d) plus a Wigner self-energy; two bands for d above the cusp value."""
    return DataPair(two_level_A(d, N), WignerScalar(N, klass, scale=scale), klass,
                    name=f"two-level d={d:g}")


def two_level_family(N: int = 2, klass=COMPLEX, scale: float = 1.0):
    return lambda d: two_level_model(d, N, klass, scale)


def metric_decay_self_energy(N: int, klass=COMPLEX, decay: float = 3.0, radius: int | None = None):
    """Polynomially decaying second cumulants realized by a moving-average filter.

    The filter kernel (1 + |p| + |q|)^-decay gives correlations decaying in the label
    distance with the same power, and is positive by construction.
    """
    radius = int(np.ceil(N ** 0.25)) if radius is None else int(radius)
    return FilterSelfEnergy(polynomial_kernel(N, radius, decay), klass)


_A_KINDS = ("diagonal", "dense", "two-level", "zero")
_S_VARIANTS = ("wigner-scalar", "variance-profile-diagonal", "dense-four-tensor",
               "metric-decay", "filter")


def _check_keys(d: dict, allowed, where: str):
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")


def build_A(spec: dict, N: int) -> np.ndarray:
    _check_keys(spec, ("kind", "params"), "A")
    kind = spec.get("kind", "zero")
    p = dict(spec.get("params", {}))
    if kind == "zero":
        return np.zeros(N)
    if kind == "two-level":
        _check_keys(p, ("d",), "A.params")
        return two_level_A(float(p.get("d", 5.0)), N)
    if kind == "diagonal":
        _check_keys(p, ("values",), "A.params")
        v = np.asarray(p["values"], dtype=float)
        if v.shape != (N,):
            raise ConfigError("A.params.values must have length N")
        return v
    if kind == "dense":
        _check_keys(p, ("real", "imag"), "A.params")
        A = np.asarray(p["real"], dtype=float) + 1j * np.asarray(p.get("imag", 0.0), dtype=float)
        if A.shape != (N, N):
            raise ConfigError("A.params must be N x N")
        return A
    raise ConfigError(f"unknown A kind {kind!r}; expected one of {_A_KINDS}")


def build_S(spec: dict, N: int, klass: str):
    _check_keys(spec, ("variant", "params"), "S")
    variant = spec.get("variant", "wigner-scalar")
    p = dict(spec.get("params", {}))
    if variant == "wigner-scalar":
        _check_keys(p, ("scale", "transpose"), "S.params")
        return WignerScalar(N, klass, scale=float(p.get("scale", 1.0)), transpose=p.get("transpose"))
    if variant == "variance-profile-diagonal":
        _check_keys(p, ("s",), "S.params")
        return VarianceProfile(np.asarray(p["s"], dtype=float), klass)
    if variant == "dense-four-tensor":
        _check_keys(p, ("coordinate_covariance",), "S.params")
        return DenseTensor.from_coordinates(np.asarray(p["coordinate_covariance"]), N, klass)
    if variant in ("metric-decay", "filter"):
        _check_keys(p, ("decay", "radius"), "S.params")
        return metric_decay_self_energy(N, klass, float(p.get("decay", 3.0)), p.get("radius"))
    raise ConfigError(f"unknown S variant {variant!r}; expected one of {_S_VARIANTS}")


def build_model(desc: dict) -> DataPair:
    """Construct a DataPair from a model description dict."""
    _check_keys(desc, ("N", "class", "A", "S", "name"), "model")
    try:
        N = int(desc["N"])
    except KeyError:
        raise ConfigError("model.N is required") from None
    if N < 1:
        raise ConfigError("model.N must be positive")
    try:
        klass = normalize_class(desc.get("class", COMPLEX))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    A = build_A(desc.get("A", {"kind": "zero"}), N)
    S = build_S(desc.get("S", {"variant": "wigner-scalar"}), N, klass)
    try:
        return DataPair(A, S, klass, name=desc.get("name", ""))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
