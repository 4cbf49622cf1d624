"""Constitutive functions of the moisture/solute/heat system.

Every coefficient is a small immutable *family* object built from a tag and
keyword parameters, e.g. ``logistic lo=0.05 hi=0.40``.  The scalar families
(``constant``, ``linear``, ``logistic``, ``vg``) can serve as the moisture
content ``b``, the mobility ``a`` or the dispersion ``D_w``.  The thermal
conductivity ``lambda`` takes two arguments ``(theta, u)`` and is either
``affine`` or any scalar family applied to ``theta``.

All evaluations are vectorised over numpy arrays and pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import expit

from .errors import ConfigError, QuadratureError

__all__ = [
    "CoefficientSet",
    "ValidationReport",
    "make_coefficient_set",
    "parse_family",
    "validate_assumptions",
    "eval_b",
    "eval_b_prime",
    "eval_a",
    "eval_dw",
    "eval_lambda",
    "eval_B",
    "gauss_kronrod",
]


# ---------------------------------------------------------------------------
# scalar families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    value: float

    tag = "constant"

    def __call__(self, z):
        return np.full_like(np.asarray(z, dtype=float), self.value)

    def deriv(self, z):
        return np.zeros_like(np.asarray(z, dtype=float))

    def antideriv(self, z):
        return self.value * np.asarray(z, dtype=float)

    @property
    def sup(self):
        return self.value


@dataclass(frozen=True)
class Linear:
    """``clip(offset + slope*z, lo, hi)``; unclamped by default."""

    slope: float = 1.0
    offset: float = 0.0
    lo: float = -math.inf
    hi: float = math.inf

    tag = "linear"

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigError("linear family needs lo < hi")
        if self.slope == 0.0:
            raise ConfigError("linear family needs a nonzero slope (use constant)")

    def _kinks(self):
        # z-values where the clamps engage, ordered
        z1 = (self.lo - self.offset) / self.slope
        z2 = (self.hi - self.offset) / self.slope
        return (z1, z2) if z1 < z2 else (z2, z1)

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return np.clip(self.offset + self.slope * z, self.lo, self.hi)

    def deriv(self, z):
        z = np.asarray(z, dtype=float)
        raw = self.offset + self.slope * z
        # kinks themselves report 0
        inside = (raw > self.lo) & (raw < self.hi)
        return np.where(inside, self.slope, 0.0)

    def antideriv(self, z):
        # exact integral of the clamped line from 0 to z
        z = np.asarray(z, dtype=float)
        return self._prim(z) - self._prim(np.zeros_like(z))

    def _prim(self, z):
        za, zb = self._kinks()
        zc = np.clip(z, za, zb)
        out = self.offset * zc + 0.5 * self.slope * zc * zc
        if np.isfinite(za):
            out = out + np.where(z < za, float(self(za)) * (z - za), 0.0)
        if np.isfinite(zb):
            out = out + np.where(z > zb, float(self(zb)) * (z - zb), 0.0)
        return out

    @property
    def sup(self):
        return self.hi


@dataclass(frozen=True)
class Logistic:
    """``lo + (hi - lo) / (1 + exp(-(z - shift)/scale))``."""

    lo: float
    hi: float
    scale: float = 1.0
    shift: float = 0.0

    tag = "logistic"

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ConfigError("logistic family needs hi > lo")
        if not self.scale > 0:
            raise ConfigError("logistic family needs scale > 0")

    def _arg(self, z):
        return (np.asarray(z, dtype=float) - self.shift) / self.scale

    def __call__(self, z):
        return self.lo + (self.hi - self.lo) * expit(self._arg(z))

    def deriv(self, z):
        s = expit(self._arg(z))
        return (self.hi - self.lo) * s * (1.0 - s) / self.scale

    def antideriv(self, z):
        z = np.asarray(z, dtype=float)
        soft = np.logaddexp(0.0, self._arg(z)) - np.logaddexp(0.0, -self.shift / self.scale)
        return self.lo * z + (self.hi - self.lo) * self.scale * soft

    @property
    def sup(self):
        return self.hi


@dataclass(frozen=True)
class VanGenuchten:
    """Rational van-Genuchten-style curve ``kr + ks / (1 + (alpha*max(-z,0))**n)``.

    Saturated (``ks + kr``) for ``z >= 0`` and decaying towards ``kr`` as
    ``z -> -inf``.  ``n > 1`` keeps it C^1.  No closed-form antiderivative is
    provided, so ``eval_B`` falls back to quadrature for this family.
    """

    ks: float
    alpha: float = 1.0
    n: float = 2.0
    kr: float = 0.0

    tag = "vg"

    def __post_init__(self):
        if not self.n > 1.0:
            raise ConfigError("vg family needs n > 1")
        if not self.ks > 0 or not self.alpha > 0 or self.kr < 0:
            raise ConfigError("vg family needs ks > 0, alpha > 0, kr >= 0")

    def __call__(self, z):
        s = self.alpha * np.maximum(-np.asarray(z, dtype=float), 0.0)
        return self.kr + self.ks / (1.0 + s**self.n)

    def deriv(self, z):
        s = self.alpha * np.maximum(-np.asarray(z, dtype=float), 0.0)
        return self.ks * self.n * self.alpha * s ** (self.n - 1.0) / (1.0 + s**self.n) ** 2

    antideriv = None

    @property
    def sup(self):
        return self.kr + self.ks


SCALAR_FAMILIES = {
    "constant": Constant,
    "linear": Linear,
    "logistic": Logistic,
    "vg": VanGenuchten,
}


# ---------------------------------------------------------------------------
# conductivity (two arguments)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Affine:
    """``c0 + c_theta*theta + c_u*u``."""

    c0: float = 0.0
    c_theta: float = 0.0
    c_u: float = 0.0

    tag = "affine"

    def __call__(self, theta, u):
        theta = np.asarray(theta, dtype=float)
        return self.c0 + self.c_theta * theta + self.c_u * np.asarray(u, dtype=float)

    def d_theta(self, theta, u):
        return np.full(np.broadcast(np.asarray(theta), np.asarray(u)).shape, self.c_theta)

    def d_u(self, theta, u):
        return np.full(np.broadcast(np.asarray(theta), np.asarray(u)).shape, self.c_u)


@dataclass(frozen=True)
class OfTheta:
    """Adapter: a scalar family used as ``lambda(theta, u) = f(theta)``."""

    inner: object

    @property
    def tag(self):
        return self.inner.tag

    def __call__(self, theta, u):
        return np.broadcast_to(self.inner(theta), np.broadcast(np.asarray(theta), np.asarray(u)).shape)

    def d_theta(self, theta, u):
        return np.broadcast_to(self.inner.deriv(theta), np.broadcast(np.asarray(theta), np.asarray(u)).shape)

    def d_u(self, theta, u):
        return np.zeros(np.broadcast(np.asarray(theta), np.asarray(u)).shape)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _parse_params(tokens, where):
    params = {}
    for tok in tokens:
        if "=" not in tok:
            raise ConfigError(f"{where}: expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        try:
            x = float(v)
        except ValueError:
            raise ConfigError(f"{where}: parameter {k} is not a number: {v!r}") from None
        if math.isnan(x) or (math.isinf(x) and k not in ("lo", "hi")):
            raise ConfigError(f"{where}: parameter {k} must be finite")
        params[k] = x
    return params


def parse_family(spec: str, *, two_arg: bool = False, where: str = "family"):
    """Build a family object from a string such as ``"logistic lo=0.05 hi=0.4"``."""
    tokens = spec.split()
    if not tokens:
        raise ConfigError(f"{where}: empty family specification")
    tag, params = tokens[0], _parse_params(tokens[1:], where)
    if two_arg and tag == "affine":
        cls = Affine
    elif tag in SCALAR_FAMILIES:
        cls = SCALAR_FAMILIES[tag]
    else:
        raise ConfigError(f"{where}: unknown family {tag!r}")
    try:
        fam = cls(**params)
    except TypeError as exc:
        raise ConfigError(f"{where}: bad parameters for {tag!r}: {exc}") from None
    return OfTheta(fam) if two_arg and cls is not Affine else fam


@dataclass(frozen=True)
class CoefficientSet:
    """The constitutive functions ``b, a, D_w, lambda`` and constants ``b2, rho``."""

    b: object
    a: object
    dw: object
    lam: object
    b2: float
    rho: float
    source: Mapping[str, str] = field(default_factory=dict, compare=False, repr=False)


def make_coefficient_set(section: Mapping[str, str]) -> CoefficientSet:
    """Parse a ``[coefficients]`` key/value section.

    Required keys are ``b``, ``a``, ``dw``, ``lambda`` and ``rho``; ``b2``
    defaults to the supremum of the ``b`` family.  No assumption checking
    happens here, see :func:`validate_assumptions`.
    """
    known = {"b", "a", "dw", "lambda", "b2", "rho"}
    for key in section:
        if key not in known:
            raise ConfigError(f"coefficients: unknown key {key!r}")
    for key in ("b", "a", "dw", "lambda", "rho"):
        if key not in section:
            raise ConfigError(f"coefficients: missing key {key!r}")
    b = parse_family(section["b"], where="coefficients.b")
    a = parse_family(section["a"], where="coefficients.a")
    dw = parse_family(section["dw"], where="coefficients.dw")
    lam = parse_family(section["lambda"], two_arg=True, where="coefficients.lambda")

    def _num(key):
        try:
            return float(section[key])
        except ValueError:
            raise ConfigError(f"coefficients: {key} is not a number: {section[key]!r}") from None

    rho = _num("rho")
    b2 = _num("b2") if "b2" in section else float(b.sup)
    if not (math.isfinite(rho) and rho > 0):
        raise ConfigError("coefficients: rho must be positive")
    if not (math.isfinite(b2) and b2 > 0):
        raise ConfigError("coefficients: b2 must be positive and finite")
    return CoefficientSet(b=b, a=a, dw=dw, lam=lam, b2=b2, rho=rho, source=dict(section))


# ---------------------------------------------------------------------------
# pointwise evaluation
# ---------------------------------------------------------------------------


def eval_b(cs: CoefficientSet, z):
    return cs.b(z)


def eval_b_prime(cs: CoefficientSet, z):
    return cs.b.deriv(z)


def eval_a(cs: CoefficientSet, z):
    return cs.a(z)


def eval_dw(cs: CoefficientSet, z):
    return cs.dw(z)


def eval_lambda(cs: CoefficientSet, theta, u):
    return cs.lam(theta, u)


# ---------------------------------------------------------------------------
# Legendre transform
# ---------------------------------------------------------------------------

# Gauss-Kronrod 7/15 abscissae and weights (QUADPACK qk15)
_XGK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0,
])
_WGK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
])
_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_WK = np.concatenate([_WGK[:-1], _WGK[::-1]])
_WG15 = np.zeros(15)
_WG15[[1, 3, 5, 7, 9, 11, 13]] = np.concatenate([_WG[:-1], _WG[::-1]])


def _gk15(f, a, b):
    c, h = 0.5 * (a + b), 0.5 * (b - a)
    fx = f(c + h * _NODES)
    k = h * float(_WK @ fx)
    g = h * float(_WG15 @ fx)
    return k, abs(k - g)


def gauss_kronrod(f, a, b, rtol=1e-10, max_depth=40):
    """Adaptive bisecting Gauss-Kronrod (7/15) quadrature of a vectorised ``f``.

    Raises :class:`QuadratureError` when an interval would need splitting
    beyond ``max_depth`` levels.
    """
    if a == b:
        return 0.0
    whole, err = _gk15(f, a, b)
    # absolute floor keeps integrals that are exactly zero from looping
    tol = max(rtol * abs(whole), 1e-15 * abs(b - a) * (1.0 + abs(whole)))
    total = 0.0
    stack = [(a, b, whole, err, 0)]
    width = b - a
    while stack:
        lo, hi, val, e, depth = stack.pop()
        if e <= tol * (hi - lo) / width or e < 1e-300:
            total += val
            continue
        if depth >= max_depth:
            raise QuadratureError(f"no convergence on [{lo!r}, {hi!r}] after {max_depth} bisections")
        mid = 0.5 * (lo + hi)
        v1, e1 = _gk15(f, lo, mid)
        v2, e2 = _gk15(f, mid, hi)
        stack.append((lo, mid, v1, e1, depth + 1))
        stack.append((mid, hi, v2, e2, depth + 1))
    return total


def eval_B(cs: CoefficientSet, z, g: float = 0.0):
    """Legendre transform of ``b`` re-centred at ``g``.

    ``B_g(z) = int_g^z (b(z) - b(s)) ds``; ``g = 0`` gives the plain transform.
    Uses the family's closed-form antiderivative when there is one and adaptive
    Gauss-Kronrod quadrature otherwise.  Accepts scalars or arrays.
    """
    z = np.asarray(z, dtype=float)
    b = cs.b
    if b.antideriv is not None:
        bz = b(z)
        out = bz * (z - g) - (b.antideriv(z) - b.antideriv(np.asarray(g, dtype=float)))
        # convexity: rounding can only push the exact value below zero
        out = np.maximum(out, 0.0)
        return float(out) if out.ndim == 0 else out
    flat = z.ravel()
    res = np.empty_like(flat)
    for i, zi in enumerate(flat):
        bzi = float(b(zi))
        res[i] = gauss_kronrod(lambda s: bzi - b(s), g, zi) if zi != g else 0.0
    res = np.maximum(res, 0.0)
    return float(res[0]) if z.ndim == 0 else res.reshape(z.shape)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    clauses: list = field(default_factory=list)  # (name, passed, detail)

    def add(self, name, passed, detail=""):
        self.clauses.append((name, bool(passed), detail))

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.clauses)

    @property
    def failed(self) -> list:
        return [name for name, ok, _ in self.clauses if not ok]

    def lines(self):
        return [f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
                for name, ok, detail in self.clauses]


def validate_assumptions(cs: CoefficientSet, probe=(-50.0, 50.0), samples: int = 10_000,
                         initial=None) -> ValidationReport:
    """Check the structural assumptions on a sampled probe grid.

    ``initial`` optionally holds nodal arrays ``(u0, w0, theta0)`` for the
    initial-data clause.  Failures are report entries, never exceptions.
    """
    lo, hi = map(float, probe)
    if not hi > lo or samples < 2:
        raise ValueError("probe interval must be nonempty with at least 2 samples")
    z = np.linspace(lo, hi, samples)
    rep = ValidationReport()

    bz = cs.b(z)
    rep.add("(i) b positive", np.all(bz > 0), f"min b = {bz.min():.6g}")
    rep.add("(i) b bounded by b2", np.all(bz <= cs.b2), f"max b = {bz.max():.6g}, b2 = {cs.b2:.6g}")
    # on an increasing grid pairwise strict monotonicity reduces to neighbours
    rep.add("(i) b strictly monotone", np.all(np.diff(bz) > 0), f"min increment = {np.diff(bz).min():.3g}")
    az, dz = cs.a(z), cs.dw(z)
    rep.add("(ii) a positive", np.all(az > 0), f"min a = {az.min():.6g}")
    rep.add("(ii) D_w positive", np.all(dz > 0), f"min D_w = {dz.min():.6g}")
    m = max(2, int(math.ceil(math.sqrt(samples))))
    zz = np.linspace(lo, hi, m)
    lam = cs.lam(zz[:, None], zz[None, :])
    rep.add("(ii) lambda positive", np.all(lam > 0), f"min lambda = {lam.min():.6g}")

    zB = np.linspace(lo, hi, min(samples, 2001))
    B = eval_B(cs, zB)
    rep.add("B nonnegative", np.all(B >= 0), f"min B = {B.min():.3g}")
    # B(z) <= (b(z) - b(0)) z  (equivalently B = (b(z)-b(0))z - Phi(z), Phi >= 0)
    upper = (cs.b(zB) - cs.b(0.0)) * zB
    rep.add("B bounded by (b(z)-b(0))z", np.all(B <= upper + 1e-12 * (1 + np.abs(upper))))

    if initial is not None:
        finite = all(np.all(np.isfinite(np.asarray(f))) for f in initial)
        rep.add("(iii) initial data bounded", finite)
    return rep
