"""Forward-mode derivative engine for scalar fields on the slit tangent bundle.

A field f(x, y) on 2n coordinates is evaluated on truncated multivariate
Taylor expansions (jets) of total order <= 3, which yields every partial
derivative up to that order exactly to machine precision.  A central
finite-difference oracle provides an independent cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations_with_replacement
from typing import Callable, Iterable, Sequence

import numpy as np

MAX_ORDER = 3

_EPS = float(np.finfo(np.float64).eps)


class DomainError(ValueError):
    """A field was evaluated outside its domain (zero denominator,
    non-positive argument of sqrt/log, domain predicate violated)."""

    def __init__(self, message: str, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class OrderError(ValueError):
    """A jet of order above MAX_ORDER was requested."""


@dataclass(frozen=True)
class TangentSample:
    """A point (x, y) of the slit tangent bundle over an open subset of R^n.

    Invariants: y != 0 and n >= 2.
    """

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
            raise ValueError("x and y must be 1-d arrays of equal length")
        if x.size < 2:
            raise ValueError("dimension must be >= 2")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
            raise ValueError("coordinates must be finite")
        if float(np.linalg.norm(y)) == 0.0:
            raise ValueError("y must be nonzero (slit tangent bundle)")

    @property
    def n(self) -> int:
        return self.x.size

    def shifted(self, var: int, delta: float) -> "TangentSample":
        """Sample with coordinate `var` (0..2n-1; y-block starts at n) shifted."""
        n = self.n
        x, y = self.x.copy(), self.y.copy()
        if var < n:
            x[var] += delta
        else:
            y[var - n] += delta
        return TangentSample(x, y)

    def key(self) -> bytes:
        return self.x.tobytes() + self.y.tobytes()


def _monomials(nvars: int, order: int) -> list[tuple[int, ...]]:
    monos = [(0,) * nvars]
    for deg in range(1, order + 1):
        for combo in combinations_with_replacement(range(nvars), deg):
            m = [0] * nvars
            for v in combo:
                m[v] += 1
            monos.append(tuple(m))
    return monos


class JetSpace:
    """Basis bookkeeping and multiplication table for jets in `nvars`
    variables truncated at total degree `order`.

    Coefficients are stored densely over the enumerated monomial basis;
    at the scale this engine targets (2n <= 8-ish variables, order <= 3)
    dense storage is both smaller and faster than a sparse map.
    """

    def __init__(self, nvars: int, order: int):
        if order < 0 or order > MAX_ORDER:
            raise OrderError(f"jet order must be in 0..{MAX_ORDER}, got {order}")
        self.nvars = nvars
        self.order = order
        self.monomials = _monomials(nvars, order)
        self.size = len(self.monomials)
        self.index = {m: i for i, m in enumerate(self.monomials)}
        self._degrees = np.array([sum(m) for m in self.monomials])
        # factorial(alpha) per monomial, used to convert Taylor coefficients
        # into derivative values
        self._fact = np.array(
            [math.prod(math.factorial(k) for k in m) for m in self.monomials], dtype=float
        )
        self._build_mul_table()
        self._build_partial_maps()

    def _build_mul_table(self):
        ii, jj, kk = [], [], []
        for i, mi in enumerate(self.monomials):
            di = sum(mi)
            for j, mj in enumerate(self.monomials):
                if di + sum(mj) > self.order:
                    continue
                k = self.index[tuple(a + b for a, b in zip(mi, mj))]
                ii.append(i)
                jj.append(j)
                kk.append(k)
        self._mul_i = np.array(ii)
        self._mul_j = np.array(jj)
        self._mul_k = np.array(kk)

    def _build_partial_maps(self):
        # partial derivative wrt var v maps this space onto order-1 space:
        # coeff_out[m] = (m[v]+1) * coeff_in[m + e_v]
        self._partial = []
        if self.order == 0:
            return
        lower = jet_space(self.nvars, self.order - 1)
        for v in range(self.nvars):
            src, scale = np.zeros(lower.size, dtype=int), np.zeros(lower.size)
            for out_idx, m in enumerate(lower.monomials):
                m_up = list(m)
                m_up[v] += 1
                src[out_idx] = self.index[tuple(m_up)]
                scale[out_idx] = m_up[v]
            self._partial.append((src, scale))

    def zero(self) -> "Jet":
        return Jet(self, np.zeros(self.size))

    def constant(self, value: float) -> "Jet":
        c = np.zeros(self.size)
        c[0] = value
        return Jet(self, c)

    def variable(self, var: int, value: float) -> "Jet":
        c = np.zeros(self.size)
        c[0] = value
        if self.order >= 1:
            c[1 + var] = 1.0  # degree-1 monomials come right after the constant
        return Jet(self, c)


@lru_cache(maxsize=None)
def jet_space(nvars: int, order: int) -> JetSpace:
    return JetSpace(nvars, order)


class Jet:
    """Truncated Taylor expansion; coefficient of monomial alpha is
    D^alpha f / alpha!."""

    __slots__ = ("space", "c")

    def __init__(self, space: JetSpace, coeffs: np.ndarray):
        self.space = space
        self.c = coeffs

    # -- access ------------------------------------------------------------

    @property
    def value(self) -> float:
        return float(self.c[0])

    @property
    def order(self) -> int:
        return self.space.order

    def deriv(self, alpha: Sequence[int]) -> float:
        """Partial-derivative value for the multi-index alpha."""
        alpha = tuple(alpha)
        if len(alpha) != self.space.nvars:
            raise ValueError("multi-index length mismatch")
        if sum(alpha) > self.order:
            raise OrderError(f"derivative {alpha} exceeds jet order {self.order}")
        idx = self.space.index[alpha]
        return float(self.c[idx] * self.space._fact[idx])

    def d(self, v: int) -> float:
        return float(self.c[1 + v])

    def d2(self, u: int, v: int) -> float:
        m = [0] * self.space.nvars
        m[u] += 1
        m[v] += 1
        return self.deriv(m)

    def d3(self, u: int, v: int, w: int) -> float:
        m = [0] * self.space.nvars
        m[u] += 1
        m[v] += 1
        m[w] += 1
        return self.deriv(m)

    def truncate(self, order: int) -> "Jet":
        if order == self.order:
            return self
        if order > self.order:
            raise OrderError("cannot extend a jet to higher order")
        target = jet_space(self.space.nvars, order)
        return Jet(target, self.c[: target.size].copy())

    def partial(self, v: int) -> "Jet":
        """Jet of the partial derivative wrt variable v, one order lower."""
        if self.order == 0:
            raise OrderError("order-0 jet carries no derivative information")
        src, scale = self.space._partial[v]
        lower = jet_space(self.space.nvars, self.order - 1)
        return Jet(lower, self.c[src] * scale)

    # -- ring arithmetic -----------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, Jet):
            if other.space is not self.space:
                raise ValueError("jets from different spaces")
            return other
        return self.space.constant(float(other))

    def __add__(self, other):
        other = self._coerce(other)
        return Jet(self.space, self.c + other.c)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._coerce(other)
        return Jet(self.space, self.c - other.c)

    def __rsub__(self, other):
        other = self._coerce(other)
        return Jet(self.space, other.c - self.c)

    def __neg__(self):
        return Jet(self.space, -self.c)

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.space, self.c * float(other))
        if other.space is not self.space:
            raise ValueError("jets from different spaces")
        sp = self.space
        out = np.zeros(sp.size)
        np.add.at(out, sp._mul_k, self.c[sp._mul_i] * other.c[sp._mul_j])
        return Jet(sp, out)

    def __rmul__(self, other):
        return Jet(self.space, self.c * float(other))

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other._reciprocal()
        return Jet(self.space, self.c / float(other))

    def __rtruediv__(self, other):
        return self._reciprocal() * float(other)

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise ValueError("jet powers must be nonnegative integers")
        out = self.space.constant(1.0)
        for _ in range(k):
            out = out * self
        return out

    # -- analytic functions via series composition ---------------------------

    def _compose(self, coeffs: Sequence[float]) -> "Jet":
        """sum_k coeffs[k] * (self - value)^k, truncated."""
        tilde = Jet(self.space, self.c.copy())
        tilde.c[0] = 0.0
        out = self.space.constant(coeffs[0])
        power = self.space.constant(1.0)
        for k in range(1, self.order + 1):
            power = power * tilde
            out = out + coeffs[k] * power
        return out

    def _reciprocal(self) -> "Jet":
        v = self.value
        if v == 0.0:
            raise DomainError("division by a jet with zero value")
        coeffs = [(-1.0) ** k / v ** (k + 1) for k in range(self.order + 1)]
        return self._compose(coeffs)

    def sqrt(self) -> "Jet":
        v = self.value
        if v <= 0.0:
            raise DomainError(f"sqrt of non-positive value {v}")
        r = math.sqrt(v)
        coeffs = [r, 0.5 / r, -1.0 / (8.0 * v * r), 1.0 / (16.0 * v * v * r)]
        return self._compose(coeffs[: self.order + 1])

    def log(self) -> "Jet":
        v = self.value
        if v <= 0.0:
            raise DomainError(f"log of non-positive value {v}")
        coeffs = [math.log(v), 1.0 / v, -0.5 / v**2, 1.0 / (3.0 * v**3)]
        return self._compose(coeffs[: self.order + 1])

    def exp(self) -> "Jet":
        e = math.exp(self.value)
        coeffs = [e, e, e / 2.0, e / 6.0]
        return self._compose(coeffs[: self.order + 1])

    def __repr__(self):
        return f"Jet(order={self.order}, value={self.value!r})"


# -- polymorphic math helpers (fields are written once and run on floats
#    for fast evaluation or on jets for derivatives) --------------------------


def sqrt(u):
    if isinstance(u, Jet):
        return u.sqrt()
    u = float(u)
    if u <= 0.0:
        raise DomainError(f"sqrt of non-positive value {u}")
    return math.sqrt(u)


def log(u):
    if isinstance(u, Jet):
        return u.log()
    u = float(u)
    if u <= 0.0:
        raise DomainError(f"log of non-positive value {u}")
    return math.log(u)


def exp(u):
    if isinstance(u, Jet):
        return u.exp()
    return math.exp(float(u))


def scalar_value(u) -> float:
    """Plain value of a float-or-jet quantity (for domain branching)."""
    return u.value if isinstance(u, Jet) else float(u)


# -- scalar fields -------------------------------------------------------------


class ScalarField:
    """Evaluation contract: deterministic map (sample, order) -> Jet.

    Subclasses implement `_jet`.  Sums, products, quotients and partial
    derivatives of fields are fields again, so derived quantities (Ricci
    scalars, bracket components) can be differentiated without symbolic
    work.  Evaluations are side-effect free apart from a single-entry
    memo cache keyed by the sample bytes.
    """

    def __init__(self, n: int, domain: Callable[[TangentSample], bool] | None = None,
                 name: str = ""):
        self.n = n
        self.domain = domain
        self.name = name
        self._memo_key = None
        self._memo_jet = None

    def _jet(self, p: TangentSample, order: int) -> Jet:
        raise NotImplementedError

    def eval_jet(self, p: TangentSample, order: int) -> Jet:
        if order < 0 or order > MAX_ORDER:
            raise OrderError(f"requested order {order} outside 0..{MAX_ORDER}")
        if p.n != self.n:
            raise ValueError(f"field is over n={self.n}, sample has n={p.n}")
        if self.domain is not None and not self.domain(p):
            raise DomainError(f"sample outside domain of field {self.name or type(self).__name__}")
        key = (p.key(), order)
        if key == self._memo_key:
            return self._memo_jet
        jet = self._jet(p, order)
        self._memo_key, self._memo_jet = key, jet
        return jet

    def value(self, p: TangentSample) -> float:
        return self.eval_jet(p, 0).value

    def in_domain(self, p: TangentSample) -> bool:
        if self.domain is not None and not self.domain(p):
            return False
        try:
            self.value(p)
        except DomainError:
            return False
        return True

    # field algebra

    def __add__(self, other):
        return FieldSum(self, _as_field(other, self.n))

    __radd__ = __add__

    def __sub__(self, other):
        return FieldSum(self, FieldScale(_as_field(other, self.n), -1.0))

    def __rsub__(self, other):
        return FieldSum(_as_field(other, self.n), FieldScale(self, -1.0))

    def __neg__(self):
        return FieldScale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, ScalarField):
            return FieldProduct(self, other)
        return FieldScale(self, float(other))

    def __rmul__(self, other):
        return FieldScale(self, float(other))

    def __truediv__(self, other):
        if isinstance(other, ScalarField):
            return FieldQuotient(self, other)
        return FieldScale(self, 1.0 / float(other))

    def partial(self, var: int) -> "ScalarField":
        return PartialField(self, var)

    def partial_x(self, i: int) -> "ScalarField":
        return PartialField(self, i)

    def partial_y(self, i: int) -> "ScalarField":
        return PartialField(self, self.n + i)


def _as_field(obj, n: int) -> ScalarField:
    if isinstance(obj, ScalarField):
        return obj
    return ConstField(n, float(obj))


def _merge_domain(*fields: ScalarField) -> Callable[[TangentSample], bool] | None:
    preds = [f.domain for f in fields if f.domain is not None]
    if not preds:
        return None
    if len(preds) == 1:
        return preds[0]
    return lambda p: all(pred(p) for pred in preds)


class ExprField(ScalarField):
    """Field backed by a closed-form expression fn(xs, ys) written with
    +, -, *, /, ** and the polymorphic sqrt/log/exp helpers."""

    def __init__(self, n, fn, domain=None, name=""):
        super().__init__(n, domain, name)
        self.fn = fn

    def _jet(self, p, order):
        sp = jet_space(2 * self.n, order)
        xs = [sp.variable(i, p.x[i]) for i in range(self.n)]
        ys = [sp.variable(self.n + i, p.y[i]) for i in range(self.n)]
        out = self.fn(xs, ys)
        if not isinstance(out, Jet):
            return sp.constant(float(out))
        return out

    def value(self, p):
        if self.domain is not None and not self.domain(p):
            raise DomainError(f"sample outside domain of field {self.name or 'expr'}")
        try:
            return float(self.fn([float(v) for v in p.x], [float(v) for v in p.y]))
        except ZeroDivisionError as e:
            raise DomainError(f"division by zero in field {self.name or 'expr'}") from e


class ConstField(ScalarField):
    def __init__(self, n, value, name=""):
        super().__init__(n, None, name)
        self._value = float(value)

    def _jet(self, p, order):
        return jet_space(2 * self.n, order).constant(self._value)

    def value(self, p):
        return self._value


class CoordField(ScalarField):
    """The coordinate function x^i (var < n) or y^i (var >= n)."""

    def __init__(self, n, var):
        super().__init__(n, None, name=f"coord[{var}]")
        self.var = var

    def _jet(self, p, order):
        val = p.x[self.var] if self.var < self.n else p.y[self.var - self.n]
        return jet_space(2 * self.n, order).variable(self.var, float(val))

    def value(self, p):
        return float(p.x[self.var] if self.var < self.n else p.y[self.var - self.n])


class FieldSum(ScalarField):
    def __init__(self, a, b):
        super().__init__(a.n, _merge_domain(a, b))
        self.a, self.b = a, b

    def _jet(self, p, order):
        return self.a.eval_jet(p, order) + self.b.eval_jet(p, order)

    def value(self, p):
        return self.a.value(p) + self.b.value(p)


class FieldScale(ScalarField):
    def __init__(self, a, s):
        super().__init__(a.n, a.domain)
        self.a, self.s = a, float(s)

    def _jet(self, p, order):
        return self.a.eval_jet(p, order) * self.s

    def value(self, p):
        return self.a.value(p) * self.s


class FieldProduct(ScalarField):
    def __init__(self, a, b):
        super().__init__(a.n, _merge_domain(a, b))
        self.a, self.b = a, b

    def _jet(self, p, order):
        return self.a.eval_jet(p, order) * self.b.eval_jet(p, order)

    def value(self, p):
        return self.a.value(p) * self.b.value(p)


class FieldQuotient(ScalarField):
    def __init__(self, a, b):
        super().__init__(a.n, _merge_domain(a, b))
        self.a, self.b = a, b

    def _jet(self, p, order):
        return self.a.eval_jet(p, order) / self.b.eval_jet(p, order)

    def value(self, p):
        den = self.b.value(p)
        if den == 0.0:
            raise DomainError("field quotient: zero denominator")
        return self.a.value(p) / den


class PartialField(ScalarField):
    """Partial derivative of a field wrt one of the 2n coordinates; its
    order-m jet pulls an order-(m+1) jet of the base field."""

    def __init__(self, a, var):
        super().__init__(a.n, a.domain, name=f"d[{var}]{a.name}")
        self.a, self.var = a, var

    def _jet(self, p, order):
        return self.a.eval_jet(p, order + 1).partial(self.var)


def spray_derivative(P: ScalarField) -> ScalarField:
    """The flat-spray directional derivative S0(P) = y^k dP/dx^k as a field."""
    n = P.n
    terms = None
    for k in range(n):
        t = FieldProduct(CoordField(n, n + k), PartialField(P, k))
        terms = t if terms is None else FieldSum(terms, t)
    return terms


# -- spec-level conveniences ---------------------------------------------------


def jet_eval(f: ScalarField, p: TangentSample, order: int) -> Jet:
    """All partial derivatives of f at p up to total order `order` (<= 3)."""
    return f.eval_jet(p, order)


def fd_oracle(f: ScalarField, p: TangentSample, multi_index: Sequence[int]) -> float:
    """Central finite-difference estimate of D^multi_index f at p.

    Derivatives are nested Richardson-extrapolated central differences
    (4C(h/2) - C(h))/3 with base step h = eps**(1/5) * max(1, |coordinate|),
    giving O(h^4) truncation: absolute error ~1e-10 for orders <= 2, which
    backs the 1e-6-relative oracle tolerance with margin.  Entirely
    independent of the jet path.
    """
    alpha = tuple(int(a) for a in multi_index)
    if len(alpha) != 2 * p.n:
        raise ValueError("multi-index must have length 2n")
    total = sum(alpha)
    if total > MAX_ORDER:
        raise OrderError(f"finite differences support order <= {MAX_ORDER}")
    vars_seq: list[int] = []
    for v, k in enumerate(alpha):
        vars_seq.extend([v] * k)
    base = _EPS ** 0.2

    def estimate(sample: TangentSample, remaining: list[int]) -> float:
        if not remaining:
            return f.value(sample)
        v = remaining[0]
        coord = sample.x[v] if v < sample.n else sample.y[v - sample.n]
        h = base * max(1.0, abs(float(coord)))

        def central(step: float) -> float:
            up = estimate(sample.shifted(v, +step), remaining[1:])
            dn = estimate(sample.shifted(v, -step), remaining[1:])
            return (up - dn) / (2.0 * step)

        return (4.0 * central(h / 2.0) - central(h)) / 3.0

    return estimate(p, vars_seq)


def euler_defect(f: ScalarField, p: TangentSample, degree: float) -> float:
    """|y^i df/dy^i - degree * f| / (1 + |f|): Euler's relation for
    positively `degree`-homogeneous fields."""
    jet = f.eval_jet(p, 1)
    n = p.n
    contraction = sum(p.y[i] * jet.d(n + i) for i in range(n))
    return abs(contraction - degree * jet.value) / (1.0 + abs(jet.value))


# -- reproducible sample generation --------------------------------------------


@dataclass
class SampleBox:
    """Sampling region: x uniform over a box, y uniform on the sphere then
    scaled by a radius drawn from `y_radius`."""

    x_box: np.ndarray  # (n, 2) per-coordinate [lo, hi]
    y_radius: tuple[float, float] = (0.5, 1.5)

    def __post_init__(self):
        self.x_box = np.asarray(self.x_box, dtype=float)
        if self.x_box.ndim != 2 or self.x_box.shape[1] != 2:
            raise ValueError("x_box must be (n, 2)")
        if np.any(self.x_box[:, 1] <= self.x_box[:, 0]):
            raise ValueError("x_box intervals must be non-degenerate")

    @property
    def n(self) -> int:
        return self.x_box.shape[0]


def sample_points(box: SampleBox, count: int, seed: int,
                  domain: Callable[[TangentSample], bool] | None = None,
                  max_tries: int | None = None) -> tuple[list[TangentSample], int]:
    """Draw `count` domain-valid samples; returns (samples, rejected).

    Raises DomainError if the try budget is exhausted before `count`
    samples are accepted.
    """
    rng = np.random.default_rng(seed)
    n = box.n
    if max_tries is None:
        max_tries = max(50 * count, 1000)
    samples: list[TangentSample] = []
    rejected = 0
    tries = 0
    while len(samples) < count:
        if tries >= max_tries:
            raise DomainError(
                f"sample generator exhausted {max_tries} tries "
                f"({len(samples)} accepted, {rejected} rejected)")
        tries += 1
        x = box.x_box[:, 0] + rng.random(n) * (box.x_box[:, 1] - box.x_box[:, 0])
        y = rng.standard_normal(n)
        norm = np.linalg.norm(y)
        if norm < 1e-12:
            rejected += 1
            continue
        r = box.y_radius[0] + rng.random() * (box.y_radius[1] - box.y_radius[0])
        p = TangentSample(x, y * (r / norm))
        if domain is not None and not domain(p):
            rejected += 1
            continue
        samples.append(p)
    return samples, rejected
