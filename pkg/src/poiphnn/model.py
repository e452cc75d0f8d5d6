"""Polynomial-objective integer programs: data model, evaluation and bounding.

Instances are always stored in maximization form. A minimization instance
keeps its objective negated internally and remembers the original sense so
that reported objective values and files use the caller's convention.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

FEAS_TOL = 1e-6


class InstanceError(ValueError):
    """Raised when an instance violates a structural invariant."""


class InstanceFormatError(InstanceError):
    """Raised when an instance file cannot be parsed."""


class UnboundedIntervalError(ValueError):
    pass


class UnsupportedInstanceError(ValueError):
    pass


class VarType(str, Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"
    INTEGER = "integer"


class Sense(str, Enum):
    LE = "<="
    GE = ">="
    EQ = "="


@dataclass(frozen=True)
class VariableDef:
    id: int
    name: str
    vtype: VarType
    lb: float
    ub: float

    def __post_init__(self):
        object.__setattr__(self, "vtype", VarType(self.vtype))
        object.__setattr__(self, "lb", float(self.lb))
        object.__setattr__(self, "ub", float(self.ub))
        if self.lb > self.ub:
            raise InstanceError(f"variable {self.id}: lb {self.lb} > ub {self.ub}")
        if self.vtype is VarType.BINARY and (self.lb != 0.0 or self.ub != 1.0):
            raise InstanceError(f"binary variable {self.id} must have bounds [0, 1]")

    @property
    def lb_is_neg_inf(self) -> bool:
        return self.lb == -math.inf

    @property
    def ub_is_pos_inf(self) -> bool:
        return self.ub == math.inf

    @classmethod
    def binary(cls, id: int, name: str | None = None) -> "VariableDef":
        return cls(id, name if name is not None else f"x{id}", VarType.BINARY, 0.0, 1.0)


Powers = tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class PolyTerm:
    """A monomial ``coef * prod(x[v] ** e)`` with powers sorted by variable."""

    coef: float
    powers: Powers

    def __post_init__(self):
        powers = tuple(sorted((int(v), int(e)) for v, e in self.powers))
        seen = set()
        for v, e in powers:
            if e < 1:
                raise InstanceError(f"exponent must be >= 1, got {e} for variable {v}")
            if v < 0:
                raise InstanceError(f"negative variable id {v}")
            if v in seen:
                raise InstanceError(f"variable {v} repeated inside a term")
            seen.add(v)
        object.__setattr__(self, "coef", float(self.coef))
        object.__setattr__(self, "powers", powers)

    @property
    def degree(self) -> int:
        return sum(e for _, e in self.powers)

    @property
    def var_ids(self) -> tuple[int, ...]:
        return tuple(v for v, _ in self.powers)


class Polynomial:
    """Sparse polynomial with merged terms in canonical (lexicographic) order.

    Terms whose merged coefficient is exactly zero are dropped.
    """

    def __init__(self, terms: Iterable[PolyTerm] = (), constant: float = 0.0):
        acc: dict[Powers, float] = {}
        for t in terms:
            if not t.powers:
                constant += t.coef
                continue
            acc[t.powers] = acc.get(t.powers, 0.0) + t.coef
        self.terms: tuple[PolyTerm, ...] = tuple(
            PolyTerm(c, p) for p, c in sorted(acc.items()) if c != 0.0
        )
        self.constant = float(constant)

    @classmethod
    def from_dict(cls, coefs: Mapping[Powers, float], constant: float = 0.0) -> "Polynomial":
        return cls((PolyTerm(c, p) for p, c in coefs.items()), constant)

    @classmethod
    def linear(cls, coefs: Mapping[int, float], constant: float = 0.0) -> "Polynomial":
        return cls((PolyTerm(c, ((v, 1),)) for v, c in coefs.items()), constant)

    @classmethod
    def var(cls, v: int) -> "Polynomial":
        return cls([PolyTerm(1.0, ((v, 1),))])

    def as_dict(self) -> dict[Powers, float]:
        return {t.powers: t.coef for t in self.terms}

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.terms == other.terms and self.constant == other.constant

    def __hash__(self):
        return hash((self.terms, self.constant))

    def __repr__(self):
        return f"Polynomial({len(self.terms)} terms, constant={self.constant})"

    def __add__(self, other: "Polynomial | float") -> "Polynomial":
        if isinstance(other, Polynomial):
            return Polynomial(self.terms + other.terms, self.constant + other.constant)
        return Polynomial(self.terms, self.constant + float(other))

    __radd__ = __add__

    def scale(self, k: float) -> "Polynomial":
        return Polynomial((PolyTerm(t.coef * k, t.powers) for t in self.terms), self.constant * k)

    def multiply(self, other: "Polynomial", idempotent: frozenset[int] = frozenset()) -> "Polynomial":
        """Product of two polynomials.

        Variables in ``idempotent`` are treated as binary (``b**k == b``).
        """
        left = list(self.terms) + ([PolyTerm(self.constant, ())] if self.constant else [])
        right = list(other.terms) + ([PolyTerm(other.constant, ())] if other.constant else [])
        acc: dict[Powers, float] = {}
        const = 0.0
        for a in left:
            for b in right:
                merged = dict(a.powers)
                for v, e in b.powers:
                    merged[v] = merged.get(v, 0) + e
                for v in idempotent.intersection(merged):
                    merged[v] = 1
                key = tuple(sorted(merged.items()))
                if key:
                    acc[key] = acc.get(key, 0.0) + a.coef * b.coef
                else:
                    const += a.coef * b.coef
        return Polynomial.from_dict(acc, const)

    def __mul__(self, other):
        if isinstance(other, Polynomial):
            return self.multiply(other)
        return self.scale(float(other))

    __rmul__ = __mul__

    def power(self, k: int, idempotent: frozenset[int] = frozenset()) -> "Polynomial":
        out = Polynomial(constant=1.0)
        for _ in range(k):
            out = out.multiply(self, idempotent)
        return out

    @property
    def degree(self) -> int:
        return max((t.degree for t in self.terms), default=0)

    @property
    def var_ids(self) -> set[int]:
        return {v for t in self.terms for v, _ in t.powers}

    def evaluate_many(self, X: np.ndarray) -> np.ndarray:
        """Evaluate at every row of ``X`` (shape ``(k, n)``)."""
        X = np.asarray(X, dtype=np.float64)
        out = np.full(X.shape[0], self.constant)
        for t in self.terms:
            prod = np.full(X.shape[0], t.coef)
            for v, e in t.powers:
                prod = prod * (X[:, v] if e == 1 else X[:, v] ** e)
            out += prod
        return out


def evaluate_polynomial(poly: Polynomial, x: Sequence[float]) -> float:
    total = poly.constant
    for t in poly.terms:
        val = t.coef
        for v, e in t.powers:
            if v >= len(x):
                raise IndexError(f"variable {v} outside assignment of length {len(x)}")
            val *= x[v] ** e if e != 1 else x[v]
        total += val
    return float(total)


@dataclass(frozen=True)
class Constraint:
    id: int
    lhs: Polynomial
    sense: Sense
    rhs: float

    def __post_init__(self):
        object.__setattr__(self, "sense", Sense(self.sense))
        if self.lhs.constant != 0.0:
            raise InstanceError(f"constraint {self.id}: constant must be folded into rhs")
        object.__setattr__(self, "rhs", float(self.rhs))

    @classmethod
    def build(cls, id: int, lhs: Polynomial, sense: Sense | str, rhs: float) -> "Constraint":
        """Construct while folding any constant of ``lhs`` into ``rhs``."""
        return cls(id, Polynomial(lhs.terms), Sense(sense), rhs - lhs.constant)

    def violation(self, lhs_value: float) -> float:
        if self.sense is Sense.LE:
            return max(0.0, lhs_value - self.rhs)
        if self.sense is Sense.GE:
            return max(0.0, self.rhs - lhs_value)
        return abs(lhs_value - self.rhs)


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    def __add__(self, other: "Interval") -> "Interval":
        return Interval(self.lo + other.lo, self.hi + other.hi)

    def __mul__(self, other: "Interval") -> "Interval":
        prods = [a * b for a in (self.lo, self.hi) for b in (other.lo, other.hi)]
        prods = [0.0 if math.isnan(p) else p for p in prods]
        return Interval(min(prods), max(prods))

    def power(self, e: int) -> "Interval":
        lo, hi = self.lo ** e, self.hi ** e
        if e % 2 == 1 or self.lo >= 0:
            return Interval(lo, hi)
        if self.hi <= 0:
            return Interval(hi, lo)
        return Interval(0.0, max(lo, hi))


@dataclass(frozen=True)
class Instance:
    name: str
    variables: tuple[VariableDef, ...]
    objective: Polynomial
    constraints: tuple[Constraint, ...] = ()
    minimize: bool = False
    bks: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        n = len(self.variables)
        for i, v in enumerate(self.variables):
            if v.id != i:
                raise InstanceError(f"variable ids must be dense and 0-based; position {i} has id {v.id}")
        for j, c in enumerate(self.constraints):
            if c.id != j:
                raise InstanceError(f"constraint ids must be dense and 0-based; position {j} has id {c.id}")
        for where, poly in [("objective", self.objective)] + [
            (f"constraint {c.id}", c.lhs) for c in self.constraints
        ]:
            bad = [v for v in poly.var_ids if v >= n]
            if bad:
                raise InstanceError(f"{where} references unknown variable {bad[0]}")

    @property
    def n(self) -> int:
        return len(self.variables)

    @property
    def m(self) -> int:
        return len(self.constraints)

    @property
    def sense(self) -> str:
        return "min" if self.minimize else "max"

    @property
    def is_binary(self) -> bool:
        return all(v.vtype is VarType.BINARY for v in self.variables)

    def bounds(self) -> list[Interval]:
        return [Interval(v.lb, v.ub) for v in self.variables]

    def objective_value(self, x: Sequence[float]) -> float:
        """Objective in the instance's original sense."""
        val = evaluate_polynomial(self.objective, x)
        return -val if self.minimize else val

    def to_internal(self, value: float) -> float:
        """Map an original-sense objective value to the maximization form."""
        return -value if self.minimize else value

    def from_internal(self, value: float) -> float:
        """Inverse of :meth:`to_internal`."""
        return -value if self.minimize else value

    def replace(self, **changes) -> "Instance":
        fields = dict(
            name=self.name, variables=self.variables, objective=self.objective,
            constraints=self.constraints, minimize=self.minimize, bks=self.bks,
        )
        fields.update(changes)
        return Instance(**fields)

    @cached_property
    def constraint_vars(self) -> list[tuple[int, ...]]:
        return [tuple(sorted(c.lhs.var_ids)) for c in self.constraints]


@dataclass
class FeasibilityReport:
    satisfied: np.ndarray
    violation: np.ndarray
    bounds_ok: np.ndarray
    integral_ok: np.ndarray
    tol: float = FEAS_TOL

    @property
    def feasible(self) -> bool:
        return bool(self.satisfied.all() and self.bounds_ok.all() and self.integral_ok.all())

    @property
    def max_violation(self) -> float:
        return float(self.violation.max(initial=0.0))


def check_feasible(inst: Instance, x: Sequence[float], tol: float = FEAS_TOL) -> FeasibilityReport:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (inst.n,):
        raise ValueError(f"assignment has shape {x.shape}, expected ({inst.n},)")
    viol = np.array([c.violation(evaluate_polynomial(c.lhs, x)) for c in inst.constraints], dtype=np.float64)
    lb = np.array([v.lb for v in inst.variables])
    ub = np.array([v.ub for v in inst.variables])
    bounds_ok = (x >= lb - tol) & (x <= ub + tol)
    discrete = np.array([v.vtype is not VarType.CONTINUOUS for v in inst.variables], dtype=bool)
    integral_ok = ~discrete | (np.abs(x - np.round(x)) <= tol)
    return FeasibilityReport(viol <= tol, viol, bounds_ok, integral_ok, tol)


def is_feasible(inst: Instance, x: Sequence[float], tol: float = FEAS_TOL) -> bool:
    return check_feasible(inst, x, tol).feasible


def term_interval(
    term: PolyTerm, fixed: Mapping[int, float], bounds: Sequence[Interval]
) -> Interval:
    """Exact range of ``term`` over the box given by ``fixed`` values and ``bounds``."""
    out = Interval(term.coef, term.coef)
    for v, e in term.powers:
        if v in fixed:
            val = float(fixed[v]) ** e
            factor = Interval(val, val)
        else:
            b = bounds[v]
            if math.isinf(b.lo) or math.isinf(b.hi):
                raise UnboundedIntervalError(f"variable {v} is free with an infinite bound")
            factor = b.power(e)
        out = out * factor
    return out


def polynomial_interval(
    poly: Polynomial, fixed: Mapping[int, float], bounds: Sequence[Interval]
) -> Interval:
    total = Interval(poly.constant, poly.constant)
    for t in poly.terms:
        total = total + term_interval(t, fixed, bounds)
    return total


def constraint_provably_unsat(
    c: Constraint, fixed: Mapping[int, float], bounds: Sequence[Interval], tol: float = FEAS_TOL
) -> bool:
    """Sufficient test: True only if no completion of ``fixed`` can satisfy ``c``."""
    rng = polynomial_interval(c.lhs, fixed, bounds)
    if c.sense is Sense.LE:
        return rng.lo > c.rhs + tol
    if c.sense is Sense.GE:
        return rng.hi < c.rhs - tol
    return rng.lo > c.rhs + tol or rng.hi < c.rhs - tol


# ---------------------------------------------------------------------------
# binarization


@dataclass(frozen=True)
class VarMapping:
    """Maps each original variable to ``offset + sum(weight * xb[new_id])``."""

    offsets: tuple[float, ...]
    bits: tuple[tuple[tuple[int, int], ...], ...]
    n_binary: int

    def decode(self, xb: Sequence[float]) -> np.ndarray:
        xb = np.asarray(xb, dtype=np.float64)
        out = np.array(self.offsets, dtype=np.float64)
        for i, bits in enumerate(self.bits):
            for j, w in bits:
                out[i] += w * xb[j]
        return out

    def encode(self, x: Sequence[float]) -> np.ndarray:
        xb = np.zeros(self.n_binary)
        for i, bits in enumerate(self.bits):
            if len(bits) == 1 and bits[0][1] == 1 and self.offsets[i] == 0.0:
                xb[bits[0][0]] = x[i]
                continue
            r = int(round(x[i] - self.offsets[i]))
            for j, w in bits:
                xb[j] = (r // w) % 2
        return xb

    @classmethod
    def identity(cls, n: int) -> "VarMapping":
        return cls(tuple(0.0 for _ in range(n)), tuple(((i, 1),) for i in range(n)), n)


def binarize(inst: Instance) -> tuple[Instance, VarMapping]:
    """Replace bounded integer variables by power-of-two binary expansions."""
    new_vars: list[VariableDef] = []
    offsets: list[float] = []
    bits: list[tuple[tuple[int, int], ...]] = []
    subst: dict[int, Polynomial] = {}
    new_bits: set[int] = set()
    extra: list[tuple[Polynomial, float]] = []

    for v in inst.variables:
        if v.vtype is not VarType.INTEGER:
            nid = len(new_vars)
            new_vars.append(VariableDef(nid, v.name, v.vtype, v.lb, v.ub))
            offsets.append(0.0)
            bits.append(((nid, 1),))
            subst[v.id] = Polynomial.var(nid)
            continue
        if math.isinf(v.lb) or math.isinf(v.ub):
            raise UnsupportedInstanceError(f"integer variable {v.name} is unbounded")
        lo, hi = math.ceil(v.lb), math.floor(v.ub)
        span = hi - lo
        k = max(span, 0).bit_length()
        ids = []
        for b in range(k):
            nid = len(new_vars)
            new_vars.append(VariableDef.binary(nid, f"{v.name}_b{b}"))
            new_bits.add(nid)
            ids.append((nid, 1 << b))
        offsets.append(float(lo))
        bits.append(tuple(ids))
        subst[v.id] = Polynomial.linear({nid: float(w) for nid, w in ids}, float(lo))
        if k and (span + 1) & span:
            extra.append((Polynomial.linear({nid: float(w) for nid, w in ids}), float(span)))

    idem = frozenset(new_bits)

    def substitute(poly: Polynomial) -> Polynomial:
        out = Polynomial(constant=poly.constant)
        for t in poly.terms:
            prod = Polynomial(constant=t.coef)
            for v, e in t.powers:
                prod = prod.multiply(subst[v].power(e, idem), idem)
            out = out + prod
        return out

    constraints = [
        Constraint.build(c.id, substitute(c.lhs), c.sense, c.rhs) for c in inst.constraints
    ]
    for lhs, rhs in extra:
        constraints.append(Constraint.build(len(constraints), lhs, Sense.LE, rhs))
    out = Instance(
        name=inst.name,
        variables=tuple(new_vars),
        objective=substitute(inst.objective),
        constraints=tuple(constraints),
        minimize=inst.minimize,
        bks=inst.bks,
    )
    return out, VarMapping(tuple(offsets), tuple(bits), len(new_vars))


# ---------------------------------------------------------------------------
# file format


def _num_out(x: float):
    if x == math.inf:
        return "inf"
    if x == -math.inf:
        return "-inf"
    return float(x)


def _terms_out(poly: Polynomial, sign: float = 1.0) -> list[dict]:
    return [
        {"coef": sign * t.coef, "powers": [[v, e] for v, e in t.powers]} for t in poly.terms
    ]


def instance_to_dict(inst: Instance) -> dict:
    sign = -1.0 if inst.minimize else 1.0
    doc = {
        "name": inst.name,
        "sense": inst.sense,
        "variables": [
            {"id": v.id, "name": v.name, "type": v.vtype.value, "lb": _num_out(v.lb), "ub": _num_out(v.ub)}
            for v in inst.variables
        ],
        "objective": {"constant": sign * inst.objective.constant, "terms": _terms_out(inst.objective, sign)},
        "constraints": [
            {"id": c.id, "sense": c.sense.value, "rhs": c.rhs, "terms": _terms_out(c.lhs)}
            for c in inst.constraints
        ],
    }
    if inst.bks is not None:
        doc["bks"] = inst.bks
    return doc


def dumps_instance(inst: Instance) -> str:
    return json.dumps(instance_to_dict(inst), indent=1, sort_keys=False) + "\n"


def write_instance(inst: Instance, path: str | Path) -> None:
    Path(path).write_text(dumps_instance(inst), encoding="utf-8")


def _num_in(val, where: str) -> float:
    if val == "inf":
        return math.inf
    if val == "-inf":
        return -math.inf
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise InstanceFormatError(f"{where}: expected a number, got {val!r}")
    return float(val)


def _terms_in(raw, where: str, sign: float = 1.0) -> list[PolyTerm]:
    if not isinstance(raw, list):
        raise InstanceFormatError(f"{where}: expected a list of terms")
    terms = []
    for k, t in enumerate(raw):
        loc = f"{where}[{k}]"
        try:
            powers = tuple((int(v), int(e)) for v, e in t["powers"])
            if any(isinstance(p, bool) for pair in t["powers"] for p in pair):
                raise TypeError
            terms.append(PolyTerm(sign * _num_in(t["coef"], f"{loc}.coef"), powers))
        except InstanceError as exc:
            raise InstanceFormatError(f"{loc}: {exc}") from None
        except (KeyError, TypeError, ValueError):
            raise InstanceFormatError(f"{loc}: malformed term {t!r}") from None
    return terms


def instance_from_dict(doc: dict) -> Instance:
    try:
        sense = doc["sense"]
        if sense not in ("max", "min"):
            raise InstanceFormatError(f"sense: expected 'max' or 'min', got {sense!r}")
        sign = -1.0 if sense == "min" else 1.0
        variables = []
        ids = set()
        for k, v in enumerate(doc["variables"]):
            loc = f"variables[{k}]"
            if v["id"] in ids:
                raise InstanceError(f"{loc}: duplicate variable id {v['id']}")
            ids.add(v["id"])
            variables.append(
                VariableDef(int(v["id"]), str(v["name"]), VarType(v["type"]),
                            _num_in(v["lb"], f"{loc}.lb"), _num_in(v["ub"], f"{loc}.ub"))
            )
        variables.sort(key=lambda v: v.id)
        obj = doc["objective"]
        objective = Polynomial(
            _terms_in(obj["terms"], "objective.terms", sign),
            sign * _num_in(obj.get("constant", 0.0), "objective.constant"),
        )
        constraints = []
        for k, c in enumerate(doc.get("constraints", [])):
            loc = f"constraints[{k}]"
            lhs = Polynomial(_terms_in(c["terms"], f"{loc}.terms"))
            constraints.append(Constraint(int(c["id"]), lhs, Sense(c["sense"]), _num_in(c["rhs"], f"{loc}.rhs")))
        constraints.sort(key=lambda c: c.id)
        bks = doc.get("bks")
        return Instance(
            name=str(doc["name"]),
            variables=tuple(variables),
            objective=objective,
            constraints=tuple(constraints),
            minimize=sense == "min",
            bks=None if bks is None else _num_in(bks, "bks"),
        )
    except InstanceError:
        raise
    except KeyError as exc:
        raise InstanceFormatError(f"missing field {exc}") from None
    except (TypeError, AttributeError, ValueError) as exc:
        raise InstanceFormatError(f"malformed document: {exc}") from None


def loads_instance(text: str) -> Instance:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise InstanceFormatError("top-level value must be an object")
    return instance_from_dict(doc)


def read_instance(path: str | Path) -> Instance:
    return loads_instance(Path(path).read_text(encoding="utf-8"))
