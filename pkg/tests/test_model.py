import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import all_binary_points, binary_instance
from poiphnn.generators import CflptcParams, QmkpParams, gen_cflptc, gen_qmkp
from poiphnn.model import (
    Constraint, Instance, InstanceError, InstanceFormatError, Interval, Polynomial, PolyTerm, Sense,
    UnboundedIntervalError, UnsupportedInstanceError, VariableDef, VarType, binarize, check_feasible,
    constraint_provably_unsat, dumps_instance, evaluate_polynomial, instance_to_dict, loads_instance,
    read_instance, term_interval, write_instance,
)

# ---------------------------------------------------------------------------
# evaluation


def test_empty_polynomial_evaluates_to_zero():
    assert evaluate_polynomial(Polynomial(), [1.0, 0.0]) == 0.0


def test_two_term_evaluation():
    p = Polynomial([PolyTerm(3, [(0, 1)]), PolyTerm(2, [(0, 1), (1, 1)])])
    assert evaluate_polynomial(p, [1, 1]) == 5.0


def test_out_of_range_variable_raises():
    with pytest.raises(IndexError):
        evaluate_polynomial(Polynomial.var(3), [0.0, 1.0])


def _doc_evaluator(doc_terms, constant, x):
    """Evaluates terms straight from the serialized document."""
    total = constant
    for t in doc_terms:
        prod = t["coef"]
        for v, e in t["powers"]:
            prod *= x[v] ** e
        total += prod
    return total


def test_cflptc_objective_matches_document_evaluator():
    inst = gen_cflptc(CflptcParams(5, 2, seed=3))
    doc = instance_to_dict(inst)
    rng = np.random.default_rng(0)
    for _ in range(5):
        x = np.zeros(inst.n)
        # open facility 0 and assign every customer to it; sprinkle random other bits
        x[0] = 1
        x[2:2 + 5] = 1
        x[rng.integers(0, inst.n, size=3)] = 1
        want = _doc_evaluator(doc["objective"]["terms"], doc["objective"]["constant"], x)
        assert inst.objective_value(x) == pytest.approx(want, rel=1e-12, abs=1e-9)


def test_terms_merge_and_zero_terms_drop():
    p = Polynomial([PolyTerm(2, [(1, 1), (0, 2)]), PolyTerm(-2, [(0, 2), (1, 1)]), PolyTerm(1, [(2, 1)])])
    assert len(p.terms) == 1
    assert p.terms[0].powers == ((2, 1),)


@st.composite
def polys(draw, n=5):
    terms = []
    for _ in range(draw(st.integers(0, 6))):
        vs = draw(st.lists(st.integers(0, n - 1), min_size=1, max_size=3, unique=True))
        powers = [(v, draw(st.integers(1, 3))) for v in vs]
        terms.append((draw(st.integers(-20, 20)), powers))
    return terms


@settings(max_examples=100, deadline=None)
@given(polys(), st.lists(st.integers(0, 3), min_size=5, max_size=5), st.randoms(use_true_random=False))
def test_evaluation_invariant_to_order_and_splitting(terms, x, rnd):
    base = Polynomial([PolyTerm(c, p) for c, p in terms])
    shuffled = list(terms)
    rnd.shuffle(shuffled)
    split = []
    for c, p in shuffled:
        split += [PolyTerm(c - 1, p), PolyTerm(1, list(reversed(p)))]
    assert evaluate_polynomial(Polynomial(split), x) == pytest.approx(evaluate_polynomial(base, x))
    assert Polynomial(split) == base


# ---------------------------------------------------------------------------
# feasibility


def test_single_constraint_satisfied():
    inst = binary_instance(Polynomial(), [(Polynomial.var(0), Sense.LE, 1)], n=1)
    rep = check_feasible(inst, [0])
    assert rep.feasible and rep.max_violation == 0.0


def test_pair_constraint_violated_by_one():
    inst = binary_instance(Polynomial(), [(Polynomial.linear({0: 1, 1: 1}), Sense.LE, 1)])
    rep = check_feasible(inst, [1, 1])
    assert not rep.feasible
    assert rep.violation[0] == 1.0


def test_equality_and_ge_and_tolerance():
    inst = binary_instance(
        Polynomial(),
        [(Polynomial.var(0), Sense.EQ, 1), (Polynomial.var(1), Sense.GE, 1 + 5e-7)],
    )
    assert check_feasible(inst, [1, 1]).feasible
    assert not check_feasible(inst, [0, 1]).feasible
    assert not check_feasible(inst, [1, 1], tol=1e-8).feasible


def test_bounds_and_integrality_are_checked():
    inst = binary_instance(Polynomial.var(0), n=1)
    assert not check_feasible(inst, [2]).feasible
    assert not check_feasible(inst, [0.5]).feasible


def test_qmkp_feasibility_matches_hand_rolled_oracle():
    inst = gen_qmkp(QmkpParams(10, 2, seed=4))
    doc = instance_to_dict(inst)
    rng = np.random.default_rng(1)
    for _ in range(200):
        x = rng.integers(0, 2, size=10).astype(float)
        flags = [
            sum(t["coef"] * x[t["powers"][0][0]] for t in c["terms"]) <= c["rhs"] + 1e-6
            for c in doc["constraints"]
        ]
        rep = check_feasible(inst, x)
        assert list(rep.satisfied) == flags
        assert rep.feasible == all(flags)


# ---------------------------------------------------------------------------
# intervals

BIN = [Interval(0.0, 1.0)] * 10


def test_term_interval_examples():
    assert term_interval(PolyTerm(5, [(0, 1), (1, 1)]), {0: 1}, BIN) == Interval(0, 5)
    assert term_interval(PolyTerm(-2, [(0, 3)]), {}, BIN) == Interval(-2, 0)
    iv = term_interval(PolyTerm(4, [(0, 2), (1, 1)]), {1: 0}, BIN)
    assert iv.lo == 0 and iv.hi == 0


def test_term_interval_unbounded_free_variable():
    with pytest.raises(UnboundedIntervalError):
        term_interval(PolyTerm(1, [(0, 1)]), {}, [Interval(0, math.inf)])
    # fixed variables may have infinite bounds
    assert term_interval(PolyTerm(2, [(0, 1)]), {0: 3}, [Interval(0, math.inf)]) == Interval(6, 6)


def test_interval_power_of_sign_changing_range():
    assert Interval(-2, 3).power(2) == Interval(0, 9)
    assert Interval(-3, -1).power(2) == Interval(1, 9)
    assert Interval(-2, 3).power(3) == Interval(-8, 27)


@settings(max_examples=150, deadline=None)
@given(
    st.integers(-10, 10).filter(lambda c: c != 0),
    st.lists(st.tuples(st.integers(0, 9), st.integers(1, 3)), min_size=1, max_size=6, unique_by=lambda p: p[0]),
    st.dictionaries(st.integers(0, 9), st.integers(0, 1), max_size=5),
)
def test_term_interval_tight_on_binary_boxes(coef, powers, fixed):
    term = PolyTerm(coef, powers)
    iv = term_interval(term, fixed, BIN)
    free = [v for v in term.var_ids if v not in fixed]
    values = []
    for bits in itertools.product((0, 1), repeat=len(free)):
        x = dict(fixed)
        x.update(zip(free, bits))
        values.append(coef * math.prod(x[v] ** e for v, e in term.powers))
    assert min(values) == iv.lo and max(values) == iv.hi


def test_provably_unsat_examples():
    c = Constraint(0, Polynomial.linear({0: 1, 1: 1}), Sense.LE, 1)
    assert constraint_provably_unsat(c, {0: 1, 1: 1}, BIN)
    assert not constraint_provably_unsat(c, {}, BIN)


def test_provably_unsat_equality_and_ge():
    eq = Constraint(0, Polynomial.linear({0: 1, 1: 1}), Sense.EQ, 2)
    assert constraint_provably_unsat(eq, {0: 0}, BIN)
    assert not constraint_provably_unsat(eq, {0: 1}, BIN)
    ge = Constraint(0, Polynomial.linear({0: 1}), Sense.GE, 1)
    assert constraint_provably_unsat(ge, {0: 0}, BIN)


@settings(max_examples=150, deadline=None)
@given(st.data())
def test_provably_unsat_is_sound(data):
    n = 8
    terms = []
    for _ in range(data.draw(st.integers(1, 6))):
        vs = data.draw(st.lists(st.integers(0, n - 1), min_size=1, max_size=3, unique=True))
        terms.append(PolyTerm(data.draw(st.integers(-9, 9)), [(v, data.draw(st.integers(1, 2))) for v in vs]))
    sense = data.draw(st.sampled_from(list(Sense)))
    c = Constraint(0, Polynomial(terms), sense, data.draw(st.integers(-5, 5)))
    fixed = data.draw(st.dictionaries(st.integers(0, n - 1), st.integers(0, 1)))
    if not constraint_provably_unsat(c, fixed, BIN):
        return
    free = [v for v in range(n) if v not in fixed]
    for bits in itertools.product((0, 1), repeat=len(free)):
        x = np.zeros(n)
        for v, val in fixed.items():
            x[v] = val
        x[free] = bits
        assert c.violation(evaluate_polynomial(c.lhs, x)) > 1e-6


# ---------------------------------------------------------------------------
# binarization


def _int_instance(lb, ub, objective, constraints=(), n=1, minimize=False):
    variables = [VariableDef(i, f"x{i}", VarType.INTEGER, lb, ub) for i in range(n)]
    cons = [Constraint.build(j, lhs, s, r) for j, (lhs, s, r) in enumerate(constraints)]
    return Instance("int", variables, objective, cons, minimize=minimize)


def test_binary_variables_pass_through():
    inst = binary_instance(Polynomial.linear({0: 1, 1: 2}), [(Polynomial.var(0), Sense.LE, 1)])
    out, mapping = binarize(inst)
    assert out.objective == inst.objective
    assert out.constraints == inst.constraints
    assert mapping.decode([1, 0]).tolist() == [1, 0]


def test_degenerate_range_is_eliminated():
    inst = _int_instance(2, 2, Polynomial([PolyTerm(3, [(0, 2)])]))
    out, mapping = binarize(inst)
    assert out.n == 0
    assert out.objective.constant == 12.0
    assert mapping.decode([]).tolist() == [2.0]


def test_square_of_two_bit_integer():
    inst = _int_instance(0, 3, Polynomial([PolyTerm(1, [(0, 2)])]))
    out, mapping = binarize(inst)
    assert out.n == 2 and out.m == 0  # 4 values, no range constraint
    assert out.objective.as_dict() == {((0, 1),): 1.0, ((1, 1),): 4.0, ((0, 1), (1, 1)): 4.0}
    for xb in all_binary_points(2):
        x = mapping.decode(xb)
        assert evaluate_polynomial(out.objective, xb) == x[0] ** 2


def test_range_constraint_added_when_not_power_of_two():
    inst = _int_instance(1, 6, Polynomial.var(0))
    out, mapping = binarize(inst)
    assert out.n == 3 and out.m == 1
    feasible = [mapping.decode(xb)[0] for xb in all_binary_points(3) if check_feasible(out, xb).feasible]
    assert sorted(feasible) == [1, 2, 3, 4, 5, 6]


def test_unbounded_integer_rejected():
    inst = _int_instance(0, math.inf, Polynomial.var(0))
    with pytest.raises(UnsupportedInstanceError):
        binarize(inst)


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_binarization_preserves_objective_and_feasible_set(data):
    n = data.draw(st.integers(1, 3))
    bounds = [tuple(sorted(data.draw(st.tuples(st.integers(-2, 4), st.integers(-2, 4))))) for _ in range(n)]
    variables = [VariableDef(i, f"x{i}", VarType.INTEGER, lo, hi) for i, (lo, hi) in enumerate(bounds)]

    def rand_poly():
        terms = []
        for _ in range(data.draw(st.integers(1, 4))):
            vs = data.draw(st.lists(st.integers(0, n - 1), min_size=1, max_size=2, unique=True))
            terms.append(PolyTerm(data.draw(st.integers(-5, 5)), [(v, data.draw(st.integers(1, 3))) for v in vs]))
        return Polynomial(terms)

    cons = [Constraint.build(0, rand_poly(), data.draw(st.sampled_from(list(Sense))), data.draw(st.integers(-10, 10)))]
    inst = Instance("p", variables, rand_poly(), cons)
    out, mapping = binarize(inst)
    decoded_feasible = set()
    for xb in all_binary_points(out.n):
        x = mapping.decode(xb)
        in_range = all(lo <= xi <= hi for xi, (lo, hi) in zip(x, bounds))
        assert check_feasible(out, xb).feasible == (in_range and check_feasible(inst, x).feasible)
        assert evaluate_polynomial(out.objective, xb) == pytest.approx(evaluate_polynomial(inst.objective, x))
        if check_feasible(out, xb).feasible:
            decoded_feasible.add(tuple(x))
    originals = {
        tuple(map(float, p)) for p in itertools.product(*[range(lo, hi + 1) for lo, hi in bounds])
        if check_feasible(inst, np.array(p, dtype=float)).feasible
    }
    assert decoded_feasible == originals


def test_encode_inverts_decode():
    inst = _int_instance(-3, 9, Polynomial.var(0))
    out, mapping = binarize(inst)
    for v in range(-3, 10):
        assert mapping.decode(mapping.encode([v]))[0] == v


# ---------------------------------------------------------------------------
# file format


def test_round_trip_qmkp(tmp_path):
    inst = gen_qmkp(QmkpParams(10, 2, seed=7))
    path = tmp_path / "a.poip.json"
    write_instance(inst, path)
    back = read_instance(path)
    assert back.objective == inst.objective
    assert back.constraints == inst.constraints
    assert back.variables == inst.variables
    assert dumps_instance(back) == path.read_text()


def test_round_trip_minimize_infinite_bounds_and_bks():
    variables = [VariableDef(0, "c", VarType.CONTINUOUS, -math.inf, math.inf), VariableDef.binary(1, "b")]
    # minimize 3 b + 1.5, held internally as maximize -3 b - 1.5
    inst = Instance("m", variables, Polynomial.linear({1: -3}, -1.5), (), minimize=True, bks=2.5)
    text = dumps_instance(inst)
    doc = json.loads(text)
    assert doc["sense"] == "min" and doc["variables"][0]["lb"] == "-inf"
    assert doc["objective"]["terms"][0]["coef"] == 3  # stored in the original sense
    back = loads_instance(text)
    assert back.minimize and back.bks == 2.5
    assert back.objective_value([0, 1]) == 4.5
    assert dumps_instance(back) == text


def test_empty_constraint_instance_round_trips():
    inst = binary_instance(Polynomial.var(0), n=1)
    assert loads_instance(dumps_instance(inst)).m == 0


def test_byte_stable_after_canonicalization():
    messy = {
        "name": "x", "sense": "max",
        "variables": [{"id": 1, "name": "b", "type": "binary", "lb": 0, "ub": 1},
                      {"id": 0, "name": "a", "type": "binary", "lb": 0, "ub": 1}],
        "objective": {"constant": 0, "terms": [{"coef": 1, "powers": [[1, 1], [0, 1]]},
                                               {"coef": 2, "powers": [[0, 1]]}, {"coef": 1, "powers": [[0, 1]]}]},
        "constraints": [],
    }
    once = dumps_instance(loads_instance(json.dumps(messy)))
    assert dumps_instance(loads_instance(once)) == once


def test_exponent_zero_rejected():
    doc = instance_to_dict(binary_instance(Polynomial.var(0), n=1))
    doc["objective"]["terms"][0]["powers"] = [[0, 0]]
    with pytest.raises(InstanceFormatError, match=r"objective\.terms\[0\]"):
        loads_instance(json.dumps(doc))


def test_duplicate_ids_rejected():
    doc = instance_to_dict(binary_instance(Polynomial.linear({0: 1, 1: 1})))
    doc["variables"][1]["id"] = 0
    with pytest.raises(InstanceError, match="duplicate"):
        loads_instance(json.dumps(doc))


def test_malformed_json_reports_line_and_column():
    with pytest.raises(InstanceFormatError, match=r"line 2, column"):
        loads_instance('{"name": "x",\n  "sense": }')


@pytest.mark.parametrize("field,value,where", [
    ("lb", "zero", r"variables\[0\]\.lb"),
    ("type", "ternary", "malformed"),
])
def test_bad_variable_fields_are_located(field, value, where):
    doc = instance_to_dict(binary_instance(Polynomial.var(0), n=1))
    doc["variables"][0][field] = value
    with pytest.raises(InstanceFormatError, match=where):
        loads_instance(json.dumps(doc))


def test_unknown_variable_reference_rejected():
    with pytest.raises(InstanceError, match="unknown variable"):
        Instance("x", [VariableDef.binary(0)], Polynomial.var(1))


def test_constraint_constant_must_be_folded():
    with pytest.raises(InstanceError):
        Constraint(0, Polynomial.linear({0: 1}, 2.0), Sense.LE, 3)
    c = Constraint.build(0, Polynomial.linear({0: 1}, 2.0), Sense.LE, 3)
    assert c.rhs == 1.0 and c.lhs.constant == 0.0
