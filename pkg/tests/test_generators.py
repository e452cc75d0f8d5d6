import itertools

import numpy as np
import pytest

from poiphnn.generators import (
    CflptcParams, QmkpParams, RandQcpParams, cflptc_data, cflptc_quadratic_reformulation, cflptc_var_ids,
    gen_cflptc, gen_qmkp, gen_randqcp, generate, params_to_dict, stream,
)
from poiphnn.model import InstanceError, Sense, VarType, check_feasible, dumps_instance, evaluate_polynomial


def test_qmkp_is_deterministic():
    p = QmkpParams(10, 2, seed=7)
    assert dumps_instance(gen_qmkp(p)) == dumps_instance(gen_qmkp(p))
    assert dumps_instance(gen_qmkp(p)) != dumps_instance(gen_qmkp(QmkpParams(10, 2, seed=8)))


def test_qmkp_density_extremes():
    assert gen_qmkp(QmkpParams(10, 2, density=0.0)).objective.degree == 1
    full = gen_qmkp(QmkpParams(5, 2, density=1.0))
    assert sum(t.degree == 2 for t in full.objective.terms) == 10


def test_qmkp_shape_and_capacity_rule():
    inst = gen_qmkp(QmkpParams(12, 3, seed=2))
    assert inst.n == 12 and inst.m == 3 and inst.is_binary
    for c in inst.constraints:
        assert c.sense is Sense.LE
        weights = [t.coef for t in c.lhs.terms]
        assert len(weights) == 12 and all(1 <= w <= 100 for w in weights)
        assert c.rhs == round(0.5 * sum(weights))
    assert all(1 <= t.coef <= 100 for t in inst.objective.terms if t.degree == 1)
    assert all(1 <= t.coef <= 50 for t in inst.objective.terms if t.degree == 2)


def test_streams_are_independent():
    # changing the pair density must not change linear profits or weights
    a = gen_qmkp(QmkpParams(8, 2, density=0.2, seed=5))
    b = gen_qmkp(QmkpParams(8, 2, density=0.9, seed=5))
    lin = lambda inst: [t.coef for t in inst.objective.terms if t.degree == 1]  # noqa: E731
    assert lin(a) == lin(b)
    assert a.constraints == b.constraints
    assert stream(1, "profit").random() == stream(1, "profit").random()
    assert stream(1, "profit").random() != stream(1, "weights").random()


def test_randqcp_substitution_example():
    inst = gen_randqcp(RandQcpParams(6, 5, edge_size=(2, 2), seed=1))
    for c in inst.constraints:
        (i, j) = sorted(c.lhs.var_ids)
        coefs = c.lhs.as_dict()
        assert set(coefs) == {((i, 1),), ((j, 1),), ((i, 1), (j, 1))}
        assert c.rhs == 2.0


def test_randqcp_all_zeros_feasible_and_deterministic():
    for seed in range(20):
        p = RandQcpParams(15, 10, seed=seed)
        inst = gen_randqcp(p)
        assert check_feasible(inst, np.zeros(inst.n)).feasible
        assert dumps_instance(inst) == dumps_instance(gen_randqcp(p))
        for c in inst.constraints:
            size = len(c.lhs.var_ids)
            assert 2 <= size <= 4 and c.rhs == size


def test_randqcp_pair_coefficients_shared_across_edges():
    inst = gen_randqcp(RandQcpParams(6, 30, seed=3))
    seen = {}
    for c in inst.constraints:
        for powers, coef in c.lhs.as_dict().items():
            if len(powers) == 2:
                assert seen.setdefault(powers, coef) == coef


def test_randqcp_rejects_singleton_edges():
    with pytest.raises(ValueError):
        RandQcpParams(5, 3, edge_size=(1, 3))


def test_cflptc_one_by_one_constraints():
    inst = gen_cflptc(CflptcParams(1, 1))
    kinds = [(c.sense, len(c.lhs.terms)) for c in inst.constraints]
    assert kinds == [(Sense.EQ, 1), (Sense.LE, 2), (Sense.LE, 2)]


def test_cflptc_degree_five_terms():
    inst = gen_cflptc(CflptcParams(4, 2, seed=1))
    degrees = [t.degree for t in inst.objective.terms]
    assert max(degrees) == 5
    assert inst.is_binary and inst.n == 2 + 8


def native_objective(data, x, y):
    """Unsubstituted cost: open costs plus distance times BPR factor, negated for maximization."""
    level = (x @ data.demand + data.background) / data.traffic_cap
    bpr = data.alpha * (1 + 0.15 * level ** data.beta)
    return -(data.open_cost @ y) - float(np.sum(data.distance * x * bpr[:, None]))


def test_cflptc_objective_matches_unsubstituted_formula():
    m, n = 3, 2
    for seed in range(5):
        p = CflptcParams(m, n, seed=seed)
        inst, data = gen_cflptc(p), cflptc_data(p)
        ids = cflptc_var_ids(m, n)
        for assign in itertools.product(range(n), repeat=m):
            x = np.zeros((n, m))
            x[list(assign), range(m)] = 1
            y = (x.sum(axis=1) > 0).astype(float)
            vec = np.zeros(inst.n)
            for i in range(n):
                vec[ids["y"](i)] = y[i]
                for j in range(m):
                    vec[ids["x"](i, j)] = x[i, j]
            want = native_objective(data, x, y)
            assert evaluate_polynomial(inst.objective, vec) == pytest.approx(want, rel=1e-9)
            feasible_caps = np.all(x @ data.demand <= data.capacity * y + 1e-6)
            assert check_feasible(inst, vec).feasible == feasible_caps


def test_cflptc_sampling_ranges():
    d = cflptc_data(CflptcParams(30, 10, seed=4))
    assert d.distance.shape == (10, 30)
    assert np.all((d.demand >= 10) & (d.demand <= 50))
    assert np.all((d.open_cost >= 300) & (d.open_cost <= 700))
    assert np.all((d.capacity >= 100) & (d.capacity <= 500))
    ratio = d.traffic_cap / d.capacity
    assert np.all((ratio >= 1) & (ratio <= 4))
    frac = d.background / d.traffic_cap
    assert np.all((frac >= 0.1) & (frac <= 1))


def test_explicit_levels_layout():
    p = CflptcParams(3, 2, seed=1, explicit_e=True)
    inst = gen_cflptc(p)
    assert inst.n == 2 + 6 + 2
    e_vars = [v for v in inst.variables if v.name.startswith("e[")]
    assert all(v.vtype is VarType.CONTINUOUS for v in e_vars)
    assert inst.m == 3 + 6 + 2 + 2
    assert inst.objective.degree == 5  # e**4 * x


def test_reformulation_adds_two_per_facility():
    inst = gen_cflptc(CflptcParams(4, 10, seed=0, explicit_e=True))
    quad = cflptc_quadratic_reformulation(inst)
    assert quad.n - inst.n == 20
    assert quad.m - inst.m == 20
    assert all(t.degree <= 2 for t in quad.objective.terms)
    assert all(c.lhs.degree <= 2 for c in quad.constraints)


def test_reformulation_requires_levels():
    with pytest.raises(InstanceError):
        cflptc_quadratic_reformulation(gen_cflptc(CflptcParams(2, 2)))


def test_reformulation_rejects_cubic_levels():
    inst = gen_cflptc(CflptcParams(2, 2, beta=3, explicit_e=True))
    with pytest.raises(InstanceError):
        cflptc_quadratic_reformulation(inst)


def test_reformulated_objective_equals_native():
    m, n = 3, 2
    p = CflptcParams(m, n, seed=2, explicit_e=True)
    native = gen_cflptc(CflptcParams(m, n, seed=2))
    quad = cflptc_quadratic_reformulation(gen_cflptc(p))
    data = cflptc_data(p)
    by_name = {v.name: v.id for v in quad.variables}
    for assign in itertools.product(range(n), repeat=m):
        xb = np.zeros(native.n)
        xq = np.zeros(quad.n)
        for j, i in enumerate(assign):
            xb[n + i * m + j] = 1
            xq[by_name[f"x[{i},{j}]"]] = 1
        for i in set(assign):
            xb[i] = 1
            xq[by_name[f"y[{i}]"]] = 1
        for i in range(n):
            e = (sum(data.demand[j] for j in range(m) if assign[j] == i) + data.background[i]) / data.traffic_cap[i]
            xq[by_name[f"e[{i}]"]] = e
            xq[by_name[f"e1[{i}]"]] = e ** 2
            xq[by_name[f"e2[{i}]"]] = e ** 4
        # the level definitions and both squaring chains hold exactly
        assert np.all(check_feasible(quad, xq).violation[-3 * n:] < 1e-9)
        assert evaluate_polynomial(quad.objective, xq) == pytest.approx(
            evaluate_polynomial(native.objective, xb), rel=1e-9)


def test_generate_dispatch_and_params_dict():
    p = RandQcpParams(5, 3, seed=9)
    assert generate(p).name == gen_randqcp(p).name
    assert params_to_dict(p)["family"] == "randqcp"
    with pytest.raises(TypeError):
        generate(object())
