import itertools

import numpy as np
import pytest

from poiphnn.model import Constraint, Instance, Polynomial, PolyTerm, Sense, VariableDef


def binary_instance(objective, constraints=(), n=None, name="t", minimize=False):
    """Small helper: binary instance from a polynomial and (lhs, sense, rhs) triples."""
    if n is None:
        ids = set(objective.var_ids)
        for lhs, _, _ in constraints:
            ids |= lhs.var_ids
        n = max(ids, default=-1) + 1
    cons = [Constraint.build(j, lhs, sense, rhs) for j, (lhs, sense, rhs) in enumerate(constraints)]
    return Instance(name, [VariableDef.binary(i) for i in range(n)], objective, cons, minimize=minimize)


def all_binary_points(n):
    return np.array(list(itertools.product((0.0, 1.0), repeat=n)), dtype=float).reshape(2 ** n, n)


def brute_force_optimum(inst, tol=1e-6):
    """Best internal (maximization) objective over all binary points, or None if infeasible."""
    best = None
    for x in all_binary_points(inst.n):
        ok = True
        for c in inst.constraints:
            lhs = sum(t.coef * np.prod([x[v] ** e for v, e in t.powers]) for t in c.lhs.terms)
            if c.sense is Sense.LE and lhs > c.rhs + tol:
                ok = False
            elif c.sense is Sense.GE and lhs < c.rhs - tol:
                ok = False
            elif c.sense is Sense.EQ and abs(lhs - c.rhs) > tol:
                ok = False
            if not ok:
                break
        if ok:
            val = inst.objective.constant + sum(
                t.coef * np.prod([x[v] ** e for v, e in t.powers]) for t in inst.objective.terms
            )
            if best is None or val > best:
                best = val
    return best


def random_poly_instance(rng, n, m, max_deg=3, n_terms=8, name="rand"):
    """Random binary instance with polynomial objective and constraints, all-zeros feasible."""
    def rand_poly(k):
        terms = []
        for _ in range(k):
            deg = int(rng.integers(1, max_deg + 1))
            vs = rng.choice(n, size=min(deg, n), replace=False)
            terms.append(PolyTerm(float(rng.integers(-9, 10)), [(int(v), int(rng.integers(1, 3))) for v in vs]))
        return Polynomial(terms)

    cons = [(rand_poly(4), Sense.LE, float(rng.integers(0, 6))) for _ in range(m)]
    return binary_instance(rand_poly(n_terms), cons, n=n, name=name)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def relabel_instance(inst, perm):
    """Copy of ``inst`` with variable ``i`` renamed to ``perm[i]``."""
    def move(poly):
        return Polynomial([PolyTerm(t.coef, [(int(perm[v]), e) for v, e in t.powers]) for t in poly.terms],
                          poly.constant)

    inv = np.argsort(perm)
    variables = [VariableDef(i, inst.variables[inv[i]].name, inst.variables[inv[i]].vtype,
                             inst.variables[inv[i]].lb, inst.variables[inv[i]].ub) for i in range(inst.n)]
    cons = [Constraint(c.id, move(c.lhs), c.sense, c.rhs) for c in inst.constraints]
    return Instance(inst.name, variables, move(inst.objective), cons, minimize=inst.minimize)


def finite_difference_failures(hg, st, cfg, labels, rng, per_tensor=4, step=1e-4, rel=1e-4, abs_tol=1e-7):
    """Compare tape gradients with central differences.

    Every tensor gets its largest-gradient entry, ``per_tensor - 1`` random
    entries and one random unit direction over the whole tensor. Probes whose
    +step and -step evaluations fall on different sides of a LeakyReLU kink
    measure a one-sided slope and are skipped. Returns ``(failures, checked,
    skipped)`` where failures lists (tensor, probe, analytic, numeric) that
    miss both tolerances.
    """
    from unittest import mock

    from poiphnn.autodiff import Tape
    from poiphnn.hnn import bce_loss, forward, loss_and_grads

    _, grads = loss_and_grads(hg, st, cfg, labels)
    plain_relu = Tape.leaky_relu

    def loss_at(name, direction, eps):
        signs = []

        def recording_relu(tape, x, slope):
            signs.append(x.value > 0)
            return plain_relu(tape, x, slope)

        base = st.params[name]
        st.params[name] = base + eps * direction
        try:
            with mock.patch.object(Tape, "leaky_relu", recording_relu):
                return bce_loss(forward(hg, st, cfg), labels), signs
        finally:
            st.params[name] = base

    failures, checked, skipped = [], 0, 0
    for name, value in st.params.items():
        g = grads[name]
        picks = {int(np.argmax(np.abs(g)))} | set(rng.integers(0, value.size, size=per_tensor - 1).tolist())
        probes = []
        for k in sorted(picks):
            d = np.zeros(value.size)
            d[k] = 1.0
            probes.append((f"entry {k}", d.reshape(value.shape)))
        d = rng.standard_normal(value.shape)
        probes.append(("direction", d / np.linalg.norm(d)))
        for label, d in probes:
            (up, s_up), (down, s_down) = loss_at(name, d, step), loss_at(name, d, -step)
            if any(not np.array_equal(a, b) for a, b in zip(s_up, s_down)):
                skipped += 1
                continue
            checked += 1
            numeric = (up - down) / (2 * step)
            analytic = float(np.sum(g * d))
            err = abs(numeric - analytic)
            if err > abs_tol and err > rel * max(abs(numeric), abs(analytic)):
                failures.append((name, label, analytic, numeric))
    return failures, checked, skipped


# Lines appended by tests/test_acceptance.py, echoed after the run so they survive output capture.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
