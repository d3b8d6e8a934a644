import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mosco_flow.connect import (GraphExample, LayerExample, TauExample, ThinExample,
                                boundary_layer_connector, exact_l2_norm_sq, graph_p1_connector,
                                identity_connector, layer_trace_defect, lstar_defect, matrix_connector,
                                mollify_periodic, operator_norm_estimate, recovery_sequence,
                                resolvent_convergence_check, tau_projection_connector, thin_energy_ratio,
                                vertical_average_connector, zero_connector)
from mosco_flow.energies import BoundaryLayer1D, DynamicBC1D, ThinSlab2D
from mosco_flow.prox import ProxOptions
from mosco_flow.simplex import TorusGrid, interpolate
from mosco_flow.space import ContractViolation, StateVector, WeightedSpace

seeds = st.integers(0, 2**32 - 1)


def _inner(W, a, b):
    return float(np.sum(W * a * b))


def _thin(eps=0.25, p=2.0):
    return ThinSlab2D(16, 6, eps, p, lambda x: 0.2 * np.sin(2 * np.pi * x),
                      lambda x: 1.0 + 0.3 * np.cos(2 * np.pi * x))


def _connectors():
    yield graph_p1_connector(TorusGrid(1, 8), 32)
    yield graph_p1_connector(TorusGrid(2, 4), 8)
    yield vertical_average_connector(_thin())
    yield boundary_layer_connector(BoundaryLayer1D.from_width(64, 1 / 8, 2.0))
    yield tau_projection_connector(32, 0.1, "to_neumann")
    yield tau_projection_connector(32, 10.0, "to_dirichlet")


CONNECTORS = list(_connectors())


@pytest.mark.parametrize("con", CONNECTORS, ids=lambda c: c.label)
def test_adjoint_consistency(con):
    rng = np.random.default_rng(0)
    Ws, Wt = con.source.weights, con.target.weights
    for _ in range(200):
        w = rng.normal(size=con.source.dim)
        v = rng.normal(size=con.target.dim)
        lhs = _inner(Wt, con.apply_values(w), v)
        rhs = _inner(Ws, w, con.adjoint_values(v))
        scale = math.sqrt(_inner(Wt, con.apply_values(w), con.apply_values(w)) * _inner(Wt, v, v))
        assert abs(lhs - rhs) <= 1e-12 * max(scale, 1e-300)


@pytest.mark.parametrize("con", CONNECTORS, ids=lambda c: c.label)
def test_linearity_is_exact(con):
    rng = np.random.default_rng(1)
    u, v = rng.normal(size=(2, con.source.dim))
    # powers of two keep the combination exact in floating point
    lhs = con.apply_values(2.0 * u + 0.5 * v)
    rhs = 2.0 * con.apply_values(u) + 0.5 * con.apply_values(v)
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=4 * np.finfo(float).eps * np.max(np.abs(rhs)))


@pytest.mark.parametrize("con", CONNECTORS, ids=lambda c: c.label)
def test_samplewise_contraction(con):
    rng = np.random.default_rng(2)
    Ws, Wt = con.source.weights, con.target.weights
    for _ in range(100):
        w = rng.normal(size=con.source.dim)
        Lw = con.apply_values(w)
        assert _inner(Wt, Lw, Lw) <= _inner(Ws, w, w) * (1 + 1e-12)


@pytest.mark.parametrize("con", CONNECTORS, ids=lambda c: c.label)
def test_operator_norm_at_most_one(con):
    est = operator_norm_estimate(con, 300)
    assert 0 < est.value <= 1 + 1e-10


def test_identity_and_zero_norms():
    s = WeightedSpace(np.linspace(0.2, 2.0, 7), "s")
    assert abs(operator_norm_estimate(identity_connector(s)).value - 1) <= 1e-10
    assert operator_norm_estimate(zero_connector(s, s)).value == 0.0
    with pytest.raises(ContractViolation):
        operator_norm_estimate(identity_connector(s), 0)


def test_power_iteration_matches_dense_svd():
    rng = np.random.default_rng(4)
    src = WeightedSpace(rng.uniform(0.2, 2.0, 6), "a")
    tgt = WeightedSpace(rng.uniform(0.2, 2.0, 4), "b")
    S = rng.normal(size=(4, 6))
    con = matrix_connector(src, tgt, S)
    dense = np.diag(np.sqrt(tgt.weights)) @ S @ np.diag(1 / np.sqrt(src.weights))
    want = np.linalg.svd(dense, compute_uv=False)[0]
    assert operator_norm_estimate(con, 2000).value == pytest.approx(want, rel=1e-10)


def test_graph_connector_norm_against_dense_svd_m4():
    con = graph_p1_connector(TorusGrid(1, 4), 16)
    S = con.matrix.toarray()
    dense = np.diag(np.sqrt(con.target.weights)) @ S @ np.diag(1 / np.sqrt(con.source.weights))
    want = np.linalg.svd(dense, compute_uv=False)[0]
    assert operator_norm_estimate(con, 500).value == pytest.approx(want, rel=1e-10)
    assert want <= 1 + 1e-12


def test_power_iteration_is_monotone_in_iters():
    con = graph_p1_connector(TorusGrid(2, 4), 8)
    vals = [operator_norm_estimate(con, k, tol=0.0).value for k in (1, 2, 5, 20, 80)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_graph_connector_constants_and_resolution():
    grid = TorusGrid(2, 4)
    con = graph_p1_connector(grid, 12)
    np.testing.assert_allclose(con.apply_values(np.full(16, 2.5)), 2.5, rtol=1e-15)
    with pytest.raises(ContractViolation):
        graph_p1_connector(grid, 10)


def test_locate_apply_matches_direct_barycentric_evaluation():
    rng = np.random.default_rng(5)
    for n, m in ((1, 5), (2, 4), (3, 3)):
        grid = TorusGrid(n, m)
        w = rng.normal(size=grid.num_nodes)
        pts = rng.uniform(0, 1, size=(1000, n))
        got = interpolate(grid, w, pts)
        # direct: the Kuhn simplex is fixed by sorting the fractional parts
        want = np.empty(len(pts))
        for i, x in enumerate(pts):
            y = x * m
            base = np.floor(y).astype(int)
            frac = y - base
            order = np.argsort(-frac, kind="stable")
            fs = np.concatenate([[1.0], frac[order], [0.0]])
            node = base.copy()
            acc = 0.0
            for j in range(n + 1):
                acc += (fs[j] - fs[j + 1]) * w[grid.index(np.mod(node, m))]
                if j < n:
                    node[order[j]] += 1
            want[i] = acc
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_exact_norm_hand_integral_n1():
    # 1D P1 on the torus: int over each cell of the affine segment squared
    grid = TorusGrid(1, 4)
    w = np.array([1.0, -2.0, 0.5, 3.0])
    h = 0.25
    want = sum(h * (a * a + a * b + b * b) / 3 for a, b in zip(w, np.roll(w, -1)))
    assert exact_l2_norm_sq(grid, w) == pytest.approx(want, rel=1e-14)
    # a single hat of height 1 and support 2h: integral 2h/3
    assert exact_l2_norm_sq(grid, np.array([1.0, 0.0, 0.0, 0.0])) == pytest.approx(2 * h / 3, rel=1e-14)


def test_exact_norm_bounded_by_lumped_norm():
    rng = np.random.default_rng(6)
    for n, m in ((1, 8), (2, 4), (3, 3)):
        grid = TorusGrid(n, m)
        W = grid.space().weights
        for _ in range(100):
            w = rng.normal(size=grid.num_nodes)
            assert exact_l2_norm_sq(grid, w) <= _inner(W, w, w) * (1 + 1e-12)


def test_lstar_defect_trivial_cases():
    s = WeightedSpace([0.5, 2.0], "s")
    w = np.array([1.0, 0.0]) / math.sqrt(0.5)
    assert lstar_defect(identity_connector(s), w) == 0.0
    assert lstar_defect(zero_connector(s, s), w) == pytest.approx(1.0, rel=1e-15)


def test_vertical_average_of_column_constant_field():
    thin = _thin()
    con = vertical_average_connector(thin)
    prof = np.cos(np.pi * (np.arange(16) + 0.5) / 16)
    np.testing.assert_allclose(con.apply_values(thin.extend(prof)), prof, rtol=1e-15, atol=1e-15)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
@pytest.mark.parametrize("eps", [0.5, 0.25, 0.125])
def test_thin_constant_extension_preserves_energy(p, eps):
    thin = _thin(eps, p)
    prof = np.random.default_rng(7).normal(size=16)
    a = thin.value(thin.extend(prof))
    b = thin.limit_energy().value(prof)
    assert a == pytest.approx(b, rel=1e-12)


def test_thin_energy_ratio_is_reported():
    ratios = [thin_energy_ratio(_thin(eps), samples=20) for eps in (0.5, 0.25, 0.125)]
    assert all(r > 0 and math.isfinite(r) for r in ratios)


def test_layer_connector_constant_maps_to_constant():
    layer = BoundaryLayer1D.from_width(64, 1 / 8, 2.0)
    con = boundary_layer_connector(layer)
    np.testing.assert_allclose(con.apply_values(np.full(65, 1.75)), 1.75, rtol=1e-15)


def test_layer_width_must_be_grid_multiple():
    with pytest.raises(ContractViolation):
        BoundaryLayer1D.from_width(64, 0.1, 2.0)


@given(seeds, st.sampled_from([1.0, 1.5, 2.0, 3.0]), st.sampled_from([1 / 8, 1 / 16, 1 / 32]))
def test_layer_trace_defect_inequality(seed, p, eps):
    layer = BoundaryLayer1D.from_width(128, eps, p)
    rng = np.random.default_rng(seed)
    x = np.arange(129) / 128
    a = rng.normal(size=4)
    w = a[0] + a[1] * np.cos(np.pi * x) + a[2] * np.sin(3 * x) + a[3] * x**2
    for lhs, rhs in layer_trace_defect(layer, w):
        assert lhs <= rhs * (1 + 1e-12) + 1e-15


def test_tau_projection_drops_boundary_part():
    con = tau_projection_connector(8, 0.5)
    E = DynamicBC1D(8, 2.0, 0.5)
    u = np.linspace(-1, 1, 9)
    for v in ((0.0, 0.0), (3.0, -7.0)):
        np.testing.assert_array_equal(con.apply_values(E.pack(u, v).values), u)
    with pytest.raises(ContractViolation):
        tau_projection_connector(8, 0.5, "sideways")


def test_connector_rejects_wrong_space():
    con = tau_projection_connector(8, 0.5)
    with pytest.raises(ContractViolation):
        con.apply(StateVector(np.zeros(3), WeightedSpace(np.ones(3), "x")))
    with pytest.raises(ContractViolation):
        con.apply_values(np.zeros(4))


def test_mollified_constant_is_constant():
    x = np.linspace(0, 1, 11)
    np.testing.assert_allclose(mollify_periodic(lambda t: np.full_like(t, 3.0), 0.2, x), 3.0, rtol=1e-14)


def test_graph_recovery_of_constant_has_zero_errors():
    ex = GraphExample(ms=(8, 16))
    ex.profile = staticmethod(lambda x: np.full_like(x, 0.4))
    for eps in ex.params:
        lev = ex.level(eps)
        np.testing.assert_allclose(lev.recovery, 0.4, rtol=1e-14)
        assert lev.energy.value(lev.recovery) < 1e-26


@pytest.mark.parametrize("make", [
    lambda: GraphExample(),
    lambda: ThinExample(Mx=32, My=6),
    lambda: LayerExample(M=128),
    lambda: TauExample("to_neumann", M=32),
    lambda: TauExample("to_dirichlet", M=32),
], ids=["graph", "thin", "layer", "tau-neumann", "tau-dirichlet"])
def test_mosco_report_is_monotone(make):
    ex = make()
    rep = resolvent_convergence_check(ex, opts=ProxOptions(tol=1e-11))
    assert len(rep.rows) == len(ex.params)
    assert all(np.diff(rep.column("param")) < 0) or all(np.diff(rep.column("param")) > 0)
    for col in ("rec_state_error", "rec_norm_error", "rec_energy_error",
                "res_state_error", "res_norm_error", "res_energy_error"):
        assert rep.decreasing(col), (col, rep.column(col))
    assert np.all(rep.column("op_norm") <= 1 + 1e-10)
    if ex.name == "graph":
        assert rep.decreasing("lstar_defect")


def test_thin_recovery_energy_error_is_zero():
    rep = resolvent_convergence_check(ThinExample(Mx=32, My=6), opts=ProxOptions(tol=1e-11))
    assert np.all(rep.column("rec_energy_error") <= 1e-12)


def test_recovery_sequence_lives_in_level_space():
    ex = TauExample("to_neumann", M=16)
    rec = recovery_sequence(ex, 0.1)
    assert rec.space.dim == 19
    np.testing.assert_array_equal(rec.values[:17], ex.limit_state())


def test_weak_strong_pairing_error_decreases():
    ex = GraphExample()
    R = ex.R
    x = np.arange(R) / R
    v = np.sign(np.sin(6 * np.pi * x)) + 0.5 * np.cos(10 * np.pi * x)
    w0 = ex.limit_state()
    target = _inner(ex.target.weights, w0, v)
    errs = []
    for eps in ex.params:
        lev = ex.level(eps)
        con = lev.connector
        # bounded family v_eps = L* v with L v_eps converging weakly to v
        v_eps = con.adjoint_values(v)
        errs.append(abs(_inner(con.source.weights, lev.recovery, v_eps) - target))
    assert errs[0] > errs[1] > errs[2]


def test_report_csv_columns():
    import io
    rep = resolvent_convergence_check(TauExample("to_neumann", M=16), opts=ProxOptions(tol=1e-11))
    buf = io.StringIO()
    rep.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].split(",") == ["example", *rep.COLUMNS]
    assert len(lines) == 4
    for line, row in zip(lines[1:], rep.rows):
        assert [float(x) for x in line.split(",")[1:]] == [getattr(row, c) for c in rep.COLUMNS]


def test_example_combinations_cover_sweeps():
    for ex in (GraphExample(), LayerExample(M=64)):
        assert list(ex.params) == sorted(ex.params, reverse=True)
    assert TauExample("to_dirichlet").params == (1.0, 10.0, 100.0)
