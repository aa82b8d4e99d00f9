import numpy as np
import pytest

from scglab.mjls import (
    MODE_ORDER,
    MjlsModel,
    REFERENCE_GAMMAS,
    RoleCensus,
    SWEEP_COLUMNS,
    census_after_dol,
    census_mixed,
    ci_region_sweep,
    is_mss,
    mss_operator,
    scalar_mss_closed_form,
    scalar_model,
    spectral_radius,
    transition_matrix,
    transition_row,
    write_sweep_csv,
)

G1 = REFERENCE_GAMMAS[0]
G2 = REFERENCE_GAMMAS[1]


def test_mode_order_and_reference_factors():
    assert MODE_ORDER == ("kappa0", "kappa_minus", "kappa_plus")
    assert G1 == (1.0017, 0.996, 0.9997)
    assert G2 == (1.0017, 1.053, 0.9897)


def test_operator_matches_closed_form_scalar():
    rng = np.random.default_rng(3)
    for _ in range(300):
        na = int(rng.integers(2, 6))
        p = rng.dirichlet(np.ones(na))
        gammas = rng.uniform(0.5, 1.5, na)
        sigma_op = spectral_radius(mss_operator(scalar_model(p, gammas)))
        assert sigma_op == pytest.approx(scalar_mss_closed_form(p, gammas),
                                         abs=1e-10)


def test_operator_matrix_modes_against_elementwise_assembly():
    # independent oracle for the operator assembly: under row-major
    # flattening the block kron(G', G) encodes Y -> G' Y G', so applying
    # the mixed recursion Y_j <- sum_i P_ij G_i' Y_i G_i' to every basis
    # matrix rebuilds the operator column by column without any kron
    rng = np.random.default_rng(9)
    for _ in range(3):
        n = int(rng.integers(2, 4))
        na = int(rng.integers(2, 4))
        modes = tuple(rng.normal(scale=0.5, size=(n, n)) for _ in range(na))
        trans = rng.dirichlet(np.ones(na), size=na)
        op = mss_operator(MjlsModel(modes=modes, trans=trans))

        dim = na * n * n
        oracle = np.zeros((dim, dim))
        for col in range(dim):
            i, rem = divmod(col, n * n)
            basis = np.zeros((n, n))
            basis[rem // n, rem % n] = 1.0
            for j in range(na):
                out = trans[i, j] * modes[i].T @ basis @ modes[i].T
                oracle[j * n * n:(j + 1) * n * n, col] = out.reshape(-1)
        np.testing.assert_allclose(op, oracle, atol=1e-13)


def test_transition_row_under_and_over_subscription():
    under = RoleCensus(n11=20, n12=0, n21=0, n22=10, rho_s=8.0, K=80)
    np.testing.assert_allclose(transition_row(under, 1), [0.75, 0.25, 0.0])
    np.testing.assert_allclose(transition_row(under, 2), [0.0, 0.0, 1.0])

    over = RoleCensus(n11=90, n12=0, n21=10, n22=0, rho_s=8.0, K=80)
    np.testing.assert_allclose(transition_row(over, 1),
                               [0.0, 90.0 / 170.0, 80.0 / 170.0])
    # element 2 has nobody: always vacant
    np.testing.assert_allclose(transition_row(over, 2), [1.0, 0.0, 0.0])

    for census in (under, over):
        for element in (1, 2):
            row = transition_row(census, element)
            assert row.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.all(row >= 0.0)
    with pytest.raises(ValueError):
        transition_row(under, 3)
    with pytest.raises(ValueError):
        transition_row(RoleCensus(1, 0, 0, 1, rho_s=8.0, K=0), 1)
    mat = transition_matrix(under, 1)
    assert mat.shape == (3, 3)
    np.testing.assert_allclose(mat, np.tile(transition_row(under, 1), (3, 1)))


def test_reference_population_cases():
    # 90 crowd / 10 experts, power 8, 80 slots: both elements saturated
    # and single-variant after the division of labor
    case1 = census_after_dol(90, 10, 8.0, 80)
    np.testing.assert_allclose(transition_row(case1, 1), [0.0, 1.0, 0.0])
    np.testing.assert_allclose(transition_row(case1, 2), [0.0, 0.0, 1.0])
    ok1, sig1 = is_mss(scalar_model(transition_row(case1, 1), np.array(G1)))
    ok2, sig2 = is_mss(scalar_model(transition_row(case1, 2), np.array(G2)))
    assert ok1 and ok2
    assert sig1 == pytest.approx(0.996 ** 2, abs=1e-12)
    assert sig2 == pytest.approx(0.9897 ** 2, abs=1e-12)

    # shrinking the crowd to 10 leaves element 1 mostly vacant and unstable
    case3 = census_after_dol(10, 10, 8.0, 80)
    np.testing.assert_allclose(transition_row(case3, 1), [0.875, 0.125, 0.0])
    ok1, sig1 = is_mss(scalar_model(transition_row(case3, 1), np.array(G1)))
    assert not ok1
    assert sig1 == pytest.approx(1.00197952875, abs=1e-9)
    ok2, _ = is_mss(scalar_model(transition_row(case3, 2), np.array(G2)))
    assert ok2


def test_analytic_stability_thresholds():
    # under saturation sigma = (1-s)*g0^2 + s*gm^2 is linear in the load
    # s, so the boundary solves to s* = (g0^2 - 1) / (g0^2 - gm^2)
    t1 = (G1[0] ** 2 - 1.0) / (G1[0] ** 2 - G1[1] ** 2)
    t2 = (G2[0] ** 2 - 1.0) / (G2[0] ** 2 - G2[2] ** 2)
    assert t1 == pytest.approx(0.2988427920178412, abs=1e-14)
    assert t2 == pytest.approx(0.14239940075658833, abs=1e-14)

    k = 80
    for eps, expect in ((1e-6, True), (-1e-6, False)):
        census = census_after_dol((t1 + eps) * k, 10, 8.0, k)
        ok, sigma = is_mss(scalar_model(transition_row(census, 1), np.array(G1)))
        assert ok is expect
        assert sigma == pytest.approx(1.0, abs=1e-7)
    # element 2 crosses at rho_s * N2 / K = t2 (experts on steering)
    for eps, expect in ((1e-6, True), (-1e-6, False)):
        n2 = (t2 + eps) * k / 8.0
        census = census_after_dol(40, n2, 8.0, k)
        ok, sigma = is_mss(scalar_model(transition_row(census, 2), np.array(G2)))
        assert ok is expect
        assert sigma == pytest.approx(1.0, abs=1e-7)


def test_sweep_ordering_and_monotone_region(tmp_path):
    n1_values = [10.0, 20.0, 30.0, 40.0]
    rho_values = [4.0, 6.0, 8.0]
    cells = ci_region_sweep(n1_values, rho_values, 10.0, 80)
    assert len(cells) == 12
    assert [(c.n1, c.rho_s) for c in cells[:4]] == [
        (10.0, 4.0), (10.0, 6.0), (10.0, 8.0), (20.0, 4.0)]
    for c in cells:
        assert c.ci == (c.mss1 and c.mss2)
    # growing either population knob can only stabilize, never destabilize
    by_rho = {rho: [c for c in cells if c.rho_s == rho] for rho in rho_values}
    for row in by_rho.values():
        flags = [c.ci for c in sorted(row, key=lambda c: c.n1)]
        assert flags == sorted(flags)
    by_n1 = {n1: [c for c in cells if c.n1 == n1] for n1 in n1_values}
    for col in by_n1.values():
        flags = [c.ci for c in sorted(col, key=lambda c: c.rho_s)]
        assert flags == sorted(flags)

    path = tmp_path / "sweep.csv"
    write_sweep_csv(cells, path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(SWEEP_COLUMNS)
    assert len(lines) == 13
    first = lines[1].split(",")
    assert float(first[0]) == 10.0 and float(first[1]) == 4.0
    assert first[6] == str(int(cells[0].ci))

    with pytest.raises(ValueError):
        ci_region_sweep([], rho_values, 10.0, 80)


def test_census_helpers_and_validation():
    dol = census_after_dol(90, 10, 8.0, 80)
    assert (dol.n11, dol.n12, dol.n21, dol.n22) == (90, 0.0, 0.0, 10)
    assert dol.N1 == 90 and dol.N2 == 10
    mixed = census_mixed(90, 10, 8.0, 80, q=0.25, m=0.75)
    assert (mixed.n11, mixed.n12) == (22.5, 67.5)
    assert (mixed.n21, mixed.n22) == (7.5, 2.5)
    with pytest.raises(ValueError):
        census_mixed(90, 10, 8.0, 80, q=1.5)
    with pytest.raises(ValueError):
        RoleCensus(-1, 0, 0, 0, rho_s=8.0, K=80)
    with pytest.raises(ValueError):
        RoleCensus(1, 0, 0, 0, rho_s=0.0, K=80)


def test_model_and_radius_validation():
    good = np.array([[0.5]])
    with pytest.raises(ValueError):
        MjlsModel(modes=(), trans=np.eye(1))
    with pytest.raises(ValueError):
        MjlsModel(modes=(good, np.zeros((2, 2))), trans=np.eye(2))
    with pytest.raises(ValueError):
        MjlsModel(modes=(good, good), trans=np.array([[0.7, 0.7], [0.5, 0.5]]))
    with pytest.raises(ValueError):
        spectral_radius(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        spectral_radius(np.array([[np.nan]]))
    with pytest.raises(ValueError):
        scalar_mss_closed_form(np.array([0.5, 0.6]), np.ones(2))
    with pytest.raises(ValueError):
        scalar_mss_closed_form(np.array([0.5, 0.5]), np.ones(3))


def test_spectral_radius_large_matrix_power_iteration():
    # above the dense cutoff the radius comes from power iteration; a
    # nonnegative random matrix has a simple dominant eigenvalue, so the
    # dense eigensolver provides the oracle
    rng = np.random.default_rng(17)
    m = rng.uniform(0.0, 1.0, size=(100, 100))
    oracle = float(np.max(np.abs(np.linalg.eigvals(m))))
    assert spectral_radius(m) == pytest.approx(oracle, abs=1e-6)
