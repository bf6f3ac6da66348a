import numpy as np
import pytest

from psictl import ControlProblem, QuadraticCost
from psictl.exceptions import (
    CutoffTooSmall,
    DesirabilityUnderflow,
    ParseError,
    ValidationError,
)
from psictl.koopman import (
    CoeffTensor,
    KoopmanPolicy,
    compile_ode,
    control_terms,
    eval_control,
    eval_psi,
    eval_psi_grid,
    integrate_backward,
    read_coefficients_csv,
    split_steps,
    terminal_condition,
    write_coefficients_csv,
)
from psictl.operators import apply_operator, ito_extend
from psictl.polynomial import Polynomial


def _vdp_ode(vdp, cutoff):
    gen, g = ito_extend(vdp)
    return compile_ode(gen, g, (cutoff, cutoff), nz_levels=2)


def test_terminal_condition_is_delta():
    term = terminal_condition((5, 5), 2, time=0.1)
    assert term.values.shape == (5, 5, 2)
    assert term.values[0, 0, 1] == 1.0
    assert term.values.sum() == 1.0
    assert term.time == 0.1


def test_stencil_matches_symbolic_application(vdp, rng):
    # random polynomial low enough that no contribution crosses the cutoff
    ode = _vdp_ode(vdp, 10)
    gen, g = ito_extend(vdp)

    P = np.zeros((10, 10, 2))
    idx = rng.integers(0, 7, size=(30, 2))
    for i, j in idx:
        P[i, j, 1] = rng.normal()

    poly = Polynomial(
        3, {(i, j, k): c for (i, j, k), c in np.ndenumerate(P) if c != 0.0}
    )
    symb = apply_operator(gen, poly) + apply_operator(g, poly)

    out = ode.apply(P)
    expect = np.zeros_like(P)
    for powers, coef in symb.terms():
        expect[powers] = coef
    assert np.abs(out - expect).max() < 1e-12


def test_stencil_is_linear(vdp, rng):
    ode = _vdp_ode(vdp, 12)
    P = rng.normal(size=(12, 12, 2))
    Q = rng.normal(size=(12, 12, 2))
    lhs = ode.apply(2.5 * P - 1.5 * Q)
    rhs = 2.5 * ode.apply(P) - 1.5 * ode.apply(Q)
    assert np.abs(lhs - rhs).max() < 1e-10


def test_stencil_conserves_z_level(vdp, rng):
    ode = _vdp_ode(vdp, 12)
    assert all(off[-1] == 0 for off in ode.offsets)
    P = np.zeros((12, 12, 2))
    P[:, :, 1] = rng.normal(size=(12, 12))
    out = ode.apply(P)
    assert np.all(out[:, :, 0] == 0.0)


def test_cutoff_too_small_rejected(vdp):
    gen, g = ito_extend(vdp)
    with pytest.raises(CutoffTooSmall):
        compile_ode(gen, g, (2, 2), nz_levels=2)


def test_split_steps_covers_span():
    n, rem = split_steps(0.1, 1e-4)
    assert n == 1000
    assert rem == 0.0
    n, rem = split_steps(0.25e-4 + 3e-4, 1e-4)  # trailing partial step
    assert n == 3
    assert rem == pytest.approx(0.25e-4)
    with pytest.raises(ValidationError):
        split_steps(0.1, 0.0)
    with pytest.raises(ValidationError):
        split_steps(-0.1, 1e-4)


def test_constant_rate_decay_matches_exponential():
    prob = ControlProblem(
        drift=["0"], diffusion=[[0.0]], control_map=[[0.0]],
        control_weight=[[0.0]],
        terminal_cost=QuadraticCost([0.0], [np.inf]),
        running_cost=QuadraticCost([0.0], [np.inf], offset=0.5),
        t_start=0.0, t_end=0.1, lam=1.0,
    )
    gen, g = ito_extend(prob)
    ode = compile_ode(gen, g, (1,), nz_levels=2)
    coeffs = integrate_backward(
        ode, terminal_condition((1,), 2, time=0.1), 0.1, 0.0, dt=1e-4
    )
    got = eval_psi(coeffs, np.array([0.0]), prob.terminal_cost, prob.lam)
    assert abs(got - np.exp(-0.05)) < 1e-10


def test_integrate_backward_requires_matching_terminal_time(vdp):
    ode = _vdp_ode(vdp, 8)
    term = terminal_condition((8, 8), 2, time=0.2)
    with pytest.raises(ValidationError):
        integrate_backward(ode, term, 0.1, 0.0, dt=1e-4)


def test_zero_cost_keeps_psi_at_one(vdp):
    prob = ControlProblem(
        drift=vdp.drift, diffusion=vdp.diffusion, control_map=vdp.control_map,
        control_weight=vdp.control_weight,
        terminal_cost=QuadraticCost([1.0, 0.0], [np.inf, np.inf]),
        running_cost=QuadraticCost([1.0, 0.0], [np.inf, np.inf]),
        t_start=0.0, t_end=0.1,
    )
    gen, g = ito_extend(prob)
    ode = compile_ode(gen, g, (8, 8), nz_levels=2)
    coeffs = integrate_backward(
        ode, terminal_condition((8, 8), 2, time=0.1), 0.1, 0.0, dt=1e-3
    )
    # the delta never moves, so psi is exactly 1 and the feedback exactly 0
    assert coeffs.values[0, 0, 1] == 1.0
    assert np.count_nonzero(coeffs.values) == 1
    X = np.array([[0.0, 0.0], [1.0, -1.0]])
    u, ok, psi = control_terms(coeffs, X, prob)
    assert np.all(u == 0.0)
    assert np.all(ok)
    assert psi == pytest.approx([1.0, 1.0])


def test_cutoff_refinement_converged_in_moderate_box(vdp):
    a = KoopmanPolicy(cutoff=40).fit(vdp)
    b = KoopmanPolicy(cutoff=60).fit(vdp)
    ax = np.linspace(-1.0, 1.0, 21)
    pa = eval_psi_grid(a.coeffs_, [ax, ax], vdp.terminal_cost, vdp.lam)
    pb = eval_psi_grid(b.coeffs_, [ax, ax], vdp.terminal_cost, vdp.lam)
    rel = np.abs(pa - pb) / np.abs(pb)
    assert rel.max() < 1e-3


def test_eval_psi_single_equals_batch(vdp_koopman, vdp, rng):
    coeffs = vdp_koopman.coeffs_
    X = rng.uniform(-1, 1, size=(9, 2))
    batch = np.array([
        eval_psi(coeffs, x, vdp.terminal_cost, vdp.lam) for x in X
    ])
    grid_like = vdp_koopman.desirability(X)
    assert np.allclose(batch, grid_like, rtol=1e-12)


def test_eval_psi_grid_matches_pointwise(vdp_koopman, vdp):
    coeffs = vdp_koopman.coeffs_
    ax1 = np.linspace(-0.5, 1.0, 4)
    ax2 = np.linspace(-1.0, 0.5, 3)
    grid = eval_psi_grid(coeffs, [ax1, ax2], vdp.terminal_cost, vdp.lam)
    assert grid.shape == (4, 3)
    for i, a in enumerate(ax1):
        for j, b in enumerate(ax2):
            point = eval_psi(coeffs, np.array([a, b]), vdp.terminal_cost, vdp.lam)
            assert grid[i, j] == pytest.approx(point, rel=1e-12)


def test_line_agreement_with_fd_reference(vdp_koopman, vdp_hjb, vdp):
    # psi along x2 = 0 from the lattice solver vs the grid solver
    from psictl.hjb import interpolate_psi

    xs = np.linspace(-1.5, 1.5, 61)
    X = np.column_stack([xs, np.zeros_like(xs)])
    pk = vdp_koopman.desirability(X)
    pf = np.array([interpolate_psi(vdp_hjb.field_, x) for x in X])
    rel = np.abs(pk - pf) / np.abs(pf)
    assert rel.max() < 0.05


def test_control_at_target_agrees_with_fd(vdp_koopman, vdp_hjb):
    x = np.array([0.0, 0.0])
    uk = vdp_koopman.predict(x[None, :])[0]
    uf = vdp_hjb.predict(x[None, :])[0]
    assert uk[0] == 0.0  # unactuated input stays zero
    assert abs(uk[1] - uf[1]) / abs(uf[1]) < 0.10


def test_underflow_raises_with_mask(vdp_koopman, vdp):
    X = np.array([[0.0, 0.0], [-1.9, -1.9]])
    with pytest.raises(DesirabilityUnderflow) as exc:
        eval_control(vdp_koopman.coeffs_, X[1], vdp)
    err = exc.value
    assert err.states is not None
    u, ok, _ = control_terms(vdp_koopman.coeffs_, X, vdp)
    assert ok[0] and not ok[1]
    assert np.all(u[1] == 0.0)


def test_policy_requires_fit(vdp):
    pol = KoopmanPolicy(cutoff=8)
    with pytest.raises(Exception):
        pol.predict(np.zeros((1, 2)))


def test_policy_get_params_round_trip():
    pol = KoopmanPolicy(cutoff=15, dt=2e-4)
    params = pol.get_params()
    assert params["cutoff"] == 15
    clone = KoopmanPolicy(**params)
    assert clone.get_params() == params


def test_cost_to_go_is_negative_log(vdp_koopman, vdp):
    X = np.array([[0.5, 0.5]])
    psi = vdp_koopman.desirability(X)[0]
    J = vdp_koopman.cost_to_go(X)[0]
    assert J == pytest.approx(-vdp.lam * np.log(psi), rel=1e-12)


def test_coefficients_csv_round_trip(vdp, tmp_path):
    pol = KoopmanPolicy(cutoff=12).fit(vdp)
    path = tmp_path / "coeffs.csv"
    write_coefficients_csv(pol.coeffs_, path, provenance=("setting = 1",))
    back = read_coefficients_csv(path)
    assert back.values.shape == pol.coeffs_.values.shape
    assert np.array_equal(back.values, pol.coeffs_.values)
    assert back.time == pol.coeffs_.time
    text = path.read_text()
    assert text.startswith("#")
    assert "n1,n2,nz,value" in text


def test_coefficients_csv_rejects_duplicates(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text(
        "# time = 0.0\nn1,n2,nz,value\n0,0,1,1.0\n0,0,1,2.0\n"
    )
    with pytest.raises(ParseError):
        read_coefficients_csv(path)
