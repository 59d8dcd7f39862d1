import numpy as np
import pytest
from hypothesis import given, strategies as st

from multiadapt.errors import ConfigurationError
from multiadapt.problems import (BenchmarkProblem, ODESystem, SparsityPattern, cfl_steps, detect_sparsity,
                                 evaluate_component, make_exponential_decay, make_harmonic_oscillator,
                                 make_problem, make_reaction_diffusion, make_wave_1d, wave_energy, wave_mesh)


def stencil_rhs(i, x, t):
    n = x.shape[0]
    lo = x[i - 1] if i > 0 else 0.0
    hi = x[i + 1] if i < n - 1 else 0.0
    return lo - 2.0 * x[i] + hi


def test_decoupled_component_sign_flip():
    sys = make_exponential_decay(1.0, N=3)
    assert evaluate_component(sys, 1, np.full(3, 0.5), 0.0) == -0.5


def test_reaction_diffusion_constant_state_is_pure_reaction():
    sys = make_reaction_diffusion(N=11)
    u = 0.3
    expected = 1000.0 * u**2 * (1 - u)
    assert evaluate_component(sys, 5, np.full(11, u), 0.0) == pytest.approx(expected, rel=1e-14)


def test_reaction_diffusion_interior_stencil_value():
    # h = 1: L = N - 1
    sys = make_reaction_diffusion(eps=0.01, gamma=1000.0, L=4.0, N=5)
    u = np.array([0.0, 0.0, 1.0, 0.0, 0.0])
    assert evaluate_component(sys, 2, u, 0.0) == pytest.approx(-0.02, abs=1e-15)


def test_reaction_diffusion_neumann_boundary():
    sys = make_reaction_diffusion(eps=0.01, gamma=0.0, L=4.0, N=5)
    u = np.array([0.0, 1.0, 0.0, 0.0, 0.0])
    assert evaluate_component(sys, 0, u, 0.0) == pytest.approx(0.02, abs=1e-15)


@pytest.mark.parametrize("value", [0.0, 1.0])
def test_reaction_diffusion_equilibria(value):
    sys = make_reaction_diffusion(N=50)
    assert np.all(sys.evaluate(np.full(50, value), 0.0) == 0.0)
    assert all(sys.rhs(i, np.full(50, value), 0.0) == 0.0 for i in range(50))


def test_reaction_diffusion_defaults_and_initial_front():
    sys = make_reaction_diffusion()
    assert sys.N == 1000 and sys.T == 1.0
    assert sys.params[0] == 0.01 and sys.params[1] == 1000.0
    x = sys.coords
    assert x[-1] == 5.0
    np.testing.assert_allclose(sys.u0, 1.0 / (1.0 + np.exp(100.0 * (x - 1.0))), rtol=1e-12, atol=1e-300)


@pytest.mark.parametrize("kwargs", [dict(eps=0.0), dict(gamma=-1.0), dict(L=0.0), dict(N=2)])
def test_reaction_diffusion_rejects_bad_parameters(kwargs):
    with pytest.raises(ConfigurationError):
        make_reaction_diffusion(**kwargs)


def test_reaction_diffusion_kernel_matches_vector_form(rng):
    sys = make_reaction_diffusion(N=30)
    u = rng.uniform(0, 1, 30)
    np.testing.assert_allclose([sys.rhs(i, u, 0.0) for i in range(30)], sys.f(u, 0.0), rtol=1e-13, atol=1e-10)


def test_reaction_diffusion_analytic_jacobian_matches_differences(rng):
    sys = make_reaction_diffusion(N=8)
    u = rng.uniform(0, 1, 8)
    for i in range(8):
        for j in sys.sparsity.row(i):
            x = u.copy()
            d = 1e-6
            x[j] += d
            fp = sys.rhs(i, x, 0.0)
            x[j] -= 2 * d
            fm = sys.rhs(i, x, 0.0)
            assert sys.jacobian(i, j, u, 0.0) == pytest.approx((fp - fm) / (2 * d), rel=1e-5, abs=1e-4)


def test_wave_equilibrium():
    sys = make_wave_1d()
    n = len(sys.coords)
    state = np.concatenate((np.full(n, 0.7), np.zeros(n)))
    assert np.all(sys.evaluate(state, 0.0) == 0.0)


def test_wave_uniform_mesh_without_refinement():
    sys = make_wave_1d(refine_ratio=1)
    steps = cfl_steps(sys)
    assert np.allclose(steps, steps[0])
    assert np.allclose(np.diff(sys.coords), 1.0 / 40)


def test_wave_refined_window():
    x = wave_mesh(1.0, 40, 16, 0.1)
    h = np.diff(x)
    assert h.min() == pytest.approx(1.0 / 640) and h.max() == pytest.approx(1.0 / 40)
    fine = (x[:-1] + x[1:]) / 2
    assert np.all(np.abs(fine[h < 1 / 100] - 0.5) <= 0.05)


@pytest.mark.parametrize("kwargs", [dict(refine_ratio=0), dict(n_base=1), dict(length=-1.0)])
def test_wave_rejects_bad_mesh(kwargs):
    with pytest.raises(ConfigurationError):
        make_wave_1d(**kwargs)


def test_wave_energy_of_initial_pulse_positive():
    sys = make_wave_1d()
    assert wave_energy(sys, sys.u0) > 0


def test_detect_sparsity_diagonal():
    sys = make_exponential_decay(2.0, N=4)
    assert detect_sparsity(sys.rhs, 4, sys.u0) == SparsityPattern.diagonal(4)


def test_detect_sparsity_stencil_is_tridiagonal():
    pattern = detect_sparsity(stencil_rhs, 6, np.zeros(6))
    expected = SparsityPattern.from_rows([sorted({max(i - 1, 0), i, min(i + 1, 5)}) for i in range(6)])
    assert pattern == expected


def test_detect_sparsity_time_only_rows_empty():
    pattern = detect_sparsity(lambda i, x, t: t, 3, np.zeros(3))
    assert all(len(pattern.row(i)) == 0 for i in range(3))


def test_system_autodetects_sparsity():
    sys = ODESystem(N=5, u0=np.zeros(5), T=1.0, rhs=stencil_rhs)
    assert sys.sparsity == detect_sparsity(stencil_rhs, 5, np.zeros(5))


def test_system_invariants():
    with pytest.raises(ConfigurationError):
        ODESystem(N=2, u0=[1.0], T=1.0, rhs=stencil_rhs)
    with pytest.raises(ConfigurationError):
        ODESystem(N=1, u0=[1.0], T=0.0, rhs=stencil_rhs)


def test_sparsity_validation():
    with pytest.raises(ConfigurationError):
        SparsityPattern.from_rows([[1, 0]])
    with pytest.raises(ConfigurationError):
        SparsityPattern.from_rows([[0, 3]])


def test_evaluate_component_index_error():
    sys = make_exponential_decay(1.0, N=2)
    with pytest.raises(IndexError):
        evaluate_component(sys, 2, np.zeros(2), 0.0)


@pytest.mark.parametrize("factory", [lambda: make_reaction_diffusion(N=25), make_wave_1d, make_harmonic_oscillator])
@given(seed=st.integers(0, 2**32 - 1))
def test_evaluate_component_reads_only_sparsity_row(factory, seed):
    sys = factory()
    rng = np.random.default_rng(seed)
    state = rng.uniform(0.0, 1.0, sys.N)
    for i in rng.choice(sys.N, size=min(sys.N, 8), replace=False):
        requested = []

        def accessor(j):
            requested.append(j)
            return state[j]

        value = evaluate_component(sys, int(i), accessor, 0.3)
        assert sorted(requested) == list(sys.sparsity.row(i))
        # unread entries are NaN, so a finite value proves they were never used
        assert np.isfinite(value)
        assert value == pytest.approx(sys.evaluate(state, 0.3)[i], rel=1e-12, abs=1e-9)


def test_benchmark_problem_registry():
    sys = BenchmarkProblem("exponential-decay", {"rate": 2.0, "N": 3}).build()
    assert sys.N == 3
    with pytest.raises(ConfigurationError):
        make_problem("nope")
    with pytest.raises(ConfigurationError):
        make_problem("exponential-decay", bogus=1)
