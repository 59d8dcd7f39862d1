import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from multiadapt.errors import ConfigurationError, DegenerateStepError, InterpolationError
from multiadapt.methods import build_table
from multiadapt.problems import SparsityPattern
from multiadapt.timeslab import (SlabWorkspace, begin_sweep, build_dependencies, build_plan,
                                 create_time_slab, interpolate, partition, visit)

from slab_checks import (check_dependencies, check_ee_chain, check_locate, check_storage,
                         check_sweep_interpolation, check_tiling, check_tree, oracle_sources,
                         random_pattern, random_steps)

CG1 = build_table("cg", 1)


def test_partition_hand_trace():
    I0, I1, Kbar = partition([(0, 4.0), (1, 2.0), (2, 1.0), (3, 1.0)], 0.5)
    assert I1 == [0, 1] and I0 == [2, 3] and Kbar == 2.0


def test_partition_equal_steps_and_singleton():
    assert partition([(0, 0.3), (1, 0.3)], 0.5) == ([], [0, 1], 0.3)
    assert partition([(5, 0.1)], 0.5) == ([], [5], 0.1)


def test_partition_errors():
    with pytest.raises(ConfigurationError):
        partition([], 0.5)
    with pytest.raises(ConfigurationError):
        partition([(0, 1.0)], 1.5)


def test_two_component_slab_hand_trace():
    slab, t1 = create_time_slab([1.0, 0.25], 0.0, 100.0, theta=0.5)
    assert t1 == 1.0 and slab.n_elements == 5
    np.testing.assert_array_equal(slab.ei, [0, 1, 1, 1, 1])
    np.testing.assert_array_equal(slab.sa, [0.0, 0.0, 0.25, 0.5, 0.75])
    np.testing.assert_array_equal(slab.sb, [1.0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_array_equal(slab.es, [0, 1, 2, 3, 4])
    np.testing.assert_array_equal(slab.ee, [-1, -1, 1, 2, 3])
    tree = slab.to_dict()["root"]
    assert [c["interval"] for c in tree["children"]] == [[0.0, 0.25], [0.25, 0.5], [0.5, 0.75], [0.75, 1.0]]


def test_equal_steps_single_group():
    slab, t1 = create_time_slab([0.2] * 4, 0.0, 1.0)
    assert slab.n_subslabs == 1 and slab.n_elements == 4 and t1 == 0.2
    assert slab.efficiency_index() == 1.0


def test_last_slab_is_clipped_to_end_time():
    slab, t1 = create_time_slab([0.5, 0.125], 0.8, 1.0)
    assert t1 == 1.0 and slab.t1 == 1.0
    assert slab.sb.max() == 1.0
    check_tiling(slab)


def test_two_by_two_fixture_efficiency_index():
    slab, _ = create_time_slab([1.0, 1.0, 0.25, 0.25], 0.0, 10.0)
    assert slab.n_elements == 10
    assert slab.efficiency_index() == 1.6


def test_two_scale_fixture_efficiency_index():
    slab, _ = create_time_slab([1.0] * 100 + [1.0 / 64], 0.0, 10.0)
    assert slab.n_elements == 164
    assert slab.efficiency_index() == pytest.approx(64 * 101 / 164, rel=1e-12)


def test_nonpositive_steps_rejected():
    with pytest.raises(ConfigurationError):
        create_time_slab([1.0, 0.0], 0.0, 1.0)
    with pytest.raises(ConfigurationError):
        create_time_slab([1.0], 1.0, 1.0)


def test_depth_cap():
    # each halving of the step opens one more nesting level
    steps = 2.0 ** -np.arange(12)
    with pytest.raises(DegenerateStepError):
        create_time_slab(steps, 0.0, 1.0, theta=0.9, max_depth=8)
    slab, _ = create_time_slab(steps, 0.0, 1.0, theta=0.9)
    assert slab.n_elements == 2**12 - 1 and slab.n_subslabs == 2**12 - 1


def test_oracle_steps_and_workspace_reuse():
    ws = SlabWorkspace(3)
    s1, _ = create_time_slab(lambda i: [1.0, 0.5, 0.1][i], 0.0, 5.0, workspace=ws)
    s2, _ = create_time_slab([1.0, 0.5, 0.1], 0.0, 5.0)
    for name in ("sa", "sb", "ei", "es", "ee"):
        np.testing.assert_array_equal(getattr(s1, name), getattr(s2, name))
    s3, _ = create_time_slab([0.01, 0.5, 0.1], 1.0, 5.0, workspace=ws)
    np.testing.assert_array_equal(s1.ei, s2.ei)  # earlier slab unaffected by reuse
    check_tiling(s3)


def test_dependencies_decoupled_system():
    slab, _ = create_time_slab([1.0, 0.25, 0.125], 0.0, 10.0)
    build_dependencies(slab, SparsityPattern.diagonal(3), CG1)
    assert np.all(slab.ed == 0) and slab.de.size == 0


def test_dependency_on_smaller_step_element():
    # theta above 1/2 puts the step K/2 into a nested group
    slab, _ = create_time_slab([1.0, 0.5], 0.0, 10.0, theta=0.6)
    build_dependencies(slab, SparsityPattern.from_rows([[0, 1], [1]]), CG1)
    assert slab.ed[1] - slab.ed[0] == 1
    (d,) = slab.de[slab.ed[0]:slab.ed[1]]
    assert slab.ei[d] == 1 and slab.interval(d) == (0.5, 1.0)


def test_mono_slab_has_no_dependencies():
    slab, _ = create_time_slab([0.1] * 5, 0.0, 1.0)
    build_dependencies(slab, SparsityPattern.full(5), build_table("cg", 2))
    assert slab.de.size == 0


def _swept(slab, table, pattern):
    build_dependencies(slab, pattern, table)
    slab.seed(np.arange(slab.N, dtype=float))
    slab.jx[:] = np.arange(slab.jx.size, dtype=float) + 0.5
    begin_sweep(slab)


def test_interpolate_right_endpoint_is_last_dof():
    slab, _ = create_time_slab([1.0, 0.25], 0.0, 10.0)
    pattern = SparsityPattern.full(2)
    _swept(slab, CG1, pattern)
    visit(slab, 0)
    assert interpolate(slab, 0, 1.0, CG1) == slab.dofs(0)[-1]
    visit(slab, 1)
    assert interpolate(slab, 1, 0.25, CG1) == slab.dofs(1)[-1]


def test_interpolate_slab_start_returns_initial_value():
    slab, _ = create_time_slab([1.0, 0.25], 2.0, 10.0)
    slab.seed([3.0, 4.0])
    begin_sweep(slab)
    visit(slab, 0)
    assert interpolate(slab, 1, 2.0, CG1) == 4.0
    # for cG the first element's left value is the same number
    assert slab.dofs(1)[0] == 4.0


def test_interpolate_inside_small_element_matches_bruteforce(rng):
    slab, _ = create_time_slab([1.0, 1.0, 0.25, 0.25], 0.0, 10.0)
    pattern = SparsityPattern.full(4)
    build_dependencies(slab, pattern, CG1)
    assert check_sweep_interpolation(slab, pattern, CG1, rng) > 0


def test_interpolate_errors():
    slab, _ = create_time_slab([1.0, 0.25], 0.0, 10.0)
    build_dependencies(slab, SparsityPattern.diagonal(2), CG1)
    with pytest.raises(InterpolationError):
        interpolate(slab, 0, 0.5, CG1)
    begin_sweep(slab)
    visit(slab, 0)
    # component 1 at 0.5 is neither recent nor a listed dependency of element 0
    with pytest.raises(InterpolationError):
        interpolate(slab, 1, 0.5, CG1)


def test_plan_requires_dependencies():
    slab, _ = create_time_slab([1.0, 0.25], 0.0, 10.0, theta=0.5)
    with pytest.raises(InterpolationError):
        build_plan(slab, SparsityPattern.full(2), CG1)


def test_json_dump_round_trip():
    slab, _ = create_time_slab([1.0, 0.3, 0.05], 0.0, 10.0)
    data = json.loads(slab.dump_json())
    assert data["t0"] == 0.0 and data["t1"] == 1.0
    count = 0
    stack = [data["root"]]
    while stack:
        node = stack.pop()
        count += len(node["elements"])
        stack.extend(node["children"])
    assert count == slab.n_elements


def test_locate_examples():
    slab, _ = create_time_slab([1.0, 0.25], 0.0, 10.0)
    from multiadapt.timeslab import locate
    assert locate(slab, 1, 0.25) == 1  # half-open: left element owns its end point
    assert locate(slab, 1, 0.2500001) == 2
    assert locate(slab, 1, 0.0) == -1


profiles = st.tuples(st.integers(1, 8), st.floats(0.0, 6.0), st.sampled_from([0.3, 0.5, 0.7]),
                     st.integers(0, 2**32 - 1), st.sampled_from([("cg", 1), ("cg", 2), ("dg", 0), ("dg", 1)]))


@given(profiles)
def test_random_slab_invariants(args):
    n, max_log2, theta, seed, (variant, q) = args
    rng = np.random.default_rng(seed)
    table = build_table(variant, q)
    steps = random_steps(rng, n, max_log2)
    t0 = float(rng.uniform(0, 3))
    T = t0 + float(rng.uniform(0.2, 3.0))
    slab, t1 = create_time_slab(steps, t0, T, theta=theta, n_dofs=table.n_dofs)
    K = steps.max()
    assert t1 == slab.t1 and t1 == min(t0 + steps[steps >= theta * K].min(), T)
    check_tiling(slab)
    check_tree(slab)
    check_ee_chain(slab)
    check_storage(slab, table)
    pattern = random_pattern(rng, n)
    build_dependencies(slab, pattern, table)
    check_dependencies(slab)
    plan = build_plan(slab, pattern, table)
    np.testing.assert_array_equal(plan.src, oracle_sources(slab, plan, table))
    check_sweep_interpolation(slab, pattern, table, rng)
    check_locate(slab, rng, 40)


def test_root_end_time_rule():
    steps = np.array([0.8, 0.5, 0.1])
    slab, t1 = create_time_slab(steps, 1.0, 10.0, theta=0.5)
    # K = 0.8, I1 = {0.8, 0.5}, K_bar = 0.5
    assert t1 == 1.5


def test_many_random_locate_queries(rng):
    slab, _ = create_time_slab(random_steps(rng, 12, 8), 0.0, 1.0)
    check_locate(slab, rng, 1500)
