import dataclasses

from bundl import machine as mach
from bundl import syntax as ast
from bundl.harness import (GenConfig, gen_well_typed, recheck_state,
                           safety_experiment, shrink_program)
from bundl.parser import parse
from bundl.persp import MachineParams
from bundl.typeck import check_program


def test_trivial_config_generates_small_typed_program():
    prog = gen_well_typed(GenConfig(seed=1, max_depth=1))
    assert check_program(prog).ok


def test_generator_soundness_over_many_seeds():
    for seed in range(300):
        prog = gen_well_typed(GenConfig(seed=seed))
        assert check_program(prog).ok, seed


def test_generator_covers_every_armed_rule():
    from bundl.harness import _MACHINES

    coverage = {}
    for seed in range(1000):
        gen_well_typed(GenConfig(seed=seed, machine=_MACHINES[seed % 5]),
                       coverage)
    assert all(count >= 10 for count in coverage.values()), coverage
    expected_arms = {"t_partition", "t_claim", "t_lower", "t_async_partition",
                     "t_async_memcpy", "t_memcpy", "t_function_call", "t_split",
                     "t_group", "t_destruct", "t_while", "t_if", "t_alloc",
                     "t_alloc_shared", "t_decl", "t_assn", "t_arr_assn",
                     "t_var", "t_arr_access"}
    assert expected_arms <= set(coverage)


def test_claim_inside_split_still_typechecks():
    # feature toggle: claims enabled yields programs with claims that check
    coverage = {}
    found = 0
    for seed in range(400):
        prog = gen_well_typed(GenConfig(seed=seed, enable_claim=True), coverage)
        if coverage.get("t_claim", 0) > found:
            found = coverage["t_claim"]
            assert check_program(prog).ok
    assert found > 0


def test_small_experiment_is_clean():
    report = safety_experiment(GenConfig(seed=17), n_programs=30,
                               n_schedules=5, max_steps=10_000,
                               preserve_sample=5)
    assert report.stuck_count == 0
    assert not report.preservation_failures
    assert report.outcomes.get(mach.ALL_DONE, 0) > 0


def test_empty_experiment_is_empty():
    report = safety_experiment(GenConfig(seed=0), n_programs=0, n_schedules=0,
                               max_steps=100)
    assert report.to_dict()["outcomes"] == {}
    assert report.stuck_count == 0


def _break_write_down(prog):
    """Introduce a write-down violation behind the checker's back: every
    unit writes a grid-level cell from thread-level code."""
    bad = ast.Destruct(ast.Destruct(ast.ArrAssn(
        ast.Var("gbl"), ast.IntLit(0), ast.IntLit(1))))
    entry = ast.Alloc("gbl", ast.MemKind.GLOBAL, ast.BaseType.INT, 1, bad)
    return dataclasses.replace(prog, entry=entry)


def test_mutated_program_is_observably_unsafe():
    prog = gen_well_typed(GenConfig(seed=3, machine=MachineParams(2, 1)))
    broken = _break_write_down(prog)
    assert not check_program(broken).ok  # the checker catches it...
    result = mach.run(broken, mach.RandomScheduler(0), 2000)  # ...and the
    assert result.kind == mach.STUCK                          # machine sticks
    assert result.stuck.reason == mach.StuckReason.PERSPECTIVE_MISMATCH


def test_shrinking_preserves_the_failure_class():
    prog = gen_well_typed(GenConfig(seed=5, machine=MachineParams(2, 1)))
    broken = _break_write_down(prog)

    def still_fails(p):
        r = mach.run(p, mach.RandomScheduler(0), 2000)
        return r.kind == mach.STUCK and \
            r.stuck.reason == mach.StuckReason.PERSPECTIVE_MISMATCH

    small = shrink_program(broken, still_fails)
    assert still_fails(small)
    # the minimized program is no larger than the broken one
    assert len(str(small)) <= len(str(broken))


def test_preservation_recheck_accepts_every_step_of_a_run():
    text = """@machine(T=2, B=2)

@requires(grid[1], smem=8)
def main():
    with group(thread[2]):
        g : global int[2]
        with partition(g, by=1) as y:
            y[0] = rel_id() + 5
"""
    prog, _ = parse(text)
    failures = []

    def on_step(state, record):
        failures.extend(recheck_state(prog, state))

    result = mach.run(prog, mach.RandomScheduler(1), 10_000, on_step=on_step)
    assert result.kind == mach.ALL_DONE
    assert not failures


def test_preservation_recheck_flags_a_corrupted_environment():
    text = """@machine(T=1, B=1)

@requires(grid[1], smem=4)
def main():
    g : global int[1]
    g[0] = 7
"""
    prog, _ = parse(text)
    result = mach.run(prog, mach.RandomScheduler(0), 100)
    state = result.state
    # smash a cell with a value of the wrong kind
    state.global_[("g", 0)] = (state.global_[("g", 0)][0], mach.VBool(True))
    # run one more synthetic step context: recheck directly
    bad_state = dataclasses.replace(state)
    bad_state.pool = {(0, 0): (ast.ArrAssn(ast.Var("g"), ast.IntLit(0),
                                           ast.IntLit(1)), 0)}
    failures = recheck_state(prog, bad_state)
    assert any("cell" in f for f in failures)
