import pathlib

import pytest

from bundl import machine as mach
from bundl import syntax as ast
from bundl.parser import parse
from bundl.persp import GRID1, Level, MachineParams, Perspective
from bundl.typeck import check_program

CORPUS = pathlib.Path(__file__).resolve().parent.parent / "corpus"

T2 = Perspective(Level.THREAD, 2)
T4 = Perspective(Level.THREAD, 4)
T8 = Perspective(Level.THREAD, 8)
T32 = Perspective(Level.THREAD, 32)

M41 = MachineParams(4, 1)


def load(name):
    prog, diags = parse((CORPUS / name).read_text())
    assert not diags
    return prog


def run_seeded(prog, seed=0, max_steps=10_000, **kw):
    return mach.run(prog, mach.RandomScheduler(seed), max_steps, **kw)


def global_cells(state):
    return {loc: v for loc, (_p, v) in state.global_.items()
            if isinstance(loc, tuple)}


# --- expression evaluation ---------------------------------------------------

def test_eval_get_and_bounds():
    eta = {"x": (GRID1, mach.VInt(5)),
           "a": (GRID1, mach.VArr("a", 4, 0, ast.BaseType.INT, ast.MemKind.GLOBAL))}
    v = mach.eval_expr(eta, {}, {}, GRID1, GRID1, ast.Var("x"), M41)
    assert v == mach.VInt(5)
    with pytest.raises(Exception) as err:
        mach.eval_expr(eta, {}, {}, GRID1, GRID1,
                       ast.ArrAccess(ast.Var("a"), ast.IntLit(4)), M41)
    assert "OutOfBounds" in str(err.value)


def test_eval_partition_id_formula():
    v = mach.eval_expr({}, {}, {}, T32, T8, ast.PartitionId(), M41)
    assert v == mach.VInt(3)  # 32 / 8 - 1


def test_eval_undef_cell_reads_as_poison():
    eta = {"a": (GRID1, mach.VArr("a", 4, 0, ast.BaseType.INT, ast.MemKind.GLOBAL))}
    v = mach.eval_expr(eta, {}, {}, GRID1, GRID1,
                       ast.ArrAccess(ast.Var("a"), ast.IntLit(1)), M41)
    assert v == mach.VUndef()


def test_eval_division_semantics():
    out = mach.eval_expr({}, {}, {}, GRID1, GRID1,
                         ast.Bop("/", ast.IntLit(7), ast.IntLit(2)), M41)
    assert out == mach.VInt(3)
    with pytest.raises(Exception) as err:
        mach.eval_expr({}, {}, {}, GRID1, GRID1,
                       ast.Bop("/", ast.IntLit(7), ast.IntLit(0)), M41)
    assert "ValueKindMismatch" in str(err.value)


# --- single thread steps ------------------------------------------------------

def step_once(stmt, pi=GRID1, p=0, t=0, b=0, m=0, eta=None, sems=None,
              machine=M41):
    stepper = mach.ThreadStepper({}, machine)
    eta = eta if eta is not None else {}
    sigma = {}
    Sigma = {}
    sems = sems if sems is not None else {}
    deferred = {}
    out = stepper.step(eta, sigma, Sigma, sems, deferred, t, b, p, pi, m, stmt)
    return out, stepper.rule, eta, sigma, Sigma, sems, deferred


def test_split_routing_left_right_none():
    split = ast.Split(2, 1, ast.Free(0), ast.Free(0))
    (s1, _), rule, *_ = step_once(split, pi=T4, p=0)
    assert rule == "free" and isinstance(s1, ast.Split)
    (s2, _), rule2, *_ = step_once(split, pi=T4, p=2)
    assert rule2 == "free"
    (s3, _), rule3, *_ = step_once(split, pi=T4, p=3)
    assert rule3 == "split_none" and isinstance(s3, ast.Skip)


def test_split_alignment_checked_at_runtime():
    split = ast.Split(4, 1, ast.Skip(), ast.Skip())
    with pytest.raises(Exception) as err:
        step_once(split, pi=T4, p=0)
    assert "AlignFail" in str(err.value)


def test_group_reduces_unit_id_modulo():
    # at thread[4] with p=3, a group of 2 runs its body with p=1
    body = ast.Decl("x", ast.INT, Perspective(Level.THREAD, 1), ast.RelId(),
                    ast.Skip())
    grp = ast.Group(2, body)
    (s, _), rule, eta, *_ = step_once(grp, pi=T4, p=3)
    assert eta["x"][1] == mach.VInt(1)


def test_destruct_derives_unit_from_thread_and_block_ids():
    body = ast.Decl("x", ast.INT, Perspective(Level.THREAD, 1), ast.RelId(),
                    ast.Skip())
    (s, _), rule, eta, *_ = step_once(
        ast.Destruct(body), pi=Perspective(Level.BLOCK, 1), p=0, t=7,
        machine=MachineParams(4, 2))
    assert eta["x"][1] == mach.VInt(3)  # 7 mod 4


def test_partition_substitutes_chunk_offset():
    body = ast.ArrAssn(ast.Var("y"), ast.IntLit(0), ast.IntLit(1))
    part = ast.Partition(9, "c", "y", 4, body)
    eta = {"c": (T8, mach.VArr("c", 64, 0, ast.BaseType.INT, ast.MemKind.GLOBAL))}
    (s, _), rule, eta2, *_ = step_once(part, pi=T8, p=2, eta=eta)
    assert rule == "partition"
    # envelope: arm; body'; signal; wait  with y shifted by chunk * unit id
    flat = []
    node = s
    while isinstance(node, ast.Seq):
        flat.append(node.first)
        node = node.second
    flat.append(node)
    assert isinstance(flat[0], ast.SyncInit) and flat[0].sem == 9
    assert isinstance(flat[-2], ast.SyncDec) and isinstance(flat[-1], ast.SyncWait)
    assn = flat[1]
    assert assn == ast.ArrAssn(ast.Bop("+", ast.Var("y"), ast.IntLit(8)),
                               ast.IntLit(0), ast.IntLit(1))
    # the rename narrows the view: 8 units / 4 per chunk
    assert eta2["y"][0] == Perspective(Level.THREAD, 2)


def test_claim_expands_to_masked_split():
    claim = ast.Claim(3, "c", "y", 2, ast.Skip())
    eta = {"c": (T4, mach.VArr("c", 8, 0, ast.BaseType.INT, ast.MemKind.GLOBAL))}
    (s, _), rule, eta2, *_ = step_once(claim, pi=T4, p=0, eta=eta)
    assert rule == "claim"
    flat = []
    node = s
    while isinstance(node, ast.Seq):
        flat.append(node.first)
        node = node.second
    flat.append(node)
    assert isinstance(flat[1], ast.Split)
    assert (flat[1].n1, flat[1].n2) == (2, 2)
    assert isinstance(flat[1].right, ast.Skip)
    assert eta2["y"][0] == T2


def test_sync_counter_lifecycle():
    sems = {}
    (s, _), rule, _, _, _, sems, _ = step_once(ast.SyncInit(5), pi=T4, p=1,
                                               sems=sems)
    assert rule == "sync_init_zero" and sems[5][1] == 4  # size(thread[4])
    step_once(ast.SyncInit(5), pi=T4, p=1, sems=sems)
    assert sems[5][1] == 4  # nonzero init leaves the counter alone
    step_once(ast.SyncDec(5), pi=T4, p=1, sems=sems)
    assert sems[5][1] == 3
    (s, _), rule, *_ = step_once(ast.SyncWait(5), pi=T4, p=1, sems=sems)
    assert rule == "sync_wait_spin" and isinstance(s, ast.SyncWait)
    sems[5][1] = 0
    (s, _), rule, *_ = step_once(ast.SyncWait(5), pi=T4, p=1, sems=sems)
    assert rule == "sync_wait_done" and isinstance(s, ast.Skip)


def test_counters_never_go_negative():
    sems = {5: {0: 0}}
    step_once(ast.SyncDec(5), pi=T4, p=0, sems=sems)
    assert sems[5][0] == 0


def test_while_unrolls_to_if():
    loop = ast.While(ast.BoolLit(True), ast.Skip())
    (s, _), rule, *_ = step_once(loop)
    assert rule == "while_unroll"
    assert s == ast.If(ast.BoolLit(True), ast.Seq(ast.Skip(), loop), ast.Skip())


def test_alloc_appends_release_and_grows_footprint():
    alloc = ast.Alloc("a", ast.MemKind.GLOBAL, ast.BaseType.INT, 3, ast.Skip())
    (s, m), rule, _, _, Sigma, _, _ = step_once(alloc, m=0)
    assert rule == "alloc_global" and m == 12
    assert s == ast.Seq(ast.Skip(), ast.Free(12))
    assert Sigma["a"][1].length == 3


def test_shared_alloc_off_block_gets_stuck():
    alloc = ast.Alloc("s", ast.MemKind.SHARED, ast.BaseType.INT, 1, ast.Skip())
    with pytest.raises(Exception) as err:
        step_once(alloc, pi=T4)
    assert "PerspectiveMismatch" in str(err.value)


def test_free_underflow_gets_stuck():
    with pytest.raises(Exception) as err:
        step_once(ast.Free(5), m=4)
    assert "MemUnderflow" in str(err.value)


def test_branching_on_poison_gets_stuck():
    eta = {"a": (GRID1, mach.VArr("a", 2, 0, ast.BaseType.INT, ast.MemKind.GLOBAL))}
    cond = ast.Cmp("<", ast.IntLit(0), ast.ArrAccess(ast.Var("a"), ast.IntLit(0)))
    with pytest.raises(Exception) as err:
        step_once(ast.If(cond, ast.Skip(), ast.Skip()), eta=eta)
    assert "ValueKindMismatch" in str(err.value)


def test_full_width_claim_sticks_on_the_masked_split():
    # typeable, but the runtime split gets a zero-width arm
    claim = ast.Claim(0, "c", "y", 4, ast.ArrAssn(ast.Var("y"), ast.IntLit(0),
                                                  ast.IntLit(1)))
    eta = {"c": (T4, mach.VArr("c", 8, 0, ast.BaseType.INT, ast.MemKind.GLOBAL))}
    (s, _), *_ = step_once(claim, pi=T4, p=0, eta=eta)
    inner = s.second.first  # the masked split
    with pytest.raises(Exception) as err:
        step_once(inner, pi=T4, p=0, eta=eta)
    assert "AlignFail" in str(err.value)


# --- whole machine ------------------------------------------------------------

def test_skip_entry_completes_immediately():
    prog, _ = parse("@machine(T=2, B=2)\n\n@requires(grid[1], smem=0)\n"
                    "def main():\n    skip\n")
    result = run_seeded(prog)
    assert result.kind == mach.ALL_DONE
    assert result.steps <= 4  # at most one bookkeeping step per thread


def test_warp_mma_runs_to_completion():
    prog = load("figs/warp_mma.bdl")
    assert check_program(prog).ok
    result = run_seeded(prog, seed=0)
    assert result.kind == mach.ALL_DONE


def test_two_writes_identical_final_memory():
    prog = load("micro/two_writes.bdl")
    result = mach.enumerate_schedules(prog, 40)
    assert result.outcomes == {mach.ALL_DONE}
    assert len(result.final_globals) == 1
    done = run_seeded(prog)
    cells = global_cells(done.state)
    assert cells[("g", 0)] == mach.VInt(40)
    assert cells[("g", 1)] == mach.VInt(41)


def test_racing_partition_last_writer_wins():
    prog = load("micro/race_partition.bdl")
    result = mach.enumerate_schedules(prog, 40)
    assert result.outcomes == {mach.ALL_DONE}
    values = set()
    for final in result.final_globals:
        entries = dict(final)
        values.add(entries["('g', 1)"])
    assert values == {"VInt(v=10)", "VInt(v=11)"}


def test_micro_corpus_runs_clean():
    for name in ("micro/claim_one.bdl", "micro/lower_grid.bdl",
                 "micro/async_copy.bdl", "micro/partition_rw.bdl"):
        prog = load(name)
        assert check_program(prog).ok, name
        result = run_seeded(prog)
        assert result.kind == mach.ALL_DONE, name


def test_async_transfer_drains_on_unwind():
    prog = load("micro/async_copy.bdl")
    result = run_seeded(prog, collect_trace=True)
    rules = [r.rule for r in result.trace]
    assert "async_memcpy" in rules
    assert "async_unwind" in rules
    assert "memcpy" in rules
    assert "async_done" in rules
    assert not result.state.deferred.get(0, frozenset())


def test_trace_is_deterministic_for_a_fixed_schedule():
    prog = load("micro/race_partition.bdl")
    a = run_seeded(prog, seed=3, collect_trace=True)
    b = run_seeded(prog, seed=3, collect_trace=True)
    assert [(r.t, r.b, r.rule) for r in a.trace] == \
        [(r.t, r.b, r.rule) for r in b.trace]
    assert a.state.key() == b.state.key()


def test_divergent_barrier_call_livelocks():
    # the motivating bug: a block barrier under a per-thread branch
    text = """@machine(T=2, B=1)

@requires(grid[1], smem=0)
def main():
    with group(block[1]):
        syncthreads()
"""
    prog, _ = parse(text)
    # break it by hand: guard the barrier behind a unit-dependent branch
    body = prog.entry
    import dataclasses

    def rewrite(s):
        if isinstance(s, ast.Call):
            return ast.Destruct(ast.If(
                ast.Cmp("==", ast.RelId(), ast.IntLit(0)),
                ast.Group(2, s), ast.Skip()))
        for attr in ("body", "first", "second"):
            child = getattr(s, attr, None)
            if child is not None and not isinstance(child, (str, int)):
                return dataclasses.replace(s, **{attr: rewrite(child)})
        return s

    broken = dataclasses.replace(prog, entry=rewrite(prog.entry))
    result = run_seeded(broken, seed=0, max_steps=2000)
    assert result.kind in (mach.LIVELOCK, mach.STUCK)


def test_barrier_orders_all_slot_mates():
    # one partition over two slot mates: nobody passes the wait until both
    # have signalled
    prog = load("micro/claim_one.bdl")
    funcs = mach.function_table(prog)

    def watch(pre, rec, post):
        if rec.rule != "sync_wait_done" or not isinstance(rec.stmt, ast.SyncWait):
            return None
        sem = rec.stmt.sem
        if sem >= 10_000 or sem < 0:
            return None
        for tb, (res, _m) in pre.pool.items():
            if tb == (rec.t, rec.b):
                continue
            from bundl.syncinfer import _contains_sync, _slot_of
            if _slot_of(tb[0], tb[1], T2, prog.machine) != \
                    _slot_of(rec.t, rec.b, T2, prog.machine):
                continue
            if _contains_sync(res, ast.SyncDec, sem):
                return "EarlyRelease"
        return None

    result = mach.enumerate_schedules(prog, 40, on_state=watch)
    assert "EarlyRelease" not in result.outcomes
    assert result.outcomes == {mach.ALL_DONE}


def test_enumeration_guard():
    prog = load("figs/warp_mma.bdl")  # 32 threads: over the guard
    with pytest.raises(mach.ExplorationBudgetExceeded):
        mach.enumerate_schedules(prog, 40)


def test_step_machine_reports_thread_done():
    prog = load("micro/two_writes.bdl")
    result = run_seeded(prog)
    funcs = mach.function_table(prog)
    out = mach.step_machine(result.state, (0, 0), funcs)
    assert isinstance(out, mach.ThreadDone)


def test_calling_a_function_with_a_memory_bound_runs():
    # the allowance threading must let a well-typed call through: the
    # callee's declared need is measured against the caller's allowance
    text = """@machine(T=1, B=1)

@requires(grid[1], smem=8)
def scratch_user():
    a : global int[2]
    a[0] = 1

@requires(grid[1], smem=8)
def main():
    scratch_user()
"""
    prog, diags = parse(text)
    assert not diags and check_program(prog).ok
    result = run_seeded(prog)
    assert result.kind == mach.ALL_DONE
    # and the allowance returns to the entry bound once scopes close
    for _tb, (_s, m) in result.state.pool.items():
        assert m == prog.entry_mem_bound
