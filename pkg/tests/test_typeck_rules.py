"""Per-rule typing tests: every statement and expression judgment has an
accepting case, and every side-conditioned judgment a rejecting one. The
registry at the bottom is what the acceptance suite audits."""

import pytest

from bundl import syntax as ast
from bundl.diagnostics import Code
from bundl.parser import parse
from bundl.persp import Level, MachineParams, Perspective
from bundl.typeck import check_program

T1 = Perspective(Level.THREAD, 1)
B1 = Perspective(Level.BLOCK, 1)
G1 = Perspective(Level.GRID, 1)


def check_text(body: str, machine="T=4, B=1", smem=64, funcs=""):
    indented = "\n".join("    " + line if line else "" for line in body.split("\n"))
    text = (f"@machine({machine})\n\n{funcs}"
            f"@requires(grid[1], smem={smem})\ndef main():\n{indented}\n")
    prog, diags = parse(text)
    return diags + check_program(prog).diagnostics


def check_entry(stmt, machine=MachineParams(4, 1), bound=64, funcs=()):
    program = ast.Program(machine, funcs, stmt, bound)
    return check_program(program).diagnostics


def codes(diags):
    return [d.code for d in diags]


# --- expressions -----------------------------------------------------------

def accept_var():
    assert not check_text("x : int @ grid[1] = 1\ny : int @ grid[1] = x")


def reject_var_narrower():
    # a per-thread value is unreadable from any broader view
    out = check_text("x : int @ thread[1] = 1\ny : int @ grid[1] = x")
    assert Code.READ_UP in codes(out)


def reject_var_broader_not_exact():
    # scalars demand an exact match even against broader data
    out = check_text("x : int @ grid[1] = 1\n"
                     "with group(thread[2]):\n"
                     "    y : int @ thread[1] = x")
    assert Code.TYPE_MISMATCH in codes(out)


def accept_literals():
    assert not check_text("x : int @ grid[1] = 7\n"
                          "f : float @ grid[1] = 1.5\n"
                          "b : bool @ grid[1] = true")


def accept_partition_id():
    out = check_text("with group(thread[2]):\n    x : int @ thread[1] = id()")
    assert not out


def reject_partition_id_at_grid():
    out = check_text("x : int @ grid[1] = id()")
    assert Code.TYPE_MISMATCH in codes(out)


def accept_arr_access():
    assert not check_text("g : global int[4]\n"
                          "with group(thread[2]):\n"
                          "    x : int @ thread[1] = g[1]")


def reject_arr_access_readup():
    # partition narrows the view; reading it back from the broader code
    # perspective violates read-up
    out = check_text(
        "with group(thread[4]):\n"
        "    g : global int[4]\n"
        "    with partition(g, by=4) as y:\n"
        "        x : int @ thread[4] = y[0]\n"
        "        skip")
    assert Code.READ_UP in codes(out)


def accept_arr_access_shared():
    assert not check_text("with group(block[1]):\n"
                          "    s : shared int[4]\n"
                          "    with group(thread[1]):\n"
                          "        x : int @ thread[1] = s[0]",
                          machine="T=2, B=1", smem=16)


def reject_arr_access_shared_above_block():
    out = check_entry(
        ast.Destruct(ast.Group(1, ast.Alloc(
            "s", ast.MemKind.SHARED, ast.BaseType.INT, 2, ast.Skip()))),
        machine=MachineParams(2, 1), bound=8)
    assert not out
    # a shared array referenced from grid-level code
    stmt = ast.Alloc("s", ast.MemKind.SHARED, ast.BaseType.INT, 2,
                     ast.Decl("x", ast.INT, G1,
                              ast.ArrAccess(ast.Var("s"), ast.IntLit(0)),
                              ast.Skip()))
    out2 = check_entry(stmt, machine=MachineParams(2, 1), bound=8)
    assert Code.SHARED_ALLOC_LEVEL in codes(out2)  # alloc off block[1]
    assert Code.READ_UP in codes(out2)             # grid-level shared read


def accept_bop_and_offset():
    assert not check_text("x : int @ grid[1] = 1 + 2 * 3 - 4 / 2 + 6 % 4")


def reject_bop_non_int():
    out = check_text("b : bool @ grid[1] = true\nx : int @ grid[1] = b + 1")
    assert Code.TYPE_MISMATCH in codes(out)


def accept_cmp():
    assert not check_text("x : int @ grid[1] = 1\nif x < 2:\n    skip\nelse:\n    skip")


def reject_cmp_non_int():
    out = check_text("b : bool @ grid[1] = true\nif b < true:\n    skip\nelse:\n    skip")
    assert Code.TYPE_MISMATCH in codes(out)


# --- statements ------------------------------------------------------------

def accept_function_call():
    assert not check_text("with group(block[1]):\n    syncthreads()",
                          machine="T=2, B=1")


def reject_call_perspective():
    out = check_text("syncthreads()")
    assert Code.CALL_PERSPECTIVE in codes(out)


def reject_call_mem():
    funcs = ("@requires(grid[1], smem=128)\ndef needs_mem():\n    skip\n\n")
    out = check_text("needs_mem()", smem=8, funcs=funcs)
    assert Code.CALL_MEM in codes(out)


def reject_call_args():
    out = check_text("with group(thread[4]):\n    mma(1.0, 2.0)",
                     machine="T=32, B=1")
    assert Code.TYPE_MISMATCH in codes(out)


def accept_split():
    assert not check_text("with group(thread[4]):\n"
                          "    match split(thread):\n"
                          "        case 2:\n            skip\n"
                          "        case 2:\n            skip")


def reject_split_sum():
    out = check_text("with group(thread[4]):\n"
                     "    match split(thread):\n"
                     "        case 4:\n            skip\n"
                     "        case 1:\n            skip")
    assert Code.SPLIT_ALIGN in codes(out)


def reject_split_align():
    out = check_text("with group(thread[3]):\n"
                     "    match split(thread):\n"
                     "        case 1:\n            skip\n"
                     "        case 2:\n            skip", machine="T=3, B=1")
    assert Code.SPLIT_ALIGN in codes(out)


def accept_destruct():
    assert not check_entry(ast.Destruct(ast.Destruct(ast.Skip())),
                           machine=MachineParams(2, 1))


def reject_destruct_thread():
    out = check_entry(ast.Destruct(ast.Destruct(ast.Destruct(ast.Skip()))),
                      machine=MachineParams(2, 1))
    assert Code.DESTRUCT_UNDEFINED in codes(out)


def reject_destruct_wide():
    out = check_entry(ast.Destruct(ast.Group(2, ast.Destruct(ast.Skip()))),
                      machine=MachineParams(2, 4))
    assert Code.DESTRUCT_UNDEFINED in codes(out)


def accept_group():
    assert not check_entry(ast.Destruct(ast.Destruct(ast.Group(2, ast.Skip()))),
                           machine=MachineParams(4, 1))


def reject_group_divisor():
    out = check_entry(ast.Destruct(ast.Destruct(ast.Group(3, ast.Skip()))),
                      machine=MachineParams(4, 1))
    assert Code.GROUP_DIVISIBILITY in codes(out)


def accept_assn():
    assert not check_text("x : int @ grid[1] = 1\nx = x + 1")


def accept_assn_write_down():
    assert not check_text("x : int @ thread[1] = 1\nx = 2")


def reject_assn_write_up():
    out = check_text("x : int @ grid[1] = 1\n"
                     "with group(thread[2]):\n    x = 2")
    assert Code.WRITE_DOWN in codes(out)


def accept_sync_statements():
    assert not check_text("init_sync(3)\ndec_sync(3)\nwait_sync(3)")


def accept_skip():
    assert not check_text("skip")


def accept_free():
    assert not check_text("free(8)", smem=8)


def reject_free_over_budget():
    out = check_text("free(9)", smem=8)
    assert Code.MEM_BOUND_EXCEEDED in codes(out)


def accept_decl():
    assert not check_text("x : int @ thread[1] = 3")


def reject_decl_broader():
    out = check_text("with group(thread[2]):\n    x : int @ grid[1] = 3")
    assert Code.WRITE_DOWN in codes(out)


def reject_decl_array_type():
    stmt = ast.Decl("x", ast.ArrayType(ast.BaseType.INT, ast.MemKind.GLOBAL),
                    G1, ast.IntLit(0), ast.Skip())
    out = check_entry(stmt)
    assert Code.DECL_ARRAY in codes(out)


def accept_arr_assn():
    assert not check_text("g : global int[4]\ng[0] = 7")


def reject_arr_assn_up():
    out = check_text("g : global int[4]\n"
                     "with group(thread[2]):\n    g[0] = 7")
    assert Code.WRITE_DOWN in codes(out)


def accept_arr_assn_shared():
    assert not check_text("with group(block[1]):\n"
                          "    s : shared int[4]\n"
                          "    s[0] = 7", machine="T=2, B=1", smem=16)


def reject_arr_assn_shared_scope():
    stmt = ast.Alloc("s", ast.MemKind.SHARED, ast.BaseType.INT, 2,
                     ast.ArrAssn(ast.Var("s"), ast.IntLit(0), ast.IntLit(1)))
    out = check_entry(stmt, machine=MachineParams(2, 1), bound=8)
    assert Code.WRITE_DOWN in codes(out)


def accept_if():
    assert not check_text("if 1 < 2:\n    skip\nelse:\n    skip")


def reject_if_non_bool():
    out = check_text("x : int @ grid[1] = 1\nif x:\n    skip\nelse:\n    skip")
    assert Code.TYPE_MISMATCH in codes(out)


def accept_while():
    assert not check_text("i : int @ grid[1] = 2\nwhile i > 0:\n    i = i - 1")


def reject_while_non_bool():
    out = check_text("i : int @ grid[1] = 2\nwhile i:\n    i = i - 1")
    assert Code.TYPE_MISMATCH in codes(out)


def accept_seq():
    assert not check_text("skip\nskip\nskip")


def accept_alloc():
    assert not check_text("g : global int[4]\nl : local float[2]", smem=24)


def reject_alloc_over_budget():
    out = check_text("g : global int[4]", smem=8)
    assert Code.MEM_BOUND_EXCEEDED in codes(out)


def accept_alloc_shared():
    assert not check_text("with group(block[1]):\n    s : shared int[2]",
                          machine="T=2, B=1", smem=8)


def reject_alloc_shared_level():
    out = check_text("s : shared int[2]", smem=8)
    assert Code.SHARED_ALLOC_LEVEL in codes(out)


def accept_partition():
    assert not check_text("with group(thread[4]):\n"
                          "    g : global int[8]\n"
                          "    with partition(g, by=2) as y:\n"
                          "        y[0] = 1", smem=32)


def reject_partition_divisor():
    text = ("with group(thread[4]):\n"
            "    g : global int[8]\n"
            "    partition[0] g into y by 3:\n"
            "        skip")
    out = check_text(text, smem=32)
    assert Code.PARTITION_NON_DIVISOR in codes(out)


def reject_partition_local():
    out = check_text("with group(thread[4]):\n"
                     "    l : local int[8]\n"
                     "    partition[0] l into y by 2:\n"
                     "        skip", smem=32)
    assert Code.LOCAL_PARTITION in codes(out)


def reject_partition_perspective():
    out = check_text("g : global int[8]\n"
                     "with group(thread[4]):\n"
                     "    partition[0] g into y by 2:\n"
                     "        skip", smem=32)
    assert Code.TYPE_MISMATCH in codes(out)


def accept_claim():
    assert not check_text("with group(thread[4]):\n"
                          "    g : global int[4]\n"
                          "    claim[0] g into y at 2:\n"
                          "        y[0] = 1", smem=16)


def reject_claim_too_large():
    out = check_text("with group(thread[4]):\n"
                     "    g : global int[4]\n"
                     "    claim[0] g into y at 5:\n"
                     "        skip", smem=16)
    assert Code.CLAIM_TOO_LARGE in codes(out)


def reject_claim_local():
    out = check_text("with group(thread[4]):\n"
                     "    l : local int[4]\n"
                     "    claim[0] l into y at 2:\n"
                     "        skip", smem=16)
    assert Code.LOCAL_PARTITION in codes(out)


def accept_lower():
    assert not check_text("g : global int[4]\nlower[0] g into y:\n    skip",
                          smem=16)


def reject_lower_undefined():
    out = check_text("with group(thread[4]):\n"
                     "    g : global int[4]\n"
                     "    lower[0] g into y:\n"
                     "        skip", smem=16)
    assert Code.DESTRUCT_UNDEFINED in codes(out)


def accept_async_partition():
    assert not check_text("with group(thread[1]):\n"
                          "    g : global int[2]\n"
                          "    with async(g) as y:\n"
                          "        skip", machine="T=1, B=1", smem=8)


def reject_async_off_thread1():
    out = check_text("g : global int[2]\n"
                     "with async(g) as y:\n"
                     "    skip", smem=8)
    assert Code.ASYNC_MISUSE in codes(out)


def accept_async_memcpy():
    assert not check_text("with group(thread[1]):\n"
                          "    g : global int[2]\n"
                          "    h : global int[2]\n"
                          "    with async(g) as y:\n"
                          "        async_memcpy(y, h)",
                          machine="T=1, B=1", smem=16)


def reject_async_memcpy_plain_dst():
    out = check_text("with group(thread[1]):\n"
                     "    g : global int[2]\n"
                     "    h : global int[2]\n"
                     "    async_memcpy(g, h)", machine="T=1, B=1", smem=16)
    assert Code.ASYNC_MISUSE in codes(out)


def accept_memcpy():
    assert not check_text("g : global int[2]\nh : global int[2]\nmemcpy(g, h)",
                          smem=16)


def reject_memcpy_mixed_perspectives():
    out = check_text("g : global int[2]\n"
                     "with group(thread[2]):\n"
                     "    h : global int[2]\n"
                     "    memcpy(g, h)", smem=16)
    assert Code.TYPE_MISMATCH in codes(out)


def accept_const_pointer_relaxation():
    funcs = ("@requires(thread[4], smem=0)\n"
             "def reader(a : const int[global] @ thread[4]):\n"
             "    x : int @ thread[1] = a[0]\n\n")
    body = ("g : global int[4]\n"
            "with group(thread[4]):\n"
            "    reader(g)")
    assert not check_text(body, smem=16, funcs=funcs)


def reject_nonconst_broader_pointer():
    funcs = ("@requires(thread[4], smem=0)\n"
             "def writer(a : int[global] @ thread[4]):\n"
             "    a[0] = 1\n\n")
    body = ("g : global int[4]\n"
            "with group(thread[4]):\n"
            "    writer(g)")
    out = check_text(body, smem=16, funcs=funcs)
    assert Code.TYPE_MISMATCH in codes(out)


# --- registry ---------------------------------------------------------------

RULES = {
    "T-Var": (accept_var, [reject_var_narrower, reject_var_broader_not_exact]),
    "T-Int": (accept_literals, []),
    "T-Float": (accept_literals, []),
    "T-Bool": (accept_literals, []),
    "T-Partition-Id": (accept_partition_id, [reject_partition_id_at_grid]),
    "T-Arr-Access": (accept_arr_access, [reject_arr_access_readup]),
    "T-Arr-Access-Shared": (accept_arr_access_shared,
                            [reject_arr_access_shared_above_block]),
    "T-Bop": (accept_bop_and_offset, [reject_bop_non_int]),
    "T-Cmp": (accept_cmp, [reject_cmp_non_int]),
    "T-Function-Call": (accept_function_call,
                        [reject_call_perspective, reject_call_mem,
                         reject_call_args, reject_nonconst_broader_pointer]),
    "T-Split": (accept_split, [reject_split_sum, reject_split_align]),
    "T-Destruct": (accept_destruct, [reject_destruct_thread,
                                     reject_destruct_wide]),
    "T-Group": (accept_group, [reject_group_divisor]),
    "T-Assn": (accept_assn, [reject_assn_write_up]),
    "T-Sync-Init": (accept_sync_statements, []),
    "T-Sync-Dec": (accept_sync_statements, []),
    "T-Sync-Wait": (accept_sync_statements, []),
    "T-Skip": (accept_skip, []),
    "T-Free": (accept_free, [reject_free_over_budget]),
    "T-Decl": (accept_decl, [reject_decl_broader, reject_decl_array_type]),
    "T-Arr-Assn": (accept_arr_assn, [reject_arr_assn_up]),
    "T-Arr-Assn-Shared": (accept_arr_assn_shared, [reject_arr_assn_shared_scope]),
    "T-If": (accept_if, [reject_if_non_bool]),
    "T-While": (accept_while, [reject_while_non_bool]),
    "T-Seq": (accept_seq, []),
    "T-Alloc": (accept_alloc, [reject_alloc_over_budget]),
    "T-Alloc-Shared": (accept_alloc_shared, [reject_alloc_shared_level]),
    "T-Partition": (accept_partition, [reject_partition_divisor,
                                       reject_partition_local,
                                       reject_partition_perspective]),
    "T-Claim": (accept_claim, [reject_claim_too_large, reject_claim_local]),
    "T-Lower": (accept_lower, [reject_lower_undefined]),
    "T-Async-Partition": (accept_async_partition, [reject_async_off_thread1]),
    "T-Async-Memcpy": (accept_async_memcpy, [reject_async_memcpy_plain_dst]),
    "T-Memcpy": (accept_memcpy, [reject_memcpy_mixed_perspectives]),
}

SIDE_CONDITIONED = [name for name, (_a, rejects) in RULES.items() if rejects]


@pytest.mark.parametrize("rule", sorted(RULES))
def test_rule_accepts(rule):
    RULES[rule][0]()


@pytest.mark.parametrize("rule", sorted(r for r in RULES if RULES[r][1]))
def test_rule_rejects(rule):
    for reject in RULES[rule][1]:
        reject()


def test_registry_covers_the_full_rule_set():
    assert len(RULES) >= 26
    assert all(callable(a) for (a, _r) in RULES.values())


def test_extra_accessor_cases():
    accept_arr_access()
    reject_arr_access_readup()


def test_no_perspective_weakening_between_thread_counts():
    # a thread[1] variable is unreadable from thread[2] code: scalars never
    # weaken, in either direction
    out = check_text("with group(thread[2]):\n"
                     "    x : int @ thread[1] = 1\n"
                     "    y : int @ thread[2] = x")
    assert Code.READ_UP in codes(out)


def test_checking_is_deterministic():
    text = ("x : int @ thread[1] = 1\ny : int @ grid[1] = x\n"
            "s : shared int[2]")
    first = [d.code for d in check_text(text)]
    second = [d.code for d in check_text(text)]
    assert first == second and first


def test_memory_monotonicity():
    from bundl.harness import GenConfig, gen_well_typed

    for seed in range(20):
        prog = gen_well_typed(GenConfig(seed=seed))
        bigger = ast.Program(prog.machine, prog.functions, prog.entry,
                             prog.entry_mem_bound + 64)
        assert check_program(bigger).ok


def test_check_env_direct_cases():
    from bundl import machine as mach
    from bundl.typeck import TypingContext, check_env

    machine = MachineParams(2, 1)
    empty = TypingContext({}, machine)
    assert check_env(empty, {}, {}, {}) is None

    ctx = TypingContext({"x": (G1, ast.INT)}, machine)
    ok_env = {"x": (G1, mach.VInt(3))}
    assert check_env(ctx, ok_env, {}, {}) is None

    bad_env = {"x": (G1, mach.VBool(True))}
    diag = check_env(ctx, bad_env, {}, {})
    assert diag is not None and diag.code == Code.TYPE_MISMATCH

    # a registered function checks against its own signature
    from bundl.intrinsics import INTRINSICS

    sync = next(f for f in INTRINSICS if f.name == "syncthreads")
    fctx = TypingContext({"syncthreads": (sync.persp, sync.signature())}, machine)
    fenv = {"syncthreads": (sync.persp, mach.VClosure("syncthreads"))}
    assert check_env(fctx, {}, {}, fenv) is None


def test_tiled_kernel_claim_of_thirty_threads_is_rejected():
    import pathlib

    source = (pathlib.Path(__file__).resolve().parent.parent / "corpus" /
              "figs" / "tf32_tiled_mm.bdl").read_text()
    mutated = source.replace("claim(c_smem, p=thread[32])",
                             "claim(c_smem, p=thread[30])")
    assert mutated != source
    prog, diags = parse(mutated)
    all_diags = diags + check_program(prog).diagnostics
    # the warp collective demands exactly thread[32]
    assert Code.CALL_PERSPECTIVE in codes(all_diags)
