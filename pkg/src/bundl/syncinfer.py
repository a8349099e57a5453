"""Barrier placement: the data-control-flow graph over partition-like
regions, the two insertion rules, wait/arrive motion, and an exhaustive
plan verifier.

Regions desugared from one surface construct (a lower/destruct/partition
chain) share a site label and collapse into a single node. Edges follow
program order between completed regions, with backedges through loops; an
edge's source must finish before its target starts, so an enclosing region
is never a parent of the regions nested inside it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Set, Tuple

from . import machine as mach
from . import syntax as ast
from .persp import BLOCK1, GRID1, Level, Perspective, destruct

READ = "Read"
WRITE = "Write"

ProgramPoint = Tuple[str, Tuple[str, ...], str]  # (function, path, before|after)

_SYNC_SEM_BASE = 10_000

_CHILDREN = ("first", "second", "body", "then", "els", "left", "right")


def _kids(s: ast.Stmt):
    for attr in _CHILDREN:
        child = getattr(s, attr, None)
        if child is not None and not isinstance(child, (str, int)):
            yield attr, child


@dataclass
class DcfgNode:
    id: int
    site: str
    func: str
    variable: str                  # array being narrowed (chain root source)
    dsts: Set[str]
    kind: str                      # Read | Write
    persp: Perspective             # perspective of the innermost view change
    path: Tuple[str, ...]          # path to the outermost chain statement
    children: List[int] = field(default_factory=list)
    backedge_parents: Set[int] = field(default_factory=set)


@dataclass
class DcfgGraph:
    nodes: List[DcfgNode]
    edges: Set[Tuple[int, int]]
    backedges: Set[Tuple[int, int]]

    def node(self, nid: int) -> DcfgNode:
        return self.nodes[nid]

    def parents(self, nid: int) -> List[int]:
        return sorted(p for (p, c) in self.edges if c == nid)


# ---------------------------------------------------------------------------
# Graph construction


class _GraphBuilder:
    def __init__(self, program: ast.Program):
        self.program = program
        self.nodes: List[DcfgNode] = []
        self.edges: Set[Tuple[int, int]] = set()
        self.backedges: Set[Tuple[int, int]] = set()

    def build(self) -> DcfgGraph:
        for f in self.program.functions:
            self.walk(f.body, f.persp, f.name, ())
        self.walk(self.program.entry, GRID1, "main", ())
        for (p, c) in self.edges:
            self.nodes[p].children.append(c)
        for node in self.nodes:
            node.children = sorted(set(node.children))
        for (p, c) in self.backedges:
            self.nodes[c].backedge_parents.add(p)
        return DcfgGraph(self.nodes, self.edges, self.backedges)

    def link(self, exits: Set[int], entries: Set[int], back: bool = False) -> None:
        for p in exits:
            for c in entries:
                self.edges.add((p, c))
                if back:
                    self.backedges.add((p, c))

    def walk(self, s: ast.Stmt, pi: Perspective, func: str,
             path: Tuple[str, ...]) -> Tuple[Set[int], Set[int], bool]:
        """Returns (entry nodes, exit nodes, transparent): the regions that
        may run first, the regions that may have completed last, and whether
        control can pass through without completing any region."""
        if isinstance(s, ast.Seq):
            e1, x1, t1 = self.walk(s.first, pi, func, path + ("first",))
            e2, x2, t2 = self.walk(s.second, pi, func, path + ("second",))
            self.link(x1, e2)
            entries = e1 | (e2 if t1 else set())
            exits = x2 | (x1 if t2 else set())
            return entries, exits, t1 and t2
        if isinstance(s, (ast.Decl, ast.Alloc)):
            return self.walk(s.body, pi, func, path + ("body",))
        if isinstance(s, ast.Group):
            inner = Perspective(pi.level, pi.count // s.q) if s.q >= 1 and \
                pi.count % s.q == 0 else pi
            return self.walk(s.body, inner, func, path + ("body",))
        if isinstance(s, ast.Destruct):
            inner = destruct(pi, self.program.machine) or pi
            return self.walk(s.body, inner, func, path + ("body",))
        if isinstance(s, ast.If):
            e1, x1, t1 = self.walk(s.then, pi, func, path + ("then",))
            e2, x2, t2 = self.walk(s.els, pi, func, path + ("els",))
            return e1 | e2, x1 | x2, t1 or t2
        if isinstance(s, ast.While):
            eb, xb, tb = self.walk(s.body, pi, func, path + ("body",))
            self.link(xb, eb, back=True)
            return eb, xb, True
        if isinstance(s, ast.Split):
            e1, x1, t1 = self.walk(s.left, Perspective(pi.level, s.n1), func,
                                   path + ("left",))
            e2, x2, t2 = self.walk(s.right, Perspective(pi.level, s.n2), func,
                                   path + ("right",))
            return e1 | e2, x1 | x2, t1 or t2
        if isinstance(s, ast.REGION_STMTS):
            return self.region(s, pi, func, path)
        return set(), set(), True

    def region(self, s: ast.Stmt, pi: Perspective, func: str,
               path: Tuple[str, ...]) -> Tuple[Set[int], Set[int], bool]:
        nid = len(self.nodes)
        site = s.site or f"{s.src}->{s.dst}@{nid}"
        chain_dsts = {s.dst}
        stmt, stmt_pi, stmt_path = s, pi, path
        while True:
            body_pi = self._body_persp(stmt, stmt_pi)
            found = self._chain_next(stmt.body, s.site, body_pi,
                                     stmt_path + ("body",))
            if found is None:
                body, body_path = stmt.body, stmt_path + ("body",)
                break
            stmt, stmt_path, stmt_pi = found
            chain_dsts.add(stmt.dst)
        node = DcfgNode(nid, site, func, s.src, chain_dsts, READ, stmt_pi, path)
        self.nodes.append(node)
        be, bx, bt = self.walk(body, body_pi, func, body_path)
        node.kind = WRITE if self._writes(body, set(chain_dsts)) else READ
        # the enclosing region completes after everything inside it
        return {nid} | be, {nid}, False

    def _chain_next(self, body: ast.Stmt, site: str, pi: Perspective,
                    path: Tuple[str, ...]):
        if not site:
            return None
        cur, cur_path, cur_pi = body, path, pi
        while isinstance(cur, ast.Destruct):
            cur_pi = destruct(cur_pi, self.program.machine) or cur_pi
            cur_path = cur_path + ("body",)
            cur = cur.body
        if isinstance(cur, ast.REGION_STMTS) and cur.site == site:
            return cur, cur_path, cur_pi
        return None

    def _body_persp(self, s: ast.Stmt, pi: Perspective) -> Perspective:
        if isinstance(s, ast.Claim):
            return Perspective(pi.level, s.count)
        return pi

    def _writes(self, s: ast.Stmt, names: Set[str]) -> bool:
        def base(e) -> Optional[str]:
            while isinstance(e, ast.Bop):
                e = e.left
            return e.name if isinstance(e, ast.Var) else None

        if isinstance(s, ast.ArrAssn):
            return base(s.arr) in names
        if isinstance(s, (ast.Memcpy, ast.AsyncMemcpy)):
            return s.dst in names
        if isinstance(s, ast.Call):
            f = self._func(s.fname)
            for arg, param in zip(s.args, f.params if f else ()):
                if base(arg) in names:
                    pty = param[2]
                    if not (isinstance(pty, ast.ArrayType) and pty.const):
                        return True
            return False
        if isinstance(s, ast.REGION_STMTS):
            inner = names | ({s.dst} if s.src in names else set())
            return self._writes(s.body, inner)
        return any(self._writes(child, names) for _, child in _kids(s))

    def _func(self, name: str) -> Optional[ast.FuncDef]:
        from .intrinsics import INTRINSICS

        for f in INTRINSICS:
            if f.name == name:
                return f
        return self.program.function(name)


def build_dcfg(program: ast.Program) -> DcfgGraph:
    return _GraphBuilder(program).build()


# ---------------------------------------------------------------------------
# Insertion rules


@dataclass
class SyncPoint:
    pair: int
    node: int
    site: str
    kind: str                      # wait | arrive
    point: ProgramPoint
    primitive: str                 # SyncThreads | SyncWarp | SyncSplitBarrier
    moved_from: Optional[ProgramPoint] = None

    def to_dict(self) -> dict:
        return {
            "site": self.site,
            "kind": self.kind,
            "primitive": self.primitive,
            "moved_from": list(self.moved_from) if self.moved_from else None,
            "moved_to": list(self.point),
        }


@dataclass
class SyncPlan:
    points: List[SyncPoint]
    graph: DcfgGraph

    def waits(self) -> List[SyncPoint]:
        return [p for p in self.points if p.kind == "wait"]

    def to_json_list(self) -> List[dict]:
        return [pt.to_dict() for pt in self.points]


def _primitive(persp: Perspective) -> str:
    if persp == BLOCK1:
        return "SyncThreads"
    if persp == Perspective(Level.THREAD, 32):
        return "SyncWarp"
    return "SyncSplitBarrier"


def needs_sync(graph: DcfgGraph, nid: int) -> bool:
    """The two insertion rules, applied to one node's incoming edges."""
    parents = graph.parents(nid)
    if not parents:
        return False
    node = graph.node(nid)
    if node.kind == WRITE:
        return True
    return any(graph.node(p).kind == WRITE for p in parents)


def insert_sync_points(graph: DcfgGraph) -> SyncPlan:
    points: List[SyncPoint] = []
    pair = 0
    for node in graph.nodes:
        if not needs_sync(graph, node.id):
            continue
        parents = graph.parents(node.id)
        straight = [p for p in parents if (p, node.id) not in graph.backedges]
        anchor = graph.node(max(straight) if straight else max(parents))
        prim = _primitive(node.persp)
        points.append(SyncPoint(pair, node.id, node.site, "wait",
                                (node.func, node.path, "before"), prim))
        points.append(SyncPoint(pair, anchor.id, anchor.site, "arrive",
                                (anchor.func, anchor.path, "after"), prim))
        pair += 1
    return SyncPlan(points, graph)


def naive_plan(graph: DcfgGraph) -> SyncPlan:
    """A full barrier directly after every region: correct but slow."""
    points: List[SyncPoint] = []
    for node in graph.nodes:
        prim = _primitive(node.persp)
        here = (node.func, node.path, "after")
        points.append(SyncPoint(node.id, node.id, node.site, "arrive", here, prim))
        points.append(SyncPoint(node.id, node.id, node.site, "wait", here, prim))
    return SyncPlan(points, graph)


# ---------------------------------------------------------------------------
# Use analysis and motion passes


def _stmt_at(s: ast.Stmt, path) -> ast.Stmt:
    for attr in path:
        s = getattr(s, attr)
    return s


def _root_body(program: ast.Program, func: str) -> ast.Stmt:
    if func == "main":
        return program.entry
    f = program.function(func)
    return f.body if f else ast.Skip()


def _expr_uses(e, names: Set[str]) -> bool:
    if e is None:
        return False
    if isinstance(e, ast.Var):
        return e.name in names
    if isinstance(e, ast.ArrAccess):
        return _expr_uses(e.arr, names) or _expr_uses(e.idx, names)
    if isinstance(e, (ast.Bop, ast.Cmp)):
        return _expr_uses(e.left, names) or _expr_uses(e.right, names)
    return False


def _uses_array(s: ast.Stmt, names: Set[str]) -> bool:
    if isinstance(s, ast.REGION_STMTS):
        if s.src in names:
            return True
        return _uses_array(s.body, names)
    if isinstance(s, (ast.Memcpy, ast.AsyncMemcpy)):
        return s.dst in names or s.src in names
    if isinstance(s, ast.Call):
        return any(_expr_uses(a, names) for a in s.args)
    for attr in ("cond", "init", "value", "arr", "idx"):
        if _expr_uses(getattr(s, attr, None), names):
            return True
    return any(_uses_array(child, names) for _, child in _kids(s))


def _synced_names(plan: SyncPlan, pair: int) -> Set[str]:
    names: Set[str] = set()
    for pt in plan.points:
        if pt.pair != pair:
            continue
        node = plan.graph.node(pt.node)
        names.add(node.variable)
        names |= node.dsts
    return names


def _path_order(root: ast.Stmt, path) -> int:
    """Pre-order index of the statement at path, for motion monotonicity."""
    counter = 0
    target = tuple(path)

    def visit(s: ast.Stmt, here) -> Optional[int]:
        nonlocal counter
        counter += 1
        mine = counter
        if here == target:
            return mine
        for attr, child in _kids(s):
            got = visit(child, here + (attr,))
            if got is not None:
                return got
        return None

    return visit(root, ()) or 0


def wait_motion(plan: SyncPlan, program: ast.Program) -> SyncPlan:
    """Push each wait forward to the first use of the synchronized data."""
    new_points: List[SyncPoint] = []
    arrives = {pt.pair: pt for pt in plan.points if pt.kind == "arrive"}
    for pt in plan.points:
        if pt.kind != "wait":
            new_points.append(pt)
            continue
        names = _synced_names(plan, pt.pair)
        func, path, where = pt.point
        root = _root_body(program, func)
        new_path, new_where = _sink(root, tuple(path), where, names)
        moved = (func, new_path, new_where)
        arrive = arrives.get(pt.pair)
        if arrive and arrive.point[0] == func:
            if _path_order(root, new_path) < _path_order(root, arrive.point[1]):
                moved = pt.point  # never move a wait above its arrive
        if moved != pt.point:
            new_points.append(replace(pt, point=moved, moved_from=pt.point))
        else:
            new_points.append(pt)
    return SyncPlan(new_points, plan.graph)


def _spine_head(root: ast.Stmt, path: Tuple[str, ...]) -> Tuple[str, ...]:
    while isinstance(_stmt_at(root, path), ast.Seq):
        path = path + ("first",)
    return path


def _sink(root: ast.Stmt, path: Tuple[str, ...], where: str,
          names: Set[str]) -> Tuple[Tuple[str, ...], str]:
    """Advance a point past statements that do not touch the given arrays,
    stopping before the first statement that does (on every path). A
    declaration line whose initializer does not touch them is transparent:
    the point sinks into its scope."""
    for _ in range(100_000):
        if where == "before":
            path = _spine_head(root, path)
            target = _stmt_at(root, path)
            if isinstance(target, (ast.Decl, ast.Alloc)):
                init = getattr(target, "init", None)
                if not _expr_uses(init, names):
                    path = path + ("body",)
                    continue
                return path, "before"
            if _uses_array(target, names):
                return path, "before"
            where = "after"
            continue
        # move to the next statement in the enclosing sequence spine
        if path and path[-1] == "first":
            path, where = path[:-1] + ("second",), "before"
            continue
        # end of this block: stay here
        return path, "after"
    return path, where


def arrive_motion(plan: SyncPlan, program: ast.Program) -> SyncPlan:
    """Hoist each arrive to just after the last access inside its region."""
    new_points: List[SyncPoint] = []
    waits = {pt.pair: pt for pt in plan.points if pt.kind == "wait"}
    for pt in plan.points:
        if pt.kind != "arrive":
            new_points.append(pt)
            continue
        node = plan.graph.node(pt.node)
        names = {node.variable} | node.dsts
        func, path, where = pt.point
        root = _root_body(program, func)
        region = _stmt_at(root, tuple(path))
        if _has_claim(region):
            # masked units never reach points inside a claim's body
            new_points.append(pt)
            continue
        last = _last_use_path(root, region, names, tuple(path))
        if last is None or last == tuple(path):
            new_points.append(pt)
            continue
        wait = waits.get(pt.pair)
        if wait and wait.point[0] == func:
            if _path_order(root, last) > _path_order(root, wait.point[1]):
                new_points.append(pt)  # never move an arrive below its wait
                continue
        new_points.append(replace(pt, point=(func, last, "after"),
                                  moved_from=pt.point))
    return SyncPlan(new_points, plan.graph)


def _has_claim(s: ast.Stmt) -> bool:
    if isinstance(s, ast.Claim):
        return True
    return any(_has_claim(child) for _, child in _kids(s))


def _last_use_path(root: ast.Stmt, region: ast.Stmt, names: Set[str],
                   base_path: Tuple[str, ...]) -> Optional[Tuple[str, ...]]:
    if not isinstance(region, ast.REGION_STMTS):
        return None
    cur, cur_path = region.body, base_path + ("body",)
    last: Optional[Tuple[str, ...]] = None
    while True:
        if isinstance(cur, ast.Seq):
            if _uses_array(cur.second, names):
                cur, cur_path = cur.second, cur_path + ("second",)
                continue
            if _uses_array(cur.first, names):
                return cur_path + ("first",)
            return last
        if _uses_array(cur, names):
            return cur_path
        return last


# ---------------------------------------------------------------------------
# Verification


@dataclass
class Counterexample:
    message: str
    pair: int
    site: str


@dataclass
class VerifyResult:
    ok: bool
    violations: List[Counterexample]
    plan_finals: Set[tuple]
    naive_finals: Set[tuple]

    @property
    def equivalent(self) -> bool:
        return self.plan_finals == self.naive_finals


def instrument(program: ast.Program, plan: SyncPlan) -> ast.Program:
    """Inject the plan's barriers as explicit counting-sync statements."""
    inserts: Dict[Tuple[str, Tuple[str, ...]], Dict[str, List[ast.Stmt]]] = {}
    for pt in plan.points:
        func, path, where = pt.point
        sem = _SYNC_SEM_BASE + pt.pair
        stmt = ast.SyncWait(sem) if pt.kind == "wait" else \
            ast.Seq(ast.SyncInit(sem), ast.SyncDec(sem))
        slot = inserts.setdefault((func, tuple(path)), {"before": [], "after": []})
        slot[where].append(stmt)

    def rebuild(s: ast.Stmt, func: str, path: Tuple[str, ...]) -> ast.Stmt:
        kids = {attr: rebuild(child, func, path + (attr,))
                for attr, child in _kids(s)}
        out = replace(s, **kids) if kids else s
        slot = inserts.get((func, path))
        if slot:
            for extra in reversed(slot["before"]):
                out = ast.Seq(extra, out)
            for extra in slot["after"]:
                out = ast.Seq(out, extra)
        return out

    funcs = tuple(replace(f, body=rebuild(f.body, f.name, ()))
                  for f in program.functions)
    entry = rebuild(program.entry, "main", ())
    return replace(program, functions=funcs, entry=entry)


def _contains_sync(s: ast.Stmt, cls, sem: int) -> bool:
    if isinstance(s, cls) and s.sem == sem:
        return True
    return any(_contains_sync(child, cls, sem) for _, child in _kids(s))


def _write_base(s: ast.Stmt) -> Optional[str]:
    if not isinstance(s, ast.ArrAssn):
        return None
    e = s.arr
    while isinstance(e, ast.Bop):
        e = e.left
    return e.name if isinstance(e, ast.Var) else None


def _pair_guards(plan: SyncPlan) -> Dict[int, Tuple[int, str, Set[str], Perspective]]:
    out: Dict[int, Tuple[int, str, Set[str], Perspective]] = {}
    for pt in plan.points:
        if pt.kind != "arrive":
            continue
        node = plan.graph.node(pt.node)
        sem = _SYNC_SEM_BASE + pt.pair
        names = {node.variable} | node.dsts
        prev = out.get(pt.pair)
        if prev:
            names |= prev[2]
        out[pt.pair] = (sem, node.site, names, node.persp)
    return out


def _slot_of(t: int, b: int, persp: Perspective, machine) -> int:
    """Counter slot a unit decrements for a barrier at this perspective,
    assuming the canonical destruct/group chain."""
    if persp.level == Level.THREAD:
        return (t % machine.threads_per_block) % persp.count
    if persp.level == Level.BLOCK:
        return (b % machine.blocks_per_grid) % persp.count
    return 0


def verify_plan(plan: SyncPlan, program: ast.Program,
                step_bound: int) -> VerifyResult:
    """Exhaustively execute with the plan's barriers standing in for the
    automatic region envelopes. A guarded write landing after another unit
    already passed the pair's wait is a happens-before violation. Reachable
    final global memories must match the naive plan's.

    Assumes every unit participates in every pair, which holds for the
    guarded micro corpus (loop free, mask free).
    """
    violations: List[Counterexample] = []
    finals: Dict[str, Set[tuple]] = {}
    for label, the_plan in (("plan", plan), ("naive", naive_plan(plan.graph))):
        prog = instrument(program, the_plan)
        pair_info = _pair_guards(the_plan)

        def watch(pre: mach.MachineState, rec: mach.StepRecord,
                  post: mach.MachineState) -> Optional[str]:
            if rec.rule != "arr_assn":
                return None
            target = _write_base(rec.stmt)
            for pair, (sem, site, names, persp) in pair_info.items():
                if target not in names:
                    continue
                writer_res = pre.pool[(rec.t, rec.b)][0]
                if not _contains_sync(writer_res, ast.SyncDec, sem):
                    continue  # the writer has arrived; this is a later phase
                slot = _slot_of(rec.t, rec.b, persp, program.machine)
                for (t2, b2), (res, _m) in pre.pool.items():
                    if (t2, b2) == (rec.t, rec.b):
                        continue
                    if _slot_of(t2, b2, persp, program.machine) != slot:
                        continue  # split barriers order only slot mates
                    if not _contains_sync(res, ast.SyncWait, sem):
                        violations.append(Counterexample(
                            f"{label}: write to {target!r} after a unit "
                            f"passed the wait for {site}", pair, site))
                        return "HBViolation"
            return None

        result = mach.enumerate_schedules(prog, step_bound, on_state=watch,
                                          auto_sync=False)
        if mach.STUCK in result.outcomes:
            detail = result.stuck[0].detail if result.stuck else ""
            violations.append(Counterexample(f"{label}: stuck: {detail}", -1, ""))
        finals[label] = result.final_globals
    ok = not violations and finals["plan"] == finals["naive"]
    return VerifyResult(ok, violations, finals["plan"], finals["naive"])
