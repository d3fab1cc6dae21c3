"""Randomized identity and invariant suite over seeded trees and forests."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from ..forest import ForestConfig, grow_forest, oob_mse
from ..noising import NoisingMode, build_noised_predictor, sample_terminal_nodes
from ..subtree import (estimate_pi, exact_pi_uniform, maximal_subtrees, node_mse, paired_maximal_subtrees)
from ..tree import Dataset, GrowConfig, Tree, grow_tree, predict, rectangle_indicator_tree
from ..vimp import (SignalSpec, association_limit, delta_exact, delta_formula, delta_limit, delta_mc,
                    forest_limit_quantities, kept_regions_direct)


@dataclass
class CheckResult:
    name: str
    passed: bool = True
    worst: float = 0.0
    tolerance: float = 0.0
    cases: int = 0
    detail: str = ""

    def record(self, residual: float, ok: bool, detail: str = ""):
        self.cases += 1
        if residual > self.worst or (not ok and self.passed):
            self.worst = max(self.worst, residual)
        if not ok and self.passed:
            self.passed = False
            self.detail = detail


@dataclass
class CheckReport:
    results: dict[str, CheckResult] = field(default_factory=dict)

    def get(self, name: str, tolerance: float = 0.0) -> CheckResult:
        if name not in self.results:
            self.results[name] = CheckResult(name, tolerance=tolerance)
        return self.results[name]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results.values())

    def lines(self) -> list[str]:
        out = []
        for r in self.results.values():
            status = "PASS" if r.passed else "FAIL"
            line = f"{status} {r.name}: cases={r.cases} worst={r.worst:.3e} tol={r.tolerance:.1e}"
            out.append(line + (f" ({r.detail})" if r.detail else ""))
        return out


def random_problem(rng: np.random.Generator, n_range=(50, 500), d_range=(2, 8)) -> Dataset:
    """Uniform covariates with a few interacting effects plus noise."""
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    d = int(rng.integers(d_range[0], d_range[1] + 1))
    X = rng.random((n, d))
    coef = rng.normal(0.0, 3.0, size=d)
    y = X @ coef + 4.0 * np.sin(np.pi * X[:, 0] * X[:, 1]) + rng.normal(0.0, 1.0, size=n)
    if rng.random() < 0.3:
        y = np.round(y)
    return Dataset(X, y)


def random_tree(rng: np.random.Generator, **kw) -> tuple[Tree, Dataset]:
    data = random_problem(rng, **kw)
    cfg = GrowConfig(min_node_size=int(rng.integers(1, 6)), mtry=int(rng.integers(1, data.d + 1)))
    return grow_tree(data, cfg, rng), data


def _cell_boxes(tree: Tree):
    boxes = {}
    stack = [(tree.root, np.full(tree.d, -np.inf), np.full(tree.d, np.inf))]
    while stack:
        nid, lo, hi = stack.pop()
        if tree.var[nid] < 0:
            boxes[int(tree.label[nid])] = (lo, hi)
            continue
        j, c = tree.var[nid], tree.cut[nid]
        lhi, rlo = hi.copy(), lo.copy()
        lhi[j] = min(hi[j], c)
        rlo[j] = max(lo[j], c)
        stack.append((int(tree.left[nid]), lo, lhi))
        stack.append((int(tree.right[nid]), rlo, hi))
    return boxes


def check_tree_invariants(report: CheckReport, tree: Tree, data: Dataset, rng: np.random.Generator):
    # partition: every point lies in exactly one cell (lo, hi], and it is the cell the tree picks
    res = report.get("partition")
    pts = np.vstack([data.X, rng.random((200, data.d)) * 1.2 - 0.1])
    boxes = _cell_boxes(tree)
    hits = np.zeros(pts.shape[0], np.int64)
    owner = np.zeros(pts.shape[0], np.int64)
    for m, (lo, hi) in boxes.items():
        inside = np.all((pts > lo) & (pts <= hi), axis=1)
        hits += inside
        owner[inside] = m
    labels = tree.label[tree.apply(pts)]
    bad = int(np.sum(hits != 1) + np.sum(owner != labels))
    res.record(float(bad), bad == 0, f"{bad} points not in exactly one matching cell")

    res = report.get("training_mean", 1e-12)
    labels = tree.label[tree.apply(data.X)]
    worst, ok = 0.0, True
    for m in range(1, tree.num_terminals + 1):
        ys = data.y[labels == m]
        nid = tree.terminal_ids[m - 1]
        err = abs(tree.value[nid] - ys.mean()) / max(1.0, abs(ys.mean())) if ys.size else np.inf
        worst = max(worst, err)
        ok &= ys.size == tree.count[nid] and err <= 1e-12
    res.record(worst, bool(ok), "terminal value differs from training mean")

    res = report.get("monotone_impurity")
    node_rows = {tree.root: np.arange(data.n)}
    ok = True
    for nid in tree.preorder():
        rows = node_rows.pop(nid)
        if tree.var[nid] < 0:
            continue
        go_left = data.X[rows, tree.var[nid]] <= tree.cut[nid]
        lrows, rrows = rows[go_left], rows[~go_left]
        sse = lambda r: float(((data.y[r] - data.y[r].mean()) ** 2).sum())  # noqa: E731
        ok &= sse(lrows) + sse(rrows) < sse(rows)
        ok &= bool(np.isin(tree.cut[nid], data.X[rows, tree.var[nid]]))
        node_rows[int(tree.left[nid])] = lrows
        node_rows[int(tree.right[nid])] = rrows
    res.record(0.0 if ok else 1.0, bool(ok), "a split did not reduce SSE or cut is not an observed value")

    res = report.get("pi_sum", 1e-12)
    err = abs(estimate_pi(tree, data).sum() - 1.0)
    lo, hi = data.X.min(axis=0) - 1e-9, data.X.max(axis=0) + 1e-9
    err = max(err, abs(exact_pi_uniform(tree, np.column_stack([lo, hi])).sum() - 1.0))
    res.record(err, err <= 1e-12, "visit probabilities do not sum to 1")


def check_subtrees(report: CheckReport, tree: Tree, data: Dataset, theta0_offset: float = 0.0):
    pi = estimate_pi(tree, data)
    fitted = tree.terminal_values
    mass = report.get("mass_law")
    theta = report.get("theta0_nonnegative")
    cor = report.get("limit_identity", 1e-10)
    for v in range(tree.d):
        subs = maximal_subtrees(tree, v)
        for st in subs:
            total = float(np.sum(st.masses))
            ok = total == 1.0 and bool(np.all(st.depths >= 1))
            mass.record(abs(total - 1.0), ok, f"masses sum to {total!r}")
            th = node_mse(st, fitted, pi)
            vals = fitted[st.terminals - 1]
            constant = bool(np.all(vals == vals[0]))
            ok = th >= 0.0 and (constant == (th == 0.0) or not np.all(pi[st.terminals - 1] > 0))
            theta.record(max(0.0, -th), ok, f"theta0={th!r} for subtree at node {st.root}")
        formula = delta_formula(tree, v, SignalSpec.fitted(), pi).delta
        limit = delta_limit(tree, v, fitted, pi).delta + theta0_offset * len(subs)
        resid = abs(formula - limit) / (1.0 + abs(limit))
        cor.record(resid, resid < 1e-10, f"variable {v}: formula {formula!r} vs limit {limit!r}")


def check_pairs(report: CheckReport, tree: Tree, data: Dataset):
    pi = estimate_pi(tree, data)
    fitted = tree.terminal_values
    sign = report.get("association_sign")
    dec = report.get("association_decomposition", 1e-10)
    for v, w in itertools.combinations(range(tree.d), 2):
        a = association_limit(tree, v, w, fitted, pi)
        pairs = paired_maximal_subtrees(tree, v, w)
        nested = bool(pairs.dropped)
        dropped_theta = [node_mse(st, fitted, pi) for st in pairs.dropped]
        ok = a <= 0.0 and ((a == 0.0) == (not nested or all(t == 0.0 for t in dropped_theta)))
        sign.record(max(0.0, a), ok, f"pair ({v},{w}): limit {a!r}, nested={nested}")
        kept = sum(node_mse(st, fitted, pi) for st in kept_regions_direct(tree, v, w))
        lhs = kept + abs(a)
        rhs = delta_limit(tree, v, fitted, pi).delta + delta_limit(tree, w, fitted, pi).delta
        resid = abs(lhs - rhs) / (1.0 + abs(rhs))
        dec.record(resid, resid < 1e-10, f"pair ({v},{w}): {lhs!r} vs {rhs!r}")


def noised_case(tree: Tree, data: Dataset, rng: np.random.Generator):
    """A (v, x) with x inside a maximal v-subtree, or None if the tree has no split."""
    used = sorted(set(int(v) for v in tree.var[tree.var >= 0]))
    if not used:
        return None
    v = int(rng.choice(used))
    npred = build_noised_predictor(tree, v)
    labels = tree.label[tree.apply(data.X)]
    inside = np.flatnonzero(npred.region_of[labels - 1] >= 0)
    x = data.X[int(rng.choice(inside))]
    return v, x, npred


def check_noised_paths(report: CheckReport, tree: Tree, data: Dataset, rng: np.random.Generator,
                 draws: int = 20000, mc_replicates: int = 400):
    case = noised_case(tree, data, rng)
    if case is None:
        return
    v, x, npred = case
    res = report.get("path_atoms", 4.0 / np.sqrt(draws))
    k = npred.region_of[tree.label[tree.apply(x)][0] - 1]
    pd = npred.distributions[k]
    nodes = sample_terminal_nodes(tree, x, v, NoisingMode.FULL_RANDOM, rng, draws)[:, 0]
    freq = np.bincount(tree.label[nodes] - 1, minlength=tree.num_terminals)[pd.labels - 1] / draws
    err = float(np.max(np.abs(freq - pd.masses)))
    outside = draws - int(np.sum(np.isin(tree.label[nodes], pd.labels)))
    res.record(err, err <= 4.0 / np.sqrt(draws) and outside == 0, f"atom frequency off by {err:.3g}")

    res = report.get("delta_mc_vs_exact", 4.0)
    test = data.subset(rng.choice(data.n, size=min(30, data.n), replace=False))
    exact = delta_exact(tree, v, test).delta
    mc = delta_mc(tree, v, test, mc_replicates, NoisingMode.FULL_RANDOM, rng)
    z = abs(mc.delta - exact) / mc.std_error if mc.std_error > 0 else abs(mc.delta - exact) * np.inf
    z = 0.0 if np.isnan(z) else z
    res.record(z, z <= 4.0, f"MC {mc.delta!r} +- {mc.std_error!r} vs exact {exact!r}")

    res = report.get("conditional_formula_identity", 1e-10)
    labels = tree.label[tree.apply(test.X)] - 1
    sums = np.bincount(labels, weights=test.y, minlength=tree.num_terminals)
    counts = np.bincount(labels, minlength=tree.num_terminals)
    a0 = np.where(counts > 0, sums / np.maximum(counts, 1), tree.terminal_values)
    formula = delta_formula(tree, v, SignalSpec.explicit(a0), estimate_pi(tree, test)).delta
    resid = abs(formula - exact) / (1.0 + abs(exact))
    res.record(resid, resid < 1e-10, f"exact {exact!r} vs formula {formula!r}")


def check_jensen(report: CheckReport, rng: np.random.Generator):
    data = random_problem(rng, n_range=(50, 200), d_range=(2, 6))
    B = int(rng.integers(1, 21))
    forest = grow_forest(data, ForestConfig(num_trees=B, mtry=int(rng.integers(1, data.d + 1)), bootstrap=False,
                                            min_node_size=int(rng.integers(1, 6)), seed=int(rng.integers(2**32))))
    res = report.get("jensen_bound", 1e-12)
    for v in range(data.d):
        q = forest_limit_quantities(forest, v, data)
        slack = q.r_squared - q.jensen_bound
        ok = slack <= 1e-12 * (1.0 + abs(q.jensen_bound))
        if B == 1:
            ok &= abs(slack) <= 1e-10 * (1.0 + abs(q.jensen_bound))
        res.record(max(0.0, slack), bool(ok), f"B={B}, v={v}: {q.r_squared!r} > {q.jensen_bound!r}")


def check_rectangle(report: CheckReport, rng: np.random.Generator, d: int, points: int = 10_000):
    res = report.get("rectangle_construction")
    cuts = rng.random(d)
    tree = rectangle_indicator_tree(cuts)
    X = rng.random((points, d))
    direct = np.all(X <= cuts, axis=1).astype(np.float64)
    mismatches = int(np.sum(predict(tree, X) != direct))
    ok = mismatches == 0 and tree.num_terminals == d + 1
    res.record(float(mismatches), ok, f"d={d}: {mismatches} mismatches, {tree.num_terminals} terminals")


def check_determinism(report: CheckReport, data: Dataset, seed: int):
    res = report.get("determinism")
    cfg = GrowConfig(min_node_size=2, mtry=max(1, data.d // 2), seed=seed)
    same = grow_tree(data, cfg).structurally_equal(grow_tree(data, cfg))
    res.record(0.0 if same else 1.0, same, "same seed grew different trees")


def check_oob_coverage(report: CheckReport, rng: np.random.Generator, n: int = 100, num_trees: int = 1000):
    res = report.get("oob_coverage")
    data = random_problem(rng, n_range=(n, n), d_range=(3, 3))
    forest = grow_forest(data, ForestConfig(num_trees=num_trees, mtry=2, bootstrap=True, min_node_size=5,
                                            seed=int(rng.integers(2**32))))
    _, skipped = oob_mse(forest, data)
    res.record(float(skipped), skipped == 0, f"{skipped} rows never out of bag")


def run_theory_checks(seed: int = 0, trials: int = 100, *, theta0_offset: float = 0.0) -> CheckReport:
    """Run every identity/invariant check on ``trials`` random instances.

    ``theta0_offset`` is a test hook that corrupts the limit side of the
    fitted-limit identity comparison.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    report = CheckReport()
    root = np.random.SeedSequence(seed)
    for t, child in enumerate(root.spawn(trials)):
        rng = np.random.default_rng(child)
        tree, data = random_tree(rng)
        check_tree_invariants(report, tree, data, rng)
        check_subtrees(report, tree, data, theta0_offset)
        check_pairs(report, tree, data)
        check_noised_paths(report, tree, data, rng)
        check_jensen(report, rng)
        check_rectangle(report, rng, int(rng.integers(1, 11)))
        check_determinism(report, data, t)
    check_oob_coverage(report, np.random.default_rng(root.spawn(1)[0]))
    return report
