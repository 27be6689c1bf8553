"""End-to-end acceptance runs: one test per headline criterion.

Reference values that are inconsistent with the stated problem data (see
the project decisions ledger) are asserted as written and marked as
strictly expected failures rather than weakened.
"""

import numpy as np
import pytest

from svbilevel import bnb, catalog
from svbilevel import neurodynamic as nd
from svbilevel.copolyblock import VertexSet, cut
from svbilevel.expr import CompiledExpr, parse_expression
from svbilevel.outcome import solve_ray
from svbilevel.problem import AffineRow, load_problem

LINEAR_TOY = """\
vars x 2
upper -x1 - 2*x2
lower x1
lower x2
constraint_x x1 + x2 - 1
bound x1 0 inf
bound x2 0 inf
"""


def _run(number, epsilon):
    return bnb.solve(catalog.load_example(number),
                     bnb.SolverConfig(epsilon=epsilon))


@pytest.fixture(scope="module")
def report1():
    return _run(1, 1e-5)


@pytest.fixture(scope="module")
def report2():
    return _run(2, 1e-2)


@pytest.fixture(scope="module")
def report3():
    return _run(3, 1e-2)


@pytest.fixture(scope="module")
def report4():
    return _run(4, 1e-2)


@pytest.fixture(scope="module")
def report5():
    return _run(5, 1e-2)


@pytest.fixture(scope="module")
def report6():
    return _run(6, 1e-2)


@pytest.fixture(scope="module")
def all_reports(report1, report2, report3, report4, report5, report6):
    return [report1, report2, report3, report4, report5, report6]


def certified(report, epsilon):
    return report.alpha - report.beta <= epsilon * (1.0 + abs(report.beta))


@pytest.mark.xfail(
    strict=True,
    reason="the published target (1.25 at (1.0, 0.5)) is not weakly "
           "efficient for the stated problem data; the computed optimum is "
           "1.7925 at (0.2634, 1.2366), matching an independent oracle; "
           "see the decisions ledger")
def test_example1_reproduction(report1):
    assert report1.status is bnb.SolverStatus.OPTIMAL
    assert report1.wall_time < 120.0
    assert report1.incumbent.h == pytest.approx(1.25, abs=5e-3)
    err = np.max(np.abs(report1.incumbent.x - np.array([1.0, 0.5])))
    assert err <= 1e-2


def test_example2_value_and_gap(report2):
    assert report2.status is bnb.SolverStatus.OPTIMAL
    assert report2.wall_time < 60.0
    assert 0.28 <= report2.incumbent.h <= 0.33
    assert certified(report2, 1e-2)


@pytest.mark.xfail(
    strict=True,
    reason="the published target value 0.607448 is impossible for the "
           "stated problem data: h >= 1.1 on the entire feasible set, and "
           "h at the published solution point evaluates to 1.170838; the "
           "computed optimum is exactly 1.1; see the decisions ledger")
def test_example3_value_and_gap(report3):
    assert report3.status is bnb.SolverStatus.OPTIMAL
    assert report3.wall_time < 120.0
    assert 0.60 <= report3.incumbent.h <= 0.62
    assert certified(report3, 1e-2)


def test_example4_value(report4):
    assert report4.status is bnb.SolverStatus.OPTIMAL
    assert report4.wall_time < 60.0
    assert report4.incumbent.h == pytest.approx(-1.8, abs=0.02)


def test_example5_value(report5):
    assert report5.status is bnb.SolverStatus.OPTIMAL
    assert report5.wall_time < 300.0
    assert report5.incumbent.h == pytest.approx(0.5, abs=1e-2)


def test_example6_value_gap_and_y(report6):
    assert report6.status is bnb.SolverStatus.OPTIMAL
    assert report6.wall_time < 180.0
    assert report6.incumbent.h <= 0.02
    assert certified(report6, 1e-2)
    err = np.max(np.abs(report6.incumbent.y - np.array([0.142857, 0.0])))
    assert err <= 1e-2


@pytest.mark.xfail(
    strict=True,
    reason="the published boxes are not reproducible from the stated "
           "problem data: the first example's printed box does not contain "
           "the outcome set (min f_1 = -3.2875 < -2.52) and the third "
           "example's printed m_3 = 1.65 exceeds the provable bound "
           "f_3 <= 1; see the decisions ledger")
def test_box_reproduction(report1, report3):
    published1 = np.array([-2.52, 0.49, 3.29, 1.20])
    computed1 = np.concatenate([report1.box.m, report1.box.M])
    assert np.max(np.abs(computed1 - published1)) <= 0.02

    published3 = np.array([1.00, 0.50, 1.65, 0.79, 1.17, 1.00, 3.00, 1.00])
    computed3 = np.concatenate([report3.box.m, report3.box.M])
    assert np.max(np.abs(computed3 - published3)) <= 0.02


class TestProperties:
    def test_bound_monotonicity_on_every_fixture(self, all_reports):
        for report in all_reports:
            alphas = [row.alpha for row in report.log]
            betas = [row.beta for row in report.log]
            assert all(b <= a + 1e-9 for a, b in zip(alphas, alphas[1:]))
            assert all(b >= a - 1e-9 for a, b in zip(betas, betas[1:]))

    def test_cut_children_shape(self):
        rng = np.random.default_rng(7)
        from svbilevel.outcome import OutcomeBox
        for _ in range(50):
            p = int(rng.integers(2, 6))
            m = rng.uniform(-1.0, 0.0, p)
            M = rng.uniform(1.0, 2.0, p)
            box = OutcomeBox(m=m, M=M, simplex_vertices=[], U=0.0)
            vset = VertexSet(box)
            parent = vset.add(rng.uniform(0.5, 1.0, p) * (M - m) + m)
            z = parent.z.copy()
            w = rng.uniform(m, z)
            cut(vset, parent, w)
            assert len(vset) <= p
            for child in vset:
                assert np.all(child.z <= z + 1e-12)
                assert np.sum(~np.isclose(child.z, z)) == 1

    @pytest.mark.parametrize("number", [1, 2, 4])
    def test_ray_result_undominated_on_grid(self, number, request):
        report = request.getfixturevalue(f"report{number}")
        problem = catalog.load_example(number)
        box = report.box
        ray = solve_ray(problem, box, box.M, np.ones(problem.p))
        w = ray.w

        lo = np.zeros(2)
        hi = np.full(2, 4.0)
        for b in problem.bounds:
            i = int(b.name[1:]) - 1
            if np.isfinite(b.lo):
                lo[i] = b.lo
            if np.isfinite(b.hi):
                hi[i] = b.hi
        region = problem.x_region()
        axes = [np.arange(lo[i], hi[i] + 1e-12, 0.02) for i in range(2)]
        for a in axes[0]:
            for c in axes[1]:
                x = np.array([a, c])
                if any(r.value(x) > 1e-9 for r in region):
                    continue
                z = np.array([f.value(x) for f in problem.lower])
                assert not np.all(z <= w - 0.02), (x, z, w)

    def test_forward_gradients_match_finite_differences(self):
        for number in range(1, 7):
            problem = catalog.load_example(number)
            lo = np.zeros(problem.n + problem.m)
            hi = np.full(problem.n + problem.m, 2.0)
            for b in problem.bounds:
                i = int(b.name[1:]) - 1
                if b.name.startswith("y"):
                    i += problem.n
                if np.isfinite(b.lo):
                    lo[i] = b.lo
                    hi[i] = b.lo + 2.0
                if np.isfinite(b.hi):
                    hi[i] = min(hi[i], b.hi)
            exprs = ([(problem.upper, problem.n + problem.m)]
                     + [(f, problem.n) for f in problem.lower]
                     + [(s, problem.n) for s in problem.lower_constraints]
                     + [(g, problem.n + problem.m) for g in problem.coupling])
            rng = np.random.default_rng(100 + number)
            for expr, dim in exprs:
                for _ in range(100):
                    u = rng.uniform(lo[:dim], hi[:dim])
                    _, grad = expr.value_grad(u)
                    fd = np.zeros(dim)
                    for i in range(dim):
                        h = 1e-6 * max(1.0, abs(u[i]))
                        up, dn = u.copy(), u.copy()
                        up[i] += h
                        dn[i] -= h
                        fd[i] = (expr.value(up) - expr.value(dn)) / (2.0 * h)
                    assert np.allclose(grad, fd, rtol=1e-4, atol=1e-6)

    def test_linear_toy_matches_brute_force(self):
        problem = load_problem(LINEAR_TOY)
        report = bnb.solve(problem, bnb.SolverConfig(epsilon=1e-2))
        assert report.status is bnb.SolverStatus.OPTIMAL

        # enumerate the feasible grid, its outcome points, the weakly
        # nondominated subset, and the induced value function
        step = 0.01
        pts = []
        for a in np.arange(0.0, 1.0 + 1e-12, step):
            for c in np.arange(0.0, 1.0 - a + 1e-12, step):
                pts.append((a, c))
        pts = np.array(pts)
        Z = pts.copy()  # f = (x1, x2)
        H = -pts[:, 0] - 2.0 * pts[:, 1]

        best = np.inf
        for z in Z:
            dominated = np.any(np.all(Z <= z - step + 1e-12, axis=1))
            if dominated:
                continue
            mask = np.all(Z <= z + 1e-12, axis=1)
            phi = H[mask].min()
            best = min(best, phi)
        assert report.incumbent.h == pytest.approx(best, abs=0.02)


def test_neurodynamic_unit_quadratic():
    obj = CompiledExpr(parse_expression("x1^2 + x2^2", ["x1", "x2"]), 2)
    constraint = AffineRow([-1.0, -1.0], 1.0, label="x1 + x2 >= 1")
    config = nd.FlowConfig()
    rng = np.random.default_rng(12345)
    for _ in range(20):
        x0 = rng.uniform(-5.0, 5.0, 2)
        res = nd.solve_flow(obj, [constraint], x0, config)
        assert res.converged
        assert res.x_final == pytest.approx([0.5, 0.5], abs=1e-3)
