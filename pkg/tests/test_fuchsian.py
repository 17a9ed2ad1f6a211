import math

import numpy as np
import pytest

from covwalk import fuchsian as F
from covwalk import hyp2 as H

R2 = math.sqrt(2.0)


@pytest.fixture(scope="module")
def gamma2():
    return F.builtin_lattice("gamma2")


@pytest.fixture(scope="module")
def torus():
    return F.builtin_lattice("punctured_square_torus")


class TestWords:
    def test_parse_and_format(self):
        w = F.parse_word("A B^-1 g1^2")
        assert w == (("A", 1), ("B", -1), ("g1", 1), ("g1", 1))
        assert F.parse_word(F.word_str(w)) == w

    def test_inverse_and_reduce(self):
        w = F.parse_word("A B^-1")
        assert F.word_inverse(w) == (("B", 1), ("A", -1))
        assert F.free_reduce(F.word_concat(w, F.word_inverse(w))) == ()


class TestPresets:
    def test_gamma2_polygon(self, gamma2):
        pres, poly, cusps = gamma2
        assert abs(poly.area - 2 * math.pi) < 1e-6
        assert len(poly.sides) == 4
        finite = sorted(u for u in poly.ideal_vertices if not math.isinf(u))
        assert finite == pytest.approx([-1.0, 0.0, 1.0], abs=1e-9)
        assert any(math.isinf(u) for u in poly.ideal_vertices)

    def test_gamma2_explicit_side_geodesics(self, gamma2):
        # the polygon is |Re z| <= 1 between the unit-diameter circles at -1/2, 1/2
        _, poly, _ = gamma2
        expected = {
            (0.0, 1.0, -1.0),   # x <= 1
            (0.0, -1.0, -1.0),  # -x <= 1
            # |2z+1| >= 1  <->  -(x^2+y^2) - x <= 0 (normalized below)
        }
        seen = set()
        for s in poly.sides:
            p = s.plane
            scale = max(abs(p.alpha), abs(p.beta), abs(p.delta))
            seen.add(
                (
                    round(p.alpha / scale, 9),
                    round(p.beta / scale, 9),
                    round(p.delta / scale, 9),
                )
            )
        assert (0.0, 1.0, -1.0) in seen
        assert (0.0, -1.0, -1.0) in seen
        assert (-1.0, -1.0, 0.0) in seen or (1.0, 1.0, 0.0) in seen
        assert (-1.0, 1.0, 0.0) in seen or (1.0, -1.0, 0.0) in seen

    def test_gamma2_cusps(self, gamma2):
        pres, _, cusps = gamma2
        fps = [c.fixed_point for c in cusps]
        assert math.isinf(fps[0]) and fps[1:] == pytest.approx([0.0, 1.0], abs=1e-9)
        for c in cusps:
            assert c.width == pytest.approx(2.0, abs=1e-9)
            g = pres.evaluate(c.parabolic_word)
            assert H.classify(g).kind == "parabolic"
            # conjugating by the inverse normalizer gives the unipotent of the width
            q = H.compose_all(H.inverse(c.normalizer), g, c.normalizer)
            assert H.psl_distance(q, H.unipotent(c.width)) < 1e-9

    def test_torus_polygon(self, torus):
        pres, poly, cusps = torus
        assert abs(poly.area - 2 * math.pi) < 1e-6
        assert len(poly.sides) == 4
        verts = sorted(poly.ideal_vertices)
        assert verts == pytest.approx(
            [-(R2 + 1), -(R2 - 1), R2 - 1, R2 + 1], abs=1e-9
        )
        assert len(cusps) == 1

    def test_torus_commutator_parabolic(self, torus):
        pres, _, cusps = torus
        comm = pres.evaluate(F.parse_word("g1 g2 g1^-1 g2^-1"))
        assert abs(abs(comm.trace) - 2.0) <= 1e-9
        # the preset cusp loop is a commutator-type word: length 4, both
        # letters appearing with exponent sum zero
        word = cusps[0].parabolic_word
        assert len(word) == 4
        for lab in ("g1", "g2"):
            assert sum(s for l, s in word if l == lab) == 0

    def test_torus_trace_identity(self):
        # tr[g1,g2] = -2 reduces to (x^2-4)(y^2-4) = 16 for x = 2cosh(l1/2),
        # y = 2cosh(l2/2) and tr(g1 g2) = xy/2; the preset enforces it
        l1 = 1.3
        s2 = 1.0 / math.sinh(l1 / 2)
        l2 = 2.0 * math.asinh(s2)
        pres, _, _ = F.builtin_lattice("punctured_square_torus", l1=l1, l2=l2)
        x = 2 * math.cosh(l1 / 2)
        y = 2 * math.cosh(l2 / 2)
        assert (x * x - 4) * (y * y - 4) == pytest.approx(16.0, abs=1e-9)

    def test_torus_bad_parameters(self):
        with pytest.raises(F.PresentationError):
            F.builtin_lattice("punctured_square_torus", l1=1.0, l2=1.0)

    def test_unknown_preset(self):
        with pytest.raises(F.PresentationError):
            F.builtin_lattice("nope")

    def test_relators_validate(self, gamma2, torus):
        for pres, _, _ in (gamma2, torus):
            pres.validate()

    def test_elliptic_generator_rejected(self):
        pres = F.LatticePresentation(generators=(("r", H.rotation(1.0)),))
        with pytest.raises(F.PresentationError):
            pres.validate()


class TestDirichlet:
    def test_generic_center_area(self, gamma2):
        pres, _, _ = gamma2
        poly = F.dirichlet_domain(pres, H.PointH(0.1, 1.7), 8)
        assert abs(poly.area - 2 * math.pi) < 1e-6

    def test_zero_bound_fails(self, gamma2):
        pres, _, _ = gamma2
        with pytest.raises(F.AreaMismatchError):
            F.dirichlet_domain(pres, H.PointH(0.1, 1.7), 0)

    def test_insufficient_bound_fails(self, torus):
        pres, _, _ = torus
        with pytest.raises(F.AreaMismatchError):
            # one-letter ball about a far-off center cannot close the domain
            F.dirichlet_domain(pres, H.PointH(4.0, 0.05), 1)

    def test_pingpong_free_group(self):
        h1 = H.translation(10.0)
        u = H.compose(H.translation(12.0), H.rotation(math.pi / 2))
        h2 = H.compose_all(u, h1, H.inverse(u))
        pres = F.LatticePresentation(generators=(("h1", h1), ("h2", h2)))
        poly = F.dirichlet_domain(pres, H.PointH(0.0, 1.0), 2, check_area=False)
        assert len(poly.sides) == 4
        assert math.isinf(poly.area)

    def test_elliptic_center_guard(self):
        pres = F.LatticePresentation(
            generators=(("a", H.translation(1.0)), ("s", H.element(0, -1, 1, 0)))
        )
        with pytest.raises((F.EllipticCenterError, F.PresentationError)):
            pres.validate()
            F.dirichlet_domain(pres, H.PointH(0.0, 1.0), 2)


class TestReduce:
    def test_inside_is_fixed(self, gamma2):
        pres, poly, _ = gamma2
        x = H.UnitTangent(H.element(1.0, 0.3, 0.0, 1.0))
        red = F.reduce(x, poly, pres)
        assert red.deck_word == ()
        assert H.psl_distance(red.rep.rep, x.rep) < 1e-14

    def test_single_deck_move(self, gamma2):
        pres, poly, _ = gamma2
        x = H.UnitTangent(H.element(1.0, 0.3, 0.0, 1.0))
        moved = H.UnitTangent(H.compose(pres.gen_map()["A"], x.rep))
        red = F.reduce(moved, poly, pres)
        assert red.deck_word == (("A", -1),)

    def test_replay_oracle_and_monotone_descent(self, gamma2):
        pres, poly, _ = gamma2
        rng = np.random.default_rng(7)
        for _ in range(150):
            g = H.IDENTITY
            for _ in range(6):
                g = H.compose_all(
                    g,
                    H.rotation(rng.random() * 2 * math.pi),
                    H.translation(rng.random() * 4 - 2),
                )
            x = H.UnitTangent(g)
            if H.distance(x.base_point(), poly.center) > 30:
                continue
            trace = []
            red = F.reduce(x, poly, pres, trace=trace)
            assert all(trace[i + 1] <= trace[i] + 1e-9 for i in range(len(trace) - 1))
            w = pres.evaluate(red.deck_word)
            replay = H.compose(w, x.rep)
            scale = max(1.0, max(abs(v) for v in replay.as_tuple()))
            assert H.psl_distance(replay, red.rep.rep) / scale < 1e-12
            bp = red.rep.base_point()
            assert poly.contains(bp.x, bp.y, tol=1e-7)

    def test_idempotence(self, torus):
        pres, poly, _ = torus
        rng = np.random.default_rng(8)
        for _ in range(80):
            g = H.compose(
                H.rotation(rng.random() * 2 * math.pi),
                H.translation(rng.random() * 6 - 3),
            )
            red = F.reduce(H.UnitTangent(g), poly, pres)
            assert F.reduce(red.rep, poly, pres).deck_word == ()

    def test_equivariance(self, gamma2):
        pres, poly, _ = gamma2
        rng = np.random.default_rng(9)
        for _ in range(60):
            g = H.compose(
                H.rotation(rng.random() * 2 * math.pi),
                H.translation(rng.random() * 4 - 2),
            )
            x = H.UnitTangent(g)
            base = F.reduce(x, poly, pres)
            for lab, gg in pres.generators:
                moved = H.UnitTangent(H.compose(gg, x.rep))
                red = F.reduce(moved, poly, pres)
                assert H.psl_distance(red.rep.rep, base.rep.rep) < 1e-8


class TestCuspNeighborhoods:
    def test_gamma2_infinity_sector(self, gamma2):
        _, poly, cusps = gamma2
        sectors, core = F.cusp_neighborhoods(poly, cusps, 1.0)
        s_inf = sectors[0]
        assert cusps[s_inf.cusp_index].fixed_point == math.inf
        assert s_inf.width == pytest.approx(2.0, abs=1e-9)
        # normalizer of the infinity cusp is the identity: sector is the strip
        # |Re z| <= 1 (mod the width-2 translation) above height e
        assert H.psl_distance(cusps[0].normalizer, H.IDENTITY) < 1e-9
        assert s_inf.area == pytest.approx(2.0 * math.exp(-1.0), rel=1e-12)

    def test_torus_single_sector(self, torus):
        _, poly, cusps = torus
        sectors, _ = F.cusp_neighborhoods(poly, cusps, 1.0)
        assert len(sectors) == 1

    def test_sector_area_decay(self, gamma2):
        _, poly, cusps = gamma2
        for h in (2.0, 4.0, 6.0):
            sectors, _ = F.cusp_neighborhoods(poly, cusps, h)
            for s in sectors:
                assert s.area == pytest.approx(s.width * math.exp(-h), rel=1e-12)

    def test_overlap_guard(self, gamma2):
        _, poly, cusps = gamma2
        with pytest.raises(F.OverlappingHoroballsError):
            F.cusp_neighborhoods(poly, cusps, -0.5)


@pytest.fixture(scope="module")
def samples(gamma2):
    pres, poly, cusps = gamma2
    rng = np.random.default_rng(42)
    parts = F.cusp_neighborhoods(poly, cusps, 0.0)
    heights = np.empty(30000)
    angles = np.empty(4000)
    for i in range(len(heights)):
        x = F.haar_sample(poly, cusps, pres, rng, parts)
        bp = x.base_point()
        heights[i] = F.cusp_height(cusps, bp.x, bp.y)
        if i < len(angles):
            angles[i] = H.iwasawa(x.rep).theta
    return heights, angles, poly, cusps


class TestHaarSampler:
    def test_cusp_tail_mass(self, samples):
        heights, _, poly, cusps = samples
        total_w = sum(c.width for c in cusps)
        n = len(heights)
        for h in (1.0, 2.0, 3.0):
            expected = total_w * math.exp(-h) / poly.area
            emp = float((heights > h).mean())
            se = math.sqrt(expected * (1 - expected) / n)
            assert abs(emp - expected) <= 3.5 * se

    def test_tail_exponent(self, samples):
        heights, _, _, _ = samples
        hs = np.arange(1, 6)
        mass = np.array([(heights > h).mean() for h in hs])
        slope = np.polyfit(hs, np.log(mass), 1)[0]
        assert abs(slope + 1.0) < 0.1

    def test_angle_uniform(self, samples):
        _, angles, _, _ = samples
        a = np.sort(angles) / (2 * math.pi)
        n = len(a)
        ks = max(
            np.max(np.arange(1, n + 1) / n - a), np.max(a - np.arange(0, n) / n)
        )
        assert ks <= 0.03

    def test_right_invariance_smoke(self, torus):
        # the law of x is right-invariant: E f(x g) ~ E f(x) for bounded f
        pres, poly, cusps = torus
        rng = np.random.default_rng(11)
        parts = F.cusp_neighborhoods(poly, cusps, 0.0)
        g = H.compose(H.rotation(0.7), H.translation(0.4))
        f = lambda t: math.exp(-H.distance(t.base_point(), H.POINT_I))
        n = 4000
        diffs = np.empty(n)
        for i in range(n):
            x = F.haar_sample(poly, cusps, pres, rng, parts)
            moved = F.reduce(H.UnitTangent(H.compose(x.rep, g)), poly, pres).rep
            diffs[i] = f(moved) - f(x)
        assert abs(diffs.mean()) <= 4.0 * diffs.std(ddof=1) / math.sqrt(n)


class TestLatticeFile:
    GOOD = """
# the level-two congruence lattice
[generator] A = 1 2 0 1
[generator] B = 1 0 2 1
[weights]
A = 1
B = 0
"""

    def test_roundtrip(self):
        pres, weights = F.parse_lattice_text(self.GOOD)
        assert pres.labels == ("A", "B")
        assert weights == {"A": (1,), "B": (0,)}
        text = F.format_lattice_text(pres, weights)
        pres2, weights2 = F.parse_lattice_text(text)
        assert weights2 == weights
        for (l1, g1), (l2, g2) in zip(pres.generators, pres2.generators):
            assert l1 == l2 and H.psl_distance(g1, g2) == 0.0

    def test_errors_carry_line_numbers(self):
        with pytest.raises(F.LatticeFileError) as ei:
            F.parse_lattice_text("[generator] A = 1 2 0\n")
        assert ei.value.line == 1
        with pytest.raises(F.LatticeFileError) as ei:
            F.parse_lattice_text("[generator] A = 1 2 0 1\n[weights]\nA = x\n")
        assert ei.value.line == 3

    def test_relator_line(self):
        text = self.GOOD + "[relator] A A^-1\n"
        pres, _ = F.parse_lattice_text(text)
        assert pres.relators == ((("A", 1), ("A", -1)),)
        pres.validate()
