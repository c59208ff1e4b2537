import io
import math

import numpy as np
import pytest

from seroscan import (
    Chain,
    Dataset,
    MleResult,
    NaturalParams,
    ParamGrid,
    ParamPoint,
    PositiveCounts,
    StudyDesign,
    builtin_dataset,
    logit_clamped,
    lrt_pvalue,
    lrt_statistic,
    mc_confset,
    mh_sample,
    mle,
    project_interval,
)
from seroscan.baselines import _make_loglik, _moment_start, log_joint_at
from seroscan.model import log_joint_density


class TestLogit:
    def test_interior_value(self):
        assert logit_clamped(0.25) == pytest.approx(-1.0986122886681097, rel=1e-14)
        assert logit_clamped(0.5) == 0.0

    def test_clamps_boundaries(self):
        # reference: log(1e-8 / (1 - 1e-8)) at 60-digit precision
        assert logit_clamped(0.0) == pytest.approx(-18.420680733952365, rel=1e-12)
        assert logit_clamped(1.0) == pytest.approx(18.420680733952365, rel=1e-12)

    def test_round_trip(self):
        np_ = NaturalParams.from_rates(0.0, 1.0, 0.3)
        p, q, pi = np_.to_rates()
        assert 0.0 < p < 1e-7
        assert 1.0 - 1e-7 < q < 1.0
        assert pi == pytest.approx(0.3, rel=1e-12)

    def test_to_param_point_half_up(self):
        # 0.5 and 21 are exact in binary, so the product is exactly 10.5
        np_ = NaturalParams.from_rates(0.01, 0.9, 0.5)
        assert np_.to_param_point(21).k == 11
        assert NaturalParams.from_rates(0.01, 0.9, 0.25).to_param_point(17).k == 4


class TestLogJointAt:
    def test_matches_model_density(self, sc, rng):
        for _ in range(30):
            p = float(rng.uniform(0, 0.05))
            q = float(rng.uniform(0.6, 1.0))
            k = int(rng.integers(0, 667))
            got = log_joint_at(sc.design, sc.observed, p, q, k)
            want = log_joint_density(sc.observed, ParamPoint(p, q, k), sc.design)
            if math.isinf(want):
                assert math.isinf(got)
            else:
                assert got == pytest.approx(want, rel=1e-10)

    def test_boundary_rates(self, sc):
        got = log_joint_at(sc.design, sc.observed, 0.0, 1.0, 40)
        assert got == -np.inf
        d = StudyDesign(4, 4, 6)
        s = PositiveCounts(0, 4, 3)
        got = log_joint_at(d, s, 0.0, 1.0, 3)
        assert got == 0.0  # the unique possible outcome under this theta


class TestGradient:
    def test_matches_finite_differences(self, sc, rng):
        f_only = _make_loglik(sc, grad=False)
        f_grad = _make_loglik(sc, grad=True)
        h = 1e-6
        for _ in range(12):
            psi = np.array(
                [
                    float(rng.uniform(-6.5, -3.5)),
                    float(rng.uniform(1.0, 3.0)),
                    float(rng.uniform(-6.0, -3.0)),
                ]
            )
            val, grad = f_grad(psi)
            assert val == pytest.approx(f_only(psi), rel=1e-12)
            for d in range(3):
                e = np.zeros(3)
                e[d] = h
                fd = (f_only(psi + e) - f_only(psi - e)) / (2 * h)
                assert grad[d] == pytest.approx(fd, rel=2e-5, abs=2e-5)


class TestMle:
    def test_beats_moment_start(self, sc):
        res = mle(sc, seed=0)
        f = _make_loglik(sc, grad=False)
        assert res.continuous_loglik >= f(_moment_start(sc)) - 1e-9
        assert isinstance(res, MleResult)
        assert isinstance(res.theta, ParamPoint)

    def test_location_near_moment_estimates(self, sc):
        res = mle(sc, seed=0)
        # closed-form calibration rates: 2/401 and 178/197
        assert res.theta.p == pytest.approx(2 / 401, abs=0.004)
        assert res.theta.q == pytest.approx(178 / 197, abs=0.01)
        assert 25 <= res.theta.k <= 50

    def test_stable_across_seeds(self, sc):
        lls = [mle(sc, seed=s).continuous_loglik for s in (0, 1, 2)]
        assert max(lls) - min(lls) < 1e-6

    def test_integer_loglik_close_to_continuous(self, sc):
        # the relaxed supremum sits at an integer count, so the two agree
        res = mle(sc, seed=0)
        assert res.log_likelihood == pytest.approx(res.continuous_loglik, abs=1e-9)
        assert res.log_likelihood == pytest.approx(
            log_joint_density(sc.observed, res.theta, sc.design), rel=1e-9
        )

    def test_boundary_heavy_data_still_optimizes(self):
        # all positives everywhere pushes the optimum to the parameter edge
        d = StudyDesign(0, 2, 2)
        edge = Dataset("edge", d, PositiveCounts(0, 2, 2))
        res = mle(edge, starts=2, seed=0)
        assert res.log_likelihood > -np.inf
        assert res.theta.q > 0.9


class TestLrtStatistic:
    def test_bounded_and_maximal_at_mle(self, sc):
        res = mle(sc, seed=0)
        t_hat = lrt_statistic(sc.observed, res.theta, sc.design)
        assert t_hat <= 1.0 + 1e-12
        assert t_hat > 0.999
        t_far = lrt_statistic(sc.observed, ParamPoint(0.015, 0.80, 0), sc.design)
        assert 0.0 < t_far < 1e-3

    def test_zero_density_point(self, sc):
        t = lrt_statistic(sc.observed, ParamPoint(0.0, 1.0, 40), sc.design)
        assert t == 0.0


class TestLrtPvalue:
    def test_deterministic(self, sc):
        theta = ParamPoint(0.01, 0.85, 33)
        a = lrt_pvalue(theta, sc, r=30, seed=5)
        b = lrt_pvalue(theta, sc, r=30, seed=5)
        assert a == b

    def test_tail_direction_complementarity(self, sc):
        theta = ParamPoint(0.01, 0.85, 33)
        res = lrt_pvalue(theta, sc, r=30, seed=5)
        low = lrt_pvalue(theta, sc, r=30, seed=5, tail="lower")
        # both directions include ties, so they sum to at least 1
        assert res.pvalue + low.pvalue >= 1.0
        assert res.pvalue_lower == low.pvalue
        assert res.reject == low.reject

    def test_plausible_point_not_rejected(self, sc):
        res = lrt_pvalue(mle(sc, seed=0).theta, sc, r=40, seed=3)
        assert res.t_obs > 0.999
        assert res.pvalue_lower > 0.5
        assert not res.reject

    def test_far_point_rejected(self, sc):
        res = lrt_pvalue(ParamPoint(0.03, 0.7, 600), sc, r=40, seed=3)
        assert res.pvalue_lower <= 0.05
        assert res.reject

    def test_lower_pvalue_monotone_in_t_obs(self, sc):
        # for a fixed bank of simulated statistics, the sub-level fraction
        # cannot decrease as the observed statistic grows
        from seroscan.baselines import _lrt_sims

        theta = ParamPoint(0.01, 0.85, 33)
        sims = _lrt_sims(theta, sc.design, r=40, seed=9, starts=2)
        levels = np.linspace(0, 1, 11)
        fracs = [(sims <= t).mean() for t in levels]
        assert all(b >= a for a, b in zip(fracs, fracs[1:]))

    def test_validation(self, sc):
        with pytest.raises(ValueError):
            lrt_pvalue(ParamPoint(0.01, 0.85, 33), sc, r=0)
        with pytest.raises(ValueError):
            lrt_pvalue(ParamPoint(0.01, 0.85, 33), sc, r=5, tail="sideways")


class TestMhSample:
    def test_reproducible(self, sc):
        a = mh_sample(sc, iters=2000, seed=3)
        b = mh_sample(sc, iters=2000, seed=3)
        assert np.array_equal(a.psi_trace, b.psi_trace)
        assert np.array_equal(a.accepted, b.accepted)
        c = mh_sample(sc, iters=2000, seed=4)
        assert not np.array_equal(a.psi_trace, c.psi_trace)

    def test_vanishing_proposal_accepts_everything(self, sc):
        ch = mh_sample(sc, iters=1000, proposal_sd=1e-12, seed=0)
        assert ch.acceptance_rate > 0.999

    def test_chain_shapes_and_burn(self, sc):
        ch = mh_sample(sc, iters=1500, burn_frac=0.2, seed=1)
        assert ch.psi_trace.shape == (1500, 3)
        assert ch.burn == 300
        assert ch.samples.shape == (1200, 3)
        assert ch.prevalence().shape == (1200,)
        assert 0.0 <= ch.acceptance_rate <= 1.0

    def test_independence_mode_runs(self, sc):
        ch = mh_sample(sc, iters=2000, seed=3, mode="independence", proposal_sd=0.5)
        assert 0.0 < ch.acceptance_rate < 1.0
        # chain concentrates near the plausible prevalence region
        assert 0.0 <= np.median(ch.prevalence()) < 0.05

    def test_validation(self, sc):
        with pytest.raises(ValueError):
            mh_sample(sc, iters=10)
        with pytest.raises(ValueError):
            mh_sample(sc, iters=2000, burn_frac=0.95)
        with pytest.raises(ValueError):
            mh_sample(sc, iters=2000, proposal_sd=0.0)
        with pytest.raises(ValueError):
            mh_sample(sc, iters=2000, mode="levy-flight")

    def test_dump_csv(self, sc):
        ch = mh_sample(sc, iters=1000, burn_frac=0.2, seed=0)
        buf = io.StringIO()
        ch.dump_csv(buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "iter,psi0,psi1,psi2,loglik,accepted"
        assert len(lines) == 1 + 800
        assert lines[1].startswith("200,")
        buf = io.StringIO()
        ch.dump_csv(buf, include_burn=True)
        assert len(buf.getvalue().splitlines()) == 1 + 1000


class TestMcConfset:
    def grid(self):
        return ParamGrid(
            p_values=(0.004, 0.005, 0.006),
            q_values=(0.88, 0.9),
            k_values=(0, 20, 33, 40, 60),
        )

    def test_degenerate_chain(self, sc):
        # identical samples: the cutoff is that single likelihood value and
        # membership is its super-level set
        psi = NaturalParams.from_rates(0.005, 0.9, 33 / 3330).as_array()
        ch = Chain(
            psi_trace=np.tile(psi, (100, 1)),
            loglik_trace=np.zeros(100),
            accepted=np.ones(100, dtype=bool),
            burn=0,
            seed=0,
            proposal_sd=0.1,
            mode="random-walk",
        )
        mset = mc_confset(ch, sc, self.grid())
        assert mset.cutoff == pytest.approx(
            math.exp(log_joint_at(sc.design, sc.observed, *ch.rates()[0, :2], 33)),
            rel=1e-9,
        )
        member = np.exp(mset.log_density) >= mset.cutoff
        assert np.array_equal(mset.in_alt, member)
        assert np.array_equal(mset.in_basic, member)

    def test_empty_chain_rejected(self, sc):
        ch = Chain(
            psi_trace=np.zeros((10, 3)),
            loglik_trace=np.zeros(10),
            accepted=np.zeros(10, dtype=bool),
            burn=10,
            seed=0,
            proposal_sd=0.1,
            mode="random-walk",
        )
        with pytest.raises(ValueError):
            mc_confset(ch, sc, self.grid())

    def test_projection_works(self, sc):
        ch = mh_sample(sc, iters=3000, seed=0, mode="independence", proposal_sd=0.5)
        mset = mc_confset(ch, sc, self.grid())
        ivs = project_interval(mset, "pi", method="alt")
        assert len(ivs) >= 1
        assert all(0.0 <= lo <= hi <= 0.2 for lo, hi in ivs)
