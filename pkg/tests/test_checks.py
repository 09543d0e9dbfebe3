import numpy as np

from medbn_lab import checks


class TestPropertySuites:
    def test_mean_shift_linearity_clean(self):
        r = checks.mean_shift_linearity(trials=500, seed=0)
        assert r.violations == 0
        assert r.worst_margin >= 0

    def test_median_bounded_range_clean(self):
        r = checks.median_bounded_range(trials=2000, seed=0)
        assert r.violations == 0
        # exhaustive grid cases saturate the bound exactly
        assert r.worst_margin == 0

    def test_breakdown_witness_found_for_every_n(self):
        r = checks.median_breakdown_witness(seed=0)
        assert r.trials == 7  # n = 2..8
        assert r.violations == 0

    def test_membership_and_mad(self):
        assert checks.median_membership(trials=500, seed=0).violations == 0
        assert checks.mad_scale_equivariance(trials=500, seed=0).violations == 0

    def test_cwmed_and_geomed(self):
        assert checks.cwmed_bounded_range(trials=300, seed=0).violations == 0
        assert checks.geomed_shift_bound(trials=200, seed=0).violations == 0

    def test_faulty_median_negative_control(self):
        r = checks.median_bounded_range(trials=500, seed=0,
                                        median_fn=checks.faulty_median)
        assert r.violations > 0
        assert r.worst_margin < 0

    def test_run_all_structure(self):
        reports = checks.run_all(trials=300, geomed_trials=100, seed=0)
        names = [r.property for r in reports]
        assert "mean_shift_linearity" in names
        assert "geomed_shift_bound" in names
        doc = [r.to_json() for r in reports]
        assert all(set(d) == {"property", "trials", "violations",
                              "worst_margin"} for d in doc)

    def test_deterministic_under_seed(self):
        a = checks.median_bounded_range(trials=400, seed=7)
        b = checks.median_bounded_range(trials=400, seed=7)
        assert a.worst_margin == b.worst_margin
        assert a.trials == b.trials
