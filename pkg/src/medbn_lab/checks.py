"""Randomized and exhaustive property suites for the robust aggregators.

Each check returns a PropertyReport with the trial count, the number of
violations and the worst margin (signed distance to the bound; negative
means a violation). The ``median_fn`` hook exists so a deliberately
broken median can be injected as a negative control.
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import robust

EXTREME = 1e12


@dataclass
class PropertyReport:
    property: str
    trials: int
    violations: int
    worst_margin: float

    def to_json(self):
        return asdict(self)


def _update(report, margin):
    report.trials += 1
    if margin < 0:
        report.violations += 1
    if margin < report.worst_margin:
        report.worst_margin = margin


def mean_shift_linearity(trials=10000, seed=0):
    """Adversarial mean shift equals (m/n)*|L| to 1e-9 relative error.

    Each random benign set is checked at all six offsets +-1, +-1e3,
    +-1e9 (n = m + |ben| capped at 64).
    """
    rng = np.random.default_rng(np.random.SeedSequence([1, seed]))
    report = PropertyReport("mean_shift_linearity", 0, 0, np.inf)
    for _ in range(trials):
        b = int(rng.integers(1, 64))
        m = int(rng.integers(1, 65 - b))
        ben = rng.uniform(-1e3, 1e3, size=b)
        for L in (1.0, -1.0, 1e3, -1e3, 1e9, -1e9):
            shift = robust.worst_case_mean_shift(ben, m, L)
            expected = m / (m + b) * abs(L)
            rel = abs(shift - expected) / expected if expected else abs(shift)
            _update(report, 1e-9 - rel)
    return report


def _bounded_margin(ben, mal, median_fn):
    med = median_fn(np.concatenate([mal, ben]))
    return min(med - ben.min(), ben.max() - med)


def _extreme_grid(ben):
    return np.unique(np.concatenate([
        ben, [-EXTREME, EXTREME, ben.min() - 1.0, ben.max() + 1.0],
        (ben.min() + ben.max()) / 2.0 * np.ones(1),
    ]))


def median_bounded_range(trials=100000, seed=0, median_fn=None):
    """min(ben) <= median(all) <= max(ben) whenever m < n/2.

    Exhaustive over all grid placements for n <= 8 plus randomized fuzz.
    """
    median_fn = median_fn or robust.median
    rng = np.random.default_rng(np.random.SeedSequence([2, seed]))
    report = PropertyReport("median_bounded_range", 0, 0, np.inf)
    # exhaustive small cases
    for n in range(2, 9):
        for m in range(1, (n + 1) // 2):
            if not m < n / 2:
                continue
            for _ in range(4):
                ben = np.sort(rng.uniform(-10, 10, size=n - m))
                grid = _extreme_grid(ben)
                for combo in np.stack(np.meshgrid(*[grid] * m), -1).reshape(-1, m):
                    _update(report, _bounded_margin(ben, combo, median_fn))
    # randomized fuzz
    for _ in range(trials):
        n = int(rng.integers(3, 33))
        max_m = (n - 1) // 2
        m = int(rng.integers(1, max_m + 1))
        ben = rng.uniform(-1e3, 1e3, size=n - m)
        mal = rng.choice([-EXTREME, 0.0, EXTREME], size=m) + rng.uniform(
            -1e3, 1e3, size=m
        )
        _update(report, _bounded_margin(ben, mal, median_fn))
    return report


def median_breakdown_witness(seed=0, median_fn=None):
    """At m = ceil(n/2) a placement must push the median out of range."""
    median_fn = median_fn or robust.median
    rng = np.random.default_rng(np.random.SeedSequence([3, seed]))
    report = PropertyReport("median_breakdown_witness", 0, 0, np.inf)
    for n in range(2, 9):
        m = (n + 1) // 2
        ben = np.sort(rng.uniform(-10, 10, size=n - m))
        breached = 0.0
        for v in (-EXTREME, EXTREME):
            med = median_fn(np.concatenate([np.full(m, v), ben]))
            if med < ben.min() or med > ben.max():
                breached = 1.0
        # margin 1 when a witness exists, -1 when none found
        _update(report, 2.0 * breached - 1.0)
    return report


def median_membership(trials=20000, seed=0, median_fn=None):
    """The median is always an element of its input set."""
    median_fn = median_fn or robust.median
    rng = np.random.default_rng(np.random.SeedSequence([4, seed]))
    report = PropertyReport("median_membership", 0, 0, np.inf)
    for _ in range(trials):
        n = int(rng.integers(1, 25))
        vals = np.round(rng.uniform(-5, 5, size=n), 1)  # force duplicates
        med = median_fn(vals)
        _update(report, 1.0 if med in vals else -1.0)
    return report


def mad_scale_equivariance(trials=20000, seed=0):
    """mad(a*x + b) equals |a|*mad(x), exactly on an exact-arithmetic grid.

    Integer samples with power-of-two scales keep every float operation
    exact, so the identity can be asserted bitwise. Negative scales are
    exercised only at odd n: for even n the asymmetric order-statistic
    rule selects a different median element under reflection and the
    identity genuinely fails (e.g. {0,1,2,100} has mad 2 but its negation
    has mad 1).
    """
    rng = np.random.default_rng(np.random.SeedSequence([5, seed]))
    report = PropertyReport("mad_scale_equivariance", 0, 0, np.inf)
    for _ in range(trials):
        n = int(rng.integers(1, 20))
        x = rng.integers(-1000, 1001, size=n).astype(np.float64)
        a = float(2.0 ** rng.integers(-3, 4))
        if n % 2 == 1 and rng.random() < 0.5:
            a = -a
        b = float(rng.integers(-8, 9))
        lhs = robust.mad(a * x + b)
        rhs = abs(a) * robust.mad(x)
        _update(report, 1.0 if lhs == rhs else -abs(lhs - rhs))
    return report


def cwmed_bounded_range(trials=20000, seed=0):
    """Coordinate-wise median stays inside the benign box for m < n/2."""
    rng = np.random.default_rng(np.random.SeedSequence([6, seed]))
    report = PropertyReport("cwmed_bounded_range", 0, 0, np.inf)
    for _ in range(trials):
        n = int(rng.integers(3, 17))
        max_m = (n - 1) // 2
        m = int(rng.integers(1, max_m + 1))
        dim = int(rng.integers(2, 9))
        ben = rng.uniform(-1e3, 1e3, size=(n - m, dim))
        mal = rng.uniform(-1, 1, size=(m, dim)) * EXTREME
        med = robust.cwmed(np.concatenate([mal, ben]))
        margin = float(
            np.minimum(med - ben.min(axis=0), ben.max(axis=0) - med).min()
        )
        _update(report, margin)
    return report


def geomed_shift_bound(trials=10000, seed=0, slack=1e-6):
    """Geometric-median displacement obeys the contamination-factor bound."""
    rng = np.random.default_rng(np.random.SeedSequence([7, seed]))
    report = PropertyReport("geomed_shift_bound", 0, 0, np.inf)
    for _ in range(trials):
        n = int(rng.integers(3, 16))
        max_m = (n - 1) // 2
        m = int(rng.integers(1, max_m + 1))
        dim = int(rng.integers(2, 9))
        ben = rng.uniform(-10, 10, size=(n - m, dim))
        mal = rng.uniform(-1, 1, size=(m, dim)) * 10.0 ** rng.integers(0, 7)
        gm_ben = robust.geomed(ben)
        gm_all = robust.geomed(np.concatenate([mal, ben]))
        shift = float(np.linalg.norm(gm_all - gm_ben))
        radius = float(np.linalg.norm(ben - gm_ben, axis=1).max())
        bound = robust.lemma9_factor(n, m) * radius + slack
        _update(report, bound - shift)
    return report


def run_all(trials=100000, geomed_trials=10000, seed=0, median_fn=None):
    """Run every suite; returns the list of PropertyReports."""
    return [
        mean_shift_linearity(trials=min(trials, 10000), seed=seed),
        median_bounded_range(trials=trials, seed=seed, median_fn=median_fn),
        median_breakdown_witness(seed=seed, median_fn=median_fn),
        median_membership(trials=min(trials, 20000), seed=seed,
                          median_fn=median_fn),
        mad_scale_equivariance(trials=min(trials, 20000), seed=seed),
        cwmed_bounded_range(trials=min(trials, 20000), seed=seed),
        geomed_shift_bound(trials=geomed_trials, seed=seed),
    ]


def faulty_median(values):
    """Deliberately wrong median (arithmetic mean) for negative controls."""
    return robust.mean(values)
