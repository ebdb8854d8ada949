"""Effective sample size, Monte Carlo standard error and run summaries."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

MIN_LENGTH = 10


def autocorrelation(x):
    """Empirical autocorrelation at all lags (biased normalization) via FFT."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    if acov[0] <= 0.0:
        raise ValueError("zero variance")
    return acov / acov[0]


def _check_series(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if x.size < MIN_LENGTH:
        raise ValueError(f"series needs at least {MIN_LENGTH} samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    if np.ptp(x) == 0.0:
        raise ValueError("zero variance")
    return x


def ess(x) -> float:
    """Effective sample size with Geyer's initial positive sequence.

    Autocorrelations are summed in consecutive pairs ``rho_{2k} + rho_{2k+1}``
    until the first non-positive pair. Anti-correlated chains (whose sum
    would push ESS above ``n``) are clamped at ``n``.
    """
    x = _check_series(x)
    n = x.size
    rho = autocorrelation(x)
    m = (n - 1) // 2
    pairs = rho[0:2 * m:2] + rho[1:2 * m + 1:2]
    bad = np.flatnonzero(pairs <= 0.0)
    k = bad[0] if bad.size else pairs.size
    # tau = -1 + 2 * sum of positive pairs
    tau = -1.0 + 2.0 * float(pairs[:k].sum())
    if tau <= 0.0:
        return float(n)
    return float(min(n, n / tau))


def mcse(x) -> float:
    """Monte Carlo standard error of the mean, ``sd / sqrt(ESS)``."""
    x = _check_series(x)
    return float(np.std(x, ddof=1) / math.sqrt(ess(x)))


def batch_means_se(x, n_batches=None) -> float:
    """Standard error of the mean from non-overlapping batch means."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    b = n_batches or max(2, int(math.sqrt(n)))
    size = n // b
    means = x[: size * b].reshape(b, size).mean(axis=1)
    return float(np.std(means, ddof=1) / math.sqrt(b))


@dataclass(frozen=True)
class ParamSummary:
    name: str
    mean: float
    sd: float
    ess: float
    ess_per_s: float
    mcse: float


@dataclass(frozen=True)
class Summary:
    params: tuple
    total_seconds: float
    n_samples: int
    acceptance: float

    def __getitem__(self, name) -> ParamSummary:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)

    @property
    def names(self):
        return tuple(p.name for p in self.params)

    def rows(self):
        return [[p.name, p.mean, p.sd, p.ess, p.ess_per_s, p.mcse] for p in self.params]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["parameter", "mean", "sd", "ess", "ess_per_s", "mcse"])
            for row in self.rows():
                w.writerow([row[0], *(repr(float(v)) for v in row[1:])])

    def table(self):
        head = f"{'parameter':<12}{'mean':>12}{'sd':>11}{'ess':>10}{'ess/s':>10}{'mcse':>11}"
        lines = [head, "-" * len(head)]
        for p in self.params:
            lines.append(f"{p.name:<12}{p.mean:>12.5f}{p.sd:>11.5f}{p.ess:>10.1f}{p.ess_per_s:>10.2f}{p.mcse:>11.5f}")
        lines.append(f"samples={self.n_samples}  seconds={self.total_seconds:.2f}  acceptance={self.acceptance:.3f}")
        return "\n".join(lines)


def summarize(trace, burnin=None) -> Summary:
    """Posterior summaries over the post-burn-in part of ``trace``.

    ESS per second divides by the total recorded sampler time of the whole
    run (burn-in included), which is the cost actually paid for the samples.
    """
    burnin = trace.burnin if burnin is None else int(burnin)
    n = len(trace)
    if not 0 <= burnin < n:
        raise ValueError(f"burn-in {burnin} must be smaller than the trace length {n}")
    seconds = float(trace.seconds[-1])
    out = []
    for j, name in enumerate(trace.param_names):
        x = trace.theta[burnin:, j]
        e = ess(x)
        sd = float(np.std(x, ddof=1))
        out.append(ParamSummary(name, float(x.mean()), sd, e,
                                e / seconds if seconds > 0 else float("inf"), sd / math.sqrt(e)))
    return Summary(tuple(out), seconds, n - burnin, trace.acceptance_rate(burnin))


COMPARE_COLUMNS = ("parameter", "mean_a", "sd_a", "ess_a", "ess_per_s_a",
                   "mean_b", "sd_b", "ess_b", "ess_per_s_b", "z_mean")


def compare(sa: Summary, sb: Summary):
    """Rows of the two-sampler comparison table; ``z_mean = |dmean| / combined MCSE``."""
    if sa.names != sb.names:
        raise ValueError(f"parameter mismatch: {sa.names} vs {sb.names}")
    rows = []
    for a, b in zip(sa.params, sb.params):
        se = math.hypot(a.mcse, b.mcse)
        diff = abs(a.mean - b.mean)
        z = diff / se if se > 0 else (0.0 if diff == 0 else float("inf"))
        rows.append([a.name, a.mean, a.sd, a.ess, a.ess_per_s, b.mean, b.sd, b.ess, b.ess_per_s, z])
    return rows


def write_compare_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COMPARE_COLUMNS)
        for row in rows:
            w.writerow([row[0], *(repr(float(v)) for v in row[1:])])


def format_compare(rows):
    head = f"{'parameter':<12}" + "".join(f"{c:>13}" for c in COMPARE_COLUMNS[1:])
    lines = [head, "-" * len(head)]
    for row in rows:
        lines.append(f"{row[0]:<12}" + "".join(f"{v:>13.5g}" for v in row[1:]))
    return "\n".join(lines)
