"""Replicated probability-estimation study over fit configurations SS1-SS6."""

from __future__ import annotations

import csv
import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import DISTRIBUTIONS, box_probability, mc_box_probability, simulate
from .fitting import ExceedanceSample, FitConfig, bound, box_extent, fit
from .sampling import ExtremalRegion, default_sampler, probability_from_sample, sample_exceedances
from .simplex import make_regular_mesh, to_angle
from .threshold import ThresholdModel

log = logging.getLogger(__name__)

REGIONS = {
    2: [ExtremalRegion((10, 10), (12, 12)), ExtremalRegion((10, 6), (12, 8)),
        ExtremalRegion((10, 2), (12, 4))],
    3: [ExtremalRegion((8, 8, 0.01), (10, 10, 3)), ExtremalRegion((8, 5, 0.01), (10, 7, 3)),
        ExtremalRegion((8, 2, 0.01), (10, 4, 3))],
}


def default_mesh(d):
    return make_regular_mesh(2, 11) if d == 2 else make_regular_mesh(3, 6)


def fit_labels(labels, exceedances, mesh, threshold, **cfg_kw):
    """Fit every SS configuration, sharing work: a bounded fit starts from the
    matching unbounded fit, and one angular fit serves SS3 and SS4."""
    out = {}
    base = {}
    angular = None

    def radial(mode, bounded):
        if (mode, bounded) not in base:
            if bounded:
                m = bound(radial(mode, False))
                m = replace(m, config=replace(m.config, bounded=True))
            else:
                m = fit(FitConfig(mode=mode, **cfg_kw), exceedances, mesh, threshold)
            base[(mode, bounded)] = m
        return base[(mode, bounded)]

    for label in labels:
        cfg = FitConfig.from_label(label, **cfg_kw)
        m = replace(radial(cfg.mode, cfg.bounded), config=cfg)
        if cfg.mode == "radial" and cfg.angles == "model":
            if angular is None:
                kw = {k: v for k, v in cfg_kw.items() if k != "lam"}
                angular = fit(FitConfig(mode="angular", lam=cfg.angular_lam, **kw),
                              exceedances, mesh, threshold).angular_gauge
            m = replace(m, angular_gauge=angular)
        out[label] = m
    return out


@dataclass(frozen=True)
class StudyConfig:
    distributions: tuple = ("I",)
    labels: tuple = ("SS4",)
    replications: int = 20
    n: int = 5000
    n_star: int = 50_000
    tau: float = 0.95
    h_r: float = 0.05
    h_w: float = 0.05
    seed: int = 0
    workers: int = 1
    truth_mc: int = 0
    regions: dict = field(default_factory=dict)

    def regions_for(self, d):
        return self.regions.get(d, REGIONS[d])


def _job_seed(seed, dist, rep):
    return [seed, zlib.crc32(dist.encode()), rep]


def run_replication(cfg, dist, rep):
    """One dataset: threshold, all requested fits, and probability estimates."""
    spec = DISTRIBUTIONS[dist]
    ss = np.random.SeedSequence(_job_seed(cfg.seed, dist, rep))
    data_seed, *fit_seeds = ss.spawn(1 + len(cfg.labels))
    x = simulate(spec, cfg.n, np.random.default_rng(data_seed)).x
    r, w = to_angle(x)
    th = ThresholdModel(r, w, cfg.tau, cfg.h_r, cfg.h_w)
    ex = ExceedanceSample.from_data(x, th)
    mesh = default_mesh(spec.dim)
    models = fit_labels(cfg.labels, ex, mesh, th)
    regions = cfg.regions_for(spec.dim)
    interp = None
    rows = []
    for label, fseed in zip(cfg.labels, fit_seeds):
        m = models[label]
        c = box_extent(m.radial_gauge).max(axis=0)
        sizes = m.freeze_sizes
        growing = len(sizes) == m.bound_iterations and all(b > a for a, b in zip(sizes, sizes[1:]))
        samp_seed, rad_seed = fseed.spawn(2)
        sampler = default_sampler(m, seed=np.random.default_rng(samp_seed))
        if sampler.kind == "mcmc" and interp is None:
            interp = th.interpolator()
        xs, _, _ = sample_exceedances(m, sampler, cfg.n_star, np.random.default_rng(rad_seed),
                                      interp)
        for k, est in enumerate(probability_from_sample(xs, regions, ex.fraction, cfg.tau)):
            rows.append({"distribution": dist, "replication": rep, "ss": label, "region": k + 1,
                         "estimate": est.estimate, "hits": est.hits,
                         "acceptance": sampler.acceptance, "bound_iterations": m.bound_iterations,
                         "box_min": float(c.min()), "box_max": float(c.max()),
                         "freeze_growing": bool(growing), "converged": m.converged})
    log.info("finished %s replication %d", dist, rep)
    return rows


def true_probabilities(cfg, dist):
    spec = DISTRIBUTIONS[dist]
    out = []
    for k, reg in enumerate(cfg.regions_for(spec.dim)):
        row = {"distribution": dist, "region": k + 1,
               "truth": box_probability(spec, reg.lower, reg.upper)}
        if cfg.truth_mc:
            p, se = mc_box_probability(spec, reg.lower, reg.upper, cfg.truth_mc, seed=cfg.seed)
            row.update(truth_mc=p, truth_mc_se=se)
        out.append(row)
    return out


def run_study(cfg):
    """Returns (per-replication rows with log errors, summary rows)."""
    jobs = [(d, rep) for d in cfg.distributions for rep in range(cfg.replications)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(run_replication, [cfg] * len(jobs), *zip(*jobs)))
    else:
        results = [run_replication(cfg, d, rep) for d, rep in jobs]
    truth = {(t["distribution"], t["region"]): t for d in cfg.distributions
             for t in true_probabilities(cfg, d)}
    rows = []
    for res in results:
        for row in res:
            t = truth[(row["distribution"], row["region"])]["truth"]
            with np.errstate(divide="ignore"):
                row["truth"] = t
                row["log_error"] = float(np.log(row["estimate"]) - np.log(t))
            rows.append(row)
    return rows, summarise(rows)


def summarise(rows):
    """Median log error and RMSE of log-probability per (distribution, SS, region)."""
    groups = {}
    for row in rows:
        groups.setdefault((row["distribution"], row["ss"], row["region"]), []).append(row)
    out = []
    for (dist, ss, region), grp in sorted(groups.items()):
        err = np.array([g["log_error"] for g in grp])
        zero = int(np.sum(np.array([g["hits"] for g in grp]) == 0))
        with np.errstate(invalid="ignore"):
            out.append({"distribution": dist, "ss": ss, "region": region,
                        "truth": grp[0]["truth"], "replications": len(grp),
                        "zero_hits": zero,
                        "median_log_error": float(np.median(err)),
                        "rmse_log": float(np.sqrt(np.mean(err ** 2)))})
    return out


def write_rows(path, rows):
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]))
        wr.writeheader()
        wr.writerows(rows)
