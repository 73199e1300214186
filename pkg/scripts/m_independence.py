"""Error against the number of data points M on the factorized Gaussian model.

Prints, for each M, the independent-coupling estimate of d (the harness
metric), the synchronously coupled one, and a baseline: the empirical W2
between two independent exact N-samples from the optimal posterior.  The
baseline isolates the part of the independent-coupling estimate that does
not depend on the sampler at all.
"""

import argparse
import math

import numpy as np

from pgd_lab import rng
from pgd_lab.config import load_experiment
from pgd_lab.experiments import _model_for_m, scan_settings
from pgd_lab.metrics import d_estimates, w2_empirical
from pgd_lab.models import analytic_optimum, concavity_constants, shift_to_origin
from pgd_lab.sampler import RunConfig


def sample_floor(pi_star, N, replicates, seed):
    """RMS W2 between two independent N-samples of ``pi_star``."""
    sq = []
    for r in range(replicates):
        z = rng.normals(seed, r, 7, 0, 2, N, pi_star.dim)
        sq.append(w2_empirical(pi_star.sample(z[0]), pi_star.sample(z[1])) ** 2)
    return math.sqrt(float(np.mean(sq)))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="configs/scan_m.toml")
    p.add_argument("--grid", type=int, nargs="+", default=None)
    p.add_argument("--replicates", type=int, default=None)
    args = p.parse_args(argv)

    spec = load_experiment(args.config, replicates=args.replicates)
    table = spec.table("scan")
    base = shift_to_origin(spec.model)
    grid = args.grid or table.get("grid", [2, 8, 32])
    print(f"{'M':>4} {'h':>9} {'K':>6} {'lambda':>7} {'indep d':>9} {'param':>8} "
          f"{'coupled d':>10} {'iid floor':>10}")
    for M in grid:
        model = shift_to_origin(_model_for_m(base, M))
        lam = concavity_constants(model)[0]
        h, N, K = scan_settings("m", M, model, table)
        config = RunConfig(h, N, K, seed=spec.seed)
        indep, coupled = d_estimates(config, model, spec.replicates, coupled=True)
        floor = sample_floor(analytic_optimum(model)[1], N, min(spec.replicates, 10), spec.seed)
        print(f"{M:4d} {h:9.5f} {K:6d} {lam:7.3f} {indep.estimate:9.4f} {indep.param_rmse:8.4f} "
              f"{coupled.estimate:10.4f} {floor:10.4f}", flush=True)


if __name__ == "__main__":
    main()
