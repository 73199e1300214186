"""Integrate the Gaussian moment flow of the toy model and print its decay rates."""

import argparse

import numpy as np

from pgd_lab import FlowState, GaussianMeasure, integrate_flow, distance_decay_excess, toy_model
from pgd_lab.calculus import debruijn_residual, trajectory_table
from pgd_lab.metrics import exp_rate_fit
from pgd_lab.models import concavity_constants


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--theta0", type=float, default=0.0)
    p.add_argument("--mean0", type=float, default=0.0)
    p.add_argument("--var0", type=float, default=1.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--horizon", type=float, default=10.0, help="t_end in units of 1/lambda")
    args = p.parse_args(argv)

    model = toy_model(1.0)
    lam = concavity_constants(model)[0]
    init = FlowState(np.array([args.theta0]), GaussianMeasure([args.mean0], [[args.var0]]))
    traj = integrate_flow(model, init, args.horizon / lam, args.dt)
    ts, gaps, info, dist = trajectory_table(model, traj)

    print(f"lambda = {lam:.6f}, {len(traj)} states, t_end = {ts[-1]:.3f}")
    print(f"{'t':>8} {'F - F*':>12} {'I':>12} {'d':>12}")
    for i in np.linspace(0, len(ts) - 1, 11).astype(int):
        print(f"{ts[i]:8.3f} {gaps[i]:12.4e} {info[i]:12.4e} {dist[i]:12.4e}")
    pos = gaps > 0
    print(f"fitted rate of F - F*: {exp_rate_fit(ts[pos], gaps[pos]).rate / lam:.4f} lambda")
    print(f"fitted rate of d:      {exp_rate_fit(ts, dist).rate / lam:.4f} lambda")
    print(f"max d_t e^(lambda t) - d_0: {distance_decay_excess(model, traj).max():.3e}")
    print(f"max de Bruijn residual: {debruijn_residual(model, traj).max():.3e}")


if __name__ == "__main__":
    main()
