"""Follower game: find the Nash quasi-equilibrium for a fixed leader.

For a fixed leader control h, the two followers minimize their tracking
functionals J_1, J_2.  The script runs the Picard iteration on the
coupled optimality system, reports the equilibrium residuals, and scans
J_1 along a control line through the equilibrium to show the convex
landscape (exactly a parabola when F = 0).

Run:  python3 demos/nash_followers.py
"""

import numpy as np

from degcontrol.grids import TrajectoryField
from degcontrol.nash import (
    GameSpec,
    convexity_margin,
    evaluate_functional,
    make_default_targets,
    nash_fixed_point,
)
from degcontrol.solvers import CylinderProblem, solve_forward_semilinear

prob = CylinderProblem.default(N=64, M=128)
game = GameSpec(mu1=5.0, mu2=5.0)
game.target1, game.target2 = make_default_targets(prob)

x = prob.grid.nodes
y0 = 0.05 * np.sin(np.pi * x)
y0[0] = y0[-1] = 0.0
h = TrajectoryField.from_function(
    prob.grid, prob.mesh, lambda x, t: 0.05 * np.sin(np.pi * x) * (1 + t))

sol = nash_fixed_point(prob, game, h, y0)
print(f"sweeps to convergence : {len(sol.history)}")
print(f"grad J1 residual      : {sol.residuals['grad_J1']:.3e}")
print(f"grad J2 residual      : {sol.residuals['grad_J2']:.3e}")

rep = convexity_margin(prob, game, sol, probes=6,
                       rng=np.random.default_rng(0))
print(f"convexity margin      : {rep['margin']:.4f} "
      f"(mu = {game.mu1}, certified = {rep['certified']})")

print("\nJ1 along a control line through the equilibrium:")
d = prob.new_field()
d.values[:] = (np.sin(np.pi * x) * prob.indicator("O1"))[None, :]
for eps in (-0.2, -0.1, 0.0, 0.1, 0.2):
    v1 = sol.v1 + eps * d
    y = solve_forward_semilinear(prob, y0, h=h, v1=v1, v2=sol.v2)
    print(f"  eps = {eps:+.1f}  J1 = {evaluate_functional(prob, game, 1, y, v1):.8f}")
