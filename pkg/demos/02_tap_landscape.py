"""The TAP free energy is locally convex where AMP ends up.

Away from the AMP endpoint the TAP landscape is not convex: at the origin
the Hessian has a negative direction along the spike. Near the endpoint
``m^{k-1}`` every probed Hessian is positive definite, and damped Newton
from there finds a single stationary point that random restarts inside the
ball all return to.

Run: python demos/02_tap_landscape.py
"""
import numpy as np

from postamp import ModelParams, TapContext, Variant, make_instance, run_amp_z2
from postamp.tap import convexity_probe, find_stationary_point, gradient, lambda_min

LAM, GAMMA0, K, N, EPS = 1.5, 0.3, 12, 1000, 0.05

for variant in Variant:
    inst = make_instance(ModelParams(N, LAM, GAMMA0, variant), seed=3)
    ctx = TapContext.from_instance(inst)
    trace = run_amp_z2(inst, K)
    center = trace.m(K - 1)
    print(f"{variant.value}  (n={N}, k={K}, ball radius eps={EPS} in units of sqrt(n))")

    origin, _ = lambda_min(ctx, np.zeros(N))
    print(f"  lambda_min(n Hessian) at the origin:        {origin:+.4f}")

    m_star, diag = find_stationary_point(ctx, center, EPS, n_restarts=5, seed=0)
    probe = convexity_probe(ctx, trace, K, EPS, n_points=20, seed=0, m_star=m_star)
    print(f"  lambda_min at the AMP endpoint:             {probe.points[0].lam_min:+.4f}")
    print(f"  smallest over {probe.n_points} probed ball points:     {probe.global_min:+.4f}")

    print(f"  Newton: {diag['iterations']} steps, |grad F| = {np.linalg.norm(gradient(ctx, m_star)):.1e}, "
          f"|m* - m^(k-1)|/sqrt(n) = {diag['distance_from_init']:.4f}")
    print(f"  {len(diag['restart_distances'])} restarts land within "
          f"{diag['restart_spread']:.1e} of m* (units of sqrt(n))\n")

print("For FMM the origin eigenvalue sits near zero: n H(0) = (1 + lam^2) I - lam Y and the top")
print("eigenvalue of Y tends to lam + 1/lam, so the limit is exactly 0 and the sign at finite n is noise.")
