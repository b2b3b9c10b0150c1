"""The scalar max-min certificate behind local convexity.

In the large-n limit the Hessian question reduces to a four-variable
max-min problem over ``(rho, u)`` and dual variables. At ``alpha_v = 0`` the
value at the origin is exactly zero; the Schur-complement signs show the
origin is a strict local maximum, and a small positive ``alpha_v`` turns it
into a strictly negative value, i.e. a positive convexity margin.

Run: python demos/04_scalar_certificate.py
"""
from postamp.maxmin import MaxMinQuery, L_value, ScalarParams, ibp_identities, margin_search, schur_certificate

print("Schur certificate: need c2 > 0 and c1 + q c2 < 0")
print("  variant   lam      q_inf        c1        c2   c1+q*c2   max IBP residual")
for variant, lam, g0 in [("FMM", l, 0.0) for l in (1.1, 1.5, 3.0)] + [("AMS", l, 0.3) for l in (0.3, 0.9, 1.2)]:
    p = ScalarParams.solve(lam, g0, 1 if variant == "AMS" else 0)
    c = schur_certificate(p)
    print(f"  {variant}     {lam:4.2f}   {p.q_inf:.5f}  {c.c1:+9.4f} {c.c2:+9.4f} {c.schur:+9.4f}"
          f"   {ibp_identities(p).max():.1e}")

p = ScalarParams.solve(1.5, 0.1, 0)
print(f"\nL(0,0;0,0,0) at lam=1.5 FMM: {L_value(MaxMinQuery(), p):+.2e}")
res = margin_search(p, alpha_v_grid=[0.0, 0.05, 0.1, 0.2, 0.3])
print("  alpha_v   sup over (rho,u)   argmax        inner minimiser      dual box")
for r in res.rows:
    print(f"  {r.alpha_v:6.2f}   {r.sup_value:+14.6f}   ({r.argmax_rho:+.2f},{r.argmax_u:+.2f})"
          f"   ({r.inner_alpha_rho:+.1e},{r.inner_alpha_u:+.1e})   {r.box:7.1f}")
print(f"Certified margin {res.margin_c:.4f} at alpha_v = {res.alpha_v_star}")

p3 = ScalarParams.solve(3.0, 0.0, 0)
res3 = margin_search(p3, alpha_v_grid=[0.1], grid_points=81)
print(f"\nAt lam=3 FMM the inner minimisers leave [-10,10]^2 (1 - b/q = {1 - p3.b_inf / p3.q_inf:.4f});")
print(f"the search widens the dual box to {res3.rows[0].box:.0f} and still certifies: {res3.certified}")
