"""Print the finite-difference audit of every differentiable piece.

Each row rebuilds a fresh tape around one operation (or a whole loss),
backpropagates, and compares the tape's gradient against central
differences coordinate by coordinate.  The composite row additionally
checks the hand-derived quadrature adjoint against a brute-force dense
Jacobian.  Anything above its tolerance would make the training loop
silently optimize the wrong function, so this table is the first thing
to look at when a run misbehaves.
"""

from normalfield import gradcheck

rows = gradcheck.run_suite(seed=0)
width = max(len(r[0]) for r in rows)
print(f"{'operation':<{width}}   max rel err   tolerance")
for name, err, tol in rows:
    flag = "" if err <= tol else "   <-- FAIL"
    print(f"{name:<{width}}   {err:11.3e}   {tol:9.0e}{flag}")

gradcheck.check(rows)  # raises NumericalError on any failure
print(f"\nall {len(rows)} cases within tolerance")
