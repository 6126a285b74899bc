"""Wall-clock cost of exact LOOCV (n refits) against ACV (one fit plus
rank-one solves) as n doubles."""

from aloocv import runtime_scaling

table = runtime_scaling("ridge", (200, 400, 800, 1600), p=20, repeats=10)
print(table.to_csv(), end="")
cv, acv = table.slopes()
print(f"log-log slope: exact LOOCV {cv:.2f}, ACV {acv:.2f}")
