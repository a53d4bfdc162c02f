"""Smoke test for the smc_py extension: python crates/smc-py/python/smoke.py"""
import math

import smc_py

p = smc_py.Problem.toy("abs_three")
assert p.dim == 1 and p.sizes == [3]
assert abs(p.objective([0.0]) + 0.125) < 1e-12

value, x, sigma = p.enumerate()
assert abs(value + 33 / 16) < 1e-9 and sigma == [2], (value, sigma)

for method in ["am", "bb", "sm", "mm", "alter", "dca"]:
    t = smc_py.run(p, method, seed=3)
    assert t["best_value"] >= value - 1e-9
    assert len(t["records"]) >= 1

m = smc_py.solve_micp(p)
assert m["status"] == "optimal" and abs(m["value"] - value) < 1e-6, m

v = smc_py.certify(p, [-1 / 16], [-0.5], [0.25])
assert v["verdict"] == "improved" and abs(v["value"] + 9 / 16) < 1e-9, v
v = smc_py.certify(p, [0.0], [-0.1], [0.1])
assert v["verdict"] == "certified_local_min", v

same = smc_py.Problem.from_json(p.to_json())
assert same.objective([0.3]) == p.objective([0.3])

plr = smc_py.Problem.plr_synthetic(20, 3, 2, 2, seed=1)
t = smc_py.run(plr, "mm", seed=1)
assert math.isfinite(t["best_value"])

try:
    p.objective([1.0, 2.0])
except ValueError:
    pass
else:
    raise AssertionError("dimension mismatch accepted")

print("smc_py smoke test passed:", sorted(smc_py.Problem.toy_names()))
