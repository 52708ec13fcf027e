#!/usr/bin/env python3
"""Smoke test for the owfkit Python module.

Builds nothing itself: it locates the compiled extension under target/,
exposes it as an importable module, and runs a small end-to-end exercise
(validate, simulate, solve, and a consistency check between the two).

Usage:
    cargo build -p owfkit-python --release
    python3 python/smoke_test.py
"""

import json
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def locate_extension():
    candidates = []
    for profile in ("release", "debug"):
        base = os.path.join(ROOT, "target", profile)
        for name in ("libowfkit.so", "owfkit.so", "libowfkit.dylib", "owfkit.pyd"):
            path = os.path.join(base, name)
            if os.path.exists(path):
                candidates.append(path)
    if not candidates:
        sys.exit(
            "owfkit extension not found; build it first:\n"
            "    cargo build -p owfkit-python --release"
        )
    return max(candidates, key=os.path.getmtime)


def import_owfkit():
    src = locate_extension()
    tmp = tempfile.mkdtemp(prefix="owfkit-smoke-")
    dst = os.path.join(tmp, "owfkit.so")
    shutil.copy(src, dst)
    sys.path.insert(0, tmp)
    import owfkit

    return owfkit


def main():
    owfkit = import_owfkit()

    # built-in example round-trips through its JSON document
    inst = owfkit.example_instance("pump_tank", horizon=3)
    assert inst.validate() == [], inst.validate()
    reloaded = owfkit.load_instance(inst.to_json())
    assert reloaded.node_count == inst.node_count
    assert reloaded.link_count == inst.link_count
    print(f"validated {inst!r}")

    # an always-on schedule simulates feasible
    doc = json.loads(inst.to_json())
    pump_ids = [l["id"] for l in doc["network"]["links"] if l["kind"] == "pump"]
    always_on = {pid: [1] * inst.horizon for pid in pump_ids}
    sim = owfkit.simulate(inst, always_on)
    assert sim["feasible"], sim["violations"]
    print(f"always-on simulation cost: {sim['cost']:.4f}")

    # the solver's incumbent must re-simulate at its reported cost
    result = owfkit.solve(inst, relaxation="oa", xi=1.0)
    assert result["termination"] == "converged", result
    assert result["upper_bound"] is not None
    assert result["lower_bound"] <= result["upper_bound"] + 1e-9
    resim = owfkit.simulate(inst, result["schedule"])
    assert resim["feasible"]
    assert abs(resim["cost"] - result["upper_bound"]) <= 1e-8
    assert result["upper_bound"] <= sim["cost"] + 1e-9
    print(
        f"solve: UB={result['upper_bound']:.4f} LB={result['lower_bound']:.4f} "
        f"nodes={result['nodes']}"
    )

    # bound tightening must not change the certified optimum
    tightened = owfkit.solve(inst, relaxation="oa", xi=1.0, obbt="bt-sr")
    assert abs(tightened["upper_bound"] - result["upper_bound"]) <= 1e-6
    print("bt-sr solve agrees with the plain solve")

    # infeasibility is certified, and the gap helper matches by hand
    hopeless = owfkit.example_instance("infeasible")
    out = owfkit.solve(hopeless)
    assert out["termination"] == "infeasible"
    assert out["upper_bound"] is None
    assert abs(owfkit.gap(92.5, 102.8) - (102.8 - 92.5) / 102.8) < 1e-12
    print("smoke test passed")


if __name__ == "__main__":
    main()
