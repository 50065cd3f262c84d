"""Regenerate the frozen 64x64 conjugate-gradient regression fixture.

Runs 32 single-precision iterations and a double-precision rerun, checks they
agree within rel 1e-3 for every iteration before their line searches first
pick different steps, and writes tests/data/golden_cg64.json.
"""

import json
from pathlib import Path

import numpy as np

from ptyhybrid.simkit import SimConfig, simulate
from ptyhybrid.solver import run_reference

GOLDEN = SimConfig(height=64, width=64, probe_size=16, spokes=16, step=8,
                   jitter=2, seed=23, chirp=8.0)
ITERS = 32
OUT = Path(__file__).resolve().parents[1] / "tests" / "data" / "golden_cg64.json"


def main():
    ds = simulate(GOLDEN)
    assert len(ds.scan) == 49
    psi, single = run_reference(ds, iters=ITERS)
    _, double = run_reference(ds, iters=ITERS, dtype=np.complex128)
    fork = next((i for i, (a, b) in enumerate(zip(single, double))
                 if a.gamma != b.gamma), ITERS)
    worst = max(abs(a.objective - b.objective) / abs(b.objective)
                for a, b in zip(single[:fork], double[:fork]))
    print(f"step sequences fork at iteration {fork}; "
          f"max rel objective gap before it: {worst:.3e}")
    assert worst <= 1e-3
    record = {
        "config": GOLDEN.as_dict(),
        "iters": ITERS,
        "objective": [t.objective for t in single],
        "gamma": [t.gamma for t in single],
        "shrinks": [t.shrinks for t in single],
        "step_norm": [t.step_norm for t in single],
        "objective_double": [t.objective for t in double],
    }
    OUT.write_text(json.dumps(record, indent=1) + "\n")
    print(f"wrote {OUT}")
    for t in single[::4]:
        print(t.iter, t.objective, t.gamma, t.shrinks, t.step_norm)


if __name__ == "__main__":
    main()
