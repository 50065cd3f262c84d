"""Desk-scale convergence run: 256x256 Siemens star, 64x64 probe, 128 CG
iterations on 1, 2 and 4 workers.

Prints final SSIM/PSNR per worker count and writes one trace file per run.
"""

import argparse
from pathlib import Path

from ptyhybrid.engine import EngineConfig, run_parallel
from ptyhybrid.metrics import evaluate, scan_crop
from ptyhybrid.ptyio import TraceWriter
from ptyhybrid.simkit import SimConfig, simulate


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--iters", type=int, default=128)
    parser.add_argument("--workers", default="1,2,4")
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--out", default="desk_runs")
    args = parser.parse_args()

    ds = simulate(SimConfig(seed=args.seed))
    crop = scan_crop(ds.scan, ds.probe_size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    print(f"{len(ds.scan)} patterns, crop {crop}")
    for P in (int(p) for p in args.workers.split(",")):
        with TraceWriter(out / f"trace_P{P}.csv", parallel=True) as writer:
            result = run_parallel(ds, EngineConfig(workers=P), iters=args.iters,
                                  callback=writer)
        rep = evaluate(result.psi, ds.psi_ref, crop)
        print(f"P={P}: F={result.traces[-1].objective:.6g} ssim={rep.ssim:.4f} "
              f"psnr={rep.psnr_db:.2f} dB total={result.timing['total_s']:.1f}s")


if __name__ == "__main__":
    main()
