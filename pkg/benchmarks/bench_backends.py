"""Time the numba kernels against the numpy fallback on the same stream.

Each backend runs in its own interpreter (the choice is made at import).
Reports ms/record after warm-up and whether the two produced identical
scores.

    python benchmarks/bench_backends.py --records 3000 --generator noisy_spikes
"""

import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import hashlib, json, sys, time
import numpy as np
import htmstream
from htmstream import synth
from htmstream.ingest import Detector, PipelineConfig

name, n, warm, seed = sys.argv[1], int(sys.argv[2]), int(sys.argv[3]), int(sys.argv[4])
records, _ = synth.generate(name, seed, n + warm)
det = Detector(PipelineConfig(), probation=min(750, int(0.15 * len(records))))
h = hashlib.sha1()
for r in records[:warm]:
    out = det.process(r)
    h.update(np.float64([out.raw_score, out.likelihood]).tobytes())
t0 = time.perf_counter()
for r in records[warm:]:
    out = det.process(r)
    h.update(np.float64([out.raw_score, out.likelihood]).tobytes())
elapsed = time.perf_counter() - t0
print(json.dumps({"backend": htmstream.BACKEND, "ms_per_record": 1000 * elapsed / n,
                  "segments": det.tm.num_segments, "digest": h.hexdigest()}))
"""


def run(backend, args):
    env = dict(os.environ, HTMSTREAM_BACKEND=backend)
    cmd = [sys.executable, "-c", CHILD, args.generator, str(args.records), str(args.warmup),
           str(args.seed)]
    proc = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--generator", default="noisy_spikes")
    p.add_argument("--records", type=int, default=3000, help="timed records")
    p.add_argument("--warmup", type=int, default=200, help="untimed leading records")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--backends", default="numba,numpy")
    args = p.parse_args(argv)

    results = [run(b.strip(), args) for b in args.backends.split(",") if b.strip()]
    print(f"{'backend':8} {'ms/record':>10} {'segments':>9}")
    for r in results:
        print(f"{r['backend']:8} {r['ms_per_record']:10.3f} {r['segments']:9d}")
    if len(results) > 1:
        same = len({r["digest"] for r in results}) == 1
        base = results[0]["ms_per_record"]
        for r in results[1:]:
            print(f"{r['backend']} / {results[0]['backend']}: {r['ms_per_record'] / base:.1f}x")
        print("outputs identical" if same else "OUTPUTS DIFFER")
        return 0 if same else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
