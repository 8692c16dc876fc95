"""Times driver-level workloads on the compiled lane and the pure Python
lane and prints a side-by-side table.

The lane is fixed at import, so the script re-invokes itself once per lane
in a subprocess (SAGOPT_NO_EXT=1 forces the Python lane) and merges the
two columns.  Run from the repository root:

    python3 benchmarks/bench_kernels.py
"""
import argparse
import os
import subprocess
import sys
import time


def _workloads():
    from sagopt.data import SynthSpec, synth_generate
    from sagopt.losses import LOGISTIC, SQUARED, LossModel
    from sagopt.sag import SagDriver, SamplingPolicy, StepSizePolicy
    from sagopt.baselines import SgDriver

    sparse = synth_generate(SynthSpec(5000, 200, nnz_per_row=20, seed=1))
    wide = synth_generate(SynthSpec(5000, 2000, nnz_per_row=10, seed=1))
    small = synth_generate(SynthSpec(500, 100, seed=1))
    logi = LossModel(LOGISTIC, 1e-4)
    sq = LossModel(SQUARED, 1e-4)

    def scalar():
        drv = SagDriver(logi, sparse, StepSizePolicy.one_over_16L(), seed=3)
        drv.run(2 * sparse.n)
        return 2 * sparse.n

    def scalar_ls():
        drv = SagDriver(logi, sparse, StepSizePolicy.line_search(), seed=3)
        drv.run(sparse.n)
        return sparse.n

    def jit():
        drv = SagDriver(logi, wide, StepSizePolicy.one_over_16L(), jit=True,
                        seed=3)
        drv.run(2 * wide.n)
        return 2 * wide.n

    def dense_memory():
        drv = SagDriver(sq, small, StepSizePolicy.one_over_16L(),
                        memory="generic", exact_reg=False, seed=3)
        drv.run(4 * small.n)
        return 4 * small.n

    def adaptive():
        drv = SagDriver(logi, sparse, StepSizePolicy.line_search(),
                        sampling=SamplingPolicy.lipschitz_adaptive(), seed=3)
        drv.run(sparse.n)
        return sparse.n

    def sg():
        drv = SgDriver(logi, sparse, 1e-3, seed=3)
        drv.run(2 * sparse.n)
        return 2 * sparse.n

    return [("scalar uniform", scalar), ("scalar line-search", scalar_ls),
            ("jit sparse", jit), ("dense memory", dense_memory),
            ("adaptive sampling", adaptive), ("sg", sg)]


def run_lane():
    import sagopt
    print("lane %s" % sagopt.backend_name)
    for name, fn in _workloads():
        fn()  # warm up allocation and step-size resolution caches
        t0 = time.perf_counter()
        steps = fn()
        dt = time.perf_counter() - t0
        print("%s\t%.6f\t%d" % (name, dt, steps))
    return 0


def _collect(force_python):
    env = dict(os.environ)
    if force_python:
        env["SAGOPT_NO_EXT"] = "1"
    else:
        env.pop("SAGOPT_NO_EXT", None)
    out = subprocess.run([sys.executable, os.path.abspath(__file__), "--lane"],
                         capture_output=True, text=True, env=env, check=True)
    lines = out.stdout.strip().split("\n")
    lane = lines[0].split()[1]
    rows = {}
    for line in lines[1:]:
        name, dt, steps = line.split("\t")
        rows[name] = (float(dt), int(steps))
    return lane, rows


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--lane", action="store_true",
                        help="time the lane selected at import and emit "
                             "machine-readable rows (internal)")
    args = parser.parse_args(argv)
    if args.lane:
        return run_lane()

    fast_lane, fast = _collect(force_python=False)
    _, slow = _collect(force_python=True)
    if fast_lane != "compiled":
        print("compiled lane unavailable; timing the Python lane only")
        for name, (dt, steps) in fast.items():
            print("%-20s %8.1f ms  %9.0f steps/s" % (name, dt * 1e3,
                                                     steps / dt))
        return 0

    print("%-20s %12s %12s %9s" % ("workload", "compiled", "python",
                                   "speedup"))
    for name, (dt, steps) in fast.items():
        sdt = slow[name][0]
        print("%-20s %9.1f ms %9.1f ms %8.1fx" % (name, dt * 1e3, sdt * 1e3,
                                                  sdt / dt))
    return 0


if __name__ == "__main__":
    sys.exit(main())
