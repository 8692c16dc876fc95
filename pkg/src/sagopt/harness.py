"""Experiment orchestration: configs, drivers, traces, and file emission.

Everything a comparison run needs: a line-oriented config format with CLI
override semantics, a method registry mapping ids to driver constructions,
reference-optimum computation with a two-method cross-check, effective-pass
accounting, and CSV/SVG trace output.
"""
import math
import time

import numpy as np

from .baselines import AfgDriver, DcaDriver, FgDriver, PcdDriver, SgDriver
from .data import SynthSpec, parse_libsvm, synth_generate
from .losses import (LOGISTIC, SQUARED, LossModel, gradient_variance_at,
                     lipschitz_constants)
from .sag import (SagDriver, SagState, SamplingPolicy, StepSizePolicy,
                  make_minibatch_partition, minibatch_step_size,
                  sag_minibatch_step)
from .samplers import Rng

METHOD_IDS = ("sag", "sag_ls", "sag_lipschitz", "sag_ls_lipschitz",
              "sag_minibatch", "iag", "fg", "afg", "sg", "asg",
              "pcd", "pcd_l", "dca")

CSV_HEADER = "pass,objective,subopt,grad_norm,ms"

_INT_KEYS = ("seed", "batch", "synth_n", "synth_p", "synth_nnz", "synth_seed")
_FLOAT_KEYS = ("lam", "alpha", "passes", "stride", "synth_het", "synth_noise")
_STR_KEYS = ("data", "family", "method", "step", "step_rule")


def parse_config(text):
    """Parse ``key = value`` lines; ``#`` starts a comment, blanks skipped."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not sep or not key or not value:
            raise ValueError("config line %d: expected 'key = value'" % lineno)
        out[key] = value
    return out


class ExperimentConfig:
    """One experiment: dataset source, model, method, budget, seed, stride.

    The dataset comes either from a libsvm-format file (``data``) or from a
    synthetic recipe (``synth_n``/``synth_p`` plus optional sparsity,
    heterogeneity, label noise, and generation seed).
    """

    def __init__(self, method, data=None, synth_n=None, synth_p=None,
                 synth_nnz=None, synth_het=1.0, synth_noise=0.0, synth_seed=0,
                 family=LOGISTIC, lam=0.0, alpha=None, step=None, batch=None,
                 step_rule="max", passes=50.0, seed=0, stride=0.1):
        self.method = method
        self.data = data
        self.synth_n = synth_n
        self.synth_p = synth_p
        self.synth_nnz = synth_nnz
        self.synth_het = float(synth_het)
        self.synth_noise = float(synth_noise)
        self.synth_seed = int(synth_seed)
        self.family = family
        self.lam = float(lam)
        self.alpha = None if alpha is None else float(alpha)
        self.step = step
        self.batch = None if batch is None else int(batch)
        self.step_rule = step_rule
        self.passes = float(passes)
        self.seed = int(seed)
        self.stride = float(stride)
        self.validate()

    def validate(self):
        if self.method not in METHOD_IDS:
            raise ValueError("unknown method id %r" % (self.method,))
        if self.family not in (LOGISTIC, SQUARED):
            raise ValueError("family must be 'logistic' or 'squared'")
        if self.data is None and (self.synth_n is None or self.synth_p is None):
            raise ValueError("config needs either data or synth_n and synth_p")
        if not self.passes >= 1.0:
            raise ValueError("passes budget must be at least 1")
        if not self.stride > 0.0:
            raise ValueError("stride must be positive")
        if self.lam < 0.0:
            raise ValueError("lam must be nonnegative")
        if self.method == "dca" and not self.lam > 0.0:
            raise ValueError("dca requires lam > 0")
        if self.method in ("sg", "asg") and self.alpha is None:
            raise ValueError("%s needs an explicit alpha" % self.method)
        if self.method == "sag_minibatch" and self.batch is None:
            raise ValueError("sag_minibatch needs a batch size")
        if self.step_rule not in ("max", "mean", "hessian"):
            raise ValueError("step_rule must be max, mean, or hessian")
        if self.step is not None and self.step not in StepSizePolicy.MODES:
            raise ValueError("unknown step mode %r" % (self.step,))

    @classmethod
    def from_mapping(cls, mapping):
        kwargs = {}
        for key, value in mapping.items():
            if key in _INT_KEYS:
                kwargs[key] = int(value)
            elif key in _FLOAT_KEYS:
                kwargs[key] = float(value)
            elif key in _STR_KEYS:
                kwargs[key] = value
            else:
                raise ValueError("unknown config key %r" % (key,))
        if "method" not in kwargs:
            raise ValueError("config is missing 'method'")
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path, overrides=None):
        """Load a config file; ``overrides`` (a mapping of raw strings)
        wins over the file, key by key."""
        with open(path) as fh:
            mapping = parse_config(fh.read())
        if overrides:
            mapping.update(overrides)
        return cls.from_mapping(mapping)

    def replaced(self, **changes):
        fields = dict(method=self.method, data=self.data,
                      synth_n=self.synth_n, synth_p=self.synth_p,
                      synth_nnz=self.synth_nnz, synth_het=self.synth_het,
                      synth_noise=self.synth_noise, synth_seed=self.synth_seed,
                      family=self.family, lam=self.lam, alpha=self.alpha,
                      step=self.step, batch=self.batch,
                      step_rule=self.step_rule, passes=self.passes,
                      seed=self.seed, stride=self.stride)
        fields.update(changes)
        return ExperimentConfig(**fields)


def load_dataset(config):
    if config.data is not None:
        with open(config.data) as fh:
            return parse_libsvm(fh.read())
    spec = SynthSpec(config.synth_n, config.synth_p,
                     nnz_per_row=config.synth_nnz,
                     label_noise=config.synth_noise,
                     heterogeneity=config.synth_het,
                     seed=config.synth_seed)
    return synth_generate(spec)


def effective_passes(method, count, n, p=None):
    """Map a method's work counter onto the shared x-axis.

    ``count`` is single-example gradient evaluations for the gradient
    methods (line-search probes included) and iterations for dca and the
    coordinate methods.  One coordinate iteration is charged n/p
    evaluation equivalents so a coordinate pass costs O(np) like a full
    gradient; dca touches one example per iteration like sg.
    """
    if method in ("pcd", "pcd_l"):
        if p is None or p <= 0:
            raise ValueError("coordinate accounting needs p")
        return count * (n / p) / n
    return count / n


def _step_policy(config, default_mode):
    if config.alpha is not None:
        return StepSizePolicy.constant(config.alpha)
    mode = config.step if config.step is not None else default_mode
    if mode == "constant":
        raise ValueError("constant step mode needs alpha")
    if mode == "one_over_L":
        return StepSizePolicy.one_over_L()
    if mode == "one_over_16L":
        return StepSizePolicy.one_over_16L()
    if mode == "two_over_L_plus_n_mu":
        return StepSizePolicy.two_over_L_plus_n_mu()
    if mode == "line_search":
        return StepSizePolicy.line_search()
    raise ValueError("unknown step mode %r" % (mode,))


class MinibatchDriver:
    """Average-gradient iteration over a random contiguous partition into
    mini-batches, one gradient memory slot per batch."""

    def __init__(self, model, ds, batch_size, rule="max", alpha=None, seed=0):
        self.model = model
        self.ds = ds
        rng = Rng(seed)
        self.batches = make_minibatch_partition(ds.n, batch_size, rng)
        if alpha is None:
            alpha = minibatch_step_size(model, ds, self.batches, rule=rule)
        self.alpha = float(alpha)
        self.state = SagState.zeros(len(self.batches), ds.p, scalar=False)
        self.rng = rng
        self.evals = 0
        self.iters_per_pass = float(len(self.batches))

    def run(self, steps):
        nb = len(self.batches)
        for _ in range(int(steps)):
            slot = self.rng.next_index(nb)
            batch = self.batches[slot]
            sag_minibatch_step(self.state, self.model, self.ds, batch,
                               self.alpha, reweight=True)
            self.evals += len(batch.idx)
        return self

    @property
    def x(self):
        return self.state.x.copy()

    @property
    def passes(self):
        return self.evals / self.ds.n


def build_driver(config, model, ds):
    """Instantiate the driver for ``config.method``."""
    m = config.method
    seed = config.seed
    if m == "sag":
        return SagDriver(model, ds, _step_policy(config, "one_over_16L"),
                         seed=seed)
    if m == "sag_ls":
        return SagDriver(model, ds, StepSizePolicy.line_search(), seed=seed)
    if m == "sag_lipschitz":
        return SagDriver(model, ds, _step_policy(config, "one_over_16L"),
                         sampling=SamplingPolicy.lipschitz_fixed(), seed=seed)
    if m == "sag_ls_lipschitz":
        return SagDriver(model, ds, StepSizePolicy.line_search(),
                         sampling=SamplingPolicy.lipschitz_adaptive(),
                         seed=seed)
    if m == "iag":
        return SagDriver(model, ds, _step_policy(config, "one_over_16L"),
                         cyclic=True, seed=seed)
    if m == "sag_minibatch":
        return MinibatchDriver(model, ds, config.batch, rule=config.step_rule,
                               alpha=config.alpha, seed=seed)
    if m == "fg":
        if config.alpha is not None:
            alpha = config.alpha
        else:
            alpha = _step_policy(config, "one_over_L").resolve(model, ds)
        return FgDriver(model, ds, alpha)
    if m == "afg":
        return AfgDriver(model, ds)
    if m in ("sg", "asg"):
        return SgDriver(model, ds, config.alpha, seed=seed,
                        average=(m == "asg"))
    if m in ("pcd", "pcd_l"):
        return PcdDriver(model, ds, weighted=(m == "pcd_l"), seed=seed)
    if m == "dca":
        return DcaDriver(model, ds, seed=seed)
    raise ValueError("unknown method id %r" % (m,))


class ReferenceOptimum:
    """A certified minimizer: the point, its objective, the gradient-norm
    certificate, and the per-example gradient variance there."""

    def __init__(self, x_star, f_star, grad_norm_at_star, sigma_sq):
        self.x_star = x_star
        self.f_star = float(f_star)
        self.grad_norm_at_star = float(grad_norm_at_star)
        self.sigma_sq = float(sigma_sq)


class BudgetExhausted(RuntimeError):
    """Reference computation ran out of passes; ``partial`` holds the best
    point reached."""

    def __init__(self, message, partial):
        super().__init__(message)
        self.partial = partial


def _grad_norm(model, ds, x):
    return float(np.linalg.norm(model.full_gradient(ds, x)))


def compute_reference(model, ds, tol=None, budget_passes=20000, seed=0):
    """Minimize with two unrelated methods and cross-check the objectives.

    Line-search SAG carries the optimization down to the gradient-norm
    certificate (default 1e-12 relative to the initial gradient norm,
    floored at 1e-12 absolute).  The accelerated full-gradient method then
    independently confirms the objective value; it runs in warm-restart
    cycles because plain momentum oscillates near the floor, and only needs
    gradient norm 1e-9 relative since the objective agreement test is the
    actual gate.  Disagreement beyond 1e-9 relative is an error, as is
    exhausting the pass budget, which reports the best point reached.
    """
    g0 = _grad_norm(model, ds, np.zeros(ds.p))
    target = tol if tol is not None else 1e-12 * max(1.0, g0)
    cross_tol = max(target, 1e-9 * max(1.0, g0))

    def partial_at(x):
        return ReferenceOptimum(x, model.full_objective(ds, x),
                                _grad_norm(model, ds, x),
                                gradient_variance_at(model, ds, x))

    sag = SagDriver(model, ds, StepSizePolicy.line_search(), seed=seed)
    while _grad_norm(model, ds, sag.x) > target:
        if sag.passes >= budget_passes:
            raise BudgetExhausted(
                "no point with gradient norm <= %g within %g passes"
                % (target, budget_passes), partial_at(sag.x))
        sag.run(ds.n)
    x_sag = sag.x
    f_sag = model.full_objective(ds, x_sag)

    x = np.zeros(ds.p)
    fx = model.full_objective(ds, x)
    gx = _grad_norm(model, ds, x)
    l0 = 1.0
    spent = 0.0
    while gx > cross_tol:
        if spent >= budget_passes:
            raise BudgetExhausted(
                "cross-check stalled above gradient norm %g" % cross_tol,
                partial_at(x_sag))
        afg = AfgDriver(model, ds, l0=l0, x0=x)
        afg.run(30)
        spent += afg.passes
        l0 = afg.state.lhat
        xn = afg.x
        fn = model.full_objective(ds, xn)
        gn = _grad_norm(model, ds, xn)
        if (fn, gn) < (fx, gx):
            x, fx, gx = xn, fn, gn
    f_afg = fx

    if abs(f_sag - f_afg) > 1e-9 * max(1.0, abs(f_sag)):
        raise RuntimeError("reference methods disagree: %.17g vs %.17g"
                           % (f_sag, f_afg))
    return ReferenceOptimum(x_sag, min(f_sag, f_afg),
                            _grad_norm(model, ds, x_sag),
                            gradient_variance_at(model, ds, x_sag))


class Trace:
    """Recorded convergence curve: rows of (effective_passes, objective,
    suboptimality, grad_norm, elapsed_ms)."""

    def __init__(self, label, rows, reference=None):
        self.label = label
        self.rows = list(rows)
        self.reference = reference

    @property
    def final_suboptimality(self):
        if not self.rows:
            return float("nan")
        return self.rows[-1][2]


def run_experiment(config, reference=None):
    """Run one configured experiment and return its Trace.

    Deterministic for a fixed config apart from the elapsed_ms column.  A
    row is recorded at start and then about every ``stride`` effective
    passes until the budget is reached; when ``reference`` is omitted it
    is computed here first.
    """
    ds = load_dataset(config)
    model = LossModel(config.family, config.lam)
    if reference is None:
        reference = compute_reference(model, ds)
    driver = build_driver(config, model, ds)
    chunk = max(1, int(round(config.stride * driver.iters_per_pass)))
    rows = []
    t0 = time.monotonic()

    def record():
        x = driver.x
        with np.errstate(over="ignore", invalid="ignore"):
            obj = float(model.full_objective(ds, x))
            gn = _grad_norm(model, ds, x)
        ms = int((time.monotonic() - t0) * 1000)
        rows.append((float(driver.passes), obj, obj - reference.f_star,
                     gn, ms))

    record()
    while driver.passes < config.passes:
        driver.run(chunk)
        record()
    return Trace(config.method, rows, reference=reference)


class SweepResult:
    def __init__(self, best_alpha, best_trace, traces, warnings):
        self.best_alpha = best_alpha
        self.best_trace = best_trace
        self.traces = traces
        self.warnings = warnings


def default_alpha_grid(model, ds):
    """Powers of ten from 1e-3 to 1e3 around 1/L_max."""
    base = 1.0 / lipschitz_constants(model, ds).l_max
    return [base * 10.0 ** k for k in range(-3, 4)]


def grid_sweep(config, alpha_grid=None, reference=None):
    """Run the config once per step size and pick the hindsight best.

    Selection is by final suboptimality; non-finite finals never win and
    exact ties go to the smaller step size.  A warning is recorded when
    the winner sits on the grid boundary, since the true best may lie
    outside the sweep.
    """
    ds = load_dataset(config)
    model = LossModel(config.family, config.lam)
    if alpha_grid is None:
        alpha_grid = default_alpha_grid(model, ds)
    alpha_grid = sorted(float(a) for a in alpha_grid)
    if not alpha_grid:
        raise ValueError("empty alpha grid")
    if reference is None:
        reference = compute_reference(model, ds)
    traces = {}
    best_alpha = None
    best_final = math.inf
    for alpha in alpha_grid:
        trace = run_experiment(config.replaced(alpha=alpha),
                               reference=reference)
        traces[alpha] = trace
        final = trace.final_suboptimality
        if math.isfinite(final) and final < best_final:
            best_final = final
            best_alpha = alpha
    warnings = []
    if best_alpha is None:
        warnings.append("no step size in the grid produced a finite final "
                        "suboptimality")
        return SweepResult(None, None, traces, warnings)
    if len(alpha_grid) > 1 and best_alpha in (alpha_grid[0], alpha_grid[-1]):
        warnings.append("best step size %.3g sits on the grid boundary; "
                        "widen the sweep" % best_alpha)
    return SweepResult(best_alpha, traces[best_alpha], traces, warnings)


def emit_csv(trace, path):
    """Write a trace as CSV; floats carry 17 significant digits so parsing
    them back is exact."""
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for passes, obj, subopt, gn, ms in trace.rows:
            fh.write("%.17g,%.17g,%.17g,%.17g,%d\n"
                     % (passes, obj, subopt, gn, ms))


def parse_trace_csv(text, label=""):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != CSV_HEADER:
        raise ValueError("trace CSV must start with %r" % CSV_HEADER)
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 5:
            raise ValueError("trace CSV row needs 5 columns: %r" % ln)
        rows.append((float(parts[0]), float(parts[1]), float(parts[2]),
                     float(parts[3]), int(parts[4])))
    return Trace(label, rows)


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
            "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f")

_SVG_W, _SVG_H = 720, 480
_ML, _MR, _MT, _MB = 70, 150, 20, 50
_SUBOPT_FLOOR = 1e-16


def emit_svg(traces, path):
    """Plot traces as suboptimality against effective passes.

    One polyline per trace on a log10 vertical axis; suboptimality at or
    below zero is clamped to a 1e-16 floor so exact hits stay visible.
    ``traces`` is a list of (label, Trace) pairs.
    """
    pts_per = []
    xmax = 0.0
    lo_v, hi_v = math.inf, -math.inf
    for _, trace in traces:
        pts = []
        for row in trace.rows:
            passes, subopt = row[0], row[2]
            if not math.isfinite(subopt):
                continue
            v = max(subopt, _SUBOPT_FLOOR)
            pts.append((passes, v))
            xmax = max(xmax, passes)
            lo_v = min(lo_v, v)
            hi_v = max(hi_v, v)
        pts_per.append(pts)
    if not math.isfinite(lo_v):
        lo_v = hi_v = 1.0
    if xmax <= 0.0:
        xmax = 1.0
    lo = math.floor(math.log10(lo_v))
    hi = math.ceil(math.log10(hi_v))
    if hi <= lo:
        hi = lo + 1

    px_w = _SVG_W - _ML - _MR
    px_h = _SVG_H - _MT - _MB

    def sx(t):
        return _ML + (t / xmax) * px_w

    def sy(v):
        return _MT + (hi - math.log10(v)) / (hi - lo) * px_h

    parts = []
    parts.append('<svg xmlns="http://www.w3.org/2000/svg" width="%d" '
                 'height="%d" viewBox="0 0 %d %d">'
                 % (_SVG_W, _SVG_H, _SVG_W, _SVG_H))
    parts.append('<rect width="%d" height="%d" fill="white"/>'
                 % (_SVG_W, _SVG_H))
    parts.append('<line x1="%d" y1="%d" x2="%d" y2="%d" stroke="black"/>'
                 % (_ML, _MT + px_h, _ML + px_w, _MT + px_h))
    parts.append('<line x1="%d" y1="%d" x2="%d" y2="%d" stroke="black"/>'
                 % (_ML, _MT, _ML, _MT + px_h))
    for i in range(5):
        t = xmax * i / 4.0
        x = sx(t)
        parts.append('<line x1="%.1f" y1="%d" x2="%.1f" y2="%d" '
                     'stroke="black"/>' % (x, _MT + px_h, x, _MT + px_h + 5))
        parts.append('<text x="%.1f" y="%d" font-size="12" '
                     'text-anchor="middle">%g</text>'
                     % (x, _MT + px_h + 20, t))
    dec_step = max(1, (hi - lo) // 8)
    for e in range(lo, hi + 1, dec_step):
        y = sy(10.0 ** e)
        parts.append('<line x1="%d" y1="%.1f" x2="%d" y2="%.1f" '
                     'stroke="black"/>' % (_ML - 5, y, _ML, y))
        parts.append('<text x="%d" y="%.1f" font-size="12" '
                     'text-anchor="end">1e%d</text>' % (_ML - 8, y + 4, e))
    parts.append('<text x="%.1f" y="%d" font-size="13" '
                 'text-anchor="middle">effective passes</text>'
                 % (_ML + px_w / 2.0, _SVG_H - 10))
    parts.append('<text x="15" y="%.1f" font-size="13" text-anchor="middle" '
                 'transform="rotate(-90 15 %.1f)">suboptimality</text>'
                 % (_MT + px_h / 2.0, _MT + px_h / 2.0))
    for i, ((label, _), pts) in enumerate(zip(traces, pts_per)):
        color = _PALETTE[i % len(_PALETTE)]
        coords = " ".join("%.2f,%.2f" % (sx(t), sy(v)) for t, v in pts)
        parts.append('<polyline fill="none" stroke="%s" stroke-width="1.5" '
                     'points="%s"/>' % (color, coords))
        ly = _MT + 14 + 18 * i
        lx = _ML + px_w + 12
        parts.append('<line x1="%d" y1="%d" x2="%d" y2="%d" stroke="%s" '
                     'stroke-width="2"/>' % (lx, ly - 4, lx + 22, ly - 4,
                                             color))
        parts.append('<text x="%d" y="%d" font-size="12">%s</text>'
                     % (lx + 28, ly, label))
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
