"""Command-line front end.

Every task reads one flat JSON config, writes fixed-name artifacts into
the --out directory, and drops a manifest.json echoing the config, the
effective seed, and package versions.  A rerun with the same config and
seed must produce byte-identical files, so nothing here records wall
clock time; metrics rows carry runtime_seconds = 0.0 on purpose.

Measurement files remember how they were made: the operator tag encodes
the modality and geometry (for example ``ct:64x64:30x95``), and recon
rebuilds the forward operator from it rather than asking the config to
repeat the numbers.
"""

import argparse
import json
import os
import platform
import sys

import numpy as np

from . import __version__
from .classical import (EdgeRegConfig, HankelConfig, LpsConfig,
                        fista_analysis_l1, hankel_complete, lps_reconstruct,
                        pwls_ep)
from .cnn import ConvNetParams, train_denoiser
from .core import Image, Trace, identity_operator
from .errors import ConfigError
from .fileio import (read_image, read_measurements, read_model, write_image,
                     write_measurements, write_model, write_pgm)
from .fixedbases import haar2_operator
from .forward import (CtGeometry, Measurements, build_blur, build_masked_dft,
                      build_radon, fbp, random_mask, simulate_ct,
                      simulate_gaussian)
from .learning import (Dictionary, Transform, UnionTransformModel,
                       learn_dictionary_soup, learn_transform, learn_ultra)
from .metrics import MetricsRow, psnr, rmse, write_metrics_csv
from .patches import PatchConfig, extract_patches
from .phantom import shepp_logan, shepp_logan_variant
from .recon import (Denoiser, HqsSchedule, ReconConfig, pnp_hqs,
                    recon_dictionary, recon_pwls_ultra)
from .superlearn import (CnnConfig, SuperModel, TrainSet, UltraConfig,
                         super_reconstruct, super_train)

RECON_METHODS = ("fbp", "fista", "pwls-ep", "pwls-ultra", "dict", "pnp",
                 "lps", "hankel")


class _Params:
    """Flat config dict with typo detection: every key must be consumed."""

    def __init__(self, raw, task):
        if not isinstance(raw, dict):
            raise ConfigError(f"{task}: config must be a JSON object")
        self.raw = raw
        self.task = task
        self.used = set()

    def req(self, key):
        if key not in self.raw:
            raise ConfigError(f"{self.task}: missing required field {key!r}")
        self.used.add(key)
        return self.raw[key]

    def opt(self, key, default):
        self.used.add(key)
        return self.raw.get(key, default)

    def finish(self):
        unknown = sorted(set(self.raw) - self.used)
        if unknown:
            raise ConfigError(
                f"{self.task}: unknown config keys {', '.join(unknown)}")


def _patch_config(p, default_side=None):
    """patch_rows/patch_cols/stride/boundary keys, shared across tasks."""
    side = p.opt("patch_rows", default_side)
    if side is None:
        raise ConfigError(f"{p.task}: missing required field 'patch_rows'")
    return PatchConfig(int(side), int(p.opt("patch_cols", side)),
                       stride=int(p.opt("stride", 1)),
                       boundary=p.opt("boundary", "wrap"))


def _square_side(n):
    s = int(np.sqrt(n) + 0.5)
    return s if s * s == n else None


def _load_patch_matrix(paths, pcfg):
    blocks = [extract_patches(read_image(path), pcfg) for path in paths]
    return np.hstack(blocks)


# ---------------------------------------------------------------------------
# operator tags

def _dims(text, what):
    try:
        parts = tuple(int(t) for t in text.split("x"))
    except ValueError:
        parts = ()
    if not parts:
        raise ConfigError(f"malformed {what} in operator tag: {text!r}")
    return parts


def operator_from_tag(tag):
    """Rebuild the forward operator a measurement file was made with.

    Returns (operator, (rows, cols, frames), geometry-or-None).
    """
    fields = tag.split(":")
    kind = fields[0]
    if kind == "ct":
        rows, cols = _dims(fields[1], "image size")
        n_views, n_det = _dims(fields[2], "sinogram size")
        geom = CtGeometry(rows, cols, n_views, n_det)
        return build_radon(geom), (rows, cols, 1), geom
    if kind == "dft":
        rows, cols = _dims(fields[1], "image size")
        mask = random_mask(rows, cols, float(fields[2]), seed=int(fields[3]))
        return build_masked_dft(mask), (rows, cols, 1), None
    if kind == "blur":
        rows, cols = _dims(fields[1], "image size")
        kernel = np.full((3, 3), 1.0 / 9.0)
        return build_blur(rows, cols, kernel), (rows, cols, 1), None
    if kind == "id":
        rows, cols, frames = _dims(fields[1], "image size")
        return identity_operator(rows * cols * frames), (rows, cols, frames), None
    raise ConfigError(f"unknown operator tag {tag!r}")


# ---------------------------------------------------------------------------
# task handlers; each gets (_Params, seed, out_dir, want_trace)

def _write_manifest(out, task, method, raw_config, seed):
    manifest = {
        "task": task,
        "method": method,
        "config": raw_config,
        "seed": seed,
        "versions": {
            "mbirlab": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _maybe_pgm(want, out, name, img):
    if want:
        write_pgm(os.path.join(out, name), img)


def _task_phantom(p, seed, out, want_trace):
    rows = int(p.req("rows"))
    cols = int(p.req("cols"))
    want_pgm = p.opt("pgm", False)
    variant = p.opt("variant_seed", None)
    if variant is None:
        img = shepp_logan(rows, cols)
    else:
        img = shepp_logan_variant(rows, cols, int(variant),
                                  jitter=float(p.opt("jitter", 0.06)))
    p.finish()
    write_image(os.path.join(out, "phantom.bfi"), img)
    _maybe_pgm(want_pgm, out, "phantom.pgm", img)


def _task_simulate(p, seed, out, want_trace):
    img = read_image(p.req("image"))
    modality = p.opt("modality", "ct")
    if modality == "ct":
        n_views = int(p.req("n_views"))
        n_det = int(p.req("n_detectors"))
        geom = CtGeometry(img.rows, img.cols, n_views, n_det)
        meas = simulate_ct(img, geom, float(p.req("i0")), seed=seed,
                           noiseless=bool(p.opt("noiseless", False)))
        meas.operator_tag = f"ct:{img.rows}x{img.cols}:{n_views}x{n_det}"
    elif modality in ("dft", "blur", "identity"):
        sigma = float(p.req("sigma"))
        if modality == "dft":
            fraction = float(p.req("fraction"))
            mask_seed = int(p.opt("mask_seed", seed))
            A = build_masked_dft(random_mask(img.rows, img.cols, fraction,
                                             seed=mask_seed))
            tag = f"dft:{img.rows}x{img.cols}:{fraction!r}:{mask_seed}"
        elif modality == "blur":
            A = build_blur(img.rows, img.cols, np.full((3, 3), 1.0 / 9.0))
            tag = f"blur:{img.rows}x{img.cols}"
        else:
            A = identity_operator(img.rows * img.cols * img.frames)
            tag = f"id:{img.rows}x{img.cols}x{img.frames}"
        meas = simulate_gaussian(img, A, sigma, seed=seed)
        meas.operator_tag = tag
    else:
        raise ConfigError(f"simulate: unknown modality {modality!r}")
    p.finish()
    write_measurements(os.path.join(out, "measurements.bfm"), meas)


def _learn_common(p, seed, out, want_trace, fit):
    pcfg = _patch_config(p)
    X = _load_patch_matrix(p.req("images"), pcfg)
    trace = Trace() if want_trace else None
    model = fit(p, X, trace)
    p.finish()
    write_model(os.path.join(out, "model.stm"), model)
    if trace is not None:
        trace.write_csv(os.path.join(out, "trace.csv"))


def _task_learn_transform(p, seed, out, want_trace):
    def fit(p, X, trace):
        model, _ = learn_transform(X, float(p.req("gamma")),
                                   int(p.opt("iters", 20)), seed=seed,
                                   trace=trace)
        return model
    _learn_common(p, seed, out, want_trace, fit)


def _task_learn_ultra(p, seed, out, want_trace):
    def fit(p, X, trace):
        model, _ = learn_ultra(X, int(p.req("K")), float(p.req("gamma")),
                               int(p.opt("iters", 20)), seed=seed, trace=trace)
        return model
    _learn_common(p, seed, out, want_trace, fit)


def _task_learn_dict(p, seed, out, want_trace):
    def fit(p, X, trace):
        return learn_dictionary_soup(X, float(p.req("lam")),
                                     int(p.req("atoms")),
                                     int(p.opt("iters", 20)), seed=seed,
                                     trace=trace)
    _learn_common(p, seed, out, want_trace, fit)


def _model_patch_side(p, n, what):
    side = _square_side(n)
    if side is None and "patch_rows" not in p.raw:
        raise ConfigError(
            f"{p.task}: {what} size {n} is not square, so the field "
            f"'patch_rows' is required")
    return side


def _recon_config(p, model_side, default_gamma=None):
    gamma = p.opt("gamma", default_gamma)
    if gamma is None:
        raise ConfigError(f"{p.task}: missing required field 'gamma'")
    return ReconConfig(beta=float(p.req("beta")), gamma=float(gamma),
                       patches=_patch_config(p, default_side=model_side),
                       outer_iters=int(p.opt("outer_iters", 20)),
                       cg_tol=float(p.opt("cg_tol", 1e-8)),
                       cg_iters=int(p.opt("cg_iters", 100)))


def _initial_image(meas, A, dims, geom):
    if geom is not None:
        return fbp(meas, geom, radon=A)
    return Image.zeros(*dims)


def _load_denoiser(p):
    spec = p.req("denoiser")
    if spec == "median":
        return Denoiser("median")
    model = read_model(spec)
    if isinstance(model, ConvNetParams):
        return Denoiser("convnet", net=model)
    if isinstance(model, Transform):
        side = _model_patch_side(p, model.n, "transform")
        return Denoiser("transform_threshold", transform=model,
                        gamma=float(p.req("gamma")),
                        patches=_patch_config(p, default_side=side))
    raise ConfigError(
        f"recon: denoiser model must be a transform or a convnet, "
        f"got {type(model).__name__}")


def _task_recon(p, seed, out, want_trace, method):
    if method == "hankel":
        return _recon_hankel(p, out, want_trace)
    meas = read_measurements(p.req("measurements"))
    A, dims, geom = operator_from_tag(meas.operator_tag)
    trace = Trace() if want_trace else None
    iterations = 0

    if method == "fbp":
        if geom is None:
            raise ConfigError("recon: fbp needs ct measurements")
        xhat = fbp(meas, geom, radon=A)
    elif method == "fista":
        iters = int(p.opt("iters", 200))
        if p.opt("sparsifier", "haar") != "haar":
            raise ConfigError("recon: the only built-in sparsifier is 'haar'")
        Wt = haar2_operator(dims[0], dims[1])
        xhat = fista_analysis_l1(meas, A, Wt, float(p.req("beta")), iters,
                                 Image.zeros(*dims), trace=trace)
        iterations = iters
    elif method == "pwls-ep":
        iters = int(p.opt("iters", 100))
        cfg = EdgeRegConfig(beta=float(p.req("beta")),
                            delta=float(p.req("delta")))
        xhat = pwls_ep(meas, A, cfg, iters, _initial_image(meas, A, dims, geom),
                       trace=trace)
        iterations = iters
    elif method == "pwls-ultra":
        model = read_model(p.req("model"))
        if not isinstance(model, UnionTransformModel):
            raise ConfigError("recon: pwls-ultra needs a union-of-transforms "
                              f"model, got {type(model).__name__}")
        side = _model_patch_side(p, model.n, "transform")
        cfg = _recon_config(p, side, default_gamma=model.gamma)
        xhat, _ = recon_pwls_ultra(meas, A, model, cfg,
                                   _initial_image(meas, A, dims, geom),
                                   trace=trace)
        iterations = cfg.outer_iters
    elif method == "dict":
        model = read_model(p.req("model"))
        if not isinstance(model, Dictionary):
            raise ConfigError("recon: dict needs a dictionary model, "
                              f"got {type(model).__name__}")
        side = _model_patch_side(p, model.atoms.shape[0], "atom")
        cfg = _recon_config(p, side)
        xhat = recon_dictionary(meas, A, model, cfg,
                                _initial_image(meas, A, dims, geom),
                                trace=trace)
        iterations = cfg.outer_iters
    elif method == "pnp":
        den = _load_denoiser(p)
        sched = HqsSchedule(alpha0=float(p.req("alpha0")),
                            beta=float(p.req("beta")),
                            growth=float(p.opt("growth", 1.3)))
        iterations = int(p.opt("iters", 30))
        xhat = pnp_hqs(meas, A, den, sched, iterations,
                       _initial_image(meas, A, dims, geom),
                       cg_tol=float(p.opt("cg_tol", 1e-8)),
                       cg_iters=int(p.opt("cg_iters", 200)), trace=trace)
    elif method == "lps":
        cfg = LpsConfig(lambda_l=float(p.req("lambda_l")),
                        lambda_s=float(p.req("lambda_s")),
                        iters=int(p.opt("iters", 100)))
        xl, xs = lps_reconstruct(meas, A, cfg, Image.zeros(*dims), trace=trace)
        write_image(os.path.join(out, "low_rank.bfi"), xl)
        write_image(os.path.join(out, "sparse.bfi"), xs)
        xhat = Image(xl.rows, xl.cols, xl.frames, xl.data + xs.data)
        iterations = cfg.iters
    else:
        raise ConfigError(f"recon: unknown method {method!r}")

    reference = p.opt("reference", None)
    peak = float(p.opt("peak", 1.0))
    want_pgm = p.opt("pgm", False)
    p.finish()
    write_image(os.path.join(out, "recon.bfi"), xhat)
    _maybe_pgm(want_pgm, out, "recon.pgm", xhat)
    if trace is not None:
        trace.write_csv(os.path.join(out, "trace.csv"))
    if reference is not None:
        ref = read_image(reference)
        row = MetricsRow(method, psnr(xhat, ref, peak), rmse(xhat, ref),
                         0.0, iterations)
        write_metrics_csv(os.path.join(out, "metrics.csv"), [row])


def _recon_hankel(p, out, want_trace):
    meas = read_measurements(p.req("measurements"))
    cfg = HankelConfig(n=int(p.req("n")), d=int(p.req("d")),
                       sample_set=np.asarray(p.req("samples"), dtype=int),
                       rho=float(p.opt("rho", 1.0)),
                       iters=int(p.opt("iters", 300)))
    if meas.y.size != cfg.sample_set.size:
        raise ConfigError(
            f"recon: {meas.y.size} measured values for "
            f"{cfg.sample_set.size} sample indices")
    values = np.zeros(cfg.n, dtype=complex)
    values[cfg.sample_set] = meas.y
    trace = Trace() if want_trace else None
    completed = hankel_complete(values, cfg, trace=trace)
    p.finish()
    write_measurements(os.path.join(out, "signal.bfm"),
                       Measurements(completed, operator_tag="hankel"))
    if trace is not None:
        trace.write_csv(os.path.join(out, "trace.csv"))


def _task_train_denoiser(p, seed, out, want_trace):
    pairs = [(read_image(noisy), read_image(clean))
             for noisy, clean in p.req("pairs")]
    trace = Trace() if want_trace else None
    theta = train_denoiser(pairs, int(p.opt("epochs", 100)),
                           float(p.opt("lr", 0.02)), int(p.opt("batch", 4)),
                           seed=seed, channels=int(p.opt("channels", 16)),
                           trace=trace)
    p.finish()
    write_model(os.path.join(out, "model.stm"), theta)
    if trace is not None:
        trace.write_csv(os.path.join(out, "trace.csv"))


def _task_super_train(p, seed, out, want_trace):
    supervised = []
    geom = None
    for ref_path, meas_path in p.req("supervised"):
        meas = read_measurements(meas_path)
        _, _, g = operator_from_tag(meas.operator_tag)
        if g is None:
            raise ConfigError("super-train: supervised measurements must be ct")
        if geom is None:
            geom = g
        elif g != geom:
            raise ConfigError("super-train: all supervised measurements must "
                              "share one geometry")
        supervised.append((read_image(ref_path), meas))
    unsupervised = [read_image(path) for path in p.req("unsupervised")]
    pcfg = _patch_config(p)
    recon_cfg = ReconConfig(beta=float(p.req("beta")),
                            gamma=float(p.req("gamma")), patches=pcfg,
                            outer_iters=int(p.opt("outer_iters", 5)),
                            cg_tol=float(p.opt("cg_tol", 1e-8)),
                            cg_iters=int(p.opt("cg_iters", 100)))
    ultra_cfg = UltraConfig(K=int(p.opt("K", 3)),
                            learn_gamma=float(p.opt("learn_gamma", 0.1)),
                            learn_iters=int(p.opt("learn_iters", 20)),
                            recon=recon_cfg)
    cnn_cfg = CnnConfig(channels=int(p.opt("channels", 8)),
                        epochs=int(p.opt("epochs", 50)),
                        lr=float(p.opt("lr", 0.02)),
                        batch=int(p.opt("batch", 4)))
    L = int(p.req("layers"))
    mu = float(p.req("mu"))
    stats = Trace(("layer", "train_mse", "mean_psnr")) if want_trace else None
    p.finish()
    model = super_train(TrainSet(supervised, unsupervised), geom, L, mu,
                        ultra_cfg, cnn_cfg, seed=seed, stats=stats)
    write_model(os.path.join(out, "model.stm"), model)
    if stats is not None:
        stats.write_csv(os.path.join(out, "layers.csv"))


def _task_super_recon(p, seed, out, want_trace):
    meas = read_measurements(p.req("measurements"))
    A, dims, geom = operator_from_tag(meas.operator_tag)
    if geom is None:
        raise ConfigError("super-recon: measurements must be ct")
    model = read_model(p.req("model"))
    if not isinstance(model, SuperModel):
        raise ConfigError(
            f"super-recon: model file holds a {type(model).__name__}, "
            "expected a layered model")
    trace = Trace() if want_trace else None
    xhat = super_reconstruct(meas, A, model, fbp(meas, geom, radon=A),
                             trace=trace)
    reference = p.opt("reference", None)
    peak = float(p.opt("peak", 1.0))
    want_pgm = p.opt("pgm", False)
    p.finish()
    write_image(os.path.join(out, "recon.bfi"), xhat)
    _maybe_pgm(want_pgm, out, "recon.pgm", xhat)
    if trace is not None:
        trace.write_csv(os.path.join(out, "trace.csv"))
    if reference is not None:
        ref = read_image(reference)
        row = MetricsRow("super", psnr(xhat, ref, peak), rmse(xhat, ref),
                         0.0, model.L)
        write_metrics_csv(os.path.join(out, "metrics.csv"), [row])


def _task_metrics(p, seed, out, want_trace):
    # peak defaults to 1.0, the full dynamic range of the phantoms here
    peak = float(p.opt("peak", 1.0))
    rows = []
    for entry in p.req("entries"):
        if len(entry) != 3:
            raise ConfigError(
                "metrics: each entry is [name, image, reference]")
        name, img_path, ref_path = entry
        img = read_image(img_path)
        ref = read_image(ref_path)
        rows.append(MetricsRow(str(name), psnr(img, ref, peak),
                               rmse(img, ref), 0.0, 0))
    p.finish()
    write_metrics_csv(os.path.join(out, "metrics.csv"), rows)


_HANDLERS = {
    "phantom": _task_phantom,
    "simulate": _task_simulate,
    "learn-transform": _task_learn_transform,
    "learn-ultra": _task_learn_ultra,
    "learn-dict": _task_learn_dict,
    "train-denoiser": _task_train_denoiser,
    "super-train": _task_super_train,
    "super-recon": _task_super_recon,
    "metrics": _task_metrics,
}


class ExperimentConfig:
    """One resolved CLI invocation: task, optional method, raw params."""

    def __init__(self, task, params, method=None, seed=0, out=".",
                 trace=False):
        if task not in _HANDLERS and task != "recon":
            raise ConfigError(f"unknown task {task!r}")
        if task == "recon" and method not in RECON_METHODS:
            raise ConfigError(f"recon: unknown method {method!r}")
        self.task = task
        self.method = method
        self.params = params
        self.seed = seed
        self.out = out
        self.trace = trace


def run_experiment(cfg: ExperimentConfig) -> int:
    os.makedirs(cfg.out, exist_ok=True)
    p = _Params(cfg.params, cfg.task)
    seed = int(p.opt("seed", cfg.seed))
    if cfg.task == "recon":
        _task_recon(p, seed, cfg.out, cfg.trace, cfg.method)
    else:
        _HANDLERS[cfg.task](p, seed, cfg.out, cfg.trace)
    _write_manifest(cfg.out, cfg.task, cfg.method, cfg.params, seed)
    return 0


def _check_threads_env():
    raw = os.environ.get("MBIRLAB_THREADS")
    if raw is None:
        return
    try:
        value = int(raw)
    except ValueError:
        value = -1
    if value < 0:
        raise ConfigError(
            f"MBIRLAB_THREADS must be a nonnegative integer, got {raw!r}")
    # 0 selects the serial reference mode; every kernel here is serial
    # already, so any value runs the same code path.


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mbirlab",
        description="model-based image reconstruction experiments")
    sub = parser.add_subparsers(dest="task", required=True)
    tasks = list(_HANDLERS) + ["recon"]
    for task in sorted(tasks):
        tp = sub.add_parser(task)
        tp.add_argument("--config", required=True, metavar="JSON")
        tp.add_argument("--seed", type=int, default=0)
        tp.add_argument("--out", default=".", metavar="DIR")
        tp.add_argument("--trace", action="store_true")
        if task == "recon":
            tp.add_argument("--method", required=True, choices=RECON_METHODS)
    args = parser.parse_args(argv)

    try:
        _check_threads_env()
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        if "seed" in (raw if isinstance(raw, dict) else {}) and args.seed == 0:
            seed = raw["seed"]
        else:
            seed = args.seed
        cfg = ExperimentConfig(args.task, raw, method=getattr(args, "method",
                                                              None),
                               seed=seed, out=args.out, trace=args.trace)
        return run_experiment(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"error: {args.config}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
