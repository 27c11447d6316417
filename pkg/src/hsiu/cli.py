"""Command-line entry points: generate, unmix, eval, render, bench.

Exit codes: 0 success, 1 runtime/numeric failure, 2 usage or input error.
Every run directory receives a machine-readable echo of the effective
configuration. A flat key=value config file can seed any command's flags;
explicit flags win.
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import hsio
from .datagen import (
    SCENARIO_MIXED_MODELS,
    SCENARIO_RCA_LEVELS,
    ScenarioSpec,
    generate,
)
from .errors import ChainDivergenceError, InvalidInputError, SamplingError
from .fcls import FclsOptions, fcls
from .metrics import (
    EvalReport,
    align_by_energy,
    confusion_and_accuracy,
    hyperparam_errors,
    re_per_class,
    rnmse_per_class,
)
from .model import AbundanceMatrix, EndmemberMatrix, build_polynomial_kernel
from .mrf import LabelField, NeighborhoodOrder
from .sampler import (
    Estimates,
    SamplerConfig,
    conditional_nonlinearity_mean,
    estimate,
    run_chain,
)

_CONFIG_TYPES = {
    "scenario": str, "width": int, "height": int, "bands": int, "r": int,
    "classes": int, "beta": float, "seed": int, "s2": str,
    "gbm_gamma_min": float, "gbm_gamma_max": float, "b": float, "rca_s2": float,
    "noise": str, "iters": int, "burnin": int, "gamma": float, "nu": float,
    "neighborhood": int, "thin": int, "inner_sweeps": int, "endmembers": str,
    "algo": str,
}


def _apply_config_file(args):
    if not getattr(args, "config", None):
        return args
    overrides = hsio.read_run_config(args.config)
    for key, raw in overrides.items():
        dest = key
        if getattr(args, dest, None) is None:
            setattr(args, dest, _CONFIG_TYPES[key](raw))
    return args


def _neighborhood(n):
    if n == 4:
        return NeighborhoodOrder.FOUR_PIXEL
    if n == 8 or n is None:
        return NeighborhoodOrder.EIGHT_PIXEL
    raise InvalidInputError("neighborhood must be 4 or 8")


def _parse_noise(text):
    if text is None or text == "colored":
        return "colored", 1e-4
    if text.startswith("iid:"):
        return "iid", float(text.split(":", 1)[1])
    if text == "iid":
        return "iid", 1e-4
    raise InvalidInputError(f"bad noise spec {text!r}; use 'colored' or 'iid:<variance>'")


def cmd_generate(args):
    args = _apply_config_file(args)
    noise_mode, noise_var = _parse_noise(args.noise)
    scenario = args.scenario or SCENARIO_RCA_LEVELS
    n_classes = args.classes if args.classes is not None else 4
    if args.s2 is not None:
        s2_levels = tuple(float(v) for v in str(args.s2).split(","))
    else:
        s2_levels = tuple(0.01 * 10 ** k for k in range(n_classes - 1))
    spec = ScenarioSpec(
        scenario=scenario,
        width=args.width if args.width is not None else 30,
        height=args.height if args.height is not None else 30,
        n_bands=args.bands if args.bands is not None else 64,
        n_endmembers=args.r if args.r is not None else 3,
        n_classes=n_classes,
        beta=args.beta if args.beta is not None else 1.2,
        seed=args.seed if args.seed is not None else 0,
        s2_levels=s2_levels,
        gbm_gamma_range=(
            args.gbm_gamma_min if args.gbm_gamma_min is not None else 0.5,
            args.gbm_gamma_max if args.gbm_gamma_max is not None else 1.0,
        ),
        ppnmm_b=args.b if args.b is not None else 0.5,
        rca_s2=args.rca_s2 if args.rca_s2 is not None else 0.1,
        noise_mode=noise_mode,
        noise_iid_variance=noise_var,
        neighborhood=_neighborhood(args.neighborhood),
        endmember_file=args.endmembers or "",
    )
    M = hsio.read_endmembers_csv(args.endmembers) if args.endmembers else None
    dataset = generate(spec, M=M)
    hsio.write_dataset(args.out, dataset)
    n_pix = spec.width * spec.height
    print(f"generated {spec.scenario} dataset: N={n_pix} K={spec.n_classes} "
          f"seed={spec.seed} -> {args.out}")
    return 0


def cmd_unmix(args):
    args = _apply_config_file(args)
    image = hsio.read_cube(args.image)
    M = hsio.read_endmembers_csv(args.endmembers)
    if M.shape[0] != image.n_bands:
        raise InvalidInputError(
            f"endmembers have {M.shape[0]} bands but image has {image.n_bands}"
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    algo = args.algo or "mcmc"
    if algo == "fcls":
        t0 = time.perf_counter()
        A = fcls(image, M, FclsOptions())
        hsio.write_matrix_csv(out / "abundances.csv", A.values)
        meta = {
            "algo": "fcls", "image": str(args.image), "endmembers": str(args.endmembers),
            "runtime_seconds": time.perf_counter() - t0,
        }
        (out / "chain_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        print(f"fcls unmixing done: N={image.n_pixels} -> {out}")
        return 0
    if algo != "mcmc":
        raise InvalidInputError(f"unknown algorithm {algo!r}")
    cfg = SamplerConfig(
        n_mc=args.iters if args.iters is not None else 3000,
        n_bi=args.burnin if args.burnin is not None else 1000,
        n_classes=args.classes if args.classes is not None else 4,
        beta=args.beta if args.beta is not None else 1.2,
        gamma=args.gamma if args.gamma is not None else 1.0,
        nu=args.nu if args.nu is not None else 0.25,
        neighborhood=_neighborhood(args.neighborhood),
        seed=args.seed if args.seed is not None else 0,
        thinning=args.thin if args.thin is not None else 1,
        inner_sweeps=args.inner_sweeps if args.inner_sweeps is not None else 5,
    )
    meta = {
        "algo": "mcmc", "image": str(args.image), "endmembers": str(args.endmembers),
        "config": cfg.to_dict(),
    }
    try:
        chain = run_chain(image, EndmemberMatrix(M), cfg)
    except ChainDivergenceError as exc:
        meta["error"] = str(exc)
        meta["diverged_at_iteration"] = exc.iteration
        (out / "chain_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        raise
    est = estimate(chain)
    post = cfg.n_bi
    meta["runtime_seconds"] = chain.runtime_seconds
    meta["acceptance_rates"] = {
        "sigma2_post_burnin": float(np.mean(chain.accept_sigma2[post:])),
        "s2_post_burnin": float(np.mean(chain.accept_s2[post:])),
    }
    meta["n_samples"] = chain.n_samples
    hsio.write_results(out, est, meta, cfg.n_classes)
    print(f"mcmc unmixing done: N={image.n_pixels} samples={chain.n_samples} -> {out}")
    return 0


def _nan_to_none(arr):
    return [None if np.isnan(v) else float(v) for v in np.asarray(arr)]


def _estimates_from_results(results, width, height, n_classes):
    A = AbundanceMatrix(results["abundances"], strict=False)
    z = LabelField(width, height, results["labels"], n_classes)
    return Estimates(
        z_map=z, A_mmse=A, sigma2_mmse=results["sigma2"], s2_mmse=results["s2"],
        label_posterior=results["label_posterior"],
    )


def cmd_eval(args):
    truth = hsio.read_dataset_truth(args.truth)
    results = hsio.read_results(args.results)
    out = Path(args.out or args.results)
    out.mkdir(parents=True, exist_ok=True)
    image = truth["image"]
    M = truth["endmembers"]
    z_true = truth["labels"]
    n_classes = int(truth["spec"]["n_classes"])
    A_true = truth["abundances"]
    if not np.all(np.isfinite(results["abundances"])):
        raise InvalidInputError("results abundances contain non-finite values")

    A_base = fcls(image, M, FclsOptions()).values
    rnmse_base = rnmse_per_class(A_base, A_true, z_true, n_classes)
    re_base = re_per_class(M @ A_base, image.data, z_true, n_classes)

    A_hat = results["abundances"]
    rnmse = rnmse_per_class(A_hat, A_true, z_true, n_classes)
    diagnostics = {}
    if "labels" in results:
        est = _estimates_from_results(results, image.width, image.height, n_classes)
        kernel = build_polynomial_kernel(M)
        phi_hat = conditional_nonlinearity_mean(image.data, M, est, kernel)
        Y_hat = M @ A_hat + phi_hat
        re = re_per_class(Y_hat, image.data, z_true, n_classes)
        conf, acc = confusion_and_accuracy(est.z_map.labels, z_true,
                                           est.s2_mmse, n_classes)
        s2_true = truth["s2"]
        s2_err = None
        if np.all(np.isfinite(s2_true)):
            s2_err = hyperparam_errors(est.s2_mmse, np.sort(s2_true))
        sig_err = float(np.mean(np.abs(est.sigma2_mmse - truth["sigma2"])
                                / truth["sigma2"]))
        # secondary breakdown keyed on (aligned) estimated labels
        z_aligned, _ = align_by_energy(est.z_map.labels, est.s2_mmse, n_classes)
        diagnostics = {
            "rnmse_by_estimated_class": _nan_to_none(
                rnmse_per_class(A_hat, A_true, z_aligned, n_classes)),
            "re_by_estimated_class": _nan_to_none(
                re_per_class(Y_hat, image.data, z_aligned, n_classes)),
        }
    else:
        re = re_per_class(M @ A_hat, image.data, z_true, n_classes)
        conf = np.zeros((n_classes, n_classes), dtype=np.int64)
        acc = float("nan")
        s2_err = None
        sig_err = float("nan")
    report = EvalReport(
        rnmse=rnmse, rnmse_baseline=rnmse_base, re=re, re_baseline=re_base,
        confusion=conf, accuracy=acc, s2_errors=s2_err,
        sigma2_mean_rel_error=sig_err,
        metadata={
            "truth_dir": str(args.truth), "results_dir": str(args.results),
            "n_pixels": image.n_pixels, "n_bands": image.n_bands,
            "spec": truth["spec"],
            "chain_meta": results.get("meta"),
            "diagnostics": diagnostics,
        },
    )
    (out / "report.json").write_text(report.to_json())
    (out / "report.md").write_text(report.to_markdown())
    print(f"evaluation written to {out}/report.json (accuracy {acc})")
    return 0


def cmd_render(args):
    out = Path(args.out)
    if args.kind == "labels":
        grid = hsio.read_labels_csv(args.input)
        n_classes = args.classes if args.classes is not None else int(grid.max()) + 1
        hsio.write_pgm(out, hsio.labels_to_gray(grid, n_classes))
        print(f"rendered label map -> {out}")
        return 0
    if args.kind != "abundance":
        raise InvalidInputError("render kind must be 'labels' or 'abundance'")
    A = hsio.read_matrix_csv(args.input)
    if args.width is None or args.height is None:
        raise InvalidInputError("abundance rendering needs --width and --height")
    W, H = args.width, args.height
    if A.shape[1] != W * H:
        raise InvalidInputError(f"abundance table has {A.shape[1]} pixels, "
                                f"expected {W * H}")
    out.parent.mkdir(parents=True, exist_ok=True)
    for r in range(A.shape[0]):
        grid = np.rint(np.clip(A[r], 0.0, 1.0).reshape(H, W) * 255).astype(np.int64)
        hsio.write_pgm(f"{out}_em{r}.pgm", grid)
    print(f"rendered {A.shape[0]} abundance maps -> {out}_em*.pgm")
    return 0


def cmd_bench(args):
    from .bench import run_benchmarks

    run_benchmarks(size=args.size if args.size is not None else 40,
                   iters=args.iters if args.iters is not None else 20)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hsiu",
        description="Joint nonlinear spectral unmixing and nonlinearity detection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="create a synthetic dataset directory")
    g.add_argument("--scenario", choices=[SCENARIO_RCA_LEVELS, SCENARIO_MIXED_MODELS])
    g.add_argument("--width", type=int)
    g.add_argument("--height", type=int)
    g.add_argument("--bands", type=int)
    g.add_argument("--r", type=int, help="number of endmembers")
    g.add_argument("--classes", type=int)
    g.add_argument("--beta", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--s2", type=str, help="comma list of nonlinearity energies")
    g.add_argument("--gbm-gamma-min", dest="gbm_gamma_min", type=float)
    g.add_argument("--gbm-gamma-max", dest="gbm_gamma_max", type=float)
    g.add_argument("--b", type=float, help="post-nonlinear coefficient")
    g.add_argument("--rca-s2", dest="rca_s2", type=float)
    g.add_argument("--noise", type=str, help="'colored' or 'iid:<variance>'")
    g.add_argument("--endmembers", type=str, help="CSV of endmember spectra")
    g.add_argument("--neighborhood", type=int, choices=[4, 8])
    g.add_argument("--config", type=str)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    u = sub.add_parser("unmix", help="run the sampler (or the FCLS baseline)")
    u.add_argument("--image", required=True)
    u.add_argument("--endmembers", required=True)
    u.add_argument("--algo", choices=["mcmc", "fcls"])
    u.add_argument("--classes", type=int)
    u.add_argument("--beta", type=float)
    u.add_argument("--iters", type=int)
    u.add_argument("--burnin", type=int)
    u.add_argument("--gamma", type=float)
    u.add_argument("--nu", type=float)
    u.add_argument("--neighborhood", type=int, choices=[4, 8])
    u.add_argument("--thin", type=int)
    u.add_argument("--inner-sweeps", dest="inner_sweeps", type=int)
    u.add_argument("--seed", type=int)
    u.add_argument("--config", type=str)
    u.add_argument("--out", required=True)
    u.set_defaults(func=cmd_unmix)

    e = sub.add_parser("eval", help="score results against dataset ground truth")
    e.add_argument("--truth", required=True)
    e.add_argument("--results", required=True)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("render", help="render label or abundance maps to PGM")
    r.add_argument("--input", required=True)
    r.add_argument("--kind", choices=["labels", "abundance"], default="labels")
    r.add_argument("--classes", type=int)
    r.add_argument("--width", type=int)
    r.add_argument("--height", type=int)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)

    b = sub.add_parser("bench", help="compare compiled and fallback kernel timings")
    b.add_argument("--size", type=int)
    b.add_argument("--iters", type=int)
    b.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InvalidInputError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ChainDivergenceError, SamplingError, np.linalg.LinAlgError,
            ArithmeticError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
