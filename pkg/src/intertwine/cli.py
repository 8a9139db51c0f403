"""``intertwine`` command line: file-based access to the whole pipeline.

Exit status 0 on success, 2 for invalid input, 3 when the data violate a
mathematical hypothesis (rank loss, ambiguous tags, unobservable modes).
Errors are written to stderr as one JSON object per line.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import mpmath

from . import __version__
from .core import (
    TOL_COCYCLE,
    TOL_EIG,
    TOL_RANK,
    IntertwineError,
    MathematicalFailure,
    SpectralMismatch,
    ValidationError,
    model_from_json,
    model_to_json,
    mpf,
    report_to_json,
)
from .fixtures import FIXTURES, fixture, load_config, save_fixture
from .mixture import add_noise, collapse, read_window_csv, sample_uniform, write_window_csv
from .network import (
    check_isospectral,
    inverse_residuals,
    recover_gauges,
    verify_cocycle,
    verify_intertwining,
)
from .prony import reconstruct
from .stability import StabilityConfig, noise_sweep, parse_epsilons, stability_report, write_sweep_csv
from .tagging import (
    check_spectral_separation,
    components_to_json,
    recover_eigencomponents,
    tag_rates,
    tagged_from_json,
    tagged_to_json,
)

EXIT_OK, EXIT_INVALID, EXIT_MATH = 0, 2, 3


def _write_json(path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2) + "\n")


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValidationError(f"{path}: no such file") from None
    except json.JSONDecodeError as err:
        raise ValidationError(f"{path}: invalid JSON ({err})") from None


def _sectors(spec):
    return [spec.network.sector(i) for i in spec.network.ids]


def _pick(value, sampling, key, cast):
    if value is not None:
        return value
    if key in sampling:
        return cast(sampling[key])
    raise ValidationError(f"--{key} is required (no default in the network config)")


def _positive(name, value):
    if value is not None and not value > 0:
        raise ValidationError(f"--{name} must be > 0")
    return value


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_fixture(args) -> int:
    save_fixture(fixture(args.name), args.out)
    return EXIT_OK


def cmd_verify_network(args) -> int:
    spec, _ = load_config(args.config)
    net = spec.network
    family = net.scaling_family()
    ref = net.ids.index(spec.reference)
    tau = recover_gauges(family, ref, args.tol_cocycle)
    iso = check_isospectral(_sectors(spec), args.tol_eig)
    t_grid = [mpf(x) for x in ("0", "0.1", "0.5", "1", "2")]
    report = {
        "gauges": {str(sid): float(t) for sid, t in zip(net.ids, tau)},
        "isospectral": iso.passed,
        "pairs": [{"sectors": [p.first, p.second], "passed": p.passed, "reason": p.reason} for p in iso.pairs],
        "cocycle_residual": float(verify_cocycle(net)),
        "intertwining_residual": float(verify_intertwining(net, t_grid)),
        "inverse_residual": float(max(inverse_residuals(net).values(), default=0.0)),
        "spectral_separation": check_spectral_separation(_sectors(spec), args.tol_eig).passed,
    }
    out = json.dumps(report, indent=2)
    print(out)
    if args.out:
        Path(args.out).write_text(out + "\n")
    if not iso.passed:
        bad = next(p for p in iso.pairs if not p.passed)
        raise SpectralMismatch(f"sectors {bad.first} and {bad.second}: {bad.reason}")
    return EXIT_OK


def cmd_synth(args) -> int:
    spec, _ = load_config(args.config)
    _write_json(args.out, model_to_json(collapse(spec).sorted()))
    return EXIT_OK


def cmd_sample(args) -> int:
    spec, sampling = load_config(args.config) if Path(args.config).exists() else (None, {})
    h = _positive("h", _pick(args.h, sampling, "h", float))
    count = _pick(args.count, sampling, "count", int)
    if args.model and Path(args.model).exists():
        model = model_from_json(_read_json(args.model))
    elif spec is not None:
        model = collapse(spec).sorted()
    else:
        raise ValidationError(f"neither {args.model} nor {args.config} exists")
    window = sample_uniform(model, mpf(str(h)), count)
    if args.epsilon:
        if args.seed is None:
            raise ValidationError("--epsilon needs an explicit --seed")
        window = add_noise(window, mpf(str(args.epsilon)), args.seed)
    write_window_csv(window, args.out)
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    window = read_window_csv(args.input)
    if args.L < 1:
        raise ValidationError("--L must be >= 1")
    model = reconstruct(window, args.L, tol_rank=args.tol_rank)
    _write_json(args.out, model_to_json(model))
    return EXIT_OK


def cmd_tag(args) -> int:
    spec, _ = load_config(args.config)
    model = model_from_json(_read_json(args.model))
    tagged = tag_rates(model, _sectors(spec), capture_radius=args.capture_radius, tol_eig=args.tol_eig)
    _write_json(args.out, tagged_to_json(tagged))
    return EXIT_OK


def cmd_recover_components(args) -> int:
    spec, _ = load_config(args.config)
    tagged = tagged_from_json(_read_json(args.tagged))
    _write_json(args.out, components_to_json(recover_eigencomponents(tagged, spec)))
    return EXIT_OK


def cmd_stability(args) -> int:
    spec, sampling = load_config(args.config)
    h = _positive("h", _pick(args.h, sampling, "h", float))
    L = args.L if args.L is not None else sampling.get("L")
    config = StabilityConfig(_positive("C3", args.C3), _positive("C2", args.C2), _positive("C-L", args.C_L))
    report = stability_report(spec, mpf(str(h)), config, L)
    _write_json(args.out, report_to_json(report))
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec, sampling = load_config(args.config)
    h = _positive("h", _pick(args.h, sampling, "h", float))
    L = _pick(args.L, sampling, "L", int)
    count = args.count if args.count is not None else sampling.get("count")
    if args.trials < 1:
        raise ValidationError("--trials must be >= 1")
    records = noise_sweep(
        spec, mpf(str(h)), L, parse_epsilons(args.epsilons), args.trials, args.seed, count, args.workers
    )
    write_sweep_csv(records, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="intertwine", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--dps", type=int, default=None, help="working decimal precision")
    sub = p.add_subparsers(dest="command", required=True)

    def config(sp):
        sp.add_argument("--config", default="network.json", help="network configuration (default: %(default)s)")

    sp = sub.add_parser("fixture", help="write a built-in example network")
    sp.add_argument("name", choices=sorted(FIXTURES))
    sp.add_argument("--out", default="network.json")
    sp.set_defaults(func=cmd_fixture)

    sp = sub.add_parser("verify-network", help="gauges, isospectrality and cocycle residuals")
    config(sp)
    sp.add_argument("--out", default=None)
    sp.add_argument("--tol-eig", type=float, default=TOL_EIG)
    sp.add_argument("--tol-cocycle", type=float, default=TOL_COCYCLE)
    sp.set_defaults(func=cmd_verify_network)

    sp = sub.add_parser("synth", help="collapse the mixture to an exponential model")
    config(sp)
    sp.add_argument("--out", default="synth_model.json")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("sample", help="uniform samples of a model, optionally with noise")
    config(sp)
    sp.add_argument("--model", default="synth_model.json", help="model JSON; falls back to --config")
    sp.add_argument("--h", type=float, default=None)
    sp.add_argument("--count", type=int, default=None)
    sp.add_argument("--epsilon", type=float, default=0.0, help="l2 noise level")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", default="samples.csv")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("reconstruct", help="Hankel-Prony reconstruction")
    sp.add_argument("--in", dest="input", default="samples.csv")
    sp.add_argument("--L", type=int, required=True)
    sp.add_argument("--tol-rank", type=float, default=TOL_RANK)
    sp.add_argument("--out", default="reconstructed.json")
    sp.set_defaults(func=cmd_reconstruct)

    sp = sub.add_parser("tag", help="attach sector tags to reconstructed rates")
    config(sp)
    sp.add_argument("--model", default="reconstructed.json")
    sp.add_argument("--capture-radius", type=float, default=None)
    sp.add_argument("--tol-eig", type=float, default=TOL_EIG)
    sp.add_argument("--out", default="tagged.json")
    sp.set_defaults(func=cmd_tag)

    sp = sub.add_parser("recover-components", help="eigencomponents of the sector states")
    config(sp)
    sp.add_argument("--tagged", default="tagged.json")
    sp.add_argument("--out", default="components.json")
    sp.set_defaults(func=cmd_recover_components)

    sp = sub.add_parser("stability", help="kappa_exp, bounds, gap and noise threshold")
    config(sp)
    sp.add_argument("--h", type=float, default=None)
    sp.add_argument("--L", type=int, default=None)
    sp.add_argument("--C3", type=float, default=None)
    sp.add_argument("--C2", type=float, default=1.0)
    sp.add_argument("--C-L", dest="C_L", type=float, default=1.0)
    sp.add_argument("--out", default="stability.json")
    sp.set_defaults(func=cmd_stability)

    sp = sub.add_parser("sweep", help="empirical noise sweep")
    config(sp)
    sp.add_argument("--h", type=float, default=None)
    sp.add_argument("--L", type=int, default=None)
    sp.add_argument("--count", type=int, default=None)
    sp.add_argument("--epsilons", default="1e-8:1e-4:5", help="lo:hi:n (log-spaced) or a comma list")
    sp.add_argument("--trials", type=int, default=50)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--workers", type=int, default=None)
    sp.add_argument("--out", default="sweep.csv")
    sp.set_defaults(func=cmd_sweep)
    return p


def _emit(kind: str, message: str, stage=None) -> None:
    print(json.dumps({"error": kind, "message": message, "stage": stage}), file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.dps is not None and args.dps < 20:
        _emit("ValidationError", "--dps must be >= 20")
        return EXIT_INVALID
    with mpmath.workdps(args.dps or mpmath.mp.dps):
        return _dispatch(args)


def _dispatch(args) -> int:
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            status = args.func(args)
        for w in caught:
            print(json.dumps({"warning": w.category.__name__, "message": str(w.message)}), file=sys.stderr)
        return status
    except MathematicalFailure as err:
        _emit(type(err).__name__, err.args[0] if err.args else "", err.stage or args.command)
        return EXIT_MATH
    except IntertwineError as err:
        _emit(type(err).__name__, err.args[0] if err.args else "", err.stage or args.command)
        return EXIT_INVALID
    except OSError as err:
        _emit(type(err).__name__, str(err), args.command)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
