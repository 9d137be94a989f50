"""Command-line entry point.

Every subcommand takes ``--config``, either an INI file with one section per
subcommand or a ``run_manifest.json`` from an earlier run. Flags override config values. Each run writes
``run_manifest.json`` next to its outputs; passing that file back through
``--config`` reproduces the run.

Exit status is 0 on success. Invalid input exits 1 and numerical failure exits 2.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, baselines, dataset, irt, ladder, population, residuals, sigma, synth
from .errors import NumericalError, ValidationError

log = logging.getLogger("monoculture")

MANIFEST = "run_manifest.json"
REPORT = "report.json"


def _bool(raw) -> bool:
    if isinstance(raw, bool):
        return raw
    s = str(raw).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _int_list(raw):
    if isinstance(raw, (list, tuple)):
        return [int(x) for x in raw]
    return [int(x) for x in str(raw).split(",") if x.strip()]


def _opt_float(raw):
    return None if raw in (None, "", "none", "None") else float(raw)


def _opt_str(raw):
    return None if raw in (None, "", "none", "None") else str(raw)


def _path(raw):
    return None if raw in (None, "") else str(Path(raw).resolve())


# name -> (parser, default, help); default None with required=True means mandatory
IRT_PARAMS = {
    "dim": (int, 1, "latent dimension K"),
    "l2_item": (_opt_float, None, "penalty on item parameters (default scales with n, m)"),
    "l2_ability": (_opt_float, None, "penalty on abilities (default scales with n, m)"),
    "learning_rate": (float, 0.05, "Adam step size"),
    "max_iters": (int, 2000, "iteration cap"),
    "whiten_every": (int, 25, "iterations between whitenings"),
    "tol": (float, 1e-7, "relative improvement threshold"),
}
DATA_PARAMS = {
    "input": (_path, None, "correctness matrix CSV"),
    "format": (str, "wide_csv", "wide_csv or long_csv"),
    "families": (_path, None, "model_id,family CSV"),
    "categories": (_path, None, "item_id,category CSV"),
}

COMMANDS = {
    "synth": ({
        "variant": (str, "irt_null", "irt_null | correlated_probit | d0_fleet | vertex_mixture"),
        "n": (int, 1000, "items"),
        "m": (int, 10, "models"),
        "dim": (int, 1, "latent dimension for irt_null"),
        "a_mean": (float, 0.0, "mean discrimination (irt_null)"),
        "a_sd": (float, 1.0, "sd of discrimination (irt_null)"),
        "b_sd": (float, 1.0, "sd of intercepts / difficulties"),
        "theta_sd": (float, 1.0, "sd of abilities"),
        "rho": (float, 0.0, "uniform latent correlation (correlated_probit)"),
        "mean": (float, 0.7, "d0 success-probability mean"),
        "sd": (float, 0.2, "d0 success-probability sd"),
        "table": (_opt_str, None, "comma-separated 2**m outcome probabilities (vertex_mixture)"),
    }, True),
    "fit": ({**DATA_PARAMS, **IRT_PARAMS,
             "accuracy_only": (_bool, False, "fit the ability-only null")}, True),
    "residuals": ({**DATA_PARAMS, **IRT_PARAMS,
                   "fit": (_path, None, "fit.json from the fit subcommand (else fit here)")}, True),
    "sweep": ({**DATA_PARAMS, **IRT_PARAMS,
               "ks": (_int_list, None, "comma-separated ascending K grid"),
               "warm_start": (_bool, True, "embed each fit into the next K"),
               "compare": (_bool, True, "also compare the ability-only and K=1 nulls")}, True),
    "baselines": ({
        "choices": (_path, None, "item_id,model_id,selected CSV"),
        "meta": (_path, None, "item_id,correct_option,num_options[,category] CSV"),
        "families": (_path, None, "model_id,family CSV"),
        "statistic": (str, "all", "capa | kim_excess | kim_kappa_err | all"),
        "chance_over": (str, "joint_errors", "items averaged for the Kim chance rate"),
    }, False),
    "population": ({**DATA_PARAMS, **IRT_PARAMS,
                    "stages": (str, None, "groups of families separated by ';', added in order"),
                    "focal": (str, None, "focal family"),
                    "d0_count": (int, 0, "append a d0 fleet of this size as a final stage"),
                    "d0_mean": (float, 0.7, "d0 success-probability mean"),
                    "d0_sd": (float, 0.2, "d0 success-probability sd"),
                    "bins": (int, 20, "difficulty histogram bins")}, True),
    "sigma": ({**DATA_PARAMS, **{k: v for k, v in IRT_PARAMS.items() if k != "dim"},
               "fit": (_path, None, "stage-1 K=1 fit.json (else fit here)"),
               "embed_dim": (int, 1, "columns of V"),
               "sigma_learning_rate": (float, 0.02, "Adam step size for V"),
               "sigma_max_iters": (int, 1000, "iteration cap for V"),
               "item_chunk": (int, 8192, "items per tile"),
               "model_block": (int, 64, "models per tile"),
               "patience": (int, 50, "early-stopping patience")}, True),
    "geometry": ({**DATA_PARAMS, **{k: v for k, v in IRT_PARAMS.items() if k != "dim"},
                  "fit": (_path, None, "K=2 fit.json (else fit here)")}, True),
    "report": ({"dir": (_path, None, "directory of outputs to index")}, False),
}
REQUIRED = {
    "fit": ("input",), "residuals": ("input",), "sweep": ("input",),
    "baselines": ("choices", "meta"), "population": ("input", "families", "stages", "focal"),
    "sigma": ("input",), "geometry": ("input",), "report": ("dir",),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="monoculture", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (params, randomized) in COMMANDS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="INI config or a previous run_manifest.json")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--threads", type=int, help="BLAS/OpenMP threads (1 is bitwise reproducible)")
        sp.add_argument("--seed", type=int, help="random seed" + (" (required)" if randomized else ""))
        sp.add_argument("-v", "--verbose", action="store_true")
        for key, (conv, default, text) in params.items():
            # booleans also work as bare switches: --warm-start means --warm-start true
            extra = {"nargs": "?", "const": "true"} if conv is _bool else {}
            sp.add_argument("--" + key.replace("_", "-"), dest=key, default=None,
                            help=f"{text} [default: {default}]", **extra)
    return p


def _read_config(path, command) -> dict:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        if doc.get("command") != command:
            raise ValidationError(f"manifest is for {doc.get('command')!r}, not {command!r}")
        return dict(doc.get("params", {}))
    cp = configparser.ConfigParser()
    cp.read(path)
    out = {}
    for section in ("common", command):
        if cp.has_section(section):
            out.update(cp.items(section))
    for section in cp.sections():
        if section not in ("common",) + tuple(COMMANDS):
            raise ValidationError(f"{path}: unknown section [{section}]")
    return out


_RUN_KEYS = ("seed", "threads", "out")


def resolve(args, command) -> dict:
    params, randomized = COMMANDS[command]
    raw = _read_config(args.config, command) if args.config else {}
    allowed = set(params) | set(_RUN_KEYS)
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ValidationError(f"unknown config keys for {command}: {', '.join(unknown)}")
    for key in list(params) + list(_RUN_KEYS):
        flag = getattr(args, key, None)
        if flag is not None:
            raw[key] = flag
    out = {}
    for key, (conv, default, _) in params.items():
        if key in raw and raw[key] is not None:
            try:
                # converters are idempotent, so typed manifest values pass through
                out[key] = conv(raw[key])
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"bad value for {key}: {raw[key]!r} ({exc})") from None
        else:
            out[key] = default
    for key in REQUIRED.get(command, ()):
        if out.get(key) in (None, ""):
            raise ValidationError(f"{command}: missing required setting {key!r}")
    seed = raw.get("seed")
    if randomized and seed is None:
        raise ValidationError(f"{command}: --seed is required")
    out["seed"] = None if seed is None else int(seed)
    out["threads"] = None if raw.get("threads") is None else int(raw["threads"])
    if out["threads"] is not None and out["threads"] < 1:
        raise ValidationError("threads must be >= 1")
    out["out"] = raw.get("out")
    return out


def _irt_config(p, **over) -> irt.IrtConfig:
    kw = {k: p[k] for k in IRT_PARAMS if k in p}
    kw.update(over)
    return irt.IrtConfig(seed=p["seed"] or 0, **kw)


def _load_matrix(p) -> dataset.CorrectnessMatrix:
    mat = dataset.load_correctness(p["input"], p["format"])
    if p.get("families"):
        mat = mat.with_families(dataset.load_families(p["families"]))
    if p.get("categories"):
        mat = mat.with_categories(dataset.load_categories(p["categories"]))
    return mat


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


# --- subcommands --------------------------------------------------------------


def cmd_synth(p, out: Path) -> dict:
    variant = p["variant"]
    n, m, seed = p["n"], p["m"], p["seed"]
    if variant == "irt_null":
        v = synth.planted_irt(n, m, p["dim"], seed, p["a_mean"], p["a_sd"], p["b_sd"], p["theta_sd"])
        gen_seed = seed + 1
    elif variant == "correlated_probit":
        rng = np.random.default_rng(seed)
        theta = rng.normal(0.0, p["theta_sd"], size=m)
        diff = rng.normal(0.0, p["b_sd"], size=n)
        v = synth.CorrelatedProbit(theta, diff, synth.uniform_correlation(m, p["rho"]))
        gen_seed = seed + 1
    elif variant == "d0_fleet":
        v = synth.D0Fleet(m, p["mean"], p["sd"])
        gen_seed = seed
    elif variant == "vertex_mixture":
        if not p["table"]:
            raise ValidationError("vertex_mixture needs --table")
        v = synth.mixture_from_distribution([float(x) for x in p["table"].split(",")])
        gen_seed = seed
    else:
        raise ValidationError(f"unknown variant {variant!r}")
    mat, truth = synth.generate(synth.GeneratorSpec(v, n, gen_seed))
    dataset.write_wide_csv(mat, out / "correctness.csv")
    synth.truth_to_json(truth, out / "truth.json")
    return {"n": mat.n, "m": mat.m, "files": ["correctness.csv", "truth.json"]}


def _fit_or_load(p, mat, dim, accuracy_only=False) -> irt.IrtFit:
    if p.get("fit"):
        f = irt.IrtFit.load(p["fit"])
        if f.a.shape[0] != mat.n or f.theta.shape[0] != mat.m:
            raise ValidationError(f"fit in {p['fit']} does not match the data shape {mat.shape}")
        return f
    return irt.fit(mat, _irt_config(p, dim=dim, accuracy_only=accuracy_only))


def cmd_fit(p, out: Path) -> dict:
    mat = _load_matrix(p)
    f = irt.fit(mat, _irt_config(p, accuracy_only=p["accuracy_only"]))
    f.save(out / "fit.json")
    return {"mse": f.mse, "final_log_likelihood": f.final_log_likelihood,
            "iterations": f.iterations, "files": ["fit.json"]}


def cmd_residuals(p, out: Path) -> dict:
    mat = _load_matrix(p)
    f = _fit_or_load(p, mat, p["dim"])
    rep = residuals.report(mat, f.p_hat)
    doc = rep.save(out, "excess")
    return {"summaries": doc["summaries"], "files": ["excess.json", *doc["files"].values()]}


def cmd_sweep(p, out: Path) -> dict:
    mat = _load_matrix(p)
    res = ladder.sweep(mat, p["ks"], _irt_config(p), p["warm_start"])
    res.write_csv(out / "ladder.csv")
    for k, rep in zip(res.ks, res.reports):
        rep.save(out, f"excess_K{k}")
    doc = {"ks": res.ks, "warm_start": res.warm_start,
           "mse": res.column("mse").tolist(), "abs_mean": res.column("abs_mean").tolist()}
    if p["compare"]:
        cmp = ladder.compare_irt05_irt1(mat, _irt_config(p, dim=1))
        doc["irt05_vs_irt1"] = ladder.save_comparison(cmp, out, mat.model_ids)
    return doc


def cmd_baselines(p, out: Path) -> dict:
    t = dataset.load_choices(p["choices"], p["meta"], p["families"])
    stats = baselines.STATISTICS if p["statistic"] == "all" else (p["statistic"],)
    doc = {}
    for s in stats:
        bm = baselines.baseline_matrix(t, s, p["chance_over"])
        bm.save(out / f"baseline_{s}.csv")
        doc[s] = {"missing": bm.missing_records()}
    return doc


def _parse_stages(raw):
    groups = [[f.strip() for f in g.split(",") if f.strip()] for g in raw.split(";")]
    groups = [g for g in groups if g]
    if not groups:
        raise ValidationError("stages must list at least one family")
    stages, acc = [], []
    for g in groups:
        acc = acc + g
        stages.append(tuple(acc))
    return stages


def cmd_population(p, out: Path) -> dict:
    mat = _load_matrix(p)
    stages = _parse_stages(p["stages"])
    if p["d0_count"] > 0:
        mat = population.inject_d0_fleet(mat, p["d0_count"], p["d0_mean"], p["d0_sd"], p["seed"])
        stages.append(stages[-1] + (population.D0_FAMILY,))
    res = population.progressive_populations(mat, stages, p["focal"], _irt_config(p, dim=1),
                                             bins=p["bins"])
    docs = []
    for k, st in enumerate(res):
        st.save(out / f"stage_{k:02d}")
        docs.append(st.summary())
    return {"stages": docs}


def cmd_sigma(p, out: Path) -> dict:
    mat = _load_matrix(p)
    stage1 = _fit_or_load(p, mat, 1)
    cfg = sigma.SigmaConfig(embed_dim=p["embed_dim"], learning_rate=p["sigma_learning_rate"],
                            max_iters=p["sigma_max_iters"], item_chunk=p["item_chunk"],
                            model_block=p["model_block"], patience=p["patience"], seed=p["seed"])
    est = sigma.fit_sigma(mat, stage1, cfg)
    est.save(out)
    return {"final_loss": est.final_loss, "offdiag_mean": est.offdiag_mean(),
            "files": ["sigma_twostage.csv", "sigma_twostage.json"]}


def cmd_geometry(p, out: Path) -> dict:
    mat = _load_matrix(p)
    f = _fit_or_load(p, mat, 2)
    rep = population.latent_geometry_report(f, mat)
    population.write_geometry_csv(rep, out / "geometry.csv")
    _write_json(out / "geometry.json", rep)
    return {"pca_variance_explained": rep["pca_variance_explained"], "notes": rep["notes"]}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def cmd_report(p, out: Path) -> dict:
    root = Path(p["dir"])
    if not root.is_dir():
        raise ValidationError(f"not a directory: {root}")
    files = []
    out = out.resolve()
    for f in sorted(root.rglob("*")):
        # the report's own directory is never indexed, so reruns are idempotent
        if not f.is_file() or out in f.resolve().parents:
            continue
        rel = f.relative_to(root).as_posix()
        entry = {"path": rel, "bytes": f.stat().st_size, "sha256": _sha256(f)}
        if f.name == MANIFEST:
            entry["command"] = json.loads(f.read_text()).get("command")
        files.append(entry)
    _write_json(out / REPORT, {"root": str(root), "files": files})
    return {"indexed": len(files)}


HANDLERS = {
    "synth": cmd_synth, "fit": cmd_fit, "residuals": cmd_residuals, "sweep": cmd_sweep,
    "baselines": cmd_baselines, "population": cmd_population, "sigma": cmd_sigma,
    "geometry": cmd_geometry, "report": cmd_report,
}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        p = resolve(args, args.command)
        if p["out"] is None:
            p["out"] = str(Path(p["dir"]) / "_report") if args.command == "report" else "."
        out = Path(p["out"])
        out.mkdir(parents=True, exist_ok=True)
        with threadpool_limits(limits=p["threads"]):
            result = HANDLERS[args.command](p, out)
        params = {k: v for k, v in p.items() if k != "out"}
        _write_json(out / MANIFEST, {"command": args.command, "version": __version__,
                                     "params": params, "result": result})
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
