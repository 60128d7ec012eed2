"""Command-line front end.

Subcommands: spectrum, overlap, prune, train-mlp, train-lm, eval,
ablate {decile-sweep|finetune-order|lazy}, gen-data, dump-acts.

Global flags (before the subcommand): --seed, --out, --config, --threads,
--format.  Every run writes exactly one manifest.json into the output
directory; reruns with identical inputs reproduce all outputs and all
manifest fields except the timestamp.  Failures exit nonzero after printing
a machine-readable error JSON to stderr.

--threads pins the BLAS/OpenMP pool size via environment variables and must
take effect before numpy loads, so the numeric modules are imported inside
the command handlers rather than at module import time.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import re
import sys
from pathlib import Path

from . import __version__

_FORMATS = ("csv", "json", "svg", "all")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rmtscope", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0, help="default seed for data generation and training")
    parser.add_argument("--out", type=Path, default=None, help="output directory (created if missing)")
    parser.add_argument("--config", type=Path, default=None, help="command-specific JSON config file")
    parser.add_argument("--threads", type=int, default=1, help="BLAS/OpenMP thread count (default 1 for bit-stable runs)")
    parser.add_argument("--format", choices=_FORMATS, default="all", help="which report formats to emit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrum", help="per-matrix singular-value spectra with MP diagnostics")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("--kind", action="append", default=None, help="filter by matrix kind (repeatable)")
    p.add_argument("--block", action="append", type=int, default=None, help="filter by block index (repeatable)")
    p.add_argument("--average-blocks", action="store_true", help="also pool singular values per kind across blocks")
    p.add_argument("--bins", type=int, default=40)
    p.add_argument("--svals", action="store_true", help="include singular values in JSON reports")
    p.add_argument("--role-table", type=Path, default=None, help="JSON substring table overriding role classification")

    p = sub.add_parser("overlap", help="overlap of right singular vectors with activation-covariance eigenvectors")
    p.add_argument("--checkpoint", action="append", required=True, type=Path, help="checkpoint file (repeat for a timeline)")
    p.add_argument("--activations", action="append", required=True, type=Path, help="activation dump per checkpoint")
    p.add_argument("--kind", required=True, help="matrix kind to analyze")
    p.add_argument("--block", type=int, default=None)
    p.add_argument("--role-table", type=Path, default=None)

    p = sub.add_parser("prune", help="apply a surgery plan and write the modified checkpoint")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("--plan", required=True, type=Path, help="surgery plan JSON")
    p.add_argument("--role-table", type=Path, default=None)

    p = sub.add_parser("train-mlp", help="train the fully connected classifier")
    p.add_argument("--data", required=True, type=Path, help="labeled-vector container")
    p.add_argument("--test-data", type=Path, default=None)

    p = sub.add_parser("train-lm", help="train the toy decoder-only language model")
    p.add_argument("--tokens", required=True, type=Path)
    p.add_argument("--init", type=Path, default=None, help="checkpoint to fine-tune from")

    p = sub.add_parser("eval", help="evaluate perplexity (lm) or accuracy (mlp)")
    p.add_argument("--task", choices=("lm", "mlp"), required=True)
    p.add_argument("--weights", required=True, type=Path)
    p.add_argument("--tokens", type=Path, default=None)
    p.add_argument("--data", type=Path, default=None)

    p = sub.add_parser("ablate", help="run one of the removal experiments")
    p.add_argument("mode", choices=("decile-sweep", "finetune-order", "lazy"))
    p.add_argument("--weights", type=Path, default=None, help="trained checkpoint (decile-sweep)")
    p.add_argument("--tokens", type=Path, default=None, help="evaluation stream (decile-sweep, lm)")
    p.add_argument("--data", type=Path, default=None, help="train vectors (lazy) or eval vectors (decile-sweep, mlp)")
    p.add_argument("--test-data", type=Path, default=None, help="held-out vectors (lazy)")
    p.add_argument("--model", choices=("lm", "mlp"), default="lm", help="decile-sweep target model family")
    p.add_argument("--pretrained", type=Path, default=None, help="task-A checkpoint (finetune-order)")
    p.add_argument("--tokens-b", type=Path, default=None, help="task-B training stream (finetune-order)")
    p.add_argument("--tokens-b-eval", type=Path, default=None, help="task-B evaluation stream (finetune-order)")
    p.add_argument("--deciles", default="1,10", help="comma-separated deciles (finetune-order)")
    p.add_argument("--ft-steps", type=int, default=400)
    p.add_argument("--ft-lr", type=float, default=0.5)
    p.add_argument("--alphas", default="1,15", help="comma-separated softmax scales (lazy)")
    p.add_argument("--fractions", default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9", help="removal fractions (lazy)")
    p.add_argument("--skip-frozen", action="store_true", help="skip the frozen-layer mass-removal variant (lazy)")

    p = sub.add_parser("gen-data", help="generate the bundled synthetic datasets")
    p.add_argument("kind", choices=("vectors", "tokens"))
    p.add_argument("--n", type=int, default=4000)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--mean-scale", type=float, default=0.35)
    p.add_argument("--noise", type=float, default=None, help="cluster noise (vectors) or jump probability (tokens)")
    p.add_argument("--vocab", type=int, default=24)
    p.add_argument("--length", type=int, default=20000)
    p.add_argument("--task-seed", type=int, default=0, help="fixes the task (token language / class means); --seed drives sampling")
    p.add_argument("--lag", type=int, default=1, help="tokens: the next token depends on the token this many steps back")

    p = sub.add_parser("dump-acts", help="dump per-matrix input activations from a model")
    p.add_argument("--weights", required=True, type=Path)
    p.add_argument("--tokens", required=True, type=Path)
    p.add_argument("--kinds", default="query,key,value,attn_output,up,down", help="comma-separated matrix kinds")
    p.add_argument("--blocks", default="all", help='"all" or comma-separated block indices')
    p.add_argument("--windows", type=int, required=True, help="number of context-length windows to process")

    return parser


def main(argv=None) -> int:
    raw_argv = list(argv) if argv is not None else sys.argv[1:]
    args = _build_parser().parse_args(raw_argv)
    args.raw_argv = raw_argv
    if args.threads and args.threads > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    handlers = {
        "spectrum": _cmd_spectrum,
        "overlap": _cmd_overlap,
        "prune": _cmd_prune,
        "train-mlp": _cmd_train_mlp,
        "train-lm": _cmd_train_lm,
        "eval": _cmd_eval,
        "ablate": _cmd_ablate,
        "gen-data": _cmd_gen_data,
        "dump-acts": _cmd_dump_acts,
    }
    try:
        handlers[args.command](args)
    except Exception as exc:  # noqa: BLE001 - boundary: report any failure as JSON
        payload = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        print(json.dumps(payload), file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# shared helpers

def _out_dir(args) -> Path:
    if args.out is None:
        raise ValueError("--out is required for this command")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _formats(args) -> set[str]:
    return {"csv", "json", "svg"} if args.format == "all" else {args.format}


def _load_json_config(args) -> dict:
    if args.config is None:
        return {}
    with open(args.config, "r", encoding="utf-8") as f:
        return json.load(f)


def _load_rules(args):
    if getattr(args, "role_table", None) is None:
        return None
    from .tensorstore import load_role_rules

    return load_role_rules(args.role_table)


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name)


def _fmt_cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.12g}"
    if isinstance(v, (list, tuple)):
        return ";".join(str(i) for i in v)
    return "" if v is None else str(v)


def _write_csv(path: Path, schema: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# schema: rmtscope/{schema}\n")
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt_cell(v) for v in row])


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _finish(args, out: Path, outputs: list[str], inputs: list[Path], config_obj, status: str = "complete", error: str | None = None) -> None:
    from .manifest import build_manifest, write_manifest

    manifest = build_manifest(
        command=list(getattr(args, "raw_argv", [args.command])),
        version=__version__,
        seed=args.seed,
        config=config_obj,
        inputs=[p for p in inputs if p is not None],
        outputs=outputs,
        status=status,
        error=error,
    )
    write_manifest(out, manifest)


# ---------------------------------------------------------------------------
# spectrum

def _mp_curve(report):
    import numpy as np

    from .rmt import mp_density

    xs = np.linspace(report.hist_edges[0], report.hist_edges[-1], 256)
    ys = mp_density(xs, report.mp)
    return list(map(float, xs)), list(map(float, ys))


def _emit_spectrum_report(out: Path, stem: str, report, fmts: set[str], include_svals: bool) -> list[str]:
    from .rmt import report_to_dict
    from .svgplot import histogram_svg

    outputs = []
    if "json" in fmts:
        _write_json(out / f"spectrum_{stem}.json", report_to_dict(report, include_svals=include_svals))
        outputs.append(f"spectrum_{stem}.json")
    if "csv" in fmts:
        rows = [[i + 1, float(s)] for i, s in enumerate(report.svals)]
        _write_csv(out / f"svals_{stem}.csv", "svals/v1", ["index", "value"], rows)
        outputs.append(f"svals_{stem}.csv")
    if "svg" in fmts:
        svg = histogram_svg(
            list(map(float, report.hist_edges)),
            list(map(int, report.hist_counts)),
            curve=_mp_curve(report),
            vlines=(report.mp.nu_minus, report.mp.nu_plus),
            title=f"{stem} ({report.m}x{report.n})  ks={report.ks:.3f}  outliers L{report.left_outliers}/R{report.right_outliers}",
        )
        (out / f"spectrum_{stem}.svg").write_text(svg, encoding="utf-8")
        outputs.append(f"spectrum_{stem}.svg")
    return outputs


def _cmd_spectrum(args) -> None:
    from .rmt import pooled_spectrum_report, spectrum_report
    from .tensorstore import MatrixRole, RoleKind, classify_role, read_checkpoint

    out = _out_dir(args)
    fmts = _formats(args)
    rules = _load_rules(args)
    tmap = read_checkpoint(args.checkpoint)
    kinds = set(args.kind) if args.kind else None
    blocks = set(args.block) if args.block else None

    selected = []
    for name in sorted(tmap.entries):
        arr = tmap.entries[name]
        if arr.ndim != 2:
            continue
        role = classify_role(name, rules)
        if kinds is not None and role.kind.value not in kinds:
            continue
        if blocks is not None and role.block not in blocks:
            continue
        selected.append((name, role, arr))
    if not selected:
        raise ValueError("no matrices after filtering")

    outputs: list[str] = []
    summary_rows = []
    reports = []
    for name, role, arr in selected:
        report = spectrum_report(arr, role, bins=args.bins, name=name)
        reports.append(report)
        outputs += _emit_spectrum_report(out, _safe_name(name), report, fmts, args.svals)
        summary_rows.append(
            [name, role.kind.value, role.block, report.m, report.n, report.sigma_tilde,
             report.mp.nu_minus, report.mp.nu_plus, report.ks, report.left_outliers, report.right_outliers]
        )
    if args.average_blocks:
        by_kind: dict[str, list] = {}
        for (name, role, arr) in selected:
            by_kind.setdefault(role.kind.value, []).append(arr)
        for kind_value in sorted(by_kind):
            pooled = pooled_spectrum_report(
                by_kind[kind_value], MatrixRole(kind=RoleKind(kind_value)), bins=args.bins,
                name=f"pooled_{kind_value}",
            )
            outputs += _emit_spectrum_report(out, f"pooled_{_safe_name(kind_value)}", pooled, fmts, args.svals)
            summary_rows.append(
                [f"pooled_{kind_value}", kind_value, None, pooled.m, pooled.n, pooled.sigma_tilde,
                 pooled.mp.nu_minus, pooled.mp.nu_plus, pooled.ks, pooled.left_outliers, pooled.right_outliers]
            )
    if "csv" in fmts:
        _write_csv(
            out / "spectrum_summary.csv",
            "spectrum-summary/v1",
            ["name", "kind", "block", "m", "n", "sigma_tilde", "nu_minus", "nu_plus", "ks", "left_outliers", "right_outliers"],
            summary_rows,
        )
        outputs.append("spectrum_summary.csv")
    _finish(args, out, outputs, [args.checkpoint], {"bins": args.bins, "kinds": args.kind, "blocks": args.block})
    print(f"wrote {len(outputs)} artifacts to {out}")


# ---------------------------------------------------------------------------
# overlap

def _contiguous_spans(flags) -> list[tuple[float, float]]:
    spans = []
    start = None
    for i, f in enumerate(flags):
        if f and start is None:
            start = i
        elif not f and start is not None:
            spans.append((start + 0.5, i + 0.5))
            start = None
    if start is not None:
        spans.append((start + 0.5, len(flags) + 0.5))
    return spans


def _cmd_overlap(args) -> None:
    import numpy as np

    from .covlap import FLAG_THRESHOLD, overlap_timeline
    from .rmt import fit_sigma, mp_model
    from .svgplot import line_svg
    from .tensorstore import MatrixRole, RoleKind, read_activations, read_checkpoint

    out = _out_dir(args)
    fmts = _formats(args)
    rules = _load_rules(args)
    if len(args.checkpoint) != len(args.activations):
        raise ValueError("need one --activations file per --checkpoint")
    checkpoints = [read_checkpoint(p) for p in args.checkpoint]
    dumps = [read_activations(p) for p in args.activations]
    role = MatrixRole(kind=RoleKind(args.kind), block=args.block)
    profiles = overlap_timeline(checkpoints, role, dumps, rules=rules)

    outputs: list[str] = []
    csv_rows = []
    json_obj = []
    for profile in profiles:
        for i, (ov, arg) in enumerate(zip(profile.overlaps, profile.argmax), start=1):
            sval = float(profile.svals[i - 1]) if profile.svals is not None else None
            csv_rows.append([profile.step, i, sval, float(ov), int(arg), bool(ov > FLAG_THRESHOLD)])
        json_obj.append(
            {
                "step": profile.step,
                "overlaps": [float(v) for v in profile.overlaps],
                "argmax": [int(v) for v in profile.argmax],
                "svals": None if profile.svals is None else [float(v) for v in profile.svals],
                "flag_threshold": FLAG_THRESHOLD,
            }
        )
    if "csv" in fmts:
        _write_csv(out / "overlap.csv", "overlap/v1", ["step", "k", "sval", "overlap", "argmax_j", "flagged"], csv_rows)
        outputs.append("overlap.csv")
    if "json" in fmts:
        _write_json(out / "overlap.json", {"kind": args.kind, "block": args.block, "profiles": json_obj})
        outputs.append("overlap.json")
    if "svg" in fmts:
        from .covlap import find_role_tensor

        # Shade ranks whose singular values fall outside the fitted MP support.
        for tmap, profile in zip(checkpoints, profiles):
            name = find_role_tensor(tmap, role, rules)
            w = tmap.entries[name]
            model = mp_model(w.shape[0], w.shape[1], fit_sigma(w))
            svals = profile.svals if profile.svals is not None else np.array([])
            flags = [bool(s > model.nu_plus or s < model.nu_minus) for s in svals]
            ks = list(range(1, len(profile.overlaps) + 1))
            svg = line_svg(
                [(list(map(float, ks)), [float(v) for v in profile.overlaps], "overlap")],
                vspans=tuple(_contiguous_spans(flags)),
                hline=FLAG_THRESHOLD,
                title=f"{args.kind} block {args.block} step {profile.step}",
                xlabel="rank k (descending singular value)",
                ylabel="max |v_k . f_j|",
                ylim=(0.0, 1.05),
            )
            fname = f"overlap_step{profile.step}.svg"
            (out / fname).write_text(svg, encoding="utf-8")
            outputs.append(fname)
    _finish(args, out, outputs, list(args.checkpoint) + list(args.activations), {"kind": args.kind, "block": args.block})
    print(f"wrote {len(outputs)} artifacts to {out}")


# ---------------------------------------------------------------------------
# prune

def _cmd_prune(args) -> None:
    from .surgery import SurgeryPlan, apply_plan
    from .tensorstore import read_checkpoint, write_checkpoint

    out = _out_dir(args)
    fmts = _formats(args)
    rules = _load_rules(args)
    tmap = read_checkpoint(args.checkpoint)
    with open(args.plan, "r", encoding="utf-8") as f:
        plan_obj = json.load(f)
    plan = SurgeryPlan.from_json(plan_obj)
    new_map, changes = apply_plan(tmap, plan, rules=rules)
    write_checkpoint(new_map, out / "pruned.safetensors")
    outputs = ["pruned.safetensors"]
    report = {
        "plan": plan.to_json(),
        "tensors": changes,
        "total_energy_removed": sum(c["energy_removed"] for c in changes),
        "total_mass_removed": sum(c["mass_removed"] for c in changes),
    }
    if "json" in fmts:
        _write_json(out / "prune_report.json", report)
        outputs.append("prune_report.json")
    if "csv" in fmts:
        rows = [[c["name"], c["kind"], c["block"], len(c["ranks"]), c["ranks"], c["energy_removed"], c["mass_removed"]] for c in changes]
        _write_csv(out / "prune_report.csv", "prune/v1",
                   ["name", "kind", "block", "n_removed", "ranks", "energy_removed", "mass_removed"], rows)
        outputs.append("prune_report.csv")
    _finish(args, out, outputs, [args.checkpoint, args.plan], plan.to_json())
    print(f"pruned {len(changes)} tensors -> {out / 'pruned.safetensors'}")


# ---------------------------------------------------------------------------
# training

def _cmd_train_mlp(args) -> None:
    from .nets.data import dataset_from_map
    from .nets.mlp import MLPConfig, mlp_eval, mlp_train
    from .tensorstore import read_checkpoint, write_checkpoint

    out = _out_dir(args)
    cfg_obj = _load_json_config(args)
    if "layer_dims" not in cfg_obj:
        raise ValueError('train-mlp --config must define "layer_dims"')
    checkpoint_every = cfg_obj.pop("checkpoint_every", None)
    cfg_obj.setdefault("seed", args.seed)
    config = MLPConfig.from_json(cfg_obj)
    x, y = dataset_from_map(read_checkpoint(args.data))
    result = mlp_train(config, x, y, checkpoint_every=checkpoint_every)
    outputs = []
    write_checkpoint(result.init_map, out / "init.safetensors")
    write_checkpoint(result.final_map, out / "final.safetensors")
    outputs += ["init.safetensors", "final.safetensors"]
    for epoch, cmap in result.checkpoints:
        fname = f"epoch_{epoch:04d}.safetensors"
        write_checkpoint(cmap, out / fname)
        outputs.append(fname)
    _write_csv(out / "losses.csv", "train-loss/v1", ["epoch", "loss"],
               [[i, v] for i, v in enumerate(result.epoch_losses)])
    outputs.append("losses.csv")
    summary = {"train_accuracy": mlp_eval(result.final_params, x, y).value}
    if args.test_data:
        xt, yt = dataset_from_map(read_checkpoint(args.test_data))
        summary["test_accuracy"] = mlp_eval(result.final_params, xt, yt).value
    _write_json(out / "train_summary.json", summary)
    outputs.append("train_summary.json")
    _finish(args, out, outputs, [args.data] + ([args.test_data] if args.test_data else []), cfg_obj)
    print(f"trained MLP for {config.epochs} epochs; final loss {result.epoch_losses[-1]:.4f}")


def _cmd_train_lm(args) -> None:
    from .nets.transformer import TransformerConfig, perplexity, transformer_train
    from .tensorstore import read_checkpoint, read_tokens, write_checkpoint

    out = _out_dir(args)
    cfg_obj = _load_json_config(args)
    train_keys = {"steps": 2000, "lr": 0.5, "batch_windows": 8, "checkpoint_every": None}
    train_args = {k: cfg_obj.pop(k, v) for k, v in train_keys.items()}
    cfg_obj.setdefault("seed", args.seed)
    config = TransformerConfig.from_json(cfg_obj)
    tokens = read_tokens(args.tokens)
    init = read_checkpoint(args.init) if args.init else None
    result = transformer_train(
        config,
        tokens,
        steps=int(train_args["steps"]),
        lr=float(train_args["lr"]),
        seed=args.seed,
        checkpoint_every=train_args["checkpoint_every"],
        batch_windows=int(train_args["batch_windows"]),
        init=init,
    )
    outputs = []
    for step, cmap in result.checkpoints:
        fname = f"step_{step:06d}.safetensors"
        write_checkpoint(cmap, out / fname)
        outputs.append(fname)
    write_checkpoint(result.final_map, out / "final.safetensors")
    outputs.append("final.safetensors")
    _write_csv(out / "losses.csv", "train-loss/v1", ["step", "loss"], [[i, v] for i, v in enumerate(result.losses)])
    outputs.append("losses.csv")
    ppl = perplexity(config, result.final_params, tokens).value
    _write_json(out / "train_summary.json", {"train_perplexity": ppl, "final_loss": result.losses[-1]})
    outputs.append("train_summary.json")
    inputs = [args.tokens] + ([args.init] if args.init else [])
    _finish(args, out, outputs, inputs, {**cfg_obj, **train_args})
    print(f"trained LM for {train_args['steps']} steps; train perplexity {ppl:.4f}")


def _cmd_eval(args) -> None:
    out = _out_dir(args)
    if args.task == "lm":
        from .nets.transformer import TransformerConfig, perplexity, token_accuracy
        from .tensorstore import read_checkpoint, read_tokens

        if args.tokens is None:
            raise ValueError("eval --task lm requires --tokens")
        cfg_obj = _load_json_config(args)
        config = TransformerConfig.from_json(cfg_obj)
        weights = read_checkpoint(args.weights)
        tokens = read_tokens(args.tokens)
        ppl = perplexity(config, weights, tokens)
        acc = token_accuracy(config, weights, tokens)
        payload = {"metric": "perplexity", "value": ppl.value, "n_items": ppl.n_items, "token_accuracy": acc.value}
        inputs = [args.weights, args.tokens]
    else:
        from .nets.data import dataset_from_map
        from .nets.mlp import mlp_eval
        from .tensorstore import read_checkpoint

        if args.data is None:
            raise ValueError("eval --task mlp requires --data")
        cfg_obj = {}
        weights = read_checkpoint(args.weights)
        x, y = dataset_from_map(read_checkpoint(args.data))
        res = mlp_eval(weights, x, y)
        payload = {"metric": res.metric, "value": res.value, "n_items": res.n_items}
        inputs = [args.weights, args.data]
    _write_json(out / "eval.json", payload)
    _finish(args, out, ["eval.json"], inputs, cfg_obj)
    print(json.dumps(payload))


# ---------------------------------------------------------------------------
# ablate

def _cmd_ablate(args) -> None:
    out = _out_dir(args)
    try:
        if args.mode == "decile-sweep":
            outputs, inputs, cfg = _ablate_decile_sweep(args, out)
        elif args.mode == "finetune-order":
            outputs, inputs, cfg = _ablate_finetune_order(args, out)
        else:
            outputs, inputs, cfg = _ablate_lazy(args, out)
    except Exception as exc:
        _finish(args, out, [], [], {"mode": args.mode}, status="partial", error=f"{type(exc).__name__}: {exc}")
        raise
    _finish(args, out, outputs, inputs, cfg)
    print(f"wrote {len(outputs)} artifacts to {out}")


def _ablate_decile_sweep(args, out: Path):
    from .svgplot import bar_panel_grid_svg

    fmts = _formats(args)
    if args.model == "lm":
        from .experiments import decile_sweep_lm
        from .nets.transformer import TransformerConfig
        from .tensorstore import read_checkpoint, read_tokens

        if args.weights is None or args.tokens is None:
            raise ValueError("decile-sweep (lm) requires --weights and --tokens")
        cfg_obj = _load_json_config(args)
        config = TransformerConfig.from_json(cfg_obj)
        rows = decile_sweep_lm(config, read_checkpoint(args.weights), read_tokens(args.tokens))
        inputs = [args.weights, args.tokens]
        metric_label = "perplexity increase"
    else:
        from .experiments import decile_sweep_mlp
        from .nets.data import dataset_from_map
        from .tensorstore import read_checkpoint

        if args.weights is None or args.data is None:
            raise ValueError("decile-sweep (mlp) requires --weights and --data")
        cfg_obj = {}
        x, y = dataset_from_map(read_checkpoint(args.data))
        rows = decile_sweep_mlp(read_checkpoint(args.weights), x, y)
        inputs = [args.weights, args.data]
        metric_label = "accuracy change"

    outputs = []
    if "csv" in fmts:
        _write_csv(out / "decile_sweep.csv", "decile-sweep/v1",
                   ["role", "decile", "metric", "base", "value", "delta"],
                   [[r["role"], r["decile"], r["metric"], r["base"], r["value"], r["delta"]] for r in rows])
        outputs.append("decile_sweep.csv")
    if "json" in fmts:
        _write_json(out / "decile_sweep.json", rows)
        outputs.append("decile_sweep.json")
    if "svg" in fmts:
        panels = []
        for role in sorted({r["role"] for r in rows if r["decile"] > 0}):
            role_rows = sorted((r for r in rows if r["role"] == role), key=lambda r: r["decile"])
            panels.append((role, [float(r["decile"]) for r in role_rows], [float(r["delta"]) for r in role_rows]))
        svg = bar_panel_grid_svg(panels, cols=3, title="per-decile removal effect", xlabel="decile (1 = largest)", ylabel=metric_label)
        (out / "decile_sweep.svg").write_text(svg, encoding="utf-8")
        outputs.append("decile_sweep.svg")
    return outputs, inputs, {"mode": "decile-sweep", "model": args.model}


def _ablate_finetune_order(args, out: Path):
    from .experiments import finetune_order
    from .nets.transformer import TransformerConfig
    from .svgplot import bar_panel_grid_svg
    from .tensorstore import read_checkpoint, read_tokens

    fmts = _formats(args)
    for flag, value in (("--pretrained", args.pretrained), ("--tokens-b", args.tokens_b), ("--tokens-b-eval", args.tokens_b_eval)):
        if value is None:
            raise ValueError(f"finetune-order requires {flag}")
    cfg_obj = _load_json_config(args)
    config = TransformerConfig.from_json(cfg_obj)
    deciles = tuple(int(d) for d in str(args.deciles).split(",") if d)
    rows = finetune_order(
        config,
        read_checkpoint(args.pretrained),
        read_tokens(args.tokens_b),
        read_tokens(args.tokens_b_eval),
        deciles=deciles,
        ft_steps=args.ft_steps,
        ft_lr=args.ft_lr,
        seed=args.seed,
    )
    outputs = []
    if "csv" in fmts:
        _write_csv(out / "finetune_order.csv", "finetune-order/v1",
                   ["decile", "order", "perplexity", "accuracy"],
                   [[r["decile"], r["order"], r["perplexity"], r["accuracy"]] for r in rows])
        outputs.append("finetune_order.csv")
    if "json" in fmts:
        _write_json(out / "finetune_order.json", rows)
        outputs.append("finetune_order.json")
    if "svg" in fmts:
        panels = []
        for order in ("remove-then-finetune", "finetune-then-remove"):
            sel = sorted((r for r in rows if r["order"] == order), key=lambda r: r["decile"])
            panels.append((order, [float(r["decile"]) for r in sel], [float(r["accuracy"]) for r in sel]))
        svg = bar_panel_grid_svg(panels, cols=2, title="task-B accuracy by removal order", xlabel="decile removed", ylabel="accuracy")
        (out / "finetune_order.svg").write_text(svg, encoding="utf-8")
        outputs.append("finetune_order.svg")
    return outputs, [args.pretrained, args.tokens_b, args.tokens_b_eval], {"mode": "finetune-order", "deciles": list(deciles), "ft_steps": args.ft_steps, "ft_lr": args.ft_lr}


def _ablate_lazy(args, out: Path):
    from .experiments import frozen_mass_experiment, lazy_sweep
    from .nets.data import dataset_from_map
    from .nets.mlp import MLPConfig
    from .svgplot import line_svg
    from .tensorstore import read_checkpoint

    fmts = _formats(args)
    if args.data is None or args.test_data is None:
        raise ValueError("lazy requires --data and --test-data")
    cfg_obj = _load_json_config(args)
    cfg_obj.setdefault("layer_dims", [64, 512, 512, 512, 10])
    cfg_obj.setdefault("seed", args.seed)
    frozen_dims = cfg_obj.pop("frozen_layer_dims", [64, 512, 512, 256, 256, 10])
    base = MLPConfig.from_json(dict(cfg_obj))
    x, y = dataset_from_map(read_checkpoint(args.data))
    xt, yt = dataset_from_map(read_checkpoint(args.test_data))
    alphas = tuple(float(a) for a in str(args.alphas).split(",") if a)
    fractions = tuple(float(f) for f in str(args.fractions).split(",") if f)
    sweep = lazy_sweep(base, x, y, xt, yt, alphas=alphas, fractions=fractions)

    outputs = []
    if "csv" in fmts:
        _write_csv(out / "lazy_sweep.csv", "lazy-sweep/v1",
                   ["alpha", "fraction", "accuracy", "drop", "norm_drop"],
                   [[r["alpha"], r["fraction"], r["accuracy"], r["drop"], r["norm_drop"]] for r in sweep["rows"]])
        _write_csv(out / "lazy_movement.csv", "lazy-movement/v1", ["alpha", "relative_movement"],
                   [[a, m] for a, m in sorted(sweep["movement"].items())])
        outputs += ["lazy_sweep.csv", "lazy_movement.csv"]
    if "json" in fmts:
        _write_json(out / "lazy_sweep.json", sweep)
        outputs.append("lazy_sweep.json")
    if "svg" in fmts:
        series = []
        for alpha in alphas:
            sel = sorted((r for r in sweep["rows"] if r["alpha"] == alpha), key=lambda r: r["fraction"])
            series.append(([r["fraction"] for r in sel], [r["norm_drop"] for r in sel], f"alpha={alpha:g}"))
        svg = line_svg(series, title="normalized accuracy drop vs fraction of smallest singular values removed",
                       xlabel="fraction removed", ylabel="normalized accuracy drop", ylim=(0.0, 1.05))
        (out / "lazy_sweep.svg").write_text(svg, encoding="utf-8")
        outputs.append("lazy_sweep.svg")

    config_payload = {"mode": "lazy", "alphas": list(alphas), "fractions": list(fractions), "config": cfg_obj}
    if not args.skip_frozen:
        rows = frozen_mass_experiment(tuple(int(d) for d in frozen_dims), x, y, xt, yt,
                                      lr=base.lr, epochs=base.epochs, batch_size=base.batch_size, seed=base.seed)
        if "csv" in fmts:
            _write_csv(out / "frozen_mass.csv", "frozen-mass/v1",
                       ["variant", "accuracy_before", "accuracy_after", "mass_fraction"],
                       [[r["variant"], r["accuracy_before"], r["accuracy_after"], r["mass_fraction"]] for r in rows])
            outputs.append("frozen_mass.csv")
        if "json" in fmts:
            _write_json(out / "frozen_mass.json", rows)
            outputs.append("frozen_mass.json")
        config_payload["frozen_layer_dims"] = list(frozen_dims)
    return outputs, [args.data, args.test_data], config_payload


# ---------------------------------------------------------------------------
# data generation and activation dumps

def _cmd_gen_data(args) -> None:
    out = _out_dir(args)
    if args.kind == "vectors":
        from .nets.data import cluster_dataset, dataset_to_map
        from .tensorstore import write_checkpoint

        noise = 1.0 if args.noise is None else args.noise
        x, y = cluster_dataset(args.n, dim=args.dim, classes=args.classes, seed=args.seed,
                               task_seed=args.task_seed, mean_scale=args.mean_scale, noise=noise)
        write_checkpoint(dataset_to_map(x, y), out / "dataset.safetensors")
        outputs = ["dataset.safetensors"]
        cfg = {"kind": "vectors", "n": args.n, "dim": args.dim, "classes": args.classes,
               "task_seed": args.task_seed, "mean_scale": args.mean_scale, "noise": noise}
    else:
        from .nets.data import markov_tokens
        from .tensorstore import write_tokens

        noise = 0.02 if args.noise is None else args.noise
        stream = markov_tokens(args.vocab, args.length, seed=args.seed, task_seed=args.task_seed,
                               noise=noise, lag=args.lag)
        write_tokens(stream, out / "tokens.tok")
        outputs = ["tokens.tok"]
        cfg = {"kind": "tokens", "vocab": args.vocab, "length": args.length, "task_seed": args.task_seed,
               "noise": noise, "lag": args.lag}
    _finish(args, out, outputs, [], cfg)
    print(f"wrote {outputs[0]} to {out}")


def _cmd_dump_acts(args) -> None:
    from .nets.transformer import TransformerConfig, dump_activations
    from .tensorstore import read_checkpoint, read_tokens

    out = _out_dir(args)
    cfg_obj = _load_json_config(args)
    config = TransformerConfig.from_json(cfg_obj)
    weights = read_checkpoint(args.weights)
    tokens = read_tokens(args.tokens)
    blocks = "all" if args.blocks == "all" else [int(b) for b in args.blocks.split(",") if b]
    selector = {"kinds": [k for k in args.kinds.split(",") if k], "blocks": blocks}
    n = dump_activations(config, weights, tokens, selector, out / "activations.safetensors", n_windows=args.windows)
    _finish(args, out, ["activations.safetensors"], [args.weights, args.tokens], {"selector": selector, "windows": args.windows})
    print(f"dumped {n} windows to {out / 'activations.safetensors'}")


if __name__ == "__main__":
    sys.exit(main())
