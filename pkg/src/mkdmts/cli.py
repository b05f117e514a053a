"""Command-line interface tying the pipeline stages together.

Subcommands: synth, kernels, train, encode, cluster, eval, report.  Each
accepts ``--config FILE`` (JSON with the same keys as its flags); explicit
flags win over the file, the file over built-in defaults.  Every output
directory receives the effective configuration and the tool version.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DataError, MkdError, NumericalError, UsageError
from .ioutil import read_json, read_matrix, write_json, write_matrix

log = logging.getLogger("mkdmts")

DEFAULTS: dict[str, dict] = {
    "synth": {
        "seed": 0, "seen_classes": 4, "unseen_classes": 2, "dims": 2,
        "samples": 20, "noise": 0.05, "length_min": 60, "length_max": 90,
    },
    "kernels": {"bandwidth": "median"},
    "train": {
        "k": 8, "tx": 2, "ta": None, "tbeta": None,
        "iters": 30, "tol": 1e-4, "seed": 0, "tune": None,
    },
    "encode": {"tx": None, "threshold": 0.1},
    "cluster": {
        "order": "file", "kclust": 0.7, "krmv": 0.3, "gamma": 2.5, "split_min": 6,
        "dup_eps": 1e-3, "dot": None,
    },
    "eval": {},
    "report": {},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _effective(args: argparse.Namespace) -> dict:
    """Merge defaults, optional --config file, and explicit flags."""
    cfg = dict(DEFAULTS[args.command])
    file_path = getattr(args, "config", None)
    if file_path:
        loaded = read_json(file_path)
        unknown = set(loaded) - set(cfg) - {"manifest", "kernels", "model", "seen_manifest",
                                            "enc", "tree", "truth", "run", "out"}
        if unknown:
            raise UsageError(f"unknown config keys {sorted(unknown)} in {file_path}")
        cfg.update(loaded)
    for key, value in vars(args).items():
        if key in ("command", "func", "config", "verbose", "threads"):
            continue
        if value is not None:
            cfg[key] = value
    return cfg


def _write_run_info(out_dir: Path, command: str, cfg: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {k: v for k, v in cfg.items() if not isinstance(v, Path)}
    for k, v in cfg.items():
        if isinstance(v, Path):
            payload[k] = str(v)
    write_json(out_dir / "run_info.json", {
        "tool_version": __version__, "format_version": 1,
        "command": command, "config": payload,
    })


def _cmd_synth(cfg: dict) -> int:
    from .mtsdata import SynthConfig, save_dataset, synth_dataset

    synth_cfg = SynthConfig(
        num_seen_classes=int(cfg["seen_classes"]),
        num_unseen_classes=int(cfg["unseen_classes"]),
        dims=int(cfg["dims"]),
        length_range=(int(cfg["length_min"]), int(cfg["length_max"])),
        samples_per_class=int(cfg["samples"]),
        noise_std=float(cfg["noise"]),
        seed=int(cfg["seed"]),
    )
    seen, unseen, provenance = synth_dataset(synth_cfg)
    out = Path(cfg["out"])
    save_dataset(seen, out, "seen")
    save_dataset(unseen, out, "unseen")
    write_json(out / "provenance.json", provenance)
    _write_run_info(out, "synth", cfg)
    print(f"wrote {len(seen)} seen and {len(unseen)} unseen sequences to {out}", file=sys.stderr)
    return 0


def _parse_bandwidth(raw) -> float | str:
    if raw == "median":
        return "median"
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise UsageError(f"bandwidth must be 'median' or a number, got {raw!r}") from None
    if value <= 0:
        raise UsageError("bandwidth must be positive")
    return value


def _cmd_kernels(cfg: dict) -> int:
    from .kernels import build_or_load_kernelset
    from .mtsdata import load_dataset

    bandwidth = _parse_bandwidth(cfg["bandwidth"])
    seen = load_dataset(cfg["manifest"], role="seen")
    ks = build_or_load_kernelset(seen, cfg["out"], bandwidth=bandwidth)
    _write_run_info(Path(cfg["out"]), "kernels", cfg)
    print(f"kernels for {ks.n} sequences x {ks.dims} dimensions in {cfg['out']}", file=sys.stderr)
    return 0


def _cmd_train(cfg: dict) -> int:
    from .kernels import load_kernelset
    from .mkd import TrainConfig, save_model, train, tune
    from .mtsdata import load_dataset

    seen = load_dataset(cfg["manifest"], role="seen")
    ks = load_kernelset(cfg["kernels"])
    train_cfg = TrainConfig(
        k=int(cfg["k"]),
        t_x=int(cfg["tx"]),
        t_a=None if cfg["ta"] is None else int(cfg["ta"]),
        t_beta=None if cfg["tbeta"] is None else int(cfg["tbeta"]),
        max_iters=int(cfg["iters"]),
        tol=float(cfg["tol"]),
        seed=int(cfg["seed"]),
    )
    if cfg["tune"]:
        grid_spec = read_json(cfg["tune"])
        grid = [(int(k), int(tx)) for k, tx in grid_spec["grid"]]
        train_cfg = tune(seen, ks, grid, train_cfg)
        print(f"tuned: k={train_cfg.k} t_x={train_cfg.t_x}", file=sys.stderr)
    result = train(seen, ks, train_cfg)
    train_cfg = train_cfg.resolve(ks.n, ks.dims)
    save_model(result, cfg["out"], train_cfg, ks.bandwidths)
    effective = dict(cfg)
    effective.update({"k": train_cfg.k, "tx": train_cfg.t_x, "ta": train_cfg.t_a, "tbeta": train_cfg.t_beta})
    _write_run_info(Path(cfg["out"]), "train", effective)
    print(f"final loss {result.loss_trace[-1]:.6f} after {len(result.loss_trace) - 1} iterations", file=sys.stderr)
    return 0


def _cmd_encode(cfg: dict) -> int:
    from .kernels import cross_kernel, load_kernelset
    from .mkd import load_model
    from .mtsdata import load_dataset
    from .zeroshot import encode, encoding_matrix, reconstruction_report

    seen = load_dataset(cfg["seen_manifest"], role="seen")
    unseen = load_dataset(cfg["manifest"], role="unseen")
    ks = load_kernelset(cfg["kernels"])
    model, meta = load_model(cfg["model"])
    if model.dataset_hash != ks.dataset_hash:
        raise DataError("model and kernel cache were built on different datasets")
    t_x = int(cfg["tx"]) if cfg["tx"] is not None else int(meta["t_x"])
    threshold = float(cfg["threshold"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    labels = seen.labels()
    index = []
    for seq in unseen.sequences:
        ck = cross_kernel(seen, seq, ks.bandwidths)
        x = encode(model, ks, ck, t_x)
        enc = encoding_matrix(model, x, seq.id)
        rep = reconstruction_report(model, ks, ck, x, labels, threshold=threshold)
        write_json(out / f"{seq.id}.code.json", {"id": seq.id, "code": [float(v) for v in x]})
        write_matrix(out / f"{seq.id}.R.bin", enc.values)
        write_json(out / f"{seq.id}.report.json", {
            "id": seq.id,
            "per_dim_error": [float(e) for e in rep.per_dim_error],
            "dra": rep.dra,
            "attribution": rep.attribution,
            "threshold": rep.threshold,
        })
        index.append(seq.id)
    write_json(out / "index.json", {"ids": index})
    _write_run_info(out, "encode", cfg | {"tx": t_x})
    print(f"encoded {len(index)} sequences into {out}", file=sys.stderr)
    return 0


def _parse_order(spec: str, ids: list[str]) -> list[str]:
    if spec == "file":
        return ids
    if spec.startswith("shuffle:"):
        try:
            seed = int(spec.split(":", 1)[1])
        except ValueError:
            raise UsageError(f"bad order {spec!r}; expected file or shuffle:SEED") from None
        perm = np.random.default_rng(seed).permutation(len(ids))
        return [ids[i] for i in perm]
    raise UsageError(f"bad order {spec!r}; expected file or shuffle:SEED")


def _cmd_cluster(cfg: dict) -> int:
    from .inclust import ClusterConfig, Dendrogram

    enc_dir = Path(cfg["enc"])
    index = read_json(enc_dir / "index.json")["ids"]
    order = _parse_order(cfg["order"], index)
    tree = Dendrogram(ClusterConfig(
        k_clust=float(cfg["kclust"]),
        k_rmv=float(cfg["krmv"]),
        gamma=float(cfg["gamma"]),
        split_min=int(cfg["split_min"]),
        dup_eps=float(cfg["dup_eps"]),
    ))
    for sid in order:
        tree.insert(sid, read_matrix(enc_dir / f"{sid}.R.bin"))
    tree.save(cfg["out"])
    if cfg["dot"]:
        Path(cfg["dot"]).write_text(tree.to_dot() + "\n", encoding="utf-8")
    _write_run_info(Path(cfg["out"]).parent, "cluster", cfg)
    print(f"tree with {len(tree.roots)} top-level nodes over {tree.size()} sequences", file=sys.stderr)
    return 0


def _cmd_eval(cfg: dict) -> int:
    from .evalx import score_clustering
    from .inclust import flat_clusters_from_dict
    from .mtsdata import load_dataset

    pred = flat_clusters_from_dict(read_json(cfg["tree"]))
    truth_ds = load_dataset(cfg["truth"], role="unseen")
    truth = {}
    for seq in truth_ds.sequences:
        if seq.label is None:
            raise DataError(f"sequence {seq.id!r} in the truth manifest has no label")
        truth[seq.id] = int(seq.label)
    score = score_clustering(pred, truth)
    write_json(cfg["out"], {
        "ce": float(score.ce),
        "nmi": float(score.nmi),
        "num_clusters": len(set(pred.values())),
        "num_classes": len(set(truth.values())),
        "contingency": score.contingency.tolist(),
        "nmi_normalization": "sqrt",
        "tool_version": __version__,
    })
    print(f"CE {100 * score.ce:.2f}%  NMI {score.nmi:.4f}", file=sys.stderr)
    return 0


def _cmd_report(cfg: dict) -> int:
    from .evalx import render_report

    run_dir = Path(cfg["run"])
    score_path = run_dir / "score.json"
    if score_path.exists():
        sys.stdout.write(render_report(read_json(score_path)))
        return 0
    lines = [f"mkdmts run directory {run_dir}"]
    for name in ("run_info.json", "provenance.json"):
        p = run_dir / name
        if p.exists():
            lines.append(f"-- {name}:")
            lines.append(json.dumps(read_json(p), indent=2, sort_keys=True))
    eval_path = run_dir / "eval.json"
    if eval_path.exists():
        ev = read_json(eval_path)
        lines.append(f"CE {100 * ev['ce']:.2f}%  NMI {ev['nmi']:.4f}")
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "kernels": _cmd_kernels,
    "train": _cmd_train,
    "encode": _cmd_encode,
    "cluster": _cmd_cluster,
    "eval": _cmd_eval,
    "report": _cmd_report,
}


def build_parser() -> _Parser:
    parser = _Parser(prog="mkdmts", description="multiple-kernel dictionary learning for multivariate time series")
    parser.add_argument("--version", action="version", version=f"mkdmts {__version__} (formats v1)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON config file; flags override it")
        p.add_argument("--threads", type=int, default=None, help="worker hint; results do not depend on it")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("synth", help="generate a synthetic seen/unseen dataset")
    p.add_argument("--seed", type=int)
    p.add_argument("--seen-classes", type=int, dest="seen_classes")
    p.add_argument("--unseen-classes", type=int, dest="unseen_classes")
    p.add_argument("--dims", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--length-min", type=int, dest="length_min")
    p.add_argument("--length-max", type=int, dest="length_max")
    p.add_argument("--out", required=True)
    common(p)

    p = sub.add_parser("kernels", help="build per-dimension DTW kernel matrices")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bandwidth", help="'median' or a fixed positive value")
    common(p)

    p = sub.add_parser("train", help="train the multiple-kernel dictionary")
    p.add_argument("--manifest", required=True)
    p.add_argument("--kernels", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--tx", type=int)
    p.add_argument("--ta", type=int)
    p.add_argument("--tbeta", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--tune", help="JSON file with {'grid': [[k, tx], ...]}")
    p.add_argument("--out", required=True)
    common(p)

    p = sub.add_parser("encode", help="encode unseen sequences against a model")
    p.add_argument("--model", required=True)
    p.add_argument("--kernels", required=True)
    p.add_argument("--seen-manifest", required=True, dest="seen_manifest")
    p.add_argument("--manifest", required=True, help="unseen manifest")
    p.add_argument("--tx", type=int, help="override the model's code sparsity")
    p.add_argument("--threshold", type=float)
    p.add_argument("--out", required=True)
    common(p)

    p = sub.add_parser("cluster", help="incrementally cluster encoded sequences")
    p.add_argument("--enc", required=True)
    p.add_argument("--order", help="file or shuffle:SEED")
    p.add_argument("--kclust", type=float)
    p.add_argument("--krmv", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--split-min", type=int, dest="split_min")
    p.add_argument("--dup-eps", type=float, dest="dup_eps")
    p.add_argument("--out", required=True)
    p.add_argument("--dot")
    common(p)

    p = sub.add_parser("eval", help="score a tree against ground-truth labels")
    p.add_argument("--tree", required=True)
    p.add_argument("--truth", required=True, help="labeled unseen manifest")
    p.add_argument("--out", required=True)
    common(p)

    p = sub.add_parser("report", help="render a run directory as text")
    p.add_argument("--run", required=True)
    common(p)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.INFO)
        cfg = _effective(args)
        return _COMMANDS[args.command](cfg)
    except SystemExit as exc:  # argparse --version / --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except MkdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
