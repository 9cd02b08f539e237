"""Command-line entry point: ``hotet <verb> [options]``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import bench, config as config_mod
from .checkpoint import CheckpointError, atomic_write, load_model, save_model, save_potentials
from .color import ImageDistribution, transfer_finetune, transfer_multi, transfer_pair
from .diffcore import DivergenceError
from .embedder import EmpiricalDistribution
from .icnn import default_spec
from .io import read_distribution, save_image
from .solvers import SolverConfig, fit
from .trainer import (HotetModel, ablate_embedding, finetune, pair_potentials, predict,
                      train_multi, train_pair, write_trace)

log = logging.getLogger("hotet")

EXIT_CONFIG = 2
EXIT_DIVERGED = 3


class UsageError(Exception):
    pass


def write_csv(path, rows: list[dict]) -> None:
    if not rows:
        return
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]))
    writer.writeheader()
    writer.writerows(rows)
    atomic_write(path, buf.getvalue().encode())


def write_json(path, obj) -> None:
    atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def _new_model(cfg: dict, d: int, ablate: bool = False) -> HotetModel:
    m = cfg["model"]
    model = HotetModel(d, default_spec(d), m["ctx_dim"], m["blocks"], m["heads"], m["head_dim"], m["ffn_dim"],
                       tuple(m["hyper_hidden"]), seed=cfg["seed"])
    return ablate_embedding(model, seed=cfg["seed"]) if ablate else model


def _pair_samples(pair: bench.GroundTruthPair, n: int, seed: int):
    rng = np.random.default_rng(seed)
    return EmpiricalDistribution.uniform(pair.source(n, rng)), EmpiricalDistribution.uniform(pair.target(n, rng))


def _suite(cfg: dict, d: int):
    s = cfg["suite"]
    target, members = bench.mixture_family(d, s["n_train"] + s["n_test"], cfg["seed"])
    rng = np.random.default_rng([cfg["seed"], d, 1])
    dists = [EmpiricalDistribution.uniform(mu.draw(s["samples_per_dist"], rng)) for mu, _ in members]
    nu = EmpiricalDistribution.uniform(target.draw(s["target_samples"], rng))
    return nu, dists, [p for _, p in members]


def _plot(out: Path, name: str, trace: list[dict]) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3))
    it = [r["iteration"] for r in trace]
    ax.plot(it, [r["loss_fwd"] for r in trace], lw=0.8, label="forward")
    ax.plot(it, [r["loss_inv"] for r in trace], lw=0.8, label="inverse")
    ax.set_xlabel("iteration")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / f"{name}.png", dpi=120)
    plt.close(fig)


def cmd_benchmark(args, cfg) -> int:
    out = Path(args.out)
    rows = []
    for d in cfg["dims"]:
        pair = bench.brenier_benchmark_pair(d, cfg["seed"], cfg["suite"]["potential_scale"])
        n = max(cfg["suite"]["samples_per_dist"], 4 * config_mod.sample_batch(cfg, d))
        mu, nu = _pair_samples(pair, n, cfg["seed"])
        tcfg = config_mod.train_config(cfg, d, args.solver)
        model = _new_model(cfg, d)
        start = time.perf_counter()
        _, trace = train_pair(model, mu, nu, tcfg)
        f, g = pair_potentials(model, mu, nu, tcfg.embed_size, cfg["seed"])
        rep = bench.evaluate_maps(bench.potential_map(f), bench.potential_map(g), pair,
                                  cfg["eval"]["n_eval"], cfg["seed"] + 1)
        rows.append({"dim": d, "method": "hotet", **rep.to_dict(), "train_seconds": time.perf_counter() - start})
        write_trace(trace, out / f"trace_hotet_d{d}.jsonl")
        if args.plot:
            _plot(out, f"trace_hotet_d{d}", trace)

        bl = cfg["baseline"]
        scfg = SolverConfig(kind=args.solver or cfg["solver"]["kind"], batch_size=bl["sample_batch"],
                            inner_iters=cfg["solver"]["inner_iters"], lr=cfg["train"]["lr"],
                            iterations=bl["iterations"])
        res = fit(pair.source, pair.target, default_spec(d), scfg, seed=cfg["seed"])
        rep = bench.evaluate_maps(bench.potential_map(res.f.params()), bench.potential_map(res.g.params()), pair,
                                  cfg["eval"]["n_eval"], cfg["seed"] + 1)
        rows.append({"dim": d, "method": scfg.kind, **rep.to_dict(), "train_seconds": res.seconds})
        write_json(out / f"report_d{d}.json", rows[-2:])
        log.info("d=%d hotet uvp %.2f%%, %s uvp %.2f%%", d, rows[-2]["uvp_fwd"], scfg.kind, rows[-1]["uvp_fwd"])
    write_csv(out / "summary.csv", rows)
    print(_table(rows))
    return 0


def _table(rows: list[dict]) -> str:
    lines = [f"{'dim':>4} {'method':>6} {'uvp_fwd':>8} {'uvp_inv':>8} {'cs_fwd':>6} {'cs_inv':>6}"]
    for r in rows:
        lines.append(f"{r['dim']:>4} {r['method']:>6} {r['uvp_fwd']:8.2f} {r['uvp_inv']:8.2f} "
                     f"{r['cs_fwd']:6.3f} {r['cs_inv']:6.3f}")
    return "\n".join(lines)


def _read_pair_inputs(args, cfg):
    if args.source and args.target:
        mu, nu = read_distribution(args.source), read_distribution(args.target)
        if mu.dim != nu.dim:
            raise UsageError("source and target dimensions differ")
        return mu, nu, None
    if args.source or args.target:
        raise UsageError("give both --source and --target, or neither to use the configured benchmark pair")
    d = cfg["dims"][0]
    pair = bench.brenier_benchmark_pair(d, cfg["seed"], cfg["suite"]["potential_scale"])
    mu, nu = _pair_samples(pair, max(cfg["suite"]["samples_per_dist"], 4 * config_mod.sample_batch(cfg, d)),
                           cfg["seed"])
    return mu, nu, pair


def cmd_train_pair(args, cfg) -> int:
    mu, nu, _ = _read_pair_inputs(args, cfg)
    tcfg = config_mod.train_config(cfg, mu.dim, args.solver)
    model = _new_model(cfg, mu.dim, args.ablate_embedding)
    _, trace = train_pair(model, mu, nu, tcfg)
    save_model(model, args.out, {"run": cfg, "train": tcfg.to_dict()})
    write_trace(trace, str(args.out) + ".trace.jsonl")
    return 0


def cmd_train_multi(args, cfg) -> int:
    if args.sources:
        if not args.target:
            raise UsageError("--sources needs --target")
        dists, nu = [read_distribution(p) for p in args.sources], read_distribution(args.target)
        d = nu.dim
    else:
        d = cfg["dims"][0]
        nu, dists, _ = _suite(cfg, d)
        dists = dists[:cfg["suite"]["n_train"]]
    tcfg = config_mod.train_config(cfg, d, args.solver or "mmv2")
    model = _new_model(cfg, d, args.ablate_embedding)
    _, trace = train_multi(model, dists, nu, tcfg)
    save_model(model, args.out, {"run": cfg, "train": tcfg.to_dict()})
    write_trace(trace, str(args.out) + ".trace.jsonl")
    return 0


def _require_checkpoint(args) -> tuple[HotetModel, dict]:
    if not args.checkpoint:
        raise UsageError("this command needs --checkpoint pointing to a trained model")
    if not Path(args.checkpoint).exists():
        raise UsageError(f"checkpoint {args.checkpoint} does not exist; train a model first")
    model, meta = load_model(args.checkpoint)
    if model.mode is None:
        raise UsageError(f"checkpoint {args.checkpoint} holds an untrained model")
    return model, meta


def _embed_size(meta: dict, cfg: dict) -> int:
    return int(meta.get("train", {}).get("embed_size", cfg["train"]["embed_size"]))


def _suite_reports(model, cfg, es, ids, dists, pairs) -> list[dict]:
    rows = []
    for i in ids:
        f, g = predict(model, dists[i], es, cfg["seed"])
        rep = bench.evaluate_maps(bench.potential_map(f), bench.potential_map(g), pairs[i],
                                  cfg["eval"]["n_eval"], cfg["seed"] + 1)
        rows.append({"index": i, **rep.to_dict()})
    return rows


def cmd_predict(args, cfg) -> int:
    model, meta = _require_checkpoint(args)
    es = _embed_size(meta, cfg)
    if args.source:
        f, g = predict(model, read_distribution(args.source), es, cfg["seed"])
        save_potentials(args.out, f, g, {"source": str(args.source)})
        return 0
    _, dists, pairs = _suite(cfg, model.input_dim)
    n_train = cfg["suite"]["n_train"]
    rows = [{"split": "test", **r} for r in _suite_reports(model, cfg, es, range(n_train, len(dists)), dists, pairs)]
    out = Path(args.out)
    write_csv(out / "predict.csv", rows)
    summary = _summary(rows, "test")
    write_json(out / "predict_summary.json", summary)
    print(json.dumps(summary, indent=2))
    return 0


def _summary(rows, split) -> dict:
    keys = ("uvp_fwd", "uvp_inv", "cs_fwd", "cs_inv")
    return {"split": split, "count": len(rows), **{k: float(np.mean([r[k] for r in rows])) for k in keys}}


def cmd_eval(args, cfg) -> int:
    model, meta = _require_checkpoint(args)
    es = _embed_size(meta, cfg)
    out = Path(args.out)
    if model.mode == "multi":
        _, dists, pairs = _suite(cfg, model.input_dim)
        n_train = cfg["suite"]["n_train"]
        rows = [{"split": "train", **r} for r in _suite_reports(model, cfg, es, range(n_train), dists, pairs)]
        rows += [{"split": "test", **r} for r in _suite_reports(model, cfg, es, range(n_train, len(dists)), dists, pairs)]
        summaries = [_summary([r for r in rows if r["split"] == s], s) for s in ("train", "test")]
        write_csv(out / "eval.csv", rows)
    else:
        cfg = dict(cfg, dims=[model.input_dim])
        mu, nu, pair = _read_pair_inputs(args, cfg)
        if pair is None:
            raise UsageError("eval of a pair model needs the configured benchmark pair (omit --source/--target)")
        f, g = pair_potentials(model, mu, nu, es, cfg["seed"])
        rep = bench.evaluate_maps(bench.potential_map(f), bench.potential_map(g), pair, cfg["eval"]["n_eval"],
                                  cfg["seed"] + 1)
        summaries = [{"split": "pair", "count": 1, **rep.to_dict()}]
    write_json(out / "eval_summary.json", summaries)
    print(json.dumps(summaries, indent=2))
    return 0


def cmd_finetune(args, cfg) -> int:
    model, meta = _require_checkpoint(args)
    if not (args.source and args.target):
        raise UsageError("finetune needs --source and --target distribution files")
    mu, nu = read_distribution(args.source), read_distribution(args.target)
    tcfg = config_mod.train_config(cfg, mu.dim, args.solver or meta.get("train", {}).get("solver", {}).get("kind"))
    steps = cfg["color"]["finetune_steps"] if args.finetune is None else args.finetune
    tuned = finetune(model, mu, nu, steps, tcfg)
    save_model(tuned, args.out, {"run": cfg, "train": tcfg.to_dict(), "finetune_steps": steps})
    return 0


def cmd_color_transfer(args, cfg) -> int:
    if not args.source or not args.target:
        raise UsageError("color-transfer needs --source image(s) and --target image")
    sub = cfg["color"]["subsample"]
    try:
        sources = [ImageDistribution.from_file(p, sub) for p in args.source]
        target = ImageDistribution.from_file(args.target, sub)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    tcfg = config_mod.train_config(cfg, 3, args.solver or "mmb")
    out = Path(args.out)
    stem = lambda p: Path(p).stem
    if args.finetune is not None:
        model, _ = _require_checkpoint(args)
        if model.mode != "multi":
            raise UsageError("--finetune needs a checkpoint trained on several source images")
        for path, src in zip(args.source, sources):
            _, img = transfer_finetune(model, src, target, args.finetune, tcfg)
            save_image(out / f"{stem(path)}_finetuned.png", img)
        return 0
    if len(sources) == 1:
        model, fwd, inv = transfer_pair(sources[0], target, tcfg, _new_model(cfg, 3, args.ablate_embedding))
        save_image(out / f"{stem(args.source[0])}_recolored.png", fwd)
        save_image(out / f"{stem(args.target)}_recolored.png", inv)
    else:
        model, outs = transfer_multi(sources, target, tcfg, _new_model(cfg, 3, args.ablate_embedding))
        for path, img in zip(args.source, outs):
            save_image(out / f"{stem(path)}_recolored.png", img)
    if args.checkpoint:
        save_model(model, args.checkpoint, {"run": cfg, "train": tcfg.to_dict()})
    return 0


def cmd_embed(args, cfg) -> int:
    if not args.checkpoint or not Path(args.checkpoint).exists():
        raise UsageError("embed needs --checkpoint pointing to an existing model")
    model, meta = load_model(args.checkpoint)
    if not args.input:
        raise UsageError("embed needs --input distribution file")
    dist = read_distribution(args.input)
    # the whole file is embedded: subsampling would break permutation invariance
    pts, w = torch.as_tensor(dist.points), torch.as_tensor(dist.weights)
    with torch.no_grad():
        z = model.context(pts[None], w[None])[0].numpy()
    atomic_write(args.out, ("\n".join(repr(float(v)) for v in z) + "\n").encode())
    return 0


COMMANDS = {
    "benchmark": cmd_benchmark,
    "train-pair": cmd_train_pair,
    "train-multi": cmd_train_multi,
    "predict": cmd_predict,
    "finetune": cmd_finetune,
    "color-transfer": cmd_color_transfer,
    "embed": cmd_embed,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hotet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration (may name a preset: full, desk)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=True, help="output file or directory")
        p.add_argument("--checkpoint")
        p.add_argument("--dims", type=lambda s: [int(v) for v in s.split(",")])
        p.add_argument("--solver", choices=["mmb", "mmv2"])
        p.add_argument("--ablate-embedding", action="store_true")
        p.add_argument("--finetune", type=int, metavar="N")
        p.add_argument("--plot", action="store_true", help="also write loss-trace figures")
        if name == "color-transfer":
            p.add_argument("--source", nargs="+")
        else:
            p.add_argument("--source")
        p.add_argument("--sources", nargs="+")
        p.add_argument("--target")
        p.add_argument("--input")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_mod.load(args.config, seed=args.seed, dims=args.dims)
        return COMMANDS[args.command](args, cfg)
    except (config_mod.ConfigError, UsageError, CheckpointError, ValueError) as exc:
        print(f"hotet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"hotet {args.command}: numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
