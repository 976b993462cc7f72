"""Command-line entry points: gen-synth, train, explain, eval, render-mask."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import data as D
from . import metrics as MT
from . import report as R
from .errors import SagpError
from .explain import ExplainConfig, calibrate_assignment_boundary, explain_instance
from .featurize import FileLookupProvider, HashedBowProvider
from .graph import build_graph
from .model import TrainConfig, forward_full, train_base
from .tensor import _sigmoid

log = logging.getLogger("sagp")


def _env_seed() -> int:
    return int(os.environ.get("SAGP_SEED", "0"))


def _add_embedding_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--embedding", choices=["hashed-bow", "file"], default="hashed-bow",
                        help="node feature provider")
    parser.add_argument("--embed-file", default=None,
                        help="JSON-lines embedding file (required for --embedding file)")
    parser.add_argument("--dim", type=int, default=None,
                        help="embedding dimension (default: 32, or the checkpoint's)")


def _make_provider(args: argparse.Namespace, dim: int):
    if args.embedding == "file":
        if not args.embed_file:
            raise SagpError("--embedding file requires --embed-file")
        return FileLookupProvider.load(args.embed_file, dim)
    return HashedBowProvider(dim)


def _build_graphs(instances, provider, claim_node: bool):
    return [build_graph(inst.claim, inst.pieces, provider, inst.id, claim_node)
            for inst in instances]


def _print_config(command: str, args: argparse.Namespace) -> None:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    resolved["command"] = command
    print(json.dumps(resolved, sort_keys=True, default=str))


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sagp",
        description="Train a claim-verification graph model and extract rationale subgraphs "
                    "by learned mask perturbation.",
    )
    parser.add_argument("--log-file", default=None,
                        help="sidecar log file (timestamps live here, never in outputs)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a planted-rationale synthetic instance file")
    p.add_argument("--out", required=True)
    p.add_argument("--num", type=int, default=200)
    p.add_argument("--nodes", type=int, default=8)
    p.add_argument("--rationales", type=int, default=3)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--noise-overlap", type=float, default=0.35)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_gen_synth)

    p = sub.add_parser("train", help="train the base classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--out-ckpt", required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sub-weight", type=float, default=1.0,
                   help="weight of the subgraph-head verdict loss")
    p.add_argument("--saliency-weight", type=float, default=1.0,
                   help="weight of the salience-distillation loss on the assignment head")
    p.add_argument("--select-rate", type=float, default=0.4,
                   help="share of nodes treated as salient during head training")
    p.add_argument("--pool", choices=["mean", "sum"], default="mean")
    p.add_argument("--claim-node", action="store_true",
                   help="add a claim-only node to every graph")
    p.add_argument("--no-boundary-calibration", action="store_true",
                   help="skip the post-training assignment boundary calibration")
    _add_embedding_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("explain", help="extract per-instance rationales from a trained model")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["edge", "node", "all"], default="edge")
    p.add_argument("--supervised", action="store_true")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--lambda1", type=float, default=1.0)
    p.add_argument("--lambda2", type=float, default=1.0)
    p.add_argument("--lambda3", type=float, default=1.0)
    p.add_argument("--lambda4", type=float, default=None,
                   help="mask sum weight (default 5e-3 edge / 0.1 node)")
    p.add_argument("--lambda5", type=float, default=None,
                   help="mask entropy weight (default 0.1 edge / 1.0 node)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--init", choices=["zeros", "gaussian"], default="zeros")
    p.add_argument("--init-std", type=float, default=0.1)
    p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    p.add_argument("--fidelity-target", choices=["hard", "soft"], default="hard")
    p.add_argument("--reg-reduction", choices=["mean", "sum"], default="mean")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--claim-node", action="store_true")
    _add_embedding_flags(p)
    p.set_defaults(func=_cmd_explain)

    p = sub.add_parser("eval", help="score explanations against gold labels and rationales")
    p.add_argument("--data", required=True)
    p.add_argument("--explanations", required=True)
    p.add_argument("--ckpt", default=None,
                   help="checkpoint for edge-mask diagnostics (optional)")
    p.add_argument("--out-report", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--claim-node", action="store_true")
    _add_embedding_flags(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("render-mask", help="render one instance's edge mask as SVG + text grid")
    p.add_argument("--explanations", required=True)
    p.add_argument("--instance-id", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--data", default=None, help="instance file, for node-id labels")
    p.set_defaults(func=_cmd_render_mask)

    return parser


def _cmd_gen_synth(args: argparse.Namespace) -> int:
    cfg = D.SynthConfig(
        num_instances=args.num,
        nodes_per_instance=args.nodes,
        num_rationales=args.rationales,
        feature_dim=args.dim,
        noise_overlap=args.noise_overlap,
        seed=args.seed,
    )
    instances = D.generate_synthetic(cfg)
    D.save_dataset(instances, args.out)
    stats = D.dataset_stats(instances)
    log.info("wrote %d instances to %s (%s)", len(instances), args.out, stats)
    print(json.dumps({"written": len(instances), "stats": stats}))
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    dim = args.dim if args.dim is not None else 32
    provider = _make_provider(args, dim)
    instances = D.load_dataset(args.data)
    graphs = _build_graphs(instances, provider, args.claim_node)
    labels = [inst.verdict for inst in instances]
    cfg = TrainConfig(
        epochs=args.epochs,
        lr=args.lr,
        seed=args.seed,
        sub_loss_weight=args.sub_weight,
        saliency_weight=args.saliency_weight,
        select_rate=args.select_rate,
        pool=args.pool,
    )
    ckpt, history = train_base(graphs, labels, cfg)
    for stats in history:
        log.info("epoch %3d  loss %.4f  acc %.4f", stats.epoch, stats.loss, stats.accuracy)
    if not args.no_boundary_calibration:
        shift = calibrate_assignment_boundary(ckpt, graphs)
        log.info("assignment boundary shift %+.3f", shift)
    D.save_checkpoint(ckpt, args.out_ckpt)
    final = history[-1]
    print(json.dumps({
        "epochs_run": len(history),
        "final_loss": final.loss,
        "final_accuracy": final.accuracy,
        "checkpoint": str(args.out_ckpt),
    }))
    return 0


def _explain_worker(payload):
    ckpt, instance, graph, cfg = payload
    return explain_instance(ckpt, graph, cfg, instance_id=instance.id)


def _cmd_explain(args: argparse.Namespace) -> int:
    ckpt = D.load_checkpoint(args.ckpt)
    dim = args.dim if args.dim is not None else ckpt.dim
    provider = _make_provider(args, dim)
    instances = sorted(D.load_dataset(args.data), key=lambda inst: inst.id)
    graphs = _build_graphs(instances, provider, args.claim_node)
    cfg = ExplainConfig(
        mode=args.mode,
        epochs=args.epochs,
        lr=args.lr,
        lam1=args.lambda1,
        lam2=args.lambda2,
        lam3=args.lambda3,
        lam4=args.lambda4,
        lam5=args.lambda5,
        supervised=args.supervised,
        seed=args.seed,
        init=args.init,
        init_std=args.init_std,
        optimizer=args.optimizer,
        fidelity_target=args.fidelity_target,
        reg_reduction=args.reg_reduction,
    )
    print(json.dumps({"mode": cfg.mode, "supervised": cfg.supervised,
                      "lambdas": [cfg.lam1, cfg.lam2, cfg.lam3] + [
                          list(v) for v in cfg.reg_weights().values()],
                      "epochs": cfg.epochs, "lr": cfg.lr}))

    payloads = [(ckpt, inst, g, cfg) for inst, g in zip(instances, graphs)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            explanations = list(pool.map(_explain_worker, payloads))
    else:
        explanations = [_explain_worker(p) for p in payloads]
    explanations.sort(key=lambda e: e.instance_id)
    D.save_explanations(explanations, args.out)
    log.info("explained %d instances -> %s", len(explanations), args.out)
    print(json.dumps({"explained": len(explanations), "out": str(args.out)}))
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    instances = sorted(D.load_dataset(args.data), key=lambda inst: inst.id)
    explanations = D.load_explanations(args.explanations)
    report = MT.evaluate_explanations(instances, explanations)

    mask_report = None
    edge_sigmas = None
    if args.ckpt:
        ckpt = D.load_checkpoint(args.ckpt)
        dim = args.dim if args.dim is not None else ckpt.dim
        provider = _make_provider(args, dim)
        graphs = _build_graphs(instances, provider, args.claim_node)
        mask_report = MT.mask_diagnostics(ckpt, instances, graphs, explanations,
                                          threshold=args.threshold)
        edge_sigmas = [_sigmoid(e.mask.edge_logits) for e in explanations
                       if e.mask.edge_logits is not None]

    paths = R.write_report(
        report, mask_report, args.out_report,
        loss_traces=[e.loss_trace for e in explanations],
        edge_sigmas=edge_sigmas,
    )
    print(R.format_report_table(report, mask_report))
    print(json.dumps({"report_dir": str(args.out_report),
                      "files": {k: str(v) for k, v in paths.items()}}))
    return 0


def _cmd_render_mask(args: argparse.Namespace) -> int:
    explanations = D.load_explanations(args.explanations)
    match = [e for e in explanations if e.instance_id == args.instance_id]
    if not match:
        raise SagpError(f"no explanation for instance {args.instance_id!r} in {args.explanations}")
    node_ids = None
    if args.data:
        instances = {inst.id: inst for inst in D.load_dataset(args.data)}
        inst = instances.get(args.instance_id)
        if inst is not None:
            node_ids = [p.id for p in inst.pieces]
    svg_path, txt_path = R.render_mask_files(match[0], args.out, node_ids)
    print(json.dumps({"svg": str(svg_path), "txt": str(txt_path)}))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)

    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    handlers[0].setFormatter(logging.Formatter("%(name)s %(levelname)s %(message)s"))
    if args.log_file:
        fh = logging.FileHandler(args.log_file)
        fh.setFormatter(logging.Formatter("%(asctime)s %(name)s %(levelname)s %(message)s"))
        handlers.append(fh)
    logging.basicConfig(level=logging.INFO, handlers=handlers, force=True)

    if getattr(args, "seed", None) is None and hasattr(args, "seed"):
        args.seed = _env_seed()

    _print_config(args.command, args)
    try:
        return args.func(args)
    except SagpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
