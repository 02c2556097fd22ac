"""Command-line interface.

Subcommands: gen-data, train, eval, gradcheck, embed, ablate.  All artifacts
(checkpoints, CSVs, JSON, SVG) are byte-reproducible for a fixed config and
seed.  Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .autodiff import Tensor, check_gradients, finite_diff_check
from .checkpoint import load_bundle, save_bundle
from .config import resolve_config, to_synthetic_spec, to_train_config
from .data import (
    DomainDataset,
    gen_synthetic,
    load_dataset,
    save_dataset,
    split_dataset,
    subset,
)
from .errors import ConfigError
from .graph import build_graph, gcn_forward
from .trainer import (
    build_bundle,
    evaluate,
    fit,
    metrics_json,
    save_history,
)
from .tsne import export_scatter, tsne_embed


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swapgraph",
        description="Domain-adaptive image classification via swapped "
        "autoencoders and graph convolutions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default="runs/out"):
        p.add_argument("--config", metavar="PATH", help="JSON config file")
        p.add_argument("--preset", metavar="NAME",
                       help="named preset: camelyon, chexpert, nih, or desk")
        p.add_argument("--seed", type=int, metavar="N", help="RNG seed override")
        p.add_argument("--out", metavar="DIR", help=f"output directory (default {out_default})")

    def data_flags(p):
        p.add_argument("--source-dir", metavar="DIR",
                       help="directory of source-domain PGM images + labels.csv")
        p.add_argument("--target-dir", metavar="DIR",
                       help="directory of target-domain PGM images + labels.csv")

    p = sub.add_parser("gen-data", help="write the synthetic two-domain benchmark as PGM trees")
    common(p)

    p = sub.add_parser("train", help="train a model; writes checkpoint.gcan, history.csv, metrics.json")
    common(p)
    data_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint; writes metrics.json")
    common(p)
    data_flags(p)
    p.add_argument("--checkpoint", metavar="PATH", required=True, help="checkpoint file (.gcan)")
    p.add_argument("--domain", choices=("source", "target"), default="target",
                   help="which domain to evaluate (default target)")

    p = sub.add_parser("gradcheck", help="finite-difference check of every gradient rule")
    p.add_argument("--seed", type=int, default=0, metavar="N", help="RNG seed (default 0)")

    p = sub.add_parser("embed", help="2-D embedding map of graph features; writes SVG + CSV")
    common(p)
    data_flags(p)
    p.add_argument("--checkpoint", metavar="PATH", required=True, help="checkpoint file (.gcan)")

    p = sub.add_parser("ablate", help="train full, no-str, and no-swap variants and compare")
    common(p)
    data_flags(p)
    return parser


def _resolved(args) -> dict:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        overrides["out_dir"] = args.out
    if getattr(args, "source_dir", None) is not None:
        overrides["source_dir"] = args.source_dir
    if getattr(args, "target_dir", None) is not None:
        overrides["target_dir"] = args.target_dir
    return resolve_config(args.config, args.preset, overrides)


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_domains(cfg: dict) -> tuple[DomainDataset, DomainDataset, bool]:
    """Datasets from --source-dir/--target-dir, or the synthetic benchmark.

    Returns (source, target, from_disk).
    """
    src_dir, tgt_dir = cfg["source_dir"], cfg["target_dir"]
    if (src_dir is None) != (tgt_dir is None):
        raise ConfigError("source_dir and target_dir must be given together")
    if src_dir is not None:
        return (
            load_dataset(src_dir, domain_tag="source"),
            load_dataset(tgt_dir, domain_tag="target"),
            True,
        )
    source, target = gen_synthetic(to_synthetic_spec(cfg))
    return source, target, False


def _three_way(ds: DomainDataset, seed: int):
    tr, va, te = split_dataset(ds, seed=seed)
    return subset(ds, tr), subset(ds, va), subset(ds, te)


def _fit_on(cfg: dict, tc) -> tuple:
    """Split both domains, fit on the train portions, report on the test
    portions.  Returns (bundle, history, report)."""
    source, target, _ = _load_domains(cfg)
    s_train, s_val, s_test = _three_way(source, tc.seed)
    t_train, t_val, t_test = _three_way(target, tc.seed)
    bundle, history = fit(
        tc,
        s_train,
        t_train,
        source_val=s_val,
        target_val=t_val if t_val.labels is not None else None,
    )
    report = {"source_test": evaluate(bundle, s_test, "source")}
    if t_test.labels is not None:
        report["target_test"] = evaluate(bundle, t_test, "target")
    return bundle, history, report


def cmd_gen_data(args) -> int:
    cfg = _resolved(args)
    out = _out_dir(cfg)
    source, target = gen_synthetic(to_synthetic_spec(cfg))
    save_dataset(source, out / "source")
    save_dataset(target, out / "target")
    print(f"wrote {len(source)} source images to {out / 'source'}")
    print(f"wrote {len(target)} target images to {out / 'target'}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolved(args)
    tc = to_train_config(cfg)
    out = _out_dir(cfg)
    bundle, history, report = _fit_on(cfg, tc)
    save_bundle(bundle, out / "checkpoint.gcan")
    save_history(history, out / "history.csv")
    (out / "metrics.json").write_text(metrics_json(report, tc), encoding="utf-8")
    print(f"trained {tc.epochs} epochs ({len(history.steps)} steps)")
    for key in sorted(report):
        print(f"{key}: accuracy={report[key]['accuracy']!r}")
    print(f"artifacts in {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolved(args)
    tc = to_train_config(cfg)
    out = _out_dir(cfg)
    bundle = build_bundle(tc)
    load_bundle(bundle, args.checkpoint)
    source, target, from_disk = _load_domains(cfg)
    ds = source if args.domain == "source" else target
    if not from_disk:
        # match the held-out portion used by `train` on the same seed
        ds = _three_way(ds, tc.seed)[2]
    if ds.labels is None:
        raise ConfigError(f"{args.domain} dataset has no labels to evaluate against")
    report = {f"{args.domain}_eval": evaluate(bundle, ds, args.domain)}
    (out / "metrics.json").write_text(metrics_json(report, tc), encoding="utf-8")
    key = f"{args.domain}_eval"
    print(f"{key}: accuracy={report[key]['accuracy']!r} n={report[key]['n_eval']}")
    return 0


def _gradcheck_suite(seed: int) -> list[tuple[str, float]]:
    from .disentangle import Fdn, loss_disent, loss_rec, loss_str
    from .graph import GcnStack
    from .trainer import DomainClassifier, classification_loss, domain_gen_loss
    from .autodiff import (
        binary_cross_entropy,
        conv2d,
        cosine_similarity,
        maxpool2d,
        softmax_cross_entropy,
        upsample2x,
    )

    rng = np.random.default_rng(seed)
    results = []

    def add(name, err):
        results.append((name, err))

    x = Tensor(rng.standard_normal((3, 4)))
    w = rng.standard_normal((4, 2))
    add("matmul+relu", finite_diff_check(lambda t: (t @ Tensor(w)).relu().sum(), x))

    img = Tensor(rng.standard_normal((2, 2, 4, 4)))
    k = rng.standard_normal((3, 2, 3, 3))
    add("conv2d", finite_diff_check(lambda t: conv2d(t, Tensor(k)).sum(), img))
    add("maxpool2d", finite_diff_check(lambda t: maxpool2d(t).sum(), img))
    add("upsample2x", finite_diff_check(lambda t: (upsample2x(t) * upsample2x(t)).sum(), img))

    v = Tensor(rng.standard_normal(6))
    u = rng.standard_normal(6)
    add("cosine_similarity", finite_diff_check(lambda t: cosine_similarity(t, Tensor(u)), v))

    logits = Tensor(rng.standard_normal((4, 3)))
    labels = np.array([0, 2, 1, 1])
    add("softmax_cross_entropy",
        finite_diff_check(lambda t: softmax_cross_entropy(t, labels), logits))
    p = Tensor(rng.uniform(0.1, 0.9, size=5))
    add("binary_cross_entropy",
        finite_diff_check(lambda t: binary_cross_entropy(t.sigmoid(), 1.0).mean(), p))

    fdn = Fdn(in_ch=1, h=8, w=8, d_tex=3, c_str=1,
              widths=(4, 3, 3), disc_widths=(3, 3, 4),
              rng=np.random.default_rng(seed + 1))
    xs = Tensor(rng.uniform(0.0, 1.0, size=(2, 1, 8, 8)))
    xt = Tensor(rng.uniform(0.0, 1.0, size=(2, 1, 8, 8)))

    def rec_loss():
        return loss_rec(fdn, xs, xt, kind="l2")

    add("reconstruction",
        check_gradients(rec_loss, [fdn.encoder_S.conv1.weight, fdn.decoder_T.conv_out.weight]))

    def disent_loss():
        code_s = fdn.encode("S", xs)
        code_t = fdn.encode("T", xt)
        fake = fdn.swap_generate(code_s.z_str, code_t.z_tex)
        swap = binary_cross_entropy(fdn.disc(fake), 1.0).mean()
        re_str = fdn.encode("S", fake).z_str
        str_terms = loss_str(code_s.z_str[np.array([0])], re_str[np.array([0])])
        rec = loss_rec(fdn, xs, xt, kind="l1")
        return loss_disent(rec, swap, str_terms, 0.9, 1.2)

    add("disentangle_composite",
        check_gradients(disent_loss, [
            fdn.encoder_S.conv1.weight,
            fdn.encoder_T.tex_head.weight,
            fdn.decoder_T.conv_a.weight,
            fdn.disc.conv1.weight,
        ]))

    gcn = GcnStack(k=7, hidden=4, out=3, rng=np.random.default_rng(seed + 2))
    head_w = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
    y = np.array([0, 1])

    def graph_loss():
        code = fdn.encode("S", xs)
        emb = gcn_forward(gcn, build_graph(code))
        return softmax_cross_entropy(emb @ head_w, y)

    add("graph_pipeline",
        check_gradients(graph_loss, [gcn.w1, gcn.w2, head_w, fdn.encoder_S.conv2.weight]))

    dom = DomainClassifier(in_dim=3, hidden=3, rng=np.random.default_rng(seed + 3))

    def adv_loss():
        emb_s = gcn_forward(gcn, build_graph(fdn.encode("S", xs)))
        emb_t = gcn_forward(gcn, build_graph(fdn.encode("T", xt)))
        return domain_gen_loss(dom, emb_s, emb_t)

    add("domain_adversarial",
        check_gradients(adv_loss, [dom.fc1.weight, fdn.encoder_T.conv1.weight]))
    return results


def cmd_gradcheck(args) -> int:
    results = _gradcheck_suite(args.seed)
    threshold = 1e-4
    worst = 0.0
    for name, err in results:
        status = "ok" if err < threshold else "FAIL"
        print(f"{name:24s} max_rel_err={err:.3e}  {status}")
        worst = max(worst, err)
    if worst >= threshold:
        print(f"gradient check failed: worst error {worst:.3e} >= {threshold:.0e}",
              file=sys.stderr)
        return 1
    print(f"all {len(results)} gradient checks passed (worst {worst:.3e})")
    return 0


def _embed_dataset(bundle, ds: DomainDataset, domain: str) -> np.ndarray:
    cfg = bundle.config
    side = "S" if (domain == "source" or cfg.source_only) else "T"
    chunk = cfg.eval_batch or cfg.batch_size
    rows = []
    for start in range(0, len(ds), chunk):
        x = Tensor(ds.images[start : start + chunk])
        rows.append(gcn_forward(bundle.gcn, build_graph(bundle.fdn.encode(side, x))).data)
    return np.concatenate(rows, axis=0)


def cmd_embed(args) -> int:
    cfg = _resolved(args)
    tc = to_train_config(cfg)
    out = _out_dir(cfg)
    bundle = build_bundle(tc)
    load_bundle(bundle, args.checkpoint)
    source, target, from_disk = _load_domains(cfg)
    if not from_disk:
        source = _three_way(source, tc.seed)[2]
        target = _three_way(target, tc.seed)[2]
    feats = np.concatenate(
        [_embed_dataset(bundle, source, "source"), _embed_dataset(bundle, target, "target")],
        axis=0,
    )
    labels = np.concatenate([
        source.labels if source.labels is not None else np.full(len(source), -1),
        target.labels if target.labels is not None else np.full(len(target), -1),
    ])
    domains = ["source"] * len(source) + ["target"] * len(target)
    coords = tsne_embed(
        feats,
        perplexity=cfg["tsne_perplexity"],
        iters=cfg["tsne_iters"],
        seed=tc.seed,
    )
    svg_path, csv_path = export_scatter(coords, labels, domains, out / "embedding.svg")
    print(f"embedded {feats.shape[0]} instances")
    print(f"wrote {svg_path} and {csv_path}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolved(args)
    out = _out_dir(cfg)
    variants = [
        ("full", {}),
        ("no-str", {"disable_str": True}),
        ("no-swap", {"disable_swap": True}),
    ]
    rows = {}
    for name, patch in variants:
        vc = dict(cfg)
        vc.update(patch)
        tc = to_train_config(vc)
        _, _, report = _fit_on(vc, tc)
        rows[name] = report
        print(f"[{name}] done", file=sys.stderr)
    table = ["variant   target_acc  source_acc"]
    for name, _ in variants:
        tgt = rows[name].get("target_test", {}).get("accuracy")
        src = rows[name]["source_test"]["accuracy"]
        tgt_s = "-" if tgt is None else f"{tgt:.4f}"
        table.append(f"{name:<9s} {tgt_s:>10s}  {src:.4f}")
    import json

    (out / "ablation.json").write_text(
        json.dumps(rows, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print("\n".join(table))
    print(f"wrote {out / 'ablation.json'}")
    return 0


_HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "embed": cmd_embed,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, AssertionError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
