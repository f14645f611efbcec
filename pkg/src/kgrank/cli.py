"""``kgrank`` command-line driver.

Artifact layout under ``paths.artifacts``::

    embeddings/<Kind>.kge      trained tables (+ .meta sidecar)
    scores/<split>/<source>.txt
    frequencies/<split>.txt    candidate frequencies
    ensemble/weights.txt, report.tsv, report.png
    predictions/<split>.txt    top-K candidate positions per query
    reports/                   loss curves, alpha sweeps, eval tables
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as kio
from .config import ConfigError, PipelineConfig, load_config
from .context import (
    SmoothConfig, deepwalk_candidate_scores, generate_walks, post_smooth, skipgram_train,
    tune_alpha,
)
from .core import CandidateQuerySet, DataError, TripletStore, Vocab, load_queries, load_triplets, mrr
from .ensemble import (
    ScoreMatrix, combine, frequency_mask, grid_search, low_frequency_filter, normalize_scores, top_k,
)
from .features import FEATURE_KINDS, FeatureSource, build_index, candidate_frequency, compute_feature_matrix
from .models import MODEL_KINDS, score_candidates
from .trainer import train

logger = logging.getLogger("kgrank")

SMOOTHABLE = ("TransE", "RotatE")
SPLITS = ("valid", "test")

REBUILD_WARNING = (
    "rebuilding features from test candidates lets the candidate lists of the "
    "very queries being ranked shape their own features; validation MRR measured "
    "without this step will not predict test MRR reliably"
)


class UsageError(Exception):
    pass


def valid_sources() -> list:
    return (list(MODEL_KINDS) + [f"{k}_smooth" for k in SMOOTHABLE] + ["DeepWalk"]
            + list(FEATURE_KINDS))


# -- data loading --

def load_data(cfg: PipelineConfig):
    """Training store plus validation/test queries over one shared vocabulary."""
    train_path = cfg.path("train")
    if train_path is None:
        raise UsageError("paths.train is not set")
    store = load_triplets(train_path)
    splits = {}
    for name in SPLITS:
        p = cfg.path(name)
        if p is not None:
            splits[name] = load_queries(p)
    n_ent = max([store.vocab.entity_count] + [q.vocab.entity_count for q in splits.values()])
    n_rel = max([store.vocab.relation_count] + [q.vocab.relation_count for q in splits.values()])
    vocab = Vocab(n_ent, n_rel)
    store = TripletStore(store.triples, vocab)
    splits = {k: CandidateQuerySet(q.queries, vocab) for k, q in splits.items()}
    return store, splits


def _split(splits, name) -> CandidateQuerySet:
    if name not in splits:
        raise UsageError(f"paths.{name} is not set; cannot use split {name!r}")
    return splits[name]


def _ensure(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def _score_path(cfg, split, source) -> Path:
    return cfg.artifacts / "scores" / split / f"{source}.txt"


def _embedding_path(cfg, kind) -> Path:
    return cfg.artifacts / "embeddings" / f"{kind}.kge"


# -- commands --

def cmd_train(cfg: PipelineConfig, model_kind: str, merge_validation: bool = False, out=print):
    if model_kind not in MODEL_KINDS:
        raise UsageError(f"unknown model {model_kind!r}; choose from {', '.join(MODEL_KINDS)}")
    store, splits = load_data(cfg)
    if merge_validation:
        valid = _split(splits, "valid")
        before = len(store)
        store = store.extend(valid.true_triples())
        out(f"merged {len(store) - before} validation triples into training ({len(store)} total)")
    tc = cfg.train_config(model_kind)
    history = []

    def report(epoch, loss, elapsed):
        history.append((epoch, loss))
        out(f"{model_kind} epoch {epoch} loss {loss:.6f} elapsed {elapsed:.1f}s")

    table = train(store, tc, callback=report)
    path = _embedding_path(cfg, model_kind)
    kio.save_embeddings(table, _ensure(path.parent) / path.name)
    reports = _ensure(cfg.artifacts / "reports")
    with open(reports / f"loss_{model_kind}.tsv", "w", encoding="utf-8") as fh:
        fh.write("epoch\tloss\n")
        for epoch, loss in history:
            fh.write(f"{epoch}\t{loss!r}\n")
    from .plotting import plot_loss_curve

    plot_loss_curve([e for e, _ in history], [v for _, v in history],
                    reports / f"loss_{model_kind}.png", title=model_kind)
    out(f"wrote {path}")
    return path


def cmd_walks(cfg: PipelineConfig, out=print):
    store, _ = load_data(cfg)
    wc = cfg.walk_config()
    walks = generate_walks(store, wc)
    _ensure(cfg.artifacts)
    kio.save_walks(walks, cfg.artifacts / "walks.txt")
    out(f"generated {len(walks)} walks")
    emb = skipgram_train(walks, wc, store.vocab.entity_count)
    path = _embedding_path(cfg, "DeepWalk")
    kio.save_embeddings(kio.node_embedding_table(emb), _ensure(path.parent) / path.name)
    out(f"wrote {path}")
    return path


def _load_table(cfg, kind):
    table = kio.load_embeddings(_embedding_path(cfg, kind))
    if kind == "DeepWalk":
        return table
    want = cfg.geometry(kind)
    if table.geometry != want:
        raise DataError(
            f"{_embedding_path(cfg, kind)}: stored geometry {table.geometry} does not match "
            f"configured {want}"
        )
    return table


def _smooth_alpha(cfg, kind, table, store, valid, out):
    if cfg.smooth_alpha is not None:
        return cfg.smooth_alpha
    best, results = tune_alpha(table, store, valid, cfg.smooth_alphas)
    reports = _ensure(cfg.artifacts / "reports")
    with open(reports / f"smooth_{kind}.tsv", "w", encoding="utf-8") as fh:
        fh.write("alpha\tvalid_mrr\n")
        for a in sorted(results):
            fh.write(f"{a!r}\t{results[a]!r}\n")
    from .plotting import plot_alpha_sweep

    plot_alpha_sweep(results, reports / f"smooth_{kind}.png", title=f"{kind} post-smoothing")
    out(f"{kind}: tuned alpha={best} on validation")
    return best


def _feature_index(cfg, store, splits, split, rebuild):
    """Index for ``split``. Test reuses the validation-time index unless rebuilt."""
    src = cfg.feature_source()
    if split == "test" and rebuild:
        return build_index(store, splits["test"], FeatureSource(src.include_training, True),
                           cfg.max_support)
    queries = splits.get("valid") if src.include_candidates else None
    if src.include_candidates and queries is None:
        raise UsageError("features.include_candidates needs paths.valid")
    return build_index(store if src.include_training else None, queries, src, cfg.max_support)


def _feature_matrices(cfg, store, splits, split, kinds, rebuild):
    queries = _split(splits, split)
    rebuild_kinds = set(cfg.rebuild_kinds or kinds) if rebuild else set()
    plain = [k for k in kinds if k not in rebuild_kinds]
    redo = [k for k in kinds if k in rebuild_kinds]
    out = {}
    if plain:
        out.update(compute_feature_matrix(_feature_index(cfg, store, splits, split, False),
                                          queries, plain))
    if redo:
        out.update(compute_feature_matrix(_feature_index(cfg, store, splits, split, True),
                                          queries, redo))
    return {k: out[k] for k in kinds}


def cmd_score(cfg: PipelineConfig, sources, split="valid", rebuild_test_features=False, out=print):
    valid_names = valid_sources()
    unknown = [s for s in sources if s not in valid_names]
    if unknown:
        raise UsageError(f"unknown source(s) {', '.join(unknown)}; valid sources: {', '.join(valid_names)}")
    store, splits = load_data(cfg)
    queries = _split(splits, split)
    written = []
    features = [s for s in sources if s in FEATURE_KINDS]
    matrices = {}
    if features:
        matrices.update(_feature_matrices(cfg, store, splits, split, features, rebuild_test_features))
    for name in sources:
        if name in matrices:
            continue
        if name == "DeepWalk":
            values = deepwalk_candidate_scores(_load_table(cfg, name).entity_matrix, queries)
        else:
            kind = name.removesuffix("_smooth")
            table = _load_table(cfg, kind)
            if name.endswith("_smooth"):
                alpha = _smooth_alpha(cfg, kind, table, store, _split(splits, "valid"), out)
                table = post_smooth(table, store, SmoothConfig(alpha, kind))
            values = score_candidates(table, queries.heads, queries.relations,
                                      queries.flat_candidates, queries.offsets)
        matrices[name] = ScoreMatrix(name, values, queries.offsets)
    for name in sources:
        path = _score_path(cfg, split, name)
        kio.save_score_matrix(matrices[name], _ensure(path.parent) / path.name)
        written.append(path)
        if queries.labelled:
            out(f"{split}\t{name}\tmrr={mrr(queries, matrices[name]):.6f}")
    return written


def cmd_features(cfg: PipelineConfig, split="valid", rebuild_test_features=False, out=print):
    if rebuild_test_features:
        if split != "test":
            raise UsageError("--rebuild-test-features only applies to --split test")
        logger.warning(REBUILD_WARNING)
    paths = cmd_score(cfg, list(cfg.feature_kinds), split, rebuild_test_features, out)
    _, splits = load_data(cfg)
    fpath = cfg.artifacts / "frequencies" / f"{split}.txt"
    kio.save_frequencies(candidate_frequency(splits[split]), _ensure(fpath.parent) / fpath.name)
    return paths


def _load_sources(cfg, split, names, queries):
    mats = []
    for name in names:
        m = kio.load_score_matrix(_score_path(cfg, split, name)).renamed(name)
        if not np.array_equal(m.offsets, queries.offsets):
            raise DataError(f"{name}: score matrix shape does not match the {split} queries")
        mats.append(normalize_scores(m))
    return mats


def _keep_mask(cfg, queries):
    if cfg.filter_threshold <= 0:
        return None
    return frequency_mask(queries, candidate_frequency(queries), cfg.filter_threshold)


def cmd_ensemble(cfg: PipelineConfig, out=print):
    _, splits = load_data(cfg)
    valid = _split(splits, "valid")
    names = cfg.sources()
    mats = _load_sources(cfg, "valid", names, valid)
    keep = _keep_mask(cfg, valid)
    weights = grid_search(mats, valid, cfg.grid_values, cfg.grid_max_rounds, keep)
    solo = {}
    for m in mats:
        values = m.values if keep is None else np.where(keep, m.values, np.finfo(np.float64).min)
        solo[m.source_name] = mrr(valid, ScoreMatrix(m.source_name, values, m.offsets))
    edir = _ensure(cfg.artifacts / "ensemble")
    kio.save_weights(weights, edir / "weights.txt",
                     [f"filter_threshold={cfg.filter_threshold}"])
    with open(edir / "report.tsv", "w", encoding="utf-8") as fh:
        fh.write("source\tsolo_mrr\tweight\n")
        for name in names:
            fh.write(f"{name}\t{solo[name]:.6f}\t{weights.weight(name):g}\n")
        fh.write(f"ensemble\t{weights.mrr:.6f}\t-\n")
    from .plotting import plot_source_mrr

    plot_source_mrr(solo, weights.entries, weights.mrr, edir / "report.png")
    for name in weights.order:
        out(f"selected {name} weight {weights.weight(name):g}")
    out(f"ensemble validation mrr={weights.mrr:.6f}")
    return weights


def _combined(cfg, split, queries):
    weights = kio.load_weights(cfg.artifacts / "ensemble" / "weights.txt")
    mats = _load_sources(cfg, split, weights.order, queries)
    combined = combine(mats, weights)
    if cfg.filter_threshold > 0:
        combined = low_frequency_filter(combined, queries, candidate_frequency(queries),
                                        cfg.filter_threshold)
    return weights, combined


def cmd_predict(cfg: PipelineConfig, split="test", out=print):
    _, splits = load_data(cfg)
    queries = _split(splits, split)
    _, combined = _combined(cfg, split, queries)
    ranked = top_k(combined, cfg.top_k)
    path = _ensure(cfg.artifacts / "predictions") / f"{split}.txt"
    with open(path, "w", encoding="utf-8") as fh:
        for row in ranked:
            fh.write(" ".join(str(i) for i in row) + "\n")
    if queries.labelled:
        out(f"{split} ensemble mrr={mrr(queries, combined):.6f}")
    out(f"wrote {path}")
    return path


def cmd_eval(cfg: PipelineConfig, split="valid", out=print):
    _, splits = load_data(cfg)
    queries = _split(splits, split)
    if not queries.labelled:
        raise DataError(f"{split} queries carry no true_index; nothing to evaluate")
    rows = []
    for name in cfg.sources():
        p = _score_path(cfg, split, name)
        if p.exists():
            rows.append((name, mrr(queries, kio.load_score_matrix(p))))
    weights_path = cfg.artifacts / "ensemble" / "weights.txt"
    if weights_path.exists():
        _, combined = _combined(cfg, split, queries)
        rows.append(("ensemble", mrr(queries, combined)))
    if not rows:
        raise DataError(f"no score files under {cfg.artifacts / 'scores' / split}")
    reports = _ensure(cfg.artifacts / "reports")
    lines = ["source\tmrr"] + [f"{n}\t{v:.6f}" for n, v in rows]
    (reports / f"eval_{split}.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for line in lines:
        out(line)
    return dict(rows)


def run_pipeline(cfg: PipelineConfig, merge_validation=False, rebuild_test_features=False,
                 use_deepwalk=False, out=print):
    """Train, score both splits, ensemble on validation and predict every split."""
    _, splits = load_data(cfg)
    for kind in cfg.models:
        cmd_train(cfg, kind, merge_validation, out)
    if use_deepwalk or "DeepWalk" in cfg.sources():
        cmd_walks(cfg, out)
    non_features = [s for s in cfg.sources() if s not in FEATURE_KINDS]
    for split in SPLITS:
        if split not in splits:
            continue
        if non_features:
            cmd_score(cfg, non_features, split, out=out)
        cmd_features(cfg, split, rebuild_test_features and split == "test", out)
    cmd_ensemble(cfg, out)
    return [cmd_predict(cfg, split, out) for split in SPLITS if split in splits]


# -- argument parsing --

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(f"{self.prog}: error: {message}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kgrank", description="Knowledge-graph link prediction pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", required=True, help="key = value configuration file")
        p.add_argument("overrides", nargs="*", metavar="KEY=VALUE", help="configuration overrides")

    p = sub.add_parser("train", help="train one embedding model")
    p.add_argument("--model", required=True, choices=MODEL_KINDS)
    p.add_argument("--merge-validation", action="store_true",
                   help="add each validation query's true triple to the training data")
    common(p)

    p = sub.add_parser("walks", help="random walks and skip-gram node embeddings")
    common(p)

    p = sub.add_parser("score", help="write score matrices for named sources")
    p.add_argument("--source", required=True, help="comma-separated source names")
    p.add_argument("--split", default="valid", choices=SPLITS)
    p.add_argument("--rebuild-test-features", action="store_true", help=REBUILD_WARNING)
    common(p)

    p = sub.add_parser("features", help="write all configured feature matrices")
    p.add_argument("--split", default="valid", choices=SPLITS)
    p.add_argument("--rebuild-test-features", action="store_true",
                   help="recount features from the test candidate lists (opt-in). " + REBUILD_WARNING)
    common(p)

    p = sub.add_parser("ensemble", help="grid-search source weights on validation")
    common(p)

    p = sub.add_parser("predict", help="top-K candidates under the frozen weights")
    p.add_argument("--split", default="test", choices=SPLITS)
    common(p)

    p = sub.add_parser("eval", help="MRR of every available source and the ensemble")
    p.add_argument("--split", default="valid", choices=SPLITS)
    common(p)

    p = sub.add_parser("run", help="train, score, ensemble and predict in one go")
    p.add_argument("--merge-validation", action="store_true")
    p.add_argument("--rebuild-test-features", action="store_true", help=REBUILD_WARNING)
    common(p)
    return parser


def _run(args):
    cfg = load_config(args.config).with_overrides(args.overrides)
    if cfg.threads != 1:
        logger.warning("threads=%d requested; running the deterministic single-threaded path",
                       cfg.threads)
    cmd = args.command
    if cmd == "train":
        cmd_train(cfg, args.model, args.merge_validation)
    elif cmd == "walks":
        cmd_walks(cfg)
    elif cmd == "score":
        if args.rebuild_test_features:
            logger.warning(REBUILD_WARNING)
        names = [s.strip() for s in args.source.split(",") if s.strip()]
        cmd_score(cfg, names, args.split, args.rebuild_test_features)
    elif cmd == "features":
        cmd_features(cfg, args.split, args.rebuild_test_features)
    elif cmd == "ensemble":
        cmd_ensemble(cfg)
    elif cmd == "predict":
        cmd_predict(cfg, args.split)
    elif cmd == "eval":
        cmd_eval(cfg, args.split)
    elif cmd == "run":
        if args.rebuild_test_features:
            logger.warning(REBUILD_WARNING)
        run_pipeline(cfg, args.merge_validation, args.rebuild_test_features)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            return 0
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _run(args)
    except (UsageError, ConfigError) as exc:
        print(f"kgrank: error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError, ValueError, ArithmeticError) as exc:
        print(f"kgrank: data error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
