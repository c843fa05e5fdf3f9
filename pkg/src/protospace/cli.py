"""Command-line entry point: ``protospace <subcommand> ...``.

Exit codes: 0 ok, 2 configuration/usage, 3 numerical failure, 4 empty data,
5 I/O or service failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
from filelock import FileLock

from . import errors
from .alignment import (
    TrainConfig,
    grad_check,
    identity_adapter,
    init_adapter,
    load_adapter,
    procrustes_adapter,
    save_adapter,
    train,
)
from .corpus import (
    EmbeddingStore,
    Entity,
    FeaturePrototype,
    eol_prompt,
    iter_embedding_records,
    load_classification_dataset,
    load_embeddings,
    load_pairs,
    load_ratings,
    save_classification_dataset,
    save_embeddings,
    save_pairs,
    save_prototypes,
    save_ratings,
    verbalize_entity,
)
from .evaluation import DEFAULT_MAX_PAIRS, Dataset, evaluate_dimension, export_scatter, EvalReport
from .linalg import normalize
from .objectives import LossConfig, centroid
from .scoring import prototype_direction, rank_entities, seed_direction, select_option
from .service import ServiceConfig, fetch_embeddings
from .synth import SynthWorldConfig, synth_world

log = logging.getLogger("protospace")

EXIT_CONFIG, EXIT_NUMERIC, EXIT_EMPTY, EXIT_IO = 2, 3, 4, 5

_EXIT_CODES = [
    ((errors.EmptyPairSetError, errors.EmptyJoinError, errors.InsufficientDataError), EXIT_EMPTY),
    ((errors.NumericalError, errors.DegenerateVectorError), EXIT_NUMERIC),
    ((errors.ParseError, errors.ServiceError, errors.ProtocolError, OSError), EXIT_IO),
    ((errors.ProtospaceError,), EXIT_CONFIG),
]


def _atomic_write(path, write) -> None:
    """Run ``write(tmp_path)`` and move the result into place only on success."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        write(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _text_key(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _load_mapping(path) -> dict[str, str]:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise errors.SchemaError("prototype map must be a JSON object {dimension: store id}")
    return data


def cmd_embed(args) -> int:
    cfg = ServiceConfig.from_env(url=args.endpoint, model=args.model, api_key=args.key)
    if not cfg.url:
        args.parser.error("no embedding endpoint: pass --endpoint or set PROTOSPACE_EMBED_URL")
    cfg.batch_size = args.batch_size
    names = [ln.strip() for ln in Path(args.texts).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not names:
        raise errors.InputError(f"{args.texts} contains no names")
    texts = [verbalize_entity(n, args.category) for n in names]
    if args.eol:
        texts = [eol_prompt(t) for t in texts]

    out = Path(args.out)
    with FileLock(str(out) + ".lock"):
        cache: dict[str, list] = {}
        if out.exists():
            for _, _, text, vector in iter_embedding_records(out):
                cache[_text_key(text)] = vector
        todo = [t for t in dict.fromkeys(texts) if _text_key(t) not in cache]
        hits = len(texts) - sum(1 for t in texts if _text_key(t) not in cache)
        chunk = cfg.batch_size * max(cfg.concurrency, 1)
        try:
            for start in range(0, len(todo), chunk):
                part = todo[start : start + chunk]
                for text, vec in zip(part, fetch_embeddings(part, cfg)):
                    cache[_text_key(text)] = vec.tolist()
        except (errors.ServiceError, errors.ProtocolError):
            partial = EmbeddingStore()
            for name, text in zip(names, texts):
                if _text_key(text) in cache and name not in partial:
                    partial.add(name, cache[_text_key(text)], text)
            save_embeddings(partial, str(out) + ".partial")
            log.error("embedding failed; %d of %d records kept in %s.partial", len(partial), len(names), out)
            raise

        store = EmbeddingStore()
        for name, text in zip(names, texts):
            if name not in store:
                store.add(name, cache[_text_key(text)], text)
        _atomic_write(out, lambda p: save_embeddings(store, p))
    print(f"embedded {len(todo)} texts, cache hits {hits}, wrote {len(store)} records to {out}")
    return 0


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        loss=LossConfig(T=args.temp, alpha=args.alpha, lam=args.lam),
        mode=args.mode,
        early_stop_patience=args.patience,
        orthogonalize=args.orthogonalize,
    )


def cmd_train(args) -> int:
    cfg = _train_config(args)
    store = load_embeddings(args.emb)
    class_items = load_classification_dataset(args.class_path, relaxed=args.relaxed) if args.class_path else []
    if args.class_limit is not None and class_items:
        if not 1 <= args.class_limit <= len(class_items):
            raise errors.ConfigError(f"--class-limit must lie in [1, {len(class_items)}]")
        keep = np.sort(np.random.default_rng(args.seed).choice(len(class_items), args.class_limit, replace=False))
        class_items = [class_items[i] for i in keep]
    rank_pairs = [p for path in args.rank or () for p in load_pairs(path)]

    if cfg.mode == "pretrained":
        adapter = identity_adapter(store.dim, args.scope)
    else:
        adapter = init_adapter(store.dim, args.scope, args.seed)
    header = (f"mode={cfg.mode} seed={cfg.seed} T={cfg.loss.T:g} alpha={cfg.loss.alpha:g} "
              f"lambda={cfg.loss.lam:g} lr={cfg.learning_rate:g} epochs={cfg.epochs} "
              f"batch_size={cfg.batch_size} class_items={len(class_items)} rank_pairs={len(rank_pairs)}")
    print(header)

    def report(epoch, tl, vl, gn):
        print(f"epoch {epoch} train_loss {tl:.6f} val_loss {vl:.6f} grad_norm {gn:.6f}")

    adapter, trace = train(adapter, class_items, rank_pairs, store, cfg, _load_mapping(args.prototypes), report)
    trace_path = args.trace or str(Path(args.out).with_suffix(".trace.csv"))
    _atomic_write(args.out, lambda p: save_adapter(adapter, p))
    _atomic_write(trace_path, lambda p: trace.to_csv(p, header))
    print(f"epochs run {len(trace)}; adapter {args.out}; trace {trace_path}")
    return 0


def cmd_eval(args) -> int:
    store = load_embeddings(args.emb)
    adapter = load_adapter(args.adapter) if args.adapter else None
    note = None
    if adapter is None:
        adapter = identity_adapter(store.dim)
        note = "no adapter given; identity adapter assumed"
    ratings = load_ratings(args.ratings)
    pairs = load_pairs(args.pairs) if args.pairs else None
    dataset = Dataset(args.dataset, ratings, pairs=pairs, prototype_ids=_load_mapping(args.prototypes))
    results, scored = [], {}
    for dim, ps in dataset.pair_set(args.min_gap, args.max_pairs or None, args.seed).items():
        res, sc = evaluate_dimension(dim, ps, ratings, dataset.prototype_id(dim), store, adapter, args.tie_credit)
        results.append(res)
        scored[dim] = sc
    if not results:
        raise errors.EmptyPairSetError("no pairs to evaluate")
    report = EvalReport(args.dataset, args.mode, args.seed, adapter.sha256(), results, note=note)
    if args.scatter:
        dim = args.scatter_dimension or results[0].name
        if dim not in scored:
            raise errors.ConfigError(f"no evaluated dimension {dim!r}")
        _atomic_write(args.scatter, lambda p: export_scatter(scored[dim], ratings, dim, p))
    if args.report:
        _atomic_write(args.report, report.save)
    print(json.dumps(report.to_json(), indent=2))
    return 0


def cmd_procrustes(args) -> int:
    if args.class_path:
        store = load_embeddings(args.emb)
        items = load_classification_dataset(args.class_path, relaxed=args.relaxed)
        P = store.matrix([it.target for it in items])
        C = np.array([centroid(store.matrix(it.examples)) for it in items])
    else:
        protos, targets = load_embeddings(args.prototypes), load_embeddings(args.targets)
        ids = [i for i in protos.ids() if i in targets]
        if not ids:
            raise errors.EmptyJoinError("prototype and target files share no ids")
        P, C = protos.matrix(ids), targets.matrix(ids)
    adapter = procrustes_adapter(P, C)
    _atomic_write(args.out, lambda p: save_adapter(adapter, p))
    residual = float(np.linalg.norm(P @ adapter.W.T - C))
    print(json.dumps({"pairs": len(P), "residual": residual, "adapter": args.out}))
    return 0


def _read_ids(path) -> list[str]:
    return [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]


def cmd_rank(args) -> int:
    store = load_embeddings(args.emb)
    adapter = load_adapter(args.adapter) if args.adapter else None
    if args.feature_text:
        direction = prototype_direction(FeaturePrototype(args.feature_text, args.feature_text), store, adapter)
        exclude = {args.feature_text}
    elif args.seeds_high and args.seeds_low:
        highs = [store.lookup(s) for s in args.seeds_high]
        lows = [store.lookup(s) for s in args.seeds_low]
        if adapter is not None:
            highs, lows = adapter.forward_rows(np.array(highs), "entity"), adapter.forward_rows(np.array(lows), "entity")
        direction = seed_direction(highs, lows)
        exclude = set(args.seeds_high) | set(args.seeds_low)
    else:
        raise errors.ConfigError("pass --feature-text or both --seeds-high and --seeds-low")
    ids = _read_ids(args.entities) if args.entities else [i for i in store.ids() if i not in exclude]
    ranked = rank_entities([Entity(i, i) for i in ids], direction, store, adapter)
    print(json.dumps([{"id": s.entity_id, "score": s.score} for s in ranked], indent=2))
    return 0


def cmd_qa(args) -> int:
    store = load_embeddings(args.emb)
    query = normalize(store.lookup(args.query))
    options = [normalize(store.lookup(o)) for o in args.options]
    print(select_option(query, options))
    return 0


def cmd_synth(args) -> int:
    data = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            data = json.load(fh)
    if args.seed is not None:
        data["seed"] = args.seed
    cfg = SynthWorldConfig.from_json(data)
    world = synth_world(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pairs = world.pairs_for([p.feature_id for p in world.prototypes], max_pairs=args.max_pairs or None,
                            seed=cfg.seed)
    _atomic_write(out / "config.json", lambda p: Path(p).write_text(cfg.to_json(), encoding="utf-8"))
    _atomic_write(out / "embeddings.jsonl", lambda p: save_embeddings(world.store, p))
    _atomic_write(out / "ratings.csv", lambda p: save_ratings(world.ratings, p))
    _atomic_write(out / "pairs.csv", lambda p: save_pairs(pairs, p))
    _atomic_write(out / "classification.json", lambda p: save_classification_dataset(world.class_items, p))
    _atomic_write(out / "prototypes.json", lambda p: save_prototypes(world.prototypes, p))
    print(f"wrote synthetic world (d={cfg.d}, {cfg.n_entities} entities, {cfg.n_features} features) to {out}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = TrainConfig(mode=args.mode, loss=LossConfig(T=args.temp, alpha=args.alpha, lam=args.lam))
    if args.emb:
        store = load_embeddings(args.emb)
        items = load_classification_dataset(args.class_path) if args.class_path else []
        pairs = [p for path in args.rank or () for p in load_pairs(path)]
        mapping = _load_mapping(args.prototypes)
    else:
        world = synth_world(SynthWorldConfig(d=8, n_entities=12, n_features=4, latent_dim=3, seed=args.seed))
        store, items, mapping = world.store, world.class_items, {}
        pairs = world.pairs_for([p.feature_id for p in world.prototypes], max_pairs=20, seed=args.seed)
    adapter = init_adapter(store.dim, args.scope, args.seed, eps=args.init_eps)
    err = grad_check(adapter, items, pairs, store, eps=args.eps, cfg=cfg, prototype_ids=mapping, seed=args.seed)
    ok = err <= args.tolerance
    print(json.dumps({"max_rel_error": err, "tolerance": args.tolerance, "pass": ok}))
    return 0 if ok else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="protospace", description="Prototype-based conceptual space toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=func, parser=p)
        return p

    def loss_flags(p):
        p.add_argument("--temp", type=float, default=0.25, help="classification temperature T")
        p.add_argument("--alpha", type=float, default=10.0, help="ranking scale")
        p.add_argument("--lambda", dest="lam", type=float, default=0.25, help="ranking loss weight")

    p = add("embed", cmd_embed, "embed names through a remote embeddings endpoint")
    p.add_argument("texts", help="file with one name per line")
    p.add_argument("--endpoint")
    p.add_argument("--model")
    p.add_argument("--key")
    p.add_argument("--category", help="category prefix, e.g. 'food item'")
    p.add_argument("--eol", action="store_true", help="wrap each phrase in the one-word description prompt")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, "train an alignment adapter")
    p.add_argument("--class", dest="class_path")
    p.add_argument("--rank", nargs="*")
    p.add_argument("--emb", required=True)
    p.add_argument("--mode", default="class+rank-perc")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--patience", type=int, default=20)
    loss_flags(p)
    p.add_argument("--class-limit", type=int)
    p.add_argument("--scope", default="prototypes-only", choices=["prototypes-only", "shared"])
    p.add_argument("--prototypes", help="JSON map from rank dimension to prototype store id")
    p.add_argument("--orthogonalize", action="store_true")
    p.add_argument("--relaxed", action="store_true", help="accept items with fewer examples/negatives")
    p.add_argument("--out", required=True)
    p.add_argument("--trace")

    p = add("eval", cmd_eval, "pairwise accuracy and correlation report")
    p.add_argument("--emb", required=True)
    p.add_argument("--adapter")
    p.add_argument("--ratings", required=True)
    p.add_argument("--pairs")
    p.add_argument("--min-gap", type=float, default=0.0)
    p.add_argument("--max-pairs", type=int, default=DEFAULT_MAX_PAIRS, help="0 keeps every pair")
    p.add_argument("--prototypes")
    p.add_argument("--dataset", default="dataset")
    p.add_argument("--mode", default="pretrained")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tie-credit", action="store_true")
    p.add_argument("--report")
    p.add_argument("--scatter")
    p.add_argument("--scatter-dimension")

    p = add("procrustes", cmd_procrustes, "orthogonal Procrustes adapter")
    p.add_argument("--prototypes", help="prototype embeddings JSONL")
    p.add_argument("--targets", help="target embeddings JSONL with matching ids")
    p.add_argument("--class", dest="class_path", help="derive targets as example centroids instead")
    p.add_argument("--emb", help="embeddings for --class")
    p.add_argument("--relaxed", action="store_true")
    p.add_argument("--out", required=True)

    p = add("rank", cmd_rank, "rank entities along a feature")
    p.add_argument("--emb", required=True)
    p.add_argument("--adapter")
    p.add_argument("--feature-text", help="prototype id or description text")
    p.add_argument("--seeds-high", nargs="+")
    p.add_argument("--seeds-low", nargs="+")
    p.add_argument("--entities", help="file of entity ids (default: every other stored id)")

    p = add("qa", cmd_qa, "pick the option most similar to a query")
    p.add_argument("--emb", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--options", nargs="+", required=True)

    p = add("synth", cmd_synth, "write a synthetic world")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-pairs", type=int, default=DEFAULT_MAX_PAIRS)
    p.add_argument("--out", required=True)

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of the adapter gradient")
    p.add_argument("--emb")
    p.add_argument("--class", dest="class_path")
    p.add_argument("--rank", nargs="*")
    p.add_argument("--prototypes")
    p.add_argument("--mode", default="class+rank-full")
    p.add_argument("--scope", default="prototypes-only", choices=["prototypes-only", "shared"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--init-eps", type=float, default=0.3, help="spread of the random adapter being checked")
    p.add_argument("--tolerance", type=float, default=1e-4)
    loss_flags(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:
        for types, code in _EXIT_CODES:
            if isinstance(exc, types):
                print(f"error: {exc}", file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
