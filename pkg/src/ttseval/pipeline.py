"""End-to-end commands: standardize, featurize, augment, pairs, train, evaluate, gate.

Every command is a function of (RunConfig, input files). Outputs go under
`config.out_dir` only, and reruns with the same inputs are byte-identical.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ttseval import augment as aug
from ttseval import mos_ensemble as mos
from ttseval import ratings as rt
from ttseval import sbs_model as sbs
from ttseval.audio_io import load_wav, save_wav
from ttseval.errors import DataError, ModelFileError, TtsEvalError
from ttseval.features import LogMelEmbedder, UtteranceEmbedding, read_embeddings, text_embed, write_embeddings
from ttseval.metrics import REPORT_KEYS, regression_report

log = logging.getLogger("ttseval")

EXIT_PASS, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


@dataclass
class RunConfig:
    out_dir: str = "out"
    manifest: str = ""
    ratings: str = ""
    features: str = ""  # precomputed audio embeddings (clip_id<TAB>v,v,...)
    model: str = ""
    recipe: str = ""
    alignments: str = ""
    pairs: str = ""
    split: str = ""
    candidates: str = ""
    baseline: str = ""
    seed: int = 0
    # ratings / pairs
    sigma_floor: float = rt.SIGMA_FLOOR
    train_fraction: float = 0.7
    n_pairs: int = 90000
    min_margin: float = 0.0
    same_text_only: bool = True
    sbs_use_std: bool = False
    mos_use_std: bool = True
    # SBS model
    sbs_learning_rate: float = 0.1
    sbs_epochs: int = 50
    sbs_batch_size: int = 32
    sbs_l2_weight: float = 0.0
    sbs_init_scale: float = 0.01
    sbs_momentum: float = 0.0
    sbs_proj_dim: int = 0
    sbs_bias_coordinate: bool = True
    # MOS stack
    text_dim: int = 32
    k_folds: int = 5
    ridge_lambda: float = 1.0
    svr_epsilon: float = 0.1
    svr_c: float = 1.0
    svr_epochs: int = 200
    tree_max_depth: int = 4
    tree_min_leaf: int = 5
    mlp_hidden: int = 16
    mlp_lr: float = 1e-2
    mlp_epochs: int = 500
    mlp_dropout: float = 0.0
    append_raw_features: bool = False
    # evaluate / gate
    eval_split: str = "test"
    system_level: bool = False  # MOS evaluate: correlate per-system means instead of clips
    gate_mode: str = "mos_threshold"
    gate_threshold: float = 0.5
    gate_max_pairs: int = 2000
    gate_same_text: bool = False

    def sbs_config(self) -> sbs.SbsTrainConfig:
        return sbs.SbsTrainConfig(
            learning_rate=self.sbs_learning_rate, epochs=self.sbs_epochs, batch_size=self.sbs_batch_size,
            l2_weight=self.sbs_l2_weight, seed=self.seed, init_scale=self.sbs_init_scale,
            momentum=self.sbs_momentum, proj_dim=self.sbs_proj_dim or None,
        )

    def stack_config(self) -> mos.StackConfig:
        return mos.StackConfig(
            k_folds=self.k_folds, ridge_lambda=self.ridge_lambda, svr_epsilon=self.svr_epsilon,
            svr_c=self.svr_c, svr_epochs=self.svr_epochs, tree_max_depth=self.tree_max_depth,
            tree_min_leaf=self.tree_min_leaf, mlp_hidden=self.mlp_hidden, mlp_lr=self.mlp_lr,
            mlp_epochs=self.mlp_epochs, mlp_dropout=self.mlp_dropout,
            append_raw_features=self.append_raw_features, seed=self.seed,
        )


def _coerce(kind, raw: str):
    if kind in (bool, "bool"):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind in (int, "int"):
        return int(raw)
    if kind in (float, "float"):
        return float(raw)
    return raw.strip()


def config_field_types() -> Dict[str, str]:
    return {f.name: f.type for f in fields(RunConfig)}


def parse_config_file(path: str) -> Dict[str, object]:
    """Flat `key = value` lines; `#` starts a comment."""
    types = config_field_types()
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in types:
                raise DataError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                out[key] = _coerce(types[key], value)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return out


def make_config(config_file: Optional[str] = None, **overrides) -> RunConfig:
    values = parse_config_file(config_file) if config_file else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


# --- helpers -----------------------------------------------------------------

def _out(cfg: RunConfig, *parts: str) -> str:
    path = os.path.join(cfg.out_dir, *parts)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    return path


def _write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _require(path: str, what: str) -> str:
    if not path:
        raise DataError(f"no {what} configured")
    if not os.path.exists(path):
        raise DataError(f"{what} {path!r} does not exist")
    return path


def _audio_path(manifest_path: str, entry: rt.ManifestEntry) -> str:
    if os.path.isabs(entry.audio_path):
        return entry.audio_path
    return os.path.join(os.path.dirname(os.path.abspath(manifest_path)), entry.audio_path)


def _file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def audio_embeddings(cfg: RunConfig, manifest_path: str, entries: Sequence[rt.ManifestEntry]) -> Dict[str, UtteranceEmbedding]:
    """Precomputed vectors if configured, else log-mel means cached by input hash."""
    if cfg.features:
        emb = read_embeddings(_require(cfg.features, "feature file"))
        missing = [e.clip_id for e in entries if e.clip_id not in emb]
        if missing:
            raise DataError(f"feature file lacks clip(s) {missing[:5]}")
        return {e.clip_id: emb[e.clip_id] for e in entries}
    embedder = LogMelEmbedder()
    h = hashlib.sha256(embedder.signature().encode())
    paths = {}
    for e in sorted(entries, key=lambda e: e.clip_id):
        if not e.audio_path:
            raise DataError(f"clip {e.clip_id} has no audio_path and no feature file is configured")
        paths[e.clip_id] = _audio_path(manifest_path, e)
        h.update(f"{e.clip_id}\0{_file_digest(paths[e.clip_id])}\0".encode())
    cache = _out(cfg, "cache", f"audio_{h.hexdigest()[:16]}.tsv")
    if os.path.exists(cache):
        log.info("reusing feature cache %s", cache)
        return read_embeddings(cache)
    emb = {}
    for cid, path in paths.items():
        w = load_wav(path)
        w.clip_id = cid
        emb[cid] = embedder(w)
    write_embeddings(cache, [emb[c] for c in sorted(emb)])
    # reload so fresh and cached runs see identical float round-trips
    return read_embeddings(cache)


def stacked_features(cfg: RunConfig, manifest_path: str, entries, audio=None) -> Dict[str, UtteranceEmbedding]:
    audio = audio if audio is not None else audio_embeddings(cfg, manifest_path, entries)
    out = {}
    for e in entries:
        t = text_embed(e.transcript, cfg.text_dim, cfg.seed)
        out[e.clip_id] = UtteranceEmbedding(np.concatenate([audio[e.clip_id].vector, t.vector]), e.clip_id)
    return out


class SbsFeatureMap:
    """Per-dimension z-scoring fit on training clips, plus an optional constant coordinate."""

    def __init__(self, mean: np.ndarray, scale: np.ndarray, bias_coordinate: bool):
        self.mean, self.scale, self.bias_coordinate = mean, scale, bias_coordinate

    @classmethod
    def fit(cls, vectors: np.ndarray, bias_coordinate: bool) -> "SbsFeatureMap":
        scale = vectors.std(axis=0)
        scale[scale == 0] = 1.0
        return cls(vectors.mean(axis=0), scale, bias_coordinate)

    def __call__(self, emb: Dict[str, UtteranceEmbedding]) -> Dict[str, UtteranceEmbedding]:
        out = {}
        for cid, e in emb.items():
            v = (e.vector - self.mean) / self.scale
            if self.bias_coordinate:
                v = np.append(v, 1.0)
            out[cid] = UtteranceEmbedding(v, cid)
        return out

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist(), "bias_coordinate": self.bias_coordinate}

    @classmethod
    def from_dict(cls, d: dict) -> "SbsFeatureMap":
        return cls(np.array(d["mean"]), np.array(d["scale"]), bool(d["bias_coordinate"]))


def _targets(cfg: RunConfig, records, use_std: bool) -> Dict[str, float]:
    if use_std:
        return rt.clip_mos(rt.standardize(records, sigma_floor=cfg.sigma_floor), use_std=True)
    return rt.clip_mos(records)


def _split_pairs(cfg, mos_map, entries, split: rt.SplitManifest):
    """Pairs drawn within each side of the split; counts shared as in the split fraction."""
    out = {}
    for name, texts, share in (("train", split.train_text_ids, cfg.train_fraction),
                               ("test", split.test_text_ids, 1 - cfg.train_fraction)):
        sub = [e for e in entries if e.text_id in texts and e.clip_id in mos_map]
        n_elig = len(rt.eligible_pairs(mos_map, sub, cfg.min_margin, cfg.same_text_only))
        n = min(n_elig, max(1, int(round(cfg.n_pairs * share))))
        if n < 1:
            raise DataError(f"no eligible {name} pairs")
        out[name] = rt.generate_pairs(mos_map, sub, n, cfg.min_margin, cfg.same_text_only,
                                      cfg.seed + (0 if name == "train" else 1))
    return out["train"], out["test"]


# --- commands --------------------------------------------------------------------

def cmd_standardize(cfg: RunConfig) -> dict:
    records = rt.read_ratings(_require(cfg.ratings, "ratings file"))
    stats = rt.rater_stats(records)
    std = rt.standardize(records, stats, cfg.sigma_floor)
    rt.write_std_ratings(_out(cfg, "std_ratings.csv"), std)
    with open(_out(cfg, "rater_stats.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["rater_id", "mu", "sigma", "count"])
        for r in sorted(stats):
            s = stats[r]
            w.writerow([r, repr(s.mu), repr(s.sigma), s.count])
    report = {"n_ratings": len(records), "n_raters": len(stats),
              "n_clips": len({r.clip_id for r in records})}
    try:
        report["inter_rater_rmse_raw"] = rt.inter_rater_rmse(records)
        report["inter_rater_rmse_std"] = rt.inter_rater_rmse(std, use_std=True)
    except DataError:
        report["inter_rater_rmse_raw"] = report["inter_rater_rmse_std"] = None
    _write_json(_out(cfg, "standardize_report.json"), report)
    return report


def cmd_featurize(cfg: RunConfig) -> str:
    manifest = _require(cfg.manifest, "manifest")
    entries = rt.read_manifest(manifest)
    audio = audio_embeddings(cfg, manifest, entries)
    write_embeddings(_out(cfg, "audio_features.tsv"), [audio[e.clip_id] for e in entries])
    stacked = stacked_features(cfg, manifest, entries, audio)
    path = _out(cfg, "stacked_features.tsv")
    write_embeddings(path, [stacked[e.clip_id] for e in entries])
    return path


def cmd_pairs(cfg: RunConfig) -> Tuple[List[rt.SbsPair], List[rt.SbsPair]]:
    entries = rt.read_manifest(_require(cfg.manifest, "manifest"))
    records = rt.read_ratings(_require(cfg.ratings, "ratings file"))
    mos_map = _targets(cfg, records, cfg.sbs_use_std)
    split = rt.split_by_text(entries, cfg.train_fraction, cfg.seed)
    train, test = _split_pairs(cfg, mos_map, entries, split)
    rt.write_split(_out(cfg, "split.csv"), split)
    rt.write_pairs(_out(cfg, "pairs_train.csv"), train)
    rt.write_pairs(_out(cfg, "pairs_test.csv"), test)
    return train, test


def cmd_pipeline_train_sbs(cfg: RunConfig) -> dict:
    """featurize -> split by text -> pairs -> train NeuralSBS -> evaluate on test pairs."""
    stage = "load"
    try:
        manifest = _require(cfg.manifest, "manifest")
        entries = rt.read_manifest(manifest)
        records = rt.read_ratings(_require(cfg.ratings, "ratings file"))
        mos_map = _targets(cfg, records, cfg.sbs_use_std)
        stage = "featurize"
        raw = audio_embeddings(cfg, manifest, entries)
        stage = "split"
        split = rt.split_by_text(entries, cfg.train_fraction, cfg.seed)
        stage = "pairs"
        train_pairs, test_pairs = _split_pairs(cfg, mos_map, entries, split)
        stage = "train"
        train_clips = sorted({c for p in train_pairs for c in (p.clip_a, p.clip_b)})
        fmap = SbsFeatureMap.fit(np.stack([raw[c].vector for c in train_clips]), cfg.sbs_bias_coordinate)
        emb = fmap(raw)
        sbs_cfg = cfg.sbs_config()
        model = sbs.train_sbs(train_pairs, emb, sbs_cfg)
        stage = "evaluate"
        acc, auc = sbs.evaluate_sbs(model, test_pairs, emb)
        train_acc, train_auc = sbs.evaluate_sbs(model, train_pairs, emb)
    except TtsEvalError as exc:
        raise type(exc)(f"[{stage}] {exc}") from exc
    text_of = {e.clip_id: e.text_id for e in entries}
    train_texts = {text_of[c] for p in train_pairs for c in (p.clip_a, p.clip_b)}
    test_texts = {text_of[c] for p in test_pairs for c in (p.clip_a, p.clip_b)}
    metrics = dict.fromkeys(REPORT_KEYS)
    metrics.update({
        "accuracy": acc, "auc_roc": auc, "n": len(test_pairs),
        "train_accuracy": train_acc, "train_auc_roc": train_auc, "n_train_pairs": len(train_pairs),
        "final_train_loss": model.loss_history[-1],
        "text_leakage": bool(train_texts & test_texts),
    })
    sbs.save_model(_out(cfg, "sbs_model.json"), model, sbs_cfg, {"feature_map": fmap.to_dict()})
    rt.write_split(_out(cfg, "split.csv"), split)
    rt.write_pairs(_out(cfg, "pairs_train.csv"), train_pairs)
    rt.write_pairs(_out(cfg, "pairs_test.csv"), test_pairs)
    _write_json(_out(cfg, "sbs_metrics.json"), metrics)
    return metrics


def cmd_pipeline_train_mos(cfg: RunConfig) -> dict:
    """featurize (audio + text) -> standardize -> clip MOS -> stack on train texts -> test metrics."""
    stage = "load"
    try:
        manifest = _require(cfg.manifest, "manifest")
        entries = rt.read_manifest(manifest)
        records = rt.read_ratings(_require(cfg.ratings, "ratings file"))
        targets = _targets(cfg, records, cfg.mos_use_std)
        entries = [e for e in entries if e.clip_id in targets]
        stage = "featurize"
        feats = stacked_features(cfg, manifest, entries)
        stage = "split"
        split = rt.split_by_text(entries, cfg.train_fraction, cfg.seed)
        train = [e.clip_id for e in entries if e.text_id in split.train_text_ids]
        test = [e.clip_id for e in entries if e.text_id in split.test_text_ids]
        stage = "train"
        X = np.stack([feats[c].vector for c in train])
        model = mos.fit_stack(X, np.array([targets[c] for c in train]), cfg.stack_config())
        stage = "evaluate"
        pred = mos.predict_mos(model, np.stack([feats[c].vector for c in test]))
        report = regression_report(pred, [targets[c] for c in test])
        train_report = regression_report(mos.predict_mos(model, X), [targets[c] for c in train])
    except TtsEvalError as exc:
        raise type(exc)(f"[{stage}] {exc}") from exc
    metrics = dict(report)
    metrics["train_rmse"] = train_report["rmse"]
    metrics["n_train"] = len(train)
    metrics["targets"] = "std" if cfg.mos_use_std else "raw"
    mos.save_stack(_out(cfg, "mos_model.json"), model,
                   {"text_dim": cfg.text_dim, "text_seed": cfg.seed, "audio": _audio_signature(cfg)})
    rt.write_split(_out(cfg, "split.csv"), split)
    with open(_out(cfg, "mos_test_predictions.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["clip_id", "predicted", "target"])
        for c, p in zip(test, pred):
            w.writerow([c, repr(float(p)), repr(targets[c])])
    _write_json(_out(cfg, "mos_metrics.json"), metrics)
    return metrics


def _audio_signature(cfg: RunConfig) -> str:
    return "precomputed" if cfg.features else LogMelEmbedder().signature()


def _load_any_model(path: str):
    _require(path, "model file")
    with open(path, encoding="utf-8") as fh:
        try:
            kind = json.load(fh).get("format")
        except json.JSONDecodeError as exc:
            raise ModelFileError(f"{path}: not a model file ({exc})") from exc
    if kind == sbs.MODEL_FORMAT:
        return "sbs", sbs.load_model(path)
    if kind == mos.MODEL_FORMAT:
        return "mos", mos.load_stack(path)
    raise ModelFileError(f"{path}: unknown model format {kind!r}")


def _mos_predictions(cfg, model, doc, manifest_path, entries) -> np.ndarray:
    extra = doc.get("extra", {})
    sub = dataclasses.replace(cfg, text_dim=int(extra.get("text_dim", cfg.text_dim)),
                              seed=int(extra.get("text_seed", cfg.seed)))
    feats = stacked_features(sub, manifest_path, entries)
    return mos.predict_mos(model, np.stack([feats[e.clip_id].vector for e in entries]))


def cmd_evaluate(cfg: RunConfig) -> dict:
    """Score a trained model on the configured split (or all clips when eval_split=all)."""
    kind, (model, doc) = _load_any_model(cfg.model)
    manifest = _require(cfg.manifest, "manifest")
    entries = rt.read_manifest(manifest)
    records = rt.read_ratings(_require(cfg.ratings, "ratings file"))
    if cfg.split and cfg.eval_split != "all":
        split = rt.read_split(cfg.split)
        keep = split.train_text_ids if cfg.eval_split == "train" else split.test_text_ids
        entries = [e for e in entries if e.text_id in keep]
    if kind == "mos":
        targets = _targets(cfg, records, cfg.mos_use_std)
        entries = [e for e in entries if e.clip_id in targets]
        pred = _mos_predictions(cfg, model, doc, manifest, entries)
        groups = None
        if cfg.system_level:
            system_of = {r.clip_id: r.system_id for r in records}
            groups = [system_of[e.clip_id] for e in entries]
        report = regression_report(pred, [targets[e.clip_id] for e in entries], groups)
    else:
        fmap = SbsFeatureMap.from_dict(doc["extra"]["feature_map"])
        emb = fmap(audio_embeddings(cfg, manifest, entries))
        if cfg.pairs:
            pairs = rt.read_pairs(cfg.pairs)
        else:
            mos_map = _targets(cfg, records, cfg.sbs_use_std)
            n = min(cfg.n_pairs, len(rt.eligible_pairs(mos_map, entries, cfg.min_margin, cfg.same_text_only)))
            pairs = rt.generate_pairs(mos_map, entries, n, cfg.min_margin, cfg.same_text_only, cfg.seed)
        acc, auc = sbs.evaluate_sbs(model, pairs, emb)
        report = dict.fromkeys(REPORT_KEYS)
        report.update(accuracy=acc, auc_roc=auc, n=len(pairs))
    _write_json(_out(cfg, f"evaluate_{kind}.json"), report)
    return report


def cmd_augment(cfg: RunConfig) -> Tuple[List[dict], List[str]]:
    """Apply each recipe line to its clip; returns (provenance rows, per-line errors)."""
    recipe_path = _require(cfg.recipe, "recipe file")
    manifest = _require(cfg.manifest, "manifest")
    entries = {e.clip_id: e for e in rt.read_manifest(manifest)}
    tracks = aug.read_alignments(cfg.alignments) if cfg.alignments else {}
    rows, errors = [], []
    with open(recipe_path, encoding="utf-8") as fh:
        lines = [(i, ln) for i, ln in enumerate(fh, 1) if ln.strip()]
    for lineno, line in lines:
        try:
            obj = json.loads(line)
            clip_id = str(obj["clip_id"])
            if clip_id not in entries:
                raise DataError(f"clip {clip_id!r} not in manifest")
            specs = []
            for k, d in enumerate(obj.get("specs", [])):
                seed = d["seed"] if "seed" in d else aug.derive_seed(cfg.seed, clip_id) + k
                specs.append(aug.AugmentSpec(d["op"], dict(d.get("params", {})), int(seed)))
            aug.validate_stage_order(specs)
            entry = entries[clip_id]
            w = load_wav(_audio_path(manifest, entry))
            out_w = aug.apply_pipeline(w, specs, tracks.get(clip_id))
            out_id = f"{clip_id}_{aug.recipe_hash(specs)}"
            rel = os.path.join("augmented", out_id + ".wav")
            save_wav(out_w, _out(cfg, rel))
            rows.append({"clip_id": out_id, "source_clip_id": clip_id, "text_id": entry.text_id,
                         "transcript": entry.transcript, "audio_path": rel,
                         "specs": json.dumps([s.to_dict() for s in specs], sort_keys=True)})
        except (TtsEvalError, KeyError, ValueError, TypeError) as exc:
            errors.append(f"{recipe_path}:{lineno}: {exc}")
    with open(_out(cfg, "augmented_manifest.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, ["clip_id", "text_id", "transcript", "audio_path", "source_clip_id", "specs"])
        w.writeheader()
        for r in rows:
            w.writerow(r)
    return rows, errors


@dataclass
class GateResult:
    passed: bool
    statistic: float
    threshold: float
    mode: str
    per_clip: Dict[str, float]
    n: int


def cmd_gate(cfg: RunConfig) -> GateResult:
    """mos_threshold: mean predicted MOS >= threshold. sbs_winrate: P(candidate wins) >= threshold."""
    if cfg.gate_mode not in ("mos_threshold", "sbs_winrate"):
        raise DataError(f"unknown gate mode {cfg.gate_mode!r}")
    kind, (model, doc) = _load_any_model(cfg.model)
    cand_path = _require(cfg.candidates, "candidate manifest")
    cands = rt.read_manifest(cand_path)
    if not cands:
        raise DataError("empty candidate set")
    if cfg.gate_mode == "mos_threshold":
        if kind != "mos":
            raise ModelFileError("mos_threshold gate needs a MOS model")
        pred = _mos_predictions(cfg, model, doc, cand_path, cands)
        stat = float(np.mean(pred))
        per_clip = {e.clip_id: float(p) for e, p in zip(cands, pred)}
        return GateResult(stat >= cfg.gate_threshold, stat, cfg.gate_threshold, cfg.gate_mode, per_clip, len(cands))

    if kind != "sbs":
        raise ModelFileError("sbs_winrate gate needs an SBS model")
    base_path = _require(cfg.baseline, "baseline manifest")
    base = rt.read_manifest(base_path)
    fmap = SbsFeatureMap.from_dict(doc["extra"]["feature_map"])
    ce = fmap(audio_embeddings(cfg, cand_path, cands))
    be = fmap(audio_embeddings(cfg, base_path, base))
    pairs = [(c.clip_id, b.clip_id) for c in cands for b in base
             if c.clip_id != b.clip_id and (not cfg.gate_same_text or c.text_id == b.text_id)]
    if not pairs:
        raise DataError("no candidate/baseline pairs to compare")
    if len(pairs) > cfg.gate_max_pairs:
        keep = np.sort(np.random.default_rng(cfg.seed).choice(len(pairs), cfg.gate_max_pairs, replace=False))
        pairs = [pairs[i] for i in keep]
    za = np.stack([ce[a].vector for a, _ in pairs])
    zb = np.stack([be[b].vector for _, b in pairs])
    probs = sbs.predict_batch(model, za, zb)
    wins = probs > 0.5
    stat = float(np.mean(wins))
    per: Dict[str, List[float]] = {}
    for (a, _), p in zip(pairs, probs):
        per.setdefault(a, []).append(float(p))
    per_clip = {k: float(np.mean(v)) for k, v in per.items()}
    return GateResult(stat >= cfg.gate_threshold, stat, cfg.gate_threshold, cfg.gate_mode, per_clip, len(pairs))
