"""End-to-end experiment driver.

Stages run in a fixed order and communicate only through files in the
output directory, so any stage can be rerun or inspected on its own:

    augment -> vocode -> infer -> align -> confuse / errors / rt / dynamics / decode

Every stage writes ``<stage>/_stage.json`` with the config hash; a stage
refuses to read artifacts written under a different hash. Per-sentence
failures are recorded and skipped by later stages.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np
import scipy

import phode
from phode import alignment as al
from phode import dynamics as dy
from phode import error_analysis as ea
from phode.audio import compute_spectrogram, read_wav, write_wav
from phode.augment import LEVELS, AugmentationConfig, apply_augmentation, load_augmentation_configs
from phode.ctc import PredictionEvent, ctc_greedy_decode
from phode.model import forward, load_activations, load_weights, save_activations
from phode.phonemes import (PHONEMES, ManifestEntry, class_mean_durations, load_manifest,
                            load_segmentation, save_segmentation)
from phode.vocoder import FilterbankSpec, SpreadModel, vocode, write_electrodogram

log = logging.getLogger(__name__)

CONDITIONS = ("NH", "CI")
STAGES = ("augment", "vocode", "infer", "align", "confuse", "errors", "rt", "dynamics", "decode")
UPSTREAM = {
    "augment": (), "vocode": ("augment",), "infer": ("augment", "vocode"),
    "align": ("infer",), "confuse": ("align",), "errors": ("align",), "rt": ("align",),
    "dynamics": ("align", "infer"), "decode": ("infer",),
}
# fields that do not change results and so stay out of the hash
UNHASHED = ("out", "jobs")


class ConfigError(ValueError):
    pass


class StaleArtifactError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    manifest: str
    weights: str
    out: str = "out"
    conditions: list[str] = field(default_factory=lambda: list(CONDITIONS))
    noise_levels: list[str] = field(default_factory=lambda: ["quiet"])
    seed: int = 0
    jobs: int = 1
    augmentation: str | None = None
    noise_path: str | None = None
    vocoder: dict = field(default_factory=dict)
    spread_decay: float = 1.0
    save_electrodogram_csv: bool = False
    human: dict = field(default_factory=dict)
    n_shuffles: int = ea.N_SHUFFLES
    dynamics: dict = field(default_factory=dict)
    decode: dict = field(default_factory=dict)
    base_dir: str = field(default=".", repr=False)

    def validate(self) -> None:
        bad = [c for c in self.conditions if c not in CONDITIONS]
        if bad or not self.conditions:
            raise ConfigError(f"conditions must be a nonempty subset of {CONDITIONS}, got {self.conditions}")
        bad = [n for n in self.noise_levels if n not in LEVELS]
        if bad or not self.noise_levels:
            raise ConfigError(f"noise levels must be a nonempty subset of {LEVELS}, got {self.noise_levels}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if not self.path(self.manifest).is_file():
            raise ConfigError(f"manifest not found: {self.manifest}")
        if not self.path(self.weights).is_file():
            raise ConfigError(f"weight file not found: {self.weights}")
        for name in ("augmentation", "noise_path"):
            p = getattr(self, name)
            if p and not self.path(p).is_file():
                raise ConfigError(f"{name} file not found: {p}")
        for label, p in self.human.items():
            if not self.path(p).is_file():
                raise ConfigError(f"human matrix {label!r} not found: {p}")
        try:
            self.filterbank()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad vocoder settings: {exc}") from exc

    def path(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else Path(self.base_dir) / q

    def filterbank(self) -> FilterbankSpec:
        return FilterbankSpec(**self.vocoder)

    def hashed_fields(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k not in UNHASHED and k != "base_dir"}
        d["noise_levels"] = sorted(d["noise_levels"], key=LEVELS.index)
        d["conditions"] = sorted(d["conditions"], key=CONDITIONS.index)
        return d

    @property
    def hash(self) -> str:
        blob = json.dumps(self.hashed_fields(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path: str | Path, **overrides) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    raw.update({k: v for k, v in overrides.items() if v is not None})
    raw.setdefault("base_dir", str(path.parent))
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config fields: {unknown}")
    try:
        cfg = ExperimentConfig(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


def versions() -> dict[str, str]:
    return {"phode": phode.__version__, "numpy": np.__version__, "scipy": scipy.__version__}


# -- artifact layout ---------------------------------------------------------------

class Layout:
    def __init__(self, out: str | Path):
        self.root = Path(out)

    def stage_dir(self, stage: str) -> Path:
        return self.root / stage

    def audio(self, level: str, sid: str) -> Path:
        return self.root / "augment" / level / f"{sid}.wav"

    def segmentation(self, level: str, sid: str) -> Path:
        return self.root / "augment" / level / f"{sid}.csv"

    def ci_audio(self, level: str, sid: str) -> Path:
        return self.root / "vocode" / level / f"{sid}.wav"

    def electrodogram(self, level: str, sid: str) -> Path:
        return self.root / "vocode" / level / f"{sid}.edgm"

    def activations(self, cond: str, level: str, sid: str) -> Path:
        return self.root / "infer" / f"{cond}_{level}" / f"{sid}.phact"

    def predictions(self, cond: str, level: str) -> Path:
        return self.root / "infer" / f"predictions_{cond}_{level}.csv"

    def alignments(self, cond: str, level: str) -> Path:
        return self.root / "align" / f"alignment_{cond}_{level}.csv"


def _write_json(path: Path, obj: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(ea._jsonable(obj), indent=1, sort_keys=True) + "\n")


def _read_json(path: Path) -> Any:
    return json.loads(path.read_text())


def write_stage_marker(lay: Layout, stage: str, cfg: ExperimentConfig, failures: dict[str, str],
                       extra: dict | None = None) -> None:
    doc = {"stage": stage, "config_hash": cfg.hash, "versions": versions(),
           "failures": dict(sorted(failures.items()))}
    doc.update(extra or {})
    _write_json(lay.stage_dir(stage) / "_stage.json", doc)


def check_upstream(lay: Layout, stage: str, cfg: ExperimentConfig) -> dict[str, str]:
    """Return upstream failures; raise if an upstream artifact is missing or stale."""
    failures: dict[str, str] = {}
    for up in UPSTREAM[stage]:
        if up == "vocode" and "CI" not in cfg.conditions:
            continue
        marker = lay.stage_dir(up) / "_stage.json"
        if not marker.is_file():
            raise StaleArtifactError(f"{stage}: upstream stage {up!r} has not been run in {lay.root}")
        doc = _read_json(marker)
        if doc.get("config_hash") != cfg.hash:
            raise StaleArtifactError(
                f"{stage}: {up!r} artifacts were made with config {doc.get('config_hash')}, "
                f"current config is {cfg.hash}; rerun {up!r} first")
        failures.update(doc.get("failures", {}))
    return failures


# -- parallel map --------------------------------------------------------------------

def _pmap(fn: Callable, items: Sequence, jobs: int) -> list:
    """Order-preserving map; ``fn`` must be a picklable module-level function."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def _guard(fn: Callable, *args) -> str | None:
    """Run one per-sentence job; return an error message instead of raising."""
    try:
        fn(*args)
        return None
    except Exception as exc:  # noqa: BLE001  per-sentence isolation
        return f"{type(exc).__name__}: {exc}"


def _entries(cfg: ExperimentConfig) -> list[ManifestEntry]:
    return sorted(load_manifest(cfg.path(cfg.manifest)), key=lambda e: e.sentence_id)


# -- stages ------------------------------------------------------------------------------

def _augment_one(job) -> str | None:
    entry, level, cfg_dict, lay_root = job
    cfg = _cfg_from_dict(cfg_dict)
    lay = Layout(lay_root)

    def work():
        utt = load_segmentation(entry.seg_path, entry.sentence_id)
        w = read_wav(entry.wav_path)
        aug = _augmentation_configs(cfg)[level]
        masker = read_wav(cfg.path(cfg.noise_path)) if cfg.noise_path else None
        out, rec = apply_augmentation(w, aug, entry.sentence_id, masker)
        dst = lay.audio(level, entry.sentence_id)
        dst.parent.mkdir(parents=True, exist_ok=True)
        write_wav(dst, out)
        save_segmentation(utt.scaled(rec.time_scale), lay.segmentation(level, entry.sentence_id))

    return _guard(work)


def _cfg_from_dict(d: dict) -> ExperimentConfig:
    return ExperimentConfig(**d)


def _augmentation_configs(cfg: ExperimentConfig) -> dict[str, AugmentationConfig]:
    if cfg.augmentation:
        table = load_augmentation_configs(cfg.path(cfg.augmentation), cfg.seed)
    else:
        table = {lv: AugmentationConfig.for_level(lv, seed=cfg.seed) for lv in LEVELS if lv != "quiet"}
    table["quiet"] = AugmentationConfig("quiet", seed=cfg.seed)
    return table


def stage_augment(cfg: ExperimentConfig) -> dict[str, str]:
    lay = Layout(cfg.out)
    check_upstream(lay, "augment", cfg)
    entries = _entries(cfg)
    jobs = [(e, lv, cfg.__dict__, str(lay.root)) for lv in cfg.noise_levels for e in entries]
    failures = {}
    for (e, lv, _, _), err in zip(jobs, _pmap(_augment_one, jobs, cfg.jobs)):
        if err:
            failures.setdefault(e.sentence_id, f"augment {lv}: {err}")
    write_stage_marker(lay, "augment", cfg, failures,
                       {"sentences": [e.sentence_id for e in entries]})
    return failures


def _vocode_one(job) -> str | None:
    sid, level, cfg_dict, lay_root = job
    cfg = _cfg_from_dict(cfg_dict)
    lay = Layout(lay_root)

    def work():
        w = read_wav(lay.audio(level, sid))
        e, out = vocode(w, cfg.seed, sid, cfg.filterbank(), SpreadModel(decay_constant=cfg.spread_decay))
        dst = lay.ci_audio(level, sid)
        dst.parent.mkdir(parents=True, exist_ok=True)
        write_wav(dst, out)
        write_electrodogram(e, lay.electrodogram(level, sid))
        if cfg.save_electrodogram_csv:
            from phode.vocoder import write_electrodogram_csv
            write_electrodogram_csv(e, lay.electrodogram(level, sid).with_suffix(".csv"))

    return _guard(work)


def stage_vocode(cfg: ExperimentConfig) -> dict[str, str]:
    lay = Layout(cfg.out)
    failures = check_upstream(lay, "vocode", cfg)
    sids = [e.sentence_id for e in _entries(cfg) if e.sentence_id not in failures]
    jobs = [(s, lv, cfg.__dict__, str(lay.root)) for lv in cfg.noise_levels for s in sids]
    if "CI" in cfg.conditions:
        for (s, lv, _, _), err in zip(jobs, _pmap(_vocode_one, jobs, cfg.jobs)):
            if err:
                failures.setdefault(s, f"vocode {lv}: {err}")
    write_stage_marker(lay, "vocode", cfg, failures)
    return failures


_WEIGHTS_CACHE: dict[str, Any] = {}


def _weights(path: str):
    if path not in _WEIGHTS_CACHE:
        _WEIGHTS_CACHE[path] = load_weights(path)
    return _WEIGHTS_CACHE[path]


def _infer_one(job):
    sid, cond, level, weights_path, lay_root = job
    lay = Layout(lay_root)
    try:
        src = lay.audio(level, sid) if cond == "NH" else lay.ci_audio(level, sid)
        x = compute_spectrogram(read_wav(src)).astype(np.float32)
        traces, post = forward(x, _weights(weights_path))
        dst = lay.activations(cond, level, sid)
        dst.parent.mkdir(parents=True, exist_ok=True)
        save_activations(traces, dst)
        return [(e.token, e.frame) for e in ctc_greedy_decode(post)], None
    except Exception as exc:  # noqa: BLE001
        return None, f"{type(exc).__name__}: {exc}"


PREDICTION_HEADER = ("sentence_id", "index", "token", "symbol", "frame", "time_ms")


def stage_infer(cfg: ExperimentConfig) -> dict[str, str]:
    lay = Layout(cfg.out)
    failures = check_upstream(lay, "infer", cfg)
    load_weights(cfg.path(cfg.weights))  # fail early on a bad weight file
    sids = [e.sentence_id for e in _entries(cfg) if e.sentence_id not in failures]
    for cond in cfg.conditions:
        for lv in cfg.noise_levels:
            jobs = [(s, cond, lv, str(cfg.path(cfg.weights)), str(lay.root)) for s in sids]
            rows = []
            for (s, *_), (events, err) in zip(jobs, _pmap(_infer_one, jobs, cfg.jobs)):
                if err:
                    failures.setdefault(s, f"infer {cond} {lv}: {err}")
                    continue
                for k, (tok, frame) in enumerate(events):
                    ev = PredictionEvent(tok, frame)
                    rows.append((s, k, tok, ev.symbol, frame, repr(ev.time_ms)))
            path = lay.predictions(cond, lv)
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(PREDICTION_HEADER)
                w.writerows(rows)
    write_stage_marker(lay, "infer", cfg, failures)
    return failures


def read_predictions(path: Path) -> dict[str, list[PredictionEvent]]:
    out: dict[str, list[PredictionEvent]] = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            out.setdefault(r["sentence_id"], []).append(PredictionEvent(int(r["token"]), int(r["frame"])))
    return out


def stage_align(cfg: ExperimentConfig) -> dict[str, str]:
    lay = Layout(cfg.out)
    failures = check_upstream(lay, "align", cfg)
    sids = [e.sentence_id for e in _entries(cfg) if e.sentence_id not in failures]
    excluded: dict[str, dict[str, str]] = {}
    for lv in cfg.noise_levels:
        per_cond = {}
        for cond in cfg.conditions:
            preds = read_predictions(lay.predictions(cond, lv))
            per_cond[cond] = {s: al.process_sentence(load_segmentation(lay.segmentation(lv, s), s),
                                                     preds.get(s, [])) for s in sids}
        for s in sids:
            twins = al.exclude_twins(*(per_cond[c][s] for c in cfg.conditions))
            for c, a in zip(cfg.conditions, twins):
                per_cond[c][s] = a
            if twins[0].excluded:
                excluded.setdefault(lv, {})[s] = twins[0].reason
        for cond in cfg.conditions:
            al.write_alignments(per_cond[cond].values(), lay.alignments(cond, lv))
    _write_json(lay.stage_dir("align") / "excluded.json", excluded)
    write_stage_marker(lay, "align", cfg, failures)
    return failures


def _load_aligned(lay: Layout, cond: str, lv: str) -> list[al.AlignedSentence]:
    excluded = _read_json(lay.stage_dir("align") / "excluded.json").get(lv, {})
    return al.read_alignments(lay.alignments(cond, lv), excluded)


def stage_confuse(cfg: ExperimentConfig, human: dict[str, str] | None = None) -> dict[str, str]:
    lay = Layout(cfg.out)
    failures = check_upstream(lay, "confuse", cfg)
    d = lay.stage_dir("confuse")
    d.mkdir(parents=True, exist_ok=True)
    humans = {k: ea.read_confusion_csv(cfg.path(v)) for k, v in sorted({**cfg.human, **(human or {})}.items())}
    summary = {}
    for cond in cfg.conditions:
        for lv in cfg.noise_levels:
            cm = ea.build_confusion(_load_aligned(lay, cond, lv), PHONEMES)
            ea.write_confusion_csv(cm, d / f"confusion_{cond}_{lv}.csv")
            ea.write_confusion_csv(cm, d / f"confusion_{cond}_{lv}_normalized.csv", normalized=True)
            for label, hm in humans.items():
                rep = ea.similarity_metrics(cm.restrict(hm.phonemes), hm, cfg.n_shuffles, cfg.seed)
                doc = rep.to_dict()
                doc.update(config_hash=cfg.hash, versions=versions(), condition=cond, noise=lv,
                           human=label)
                _write_json(d / f"similarity_{cond}_{lv}_{label}.json", doc)
                summary[f"{cond}_{lv}_{label}"] = {k: doc[k] for k in ("diag_corr", "offdiag_corr",
                                                                       "overall_corr", "row_kl",
                                                                       "manhattan", "shuffle_p")}
    write_stage_marker(lay, "confuse", cfg, failures, {"similarity": summary})
    return failures


def _utterances(lay: Layout, lv: str, sids: Iterable[str]):
    return {s: load_segmentation(lay.segmentation(lv, s), s) for s in sids}


def stage_errors(cfg: ExperimentConfig) -> dict[str, str]:
    lay = Layout(cfg.out)
    failures = check_upstream(lay, "errors", cfg)
    d = lay.stage_dir("errors")
    d.mkdir(parents=True, exist_ok=True)
    summary = {}
    for cond in cfg.conditions:
        for lv in cfg.noise_levels:
            sents = _load_aligned(lay, cond, lv)
            utts = _utterances(lay, lv, (a.sentence_id for a in sents))
            records = [r for a in sents for r in ea.classify_word_errors(a, utts[a.sentence_id])]
            with open(d / f"word_errors_{cond}_{lv}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(("sentence_id", "word_index", "word", "category", "substitutions",
                            "omissions", "additions"))
                for r in records:
                    w.writerow((r.sentence_id, r.word_index, r.word, r.category, r.substitutions,
                                r.omissions, r.additions))
            summary[f"{cond}_{lv}"] = ea.word_error_counts(records)
    _write_json(d / "word_errors.json", {"config_hash": cfg.hash, "versions": versions(),
                                          "counts": summary})
    write_stage_marker(lay, "errors", cfg, failures)
    return failures


def _class_means(cfg: ExperimentConfig):
    return class_mean_durations(load_segmentation(e.seg_path, e.sentence_id) for e in _entries(cfg))


def stage_rt(cfg: ExperimentConfig) -> dict[str, str]:
    lay = Layout(cfg.out)
    failures = check_upstream(lay, "rt", cfg)
    d = lay.stage_dir("rt")
    d.mkdir(parents=True, exist_ok=True)
    means = _class_means(cfg)
    records = []
    for cond in cfg.conditions:
        for lv in cfg.noise_levels:
            for a in _load_aligned(lay, cond, lv):
                if not a.excluded:
                    records += [ea.reaction_time(w, means, cond, lv) for w in al.extract_windows(a)]
    ea.write_rt_csv(records, d / "rt.csv")
    with open(d / "rt_cdf.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("condition", "confused", "noise", "rt_ms", "fraction"))
        for (cond, conf, lv), table in ea.rt_cdf(records).items():
            for rt, frac in table:
                w.writerow((cond, int(conf), lv, repr(float(rt)), repr(float(frac))))
    medians = {}
    for cond in cfg.conditions:
        for conf in (False, True):
            v = [r.adjusted_rt for r in records if r.condition == cond and r.confused == conf]
            medians[f"{cond}_{'confused' if conf else 'nonconfused'}"] = float(np.median(v)) if v else None
    _write_json(d / "rt_summary.json", {"config_hash": cfg.hash, "versions": versions(),
                                         "class_mean_ms": {k.value: v for k, v in means.items()},
                                         "median_adjusted_rt_ms": medians, "n_records": len(records)})
    write_stage_marker(lay, "rt", cfg, failures)
    return failures


def stage_dynamics(cfg: ExperimentConfig) -> dict[str, str]:
    lay = Layout(cfg.out)
    failures = check_upstream(lay, "dynamics", cfg)
    opts = cfg.dynamics
    pre = opts.get("pre_fraction", dy.PRE_FRACTION)
    post = opts.get("post_fraction", dy.POST_FRACTION)
    bigram = dy.fit_bigram(load_segmentation(e.seg_path, e.sentence_id).phonemes
                           for e in _entries(cfg))
    layers = opts.get("layers", list(range(12)))
    windows: dict[int, dict[tuple[str, str], list[dy.InterpolatedWindow]]] = {l: {} for l in layers}
    for cond in cfg.conditions:
        for lv in cfg.noise_levels:
            for a in _load_aligned(lay, cond, lv):
                if a.excluded:
                    continue
                ws = dy.label_windows(al.extract_windows(a), bigram)
                if not ws:
                    continue
                traces = load_activations(lay.activations(cond, lv, a.sentence_id))
                for l in layers:
                    windows[l].setdefault((cond, lv), []).extend(
                        dy.interpolate_window(traces[l], w, l, pre, post) for w in ws)
    results, spaces = [], {}
    for l in layers:
        for lv in cfg.noise_levels:
            group = {k: v for k, v in windows[l].items() if k[1] == lv}
            space, res = dy.analyze_layer(group, l, opts.get("pca_variance", dy.PCA_VARIANCE),
                                          opts.get("max_exemplars", dy.MAX_EXEMPLARS),
                                          opts.get("min_exemplars", dy.MIN_EXEMPLARS))
            if space is not None:
                spaces[f"{l}_{lv}"] = space.n_retained
            results += res
    dy.write_dynamics(results, lay.stage_dir("dynamics"),
                      {"config_hash": cfg.hash, "versions": versions(), "pc_dimensions": spaces})
    write_stage_marker(lay, "dynamics", cfg, failures)
    return failures


def stage_decode(cfg: ExperimentConfig) -> dict[str, str]:
    lay = Layout(cfg.out)
    failures = check_upstream(lay, "decode", cfg)
    opts = cfg.decode
    n_max = opts.get("max_sentences", 100)
    folds = opts.get("folds", dy.N_FOLDS)
    layers = opts.get("layers")
    sids = [e.sentence_id for e in _entries(cfg) if e.sentence_id not in failures][:n_max]
    rows, doc = [], {}
    for cond in cfg.conditions:
        for lv in cfg.noise_levels:
            if not sids:
                continue
            traces = [load_activations(lay.activations(cond, lv, s)) for s in sids]
            utts = list(_utterances(lay, lv, sids).values())
            res = dy.decode_layers(traces, utts, layers, folds, cfg.seed, f"{cond}/{lv}")
            for l, r in res.items():
                rows.append((l, cond, lv, repr(r.mean), repr(r.sd)))
                doc[f"{cond}_{lv}_{l}"] = {"layer": l, "condition": cond, "noise": lv,
                                            "accuracies": r.accuracies, "mean": r.mean, "sd": r.sd,
                                            "flagged_folds": r.flagged_folds}
    d = lay.stage_dir("decode")
    _write_json(d / "decode.json", {"config_hash": cfg.hash, "versions": versions(), "results": doc})
    with open(d / "decode.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("layer", "condition", "noise", "mean_accuracy", "sd"))
        w.writerows(rows)
    write_stage_marker(lay, "decode", cfg, failures)
    return failures


STAGE_FUNCS: dict[str, Callable[[ExperimentConfig], dict[str, str]]] = {
    "augment": stage_augment, "vocode": stage_vocode, "infer": stage_infer, "align": stage_align,
    "confuse": stage_confuse, "errors": stage_errors, "rt": stage_rt, "dynamics": stage_dynamics,
    "decode": stage_decode,
}


# -- ledger ------------------------------------------------------------------------------

def write_ledger(cfg: ExperimentConfig) -> dict:
    """Per-sentence status assembled from every stage marker present."""
    lay = Layout(cfg.out)
    failures: dict[str, str] = {}
    for stage in STAGES:
        marker = lay.stage_dir(stage) / "_stage.json"
        if marker.is_file():
            for s, err in _read_json(marker).get("failures", {}).items():
                failures.setdefault(s, err)
    excl_path = lay.stage_dir("align") / "excluded.json"
    excluded = _read_json(excl_path) if excl_path.is_file() else {}
    sentences = {}
    for e in _entries(cfg):
        s = e.sentence_id
        if s in failures:
            sentences[s] = {"status": "failed", "error": failures[s]}
        else:
            reasons = {lv: r[s] for lv, r in excluded.items() if s in r}
            sentences[s] = ({"status": "excluded", "reason": reasons} if reasons
                            else {"status": "processed"})
    doc = {"config_hash": cfg.hash, "versions": versions(), "sentences": sentences}
    _write_json(lay.root / "ledger.json", doc)
    return doc


def run_stage(cfg: ExperimentConfig, stage: str, **kwargs) -> dict[str, str]:
    log.info("stage %s (config %s)", stage, cfg.hash)
    Layout(cfg.out).stage_dir(stage).mkdir(parents=True, exist_ok=True)
    failures = STAGE_FUNCS[stage](cfg, **kwargs)
    write_ledger(cfg)
    return failures


def run(cfg: ExperimentConfig, stages: Sequence[str] = STAGES) -> dict:
    """Run ``stages`` in order; returns the ledger."""
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    for stage in stages:
        run_stage(cfg, stage)
    return write_ledger(cfg)


def clean(out: str | Path) -> None:
    p = Path(out)
    if p.exists():
        shutil.rmtree(p)


def log_level() -> str:
    return os.environ.get("PHODE_LOG", "WARNING").upper()
