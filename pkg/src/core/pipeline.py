"""
Experiment orchestration.

Every CLI subcommand maps to one `_step_*` stage. A stage looks up its
upstream artifacts in the registry, skips itself when its own artifact is
already current for the same config and upstream content, and registers
whatever it writes. `reproduce-matrix` chains the stages for every seed
and variant, optionally across worker processes.
"""
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from ..audio.augmentor import EVAL_CONDITIONS, VIZ_CONDITIONS, Augmentor
from ..audio.synth_corpus import generate_corpus, generate_noise_banks, load_corpus, load_noise_banks, split_of
from ..logic.distill import distill_run
from ..logic.evaluation import ConditionCache, evaluate_model
from ..logic.probes import load_probe, save_probe, train_probe
from ..logic.visualize import visualize_model
from ..models.base import BaseEncoder
from ..models.logmel import LogMelEncoder
from ..models.student import load_student
from ..models.teacher import (PseudoLabeler, adapt_teacher, load_label_cache, load_teacher, masked_accuracy,
                              pretrain_teacher, save_label_cache, save_teacher)
from ..nn.checkpoint import save_checkpoint
from .config_loader import RunConfig
from .database import ArtifactRegistry
from .errors import ConfigError, DependencyError
from .file_utils import RunDirectory, append_jsonl, arrays_hash, version_string
from .reporter import SummaryReporter, flatten_report
from .seeding import derive_seed
from .variant_loader import LOGMEL_ROW, TEACHER_ROWS, Variant, VariantGrid

logger = logging.getLogger(__name__)

CACHED_CONDITIONS = tuple(dict.fromkeys(EVAL_CONDITIONS + VIZ_CONDITIONS))
CUSTOM_VARIANT = "custom"

# stage that produces each reference model
_MODEL_STAGES = {"T1": "teacher", "T1'": "adapted_teacher"}


def _key(seed: int, name: Optional[str] = None) -> str:
    return f"seed{seed}" if name is None else f"seed{seed}/{name}"


class ExperimentOrchestrator:
    def __init__(self, cfg: RunConfig, raw_text: str = "", raw_name: str = "config.txt",
                 grid: Optional[VariantGrid] = None, defer_registration: bool = False):
        self.cfg = cfg
        self.fingerprint = cfg.fingerprint()
        self.run = RunDirectory(cfg.system.output_dir, self.fingerprint)
        self.run.claim(cfg.to_dict(), raw_text, raw_name)
        self.registry = ArtifactRegistry(self.run.registry_path)
        self._grid = grid
        self._extra_variants: Dict[str, Variant] = {}
        self._corpora: Dict[int, Tuple[Any, list, dict]] = {}
        # worker processes collect registrations here; the parent applies them
        self.defer_registration = defer_registration
        self.pending: List[Tuple[str, Dict[str, Any]]] = []

    @property
    def grid(self) -> VariantGrid:
        if self._grid is None:
            self._grid = VariantGrid()
        return self._grid

    @property
    def seed(self) -> int:
        return self.cfg.system.master_seed

    # ==========================================
    #            REGISTRY HELPERS
    # ==========================================

    def _register(self, stage: str, key: str, path, config_hash: str, content_hash: str = "",
                  meta: Optional[Dict[str, Any]] = None):
        record = {"stage": stage, "key": key, "path": str(path), "config_hash": config_hash,
                  "content_hash": content_hash, "meta": meta or {}}
        if self.defer_registration:
            self.pending.append(("artifact", record))
        else:
            self.registry.register(**record)

    def _save_metrics(self, seed: int, model_id: str, metrics: Dict[str, float], source_file):
        record = {"seed": seed, "model_id": model_id, "metrics": metrics, "source_file": str(source_file)}
        if self.defer_registration:
            self.pending.append(("metrics", record))
        else:
            self.registry.save_metrics(**record)

    def _lookup(self, stage: str, key: str) -> Optional[Dict[str, Any]]:
        for kind, rec in reversed(self.pending):
            if kind == "artifact" and rec["stage"] == stage and rec["key"] == key:
                return rec
        row = self.registry.lookup(stage, key)
        if row is None:
            return None
        return {"stage": stage, "key": key, "path": row["path"], "config_hash": row["config_hash"],
                "content_hash": row["content_hash"], "meta": json.loads(row["meta_json"] or "{}")}

    def _require(self, stage: str, key: str, config_hash: str) -> Dict[str, Any]:
        row = self._lookup(stage, key)
        if row is None:
            raise DependencyError(stage, key, hint=f"Run the '{_SUBCOMMAND_OF[stage]}' subcommand first.")
        if row["config_hash"] != config_hash:
            raise DependencyError(stage, key, hint="Artifact is stale (produced under another config).")
        return row

    def _is_current(self, stage: str, key: str, config_hash: str, upstream: str = "") -> bool:
        row = self._lookup(stage, key)
        return (row is not None and row["config_hash"] == config_hash
                and row["meta"].get("upstream", "") == upstream and Path(row["path"]).exists())

    # ==========================================
    #              SHARED INPUTS
    # ==========================================

    def _corpus(self, seed: int):
        if seed not in self._corpora:
            row = self._require("corpus", _key(seed), self.fingerprint)
            manifest, utterances = load_corpus(row["path"])
            self._corpora[seed] = (manifest, utterances, load_noise_banks(row["path"]))
        return self._corpora[seed]

    def _augmentor(self, seed: int) -> Augmentor:
        _, _, banks = self._corpus(seed)
        return Augmentor(banks, self.cfg.augment, self.cfg.corpus.sample_rate)

    def variant(self, model_id: str) -> Variant:
        if model_id in self._extra_variants:
            return self._extra_variants[model_id]
        if model_id.rstrip("'") == CUSTOM_VARIANT:
            return self.custom_variant(adapted=model_id.endswith("'"))
        return self.grid.get(model_id)

    def custom_variant(self, adapted: bool = False) -> Variant:
        """The student described by the [DISTILL] section itself."""
        d = self.cfg.distill
        v = Variant(id=CUSTOM_VARIANT + ("'" if adapted else ""), setup=d.setup, dat=d.dat_enabled, adapted=adapted)
        self._extra_variants[v.id] = v
        return v

    def model_config_hash(self, model_id: str) -> str:
        if model_id in TEACHER_ROWS or model_id == LOGMEL_ROW:
            return self.fingerprint
        return self.variant(model_id).apply(self.cfg).fingerprint()

    def _model_artifact(self, seed: int, model_id: str) -> Dict[str, Any]:
        if model_id == LOGMEL_ROW:
            t = self.cfg.teacher
            return {"path": "", "content_hash": arrays_hash({}, {"logmel": t.n_mels, "hop": t.total_stride})}
        stage = _MODEL_STAGES.get(model_id, "student")
        return self._require(stage, _key(seed, model_id), self.model_config_hash(model_id))

    def load_model(self, seed: int, model_id: str) -> BaseEncoder:
        row = self._model_artifact(seed, model_id)
        if model_id == LOGMEL_ROW:
            return LogMelEncoder(self.cfg.teacher.n_mels, self.cfg.teacher.total_stride)
        if model_id in TEACHER_ROWS:
            return load_teacher(row["path"], self.cfg.teacher)[0]
        return load_student(row["path"], self.cfg.teacher)[0]

    @staticmethod
    def _write_log(path: Path, rows: List[Dict[str, Any]]):
        if path.exists():
            path.unlink()
        append_jsonl(path, rows)

    # ==========================================
    #                 STAGES
    # ==========================================

    def _step_gen_corpus(self, seed: int):
        key = _key(seed)
        out = self.run.corpus_dir(seed)
        if self._is_current("corpus", key, self.fingerprint):
            logger.info(f">>> Corpus for seed {seed} is current; skipping")
            return
        logger.info(f">>> Generating corpus and noise banks (seed {seed})")
        manifest, _ = generate_corpus(self.cfg.corpus, derive_seed(seed, "corpus"), out)
        generate_noise_banks(self.cfg.noise, self.cfg.corpus.sample_rate, derive_seed(seed, "noise"), out)
        self._corpora.pop(seed, None)
        self._register("corpus", key, out, self.fingerprint, manifest.content_hash,
                       {"utterances": len(manifest.entries)})

    def _step_pretrain_teacher(self, seed: int):
        key = _key(seed, "T1")
        corpus = self._require("corpus", _key(seed), self.fingerprint)
        if self._is_current("teacher", key, self.fingerprint, corpus["content_hash"]):
            logger.info(f">>> Base teacher for seed {seed} is current; skipping")
            return
        logger.info(f">>> Pre-training base teacher (seed {seed})")
        tcfg = self.cfg.teacher
        manifest, utterances, _ = self._corpus(seed)
        train, dev = split_of(utterances, "train"), split_of(utterances, "dev")
        tdir = self.run.teacher_dir(seed)

        labeler = PseudoLabeler.fit(train, tcfg, derive_seed(seed, "labeler"))
        labels = labeler.label_corpus(train + dev)
        save_checkpoint(tdir / "labeler.npz", labeler.to_arrays(),
                        {"kind": "labeler", "n_mels": labeler.n_mels, "hop": labeler.hop,
                         "manifest_hash": manifest.content_hash})
        save_label_cache(tdir / "labels.npz", labels, manifest.content_hash)

        teacher, rows = pretrain_teacher(train, labels, tcfg, seed)
        self._write_log(tdir / "pretrain_log.jsonl", rows)
        acc = masked_accuracy(teacher, dev, labels, tcfg, seed)
        logger.info(f"   Base teacher masked accuracy on dev: {acc:.3f}")
        path = tdir / "teacher.npz"
        digest = save_teacher(path, teacher, teacher.metadata(seed, config_hash=self.fingerprint,
                                                              version=version_string(), masked_acc=acc))
        self._register("teacher", key, path, self.fingerprint, digest,
                       {"upstream": corpus["content_hash"], "masked_acc": acc})

    def _step_adapt_teacher(self, seed: int):
        key = _key(seed, "T1'")
        base = self._require("teacher", _key(seed, "T1"), self.fingerprint)
        if self._is_current("adapted_teacher", key, self.fingerprint, base["content_hash"]):
            logger.info(f">>> Adapted teacher for seed {seed} is current; skipping")
            return
        tcfg = self.cfg.teacher
        logger.info(f">>> Domain-adaptive pre-training for {tcfg.adapt_steps} steps (seed {seed})")
        manifest, utterances, _ = self._corpus(seed)
        train, dev = split_of(utterances, "train"), split_of(utterances, "dev")
        tdir = self.run.teacher_dir(seed)
        labels = load_label_cache(tdir / "labels.npz", manifest.content_hash)
        teacher, _ = load_teacher(base["path"], tcfg)
        augmentor = self._augmentor(seed)

        adapted, rows = adapt_teacher(teacher, train, labels, augmentor, tcfg.adapt_steps, seed)
        self._write_log(tdir / "adapt_log.jsonl", rows)
        accs = {
            "masked_acc": masked_accuracy(adapted, dev, labels, tcfg, seed),
            "masked_acc_distorted": masked_accuracy(adapted, dev, labels, tcfg, seed, augmentor),
            "base_masked_acc_distorted": masked_accuracy(teacher, dev, labels, tcfg, seed, augmentor),
        }
        logger.info("   " + ", ".join(f"{k}={v:.3f}" for k, v in accs.items()))
        path = tdir / "teacher_adapted.npz"
        digest = save_teacher(path, adapted, adapted.metadata(seed, config_hash=self.fingerprint,
                                                              version=version_string(), adapted=True, **accs))
        self._register("adapted_teacher", key, path, self.fingerprint, digest,
                       {"upstream": base["content_hash"], **accs})

    def _step_distill(self, seed: int, variant: Variant):
        key = _key(seed, variant.id)
        vcfg = variant.apply(self.cfg)
        vhash = vcfg.fingerprint()
        teacher_row = self._require(_MODEL_STAGES[variant.teacher_id], _key(seed, variant.teacher_id),
                                    self.fingerprint)
        if self._is_current("student", key, vhash, teacher_row["content_hash"]):
            logger.info(f">>> Student {variant.id} (seed {seed}) is current; skipping")
            return
        logger.info(f">>> Distilling {variant.id} from {variant.teacher_id} (seed {seed})")
        teacher, _ = load_teacher(teacher_row["path"], self.cfg.teacher)
        _, utterances, _ = self._corpus(seed)
        result = distill_run(vcfg, teacher, split_of(utterances, "train"), split_of(utterances, "dev"),
                             self._augmentor(seed), seed, self.run.model_dir(seed, variant.id))
        self._register("student", key, result.checkpoint_path, vhash, result.checkpoint_hash,
                       {"upstream": teacher_row["content_hash"], "teacher": variant.teacher_id,
                        "best_step": result.best_step, "best_dev_loss": result.best_dev_loss})

    def _step_probe(self, seed: int, model_id: str):
        key = _key(seed, model_id)
        chash = self.model_config_hash(model_id)
        model_row = self._model_artifact(seed, model_id)
        if self._is_current("probe", key, chash, model_row["content_hash"]):
            logger.info(f">>> Probe for {model_id} (seed {seed}) is current; skipping")
            return
        logger.info(f">>> Training utterance-class probe on {model_id} (seed {seed})")
        ecfg = self.cfg.eval
        model = self.load_model(seed, model_id)
        _, utterances, _ = self._corpus(seed)
        train = split_of(utterances, "train")
        probe = train_probe(model, [u.wave for u in train], [u.class_label for u in train],
                            self.cfg.corpus.n_classes, ecfg.probe_steps, ecfg.probe_lr,
                            derive_seed(seed, "probe", model_id))
        path = self.run.model_dir(seed, model_id) / "probe.npz"
        digest = save_probe(path, probe, {"model_id": model_id, "seed": seed, "config_hash": chash,
                                          "version": version_string()})
        self._register("probe", key, path, chash, digest, {"upstream": model_row["content_hash"]})

    def _step_eval_cache(self, seed: int) -> ConditionCache:
        corpus = self._require("corpus", _key(seed), self.fingerprint)
        cache = ConditionCache(self.run.eval_cache_dir(seed), self.cfg.eval.eval_seed, corpus["content_hash"])
        if self._is_current("eval_cache", _key(seed), self.fingerprint, corpus["content_hash"]):
            return cache
        logger.info(f">>> Rendering shared evaluation audio (seed {seed}, eval seed {self.cfg.eval.eval_seed})")
        _, utterances, _ = self._corpus(seed)
        cache.ensure(split_of(utterances, "test"), self._augmentor(seed), CACHED_CONDITIONS)
        self._register("eval_cache", _key(seed), cache.dir, self.fingerprint, cache.digest(),
                       {"upstream": corpus["content_hash"]})
        return cache

    def _step_eval(self, seed: int, model_id: str):
        key = _key(seed, model_id)
        chash = self.model_config_hash(model_id)
        probe_row = self._require("probe", key, chash)
        cache = self._step_eval_cache(seed)
        upstream = f"{probe_row['content_hash']}:{cache.digest()}"
        if self._is_current("eval", key, chash, upstream):
            logger.info(f">>> Evaluation of {model_id} (seed {seed}) is current; skipping")
            return
        logger.info(f">>> Evaluating {model_id} (seed {seed})")
        _, utterances, _ = self._corpus(seed)
        class_of = {u.id: u.class_label for u in split_of(utterances, "test")}
        report = evaluate_model(self.load_model(seed, model_id), load_probe(probe_row["path"]), cache, class_of,
                                self.cfg.eval, model_id, seed, chash)
        path = self.run.model_dir(seed, model_id) / "eval_report.json"
        report.save(path)
        self._save_metrics(seed, model_id, flatten_report(report), path)
        self._register("eval", key, path, chash, arrays_hash({}, report.to_dict()), {"upstream": upstream})

    def _step_visualize(self, seed: int, model_id: str):
        key = _key(seed, model_id)
        chash = self.model_config_hash(model_id)
        model_row = self._model_artifact(seed, model_id)
        cache = self._step_eval_cache(seed)
        upstream = f"{model_row['content_hash']}:{cache.digest()}"
        if self._is_current("viz", key, chash, upstream):
            logger.info(f">>> Visualization of {model_id} (seed {seed}) is current; skipping")
            return
        logger.info(f">>> Visualizing {model_id} (seed {seed})")
        out = self.run.viz_dir(seed, model_id)
        summary = visualize_model(self.load_model(seed, model_id), cache, self.cfg.eval, model_id, seed,
                                  out, self.run.stamp())
        self._save_metrics(seed, model_id, {"silhouette": summary["silhouette"]}, out / "visualization.json")
        self._register("viz", key, out, chash, arrays_hash({}, summary), {"upstream": upstream})

    # ==========================================
    #             PUBLIC ENTRY POINTS
    # ==========================================

    def gen_corpus(self, seed: Optional[int] = None):
        self._step_gen_corpus(self.seed if seed is None else seed)

    def pretrain_teacher(self, seed: Optional[int] = None):
        self._step_pretrain_teacher(self.seed if seed is None else seed)

    def adapt_teacher(self, seed: Optional[int] = None):
        self._step_adapt_teacher(self.seed if seed is None else seed)

    def distill(self, variant_id: Optional[str] = None, adapted: bool = False, seed: Optional[int] = None) -> str:
        variant = self.variant(variant_id) if variant_id else self.custom_variant(adapted)
        self._step_distill(self.seed if seed is None else seed, variant)
        return variant.id

    def probe(self, model_id: str, seed: Optional[int] = None):
        self._step_probe(self.seed if seed is None else seed, model_id)

    def evaluate(self, model_id: str, seed: Optional[int] = None):
        self._step_eval(self.seed if seed is None else seed, model_id)

    def visualize(self, model_id: str, seed: Optional[int] = None):
        self._step_visualize(self.seed if seed is None else seed, model_id)

    def prepare_seed(self, seed: int):
        """Everything every matrix cell of one seed shares."""
        self._step_gen_corpus(seed)
        self._step_pretrain_teacher(seed)
        self._step_adapt_teacher(seed)
        self._step_eval_cache(seed)

    def run_model(self, seed: int, model_id: str):
        """One matrix cell: (distill), probe, eval, visualize."""
        if model_id not in TEACHER_ROWS and model_id != LOGMEL_ROW:
            self._step_distill(seed, self.variant(model_id))
        self._step_probe(seed, model_id)
        self._step_eval(seed, model_id)
        self._step_visualize(seed, model_id)

    def model_rows(self, depth_ablation: bool = False) -> List[str]:
        return [*TEACHER_ROWS, LOGMEL_ROW, *(v.id for v in self.grid.selected(depth_ablation))]

    def reproduce_matrix(self, seeds: Optional[Sequence[int]] = None, jobs: Optional[int] = None,
                         depth_ablation: bool = False) -> Dict[str, Path]:
        seeds = sorted(set(seeds)) if seeds else [self.seed]
        jobs = max(1, jobs if jobs is not None else self.cfg.system.jobs)
        rows = self.model_rows(depth_ablation)
        logger.info(f">>> Reproducing matrix: {len(rows)} rows x {len(seeds)} seeds, {jobs} worker(s)")

        self._fan_out(_prepare_seed_cell, [(s,) for s in seeds], jobs)
        self._fan_out(_model_cell, [(s, m) for s in seeds for m in rows], jobs)

        reporter = SummaryReporter(self.registry, self.run.summary_dir(), self.run.stamp())
        paths = reporter.generate(rows, seeds)
        logger.info(f">>> Matrix complete; summary in {self.run.summary_dir()}")
        return paths

    def _fan_out(self, cell_fn, cells: List[Tuple], jobs: int):
        if jobs == 1:
            for cell in cells:
                cell_fn(self, *cell)
            return
        payloads = [(self.cfg, self.grid.filepath, cell) for cell in cells]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_in_worker, [cell_fn] * len(cells), payloads))
        for pending in results:
            apply_pending(self.registry, pending)


# ==========================================
#            WORKER-PROCESS CELLS
# ==========================================

def _prepare_seed_cell(orch: ExperimentOrchestrator, seed: int):
    orch.prepare_seed(seed)


def _model_cell(orch: ExperimentOrchestrator, seed: int, model_id: str):
    orch.run_model(seed, model_id)


def _run_in_worker(cell_fn, payload) -> List[Tuple[str, Dict[str, Any]]]:
    """Runs one cell in a child process and returns its registrations for the parent."""
    cfg, grid_path, cell = payload
    orch = ExperimentOrchestrator(cfg, grid=VariantGrid(grid_path), defer_registration=True)
    cell_fn(orch, *cell)
    return orch.pending


def apply_pending(registry: ArtifactRegistry, pending: List[Tuple[str, Dict[str, Any]]]):
    for kind, record in pending:
        if kind == "artifact":
            registry.register(**record)
        elif kind == "metrics":
            registry.save_metrics(**record)
        else:
            raise ConfigError(f"Unknown pending registration kind '{kind}'")


_SUBCOMMAND_OF = {
    "corpus": "gen-corpus", "teacher": "pretrain-teacher", "adapted_teacher": "adapt-teacher",
    "student": "distill", "probe": "probe", "eval_cache": "eval", "eval": "eval", "viz": "visualize",
}
