"""Stage orchestration: synth/ingest -> extract -> experts -> gate -> ensemble -> stage4 -> evaluate.

Each stage reads only files inside the run directory (plus an external
manifest when ingesting) and writes its outputs there.  The ledger stores
content hashes so an interrupted or partially deleted run resumes from the
first stale stage; every stage after a rerun stage reruns too.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ensemble as ens
from . import evaluation as ev
from . import gating
from .config import STAGES, RunConfig
from .core_data import Cohort, DataError, load_cohort, regions_for_mode, write_cohort
from .experts import (DESCRIPTOR_NAMES, ExpertConfig, ScanTable, clamp_prob, describe_cohort, expert_filename,
                      region_outputs, save_expert, train_all_regions, train_pooled_mlp, write_predictions_csv)
from .ledger import RunLedger, hash_text
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.train import TrainConfig
from .radiomics.extract import extract_cohort, read_features_csv, write_features_csv
from .stats import derive_seed, on_simplex
from .synth import SynthConfig, generate_cohort

log = logging.getLogger("lobe_moe")

WHOLE = "WHOLE"


class InvariantError(RuntimeError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


# -- shared helpers ------------------------------------------------------------------------

def _write_rows(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_rows(path: Path) -> list[dict]:
    if not path.is_file():
        raise DataError(f"missing input {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _r(x) -> str:
    return repr(float(x))


def _safe(name: str) -> str:
    return name.replace(":", "_")


def cohort_of(root: Path) -> Cohort:
    return load_cohort(root / "cohort" / "manifest.csv")


def train_config(cfg: RunConfig, *labels) -> TrainConfig:
    return TrainConfig(learning_rate=cfg.learning_rate, weight_decay=cfg.weight_decay,
                       max_epochs=cfg.max_epochs, early_stop_patience=cfg.early_stop_patience,
                       batch_size=cfg.batch_size, label_smoothing=cfg.label_smoothing,
                       scheduler=cfg.scheduler, seed=derive_seed(cfg.seed, *labels))


def gate_config(cfg: RunConfig, *labels) -> TrainConfig:
    return TrainConfig(learning_rate=cfg.gate_learning_rate, weight_decay=cfg.weight_decay,
                       max_epochs=cfg.gate_max_epochs, early_stop_patience=cfg.early_stop_patience,
                       batch_size=cfg.batch_size, seed=derive_seed(cfg.seed, "gate", *labels))


def moe_config(cfg: RunConfig, *labels) -> ens.MoEConfig:
    return ens.MoEConfig(global_dim=cfg.global_dim, lambda_gating=cfg.lambda_gating,
                         lambda_weight=cfg.lambda_weight, lambda_diversity=cfg.lambda_diversity,
                         lr_backbone=cfg.lr_backbone, lr_head=cfg.lr_head, weight_decay=cfg.weight_decay,
                         max_epochs=cfg.moe_max_epochs, early_stop_patience=cfg.early_stop_patience,
                         batch_size=cfg.batch_size, seed=derive_seed(cfg.seed, "moe", *labels))


def load_table(root: Path, cfg: RunConfig) -> ScanTable:
    cohort = cohort_of(root)
    regions = regions_for_mode(cfg.region_mode)
    keys, feats = read_features_csv(root / "features" / "radiomics.csv")
    n, k = len(cohort), len(regions)
    expected = [(r.patient_id, r.scan_id, reg.value) for r in cohort.records for reg in regions]
    if keys != expected:
        raise DataError("radiomics table does not match the cohort and region mode")
    rows = _read_rows(root / "features" / "descriptors.csv")
    if len(rows) != n * (k + 1):
        raise DataError("descriptor table does not match the cohort and region mode")
    desc = np.array([[float(r[c]) for c in DESCRIPTOR_NAMES] for r in rows]).reshape(n, k + 1, -1)
    return ScanTable.from_cohort(cohort, regions, feats.reshape(n, k, -1), desc[:, :k], desc[:, k])


def read_plan(root: Path) -> ev.CvPlan:
    rows = _read_rows(root / "cv_plan.csv")
    folds: dict[int, dict[str, list[str]]] = {}
    seed = 0
    for r in rows:
        f = int(r["fold"])
        folds.setdefault(f, {"train": [], "val": [], "test": []})[r["role"]].append(r["patient_id"])
        seed = int(r["seed"])
    return ev.CvPlan(tuple(ev.FoldSplit(f, tuple(d["train"]), tuple(d["val"]), tuple(d["test"]))
                           for f, d in sorted(folds.items())), seed)


def _outputs_path(root: Path, fold: int, kind: str) -> Path:
    return root / "experts" / "outputs" / f"fold{fold}_{kind}.ckpt"


@dataclass
class FoldOutputs:
    val_rows: np.ndarray
    test_rows: np.ndarray
    val_prob: np.ndarray
    val_phi: np.ndarray
    test_prob: np.ndarray
    test_phi: np.ndarray
    val_aucs: np.ndarray

    def save(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(path, {k: np.asarray(v, dtype=np.float64) for k, v in vars(self).items()})

    @classmethod
    def load(cls, path: Path) -> "FoldOutputs":
        if not path.is_file():
            raise DataError(f"missing input {path}")
        d = load_checkpoint(path)
        d["val_rows"] = d["val_rows"].astype(np.int64)
        d["test_rows"] = d["test_rows"].astype(np.int64)
        return cls(**d)


def _score_rows(method: str, fold: int, table: ScanTable, rows, scores):
    return [(method, fold, table.scan_ids[i], _r(s)) for i, s in zip(rows, scores)]


SCORE_HEADER = ("method", "fold", "scan_id", "score")


# -- stages ------------------------------------------------------------------------------------

def stage_synth(cfg: RunConfig, root: Path) -> list[str]:
    out = root / "cohort"
    if cfg.manifest:
        cohort = load_cohort(cfg.manifest)
        recs = [r.__class__(r.patient_id, r.scan_id, r.label, str(cohort.resolve(r.volume_path).resolve()),
                            str(cohort.resolve(r.mask_path).resolve())) for r in cohort.records]
        out.mkdir(parents=True, exist_ok=True)
        write_cohort(out / "manifest.csv", Cohort(tuple(recs), out))
        return ["cohort/manifest.csv"]
    dims = cfg.dim_tuple
    synth = SynthConfig(n_patients=cfg.n_patients, scans_per_patient=(cfg.scans_min, cfg.scans_max),
                        dims=dims, disease_prevalence=cfg.prevalence, basal_bias=cfg.basal_bias,
                        noise_sigma=cfg.noise_sigma, seed=cfg.seed)
    cohort, _ = generate_cohort(synth, out)
    files = ["cohort/manifest.csv", "cohort/truth.csv"]
    for r in cohort.records:
        files += [f"cohort/{r.volume_path}", f"cohort/{r.mask_path}"]
    return files


def stage_extract(cfg: RunConfig, root: Path) -> list[str]:
    cohort = cohort_of(root)
    regions = regions_for_mode(cfg.region_mode)
    for rec in cohort.records:
        _, mask = cohort.load_scan(rec)
        mask.validate_training()
    feats = extract_cohort(cohort, regions, cfg.bin_width, cfg.jobs)
    (root / "features").mkdir(parents=True, exist_ok=True)
    write_features_csv(root / "features" / "radiomics.csv", cohort, regions, feats)
    desc, glob = describe_cohort(cohort, regions, cfg.jobs)
    rows = []
    for i, rec in enumerate(cohort.records):
        for k, reg in enumerate(regions):
            rows.append([rec.patient_id, rec.scan_id, reg.value, *map(_r, desc[i, k])])
        rows.append([rec.patient_id, rec.scan_id, WHOLE, *map(_r, glob[i])])
    _write_rows(root / "features" / "descriptors.csv", ["patient_id", "scan_id", "region", *DESCRIPTOR_NAMES], rows)
    return ["features/radiomics.csv", "features/descriptors.csv"]


def stage_experts(cfg: RunConfig, root: Path) -> list[str]:
    table = load_table(root, cfg)
    cohort = cohort_of(root)
    plan = ev.make_cv_plan(cohort, cfg.n_folds, cfg.seed)
    report = ev.leakage_audit(plan, cohort)
    if not report.ok:
        raise InvariantError("leakage audit: " + "; ".join(report.violations))
    plan_rows = []
    for fs in plan.folds:
        for role in ("train", "val", "test"):
            plan_rows += [(fs.fold, p, role, plan.seed) for p in getattr(fs, role)]
    _write_rows(root / "cv_plan.csv", ["fold", "patient_id", "role", "seed"], plan_rows)
    files = ["cv_plan.csv"]

    expert_rows, pred_rows, score_rows = [], [], []
    for fs in plan.folds:
        fold_dir = root / "experts" / f"fold{fs.fold}"
        fold_dir.mkdir(parents=True, exist_ok=True)
        val_rows, test_rows = table.rows_for(fs.val), table.rows_for(fs.test)
        train_rows = table.rows_for(fs.train)
        base = train_pooled_mlp(table.global_descriptors[train_rows], table.labels[train_rows],
                                table.global_descriptors[val_rows], table.labels[val_rows],
                                train_config(cfg, "baseline", fs.fold))
        save_checkpoint(fold_dir / "baseline.ckpt", base.state())
        files.append(f"experts/fold{fs.fold}/baseline.ckpt")
        prob, _ = base.predict(table.global_descriptors[test_rows])
        score_rows += _score_rows("baseline", fs.fold, table, test_rows, prob)
        for kind in cfg.kind_list:
            ecfg = ExpertConfig(cfg.rounds, cfg.shrinkage, train_config(cfg, "expert", fs.fold, kind))
            experts = train_all_regions(table, fs, kind, ecfg)
            for e in experts:
                name = expert_filename(e)
                save_expert(fold_dir / name, e)
                files.append(f"experts/fold{fs.fold}/{name}")
                expert_rows.append((fs.fold, kind, e.region.value, _r(e.validation_auc), f"fold{fs.fold}/{name}"))
            vp, vphi = region_outputs(experts, table, val_rows)
            tp, tphi = region_outputs(experts, table, test_rows)
            out = FoldOutputs(val_rows, test_rows, vp, vphi, tp, tphi,
                              np.array([e.validation_auc for e in experts]))
            out.save(_outputs_path(root, fs.fold, kind))
            files.append(str(_outputs_path(root, fs.fold, kind).relative_to(root)))
            for rows, probs in ((val_rows, vp), (test_rows, tp)):
                for i, row in enumerate(rows):
                    for k, reg in enumerate(table.regions):
                        pred_rows.append((table.scan_ids[row], reg.value, kind, probs[i, k]))
            for k, reg in enumerate(table.regions):
                score_rows += _score_rows(f"expert:{kind}:{reg.value}", fs.fold, table, test_rows, tp[:, k])
    _write_rows(root / "experts" / "experts.csv", ["fold", "kind", "region", "validation_auc", "file"], expert_rows)
    write_predictions_csv(root / "predictions.csv", pred_rows)
    _write_rows(root / "scores" / "experts.csv", SCORE_HEADER, score_rows)
    return files + ["experts/experts.csv", "predictions.csv", "scores/experts.csv"]


def stage_gate(cfg: RunConfig, root: Path) -> list[str]:
    table = load_table(root, cfg)
    plan = read_plan(root)
    k = len(table.regions)
    report, selected, score_rows = [], [], []
    files = []
    for fs in plan.folds:
        for kind in cfg.kind_list:
            o = FoldOutputs.load(_outputs_path(root, fs.fold, kind))
            scaler = gating.FeatureScaler.fit(o.val_phi)
            val_phi, test_phi = scaler(o.val_phi), scaler(o.test_phi)
            val_labels = table.labels[o.val_rows]
            ctx = gating.GatingContext(o.val_aucs, o.val_prob, val_phi, val_labels,
                                       [table.patient_ids[i] for i in o.val_rows])
            gates, scores = gating.evaluate_strategies(ctx, cfg.gate_architecture,
                                                       gate_config(cfg, fs.fold, kind), cfg.strategy_list)
            mean_w = {}
            for s in cfg.strategy_list:
                w = gates[s].weights(o.val_prob, val_phi).mean(axis=0)
                if not on_simplex(w):
                    raise InvariantError(f"{kind}:{s} weights leave the simplex")
                mean_w[s] = w
                report.append((fs.fold, f"{kind}:{s}", scores[s], w))
            uniform = np.full(k, 1.0 / k)
            report.append((fs.fold, f"{kind}:uniform_reference", ev.auc(o.val_prob.mean(axis=1), val_labels), uniform))
            best, best_auc = gating.select_best_strategy([(s, scores[s]) for s in cfg.strategy_list])
            selected.append([fs.fold, kind, best, _r(best_auc), *map(_r, mean_w[best])])
            test_scores = gating.ensemble_scores(gates[best], o.test_prob, test_phi)
            score_rows += _score_rows(f"gated:{kind}", fs.fold, table, o.test_rows, test_scores)
            if cfg.dump_weights:
                for s in cfg.strategy_list:
                    if not gates[s].sample_dependent:
                        continue
                    rows = []
                    for split, idx, p, f in (("val", o.val_rows, o.val_prob, val_phi),
                                             ("test", o.test_rows, o.test_prob, test_phi)):
                        w = gates[s].weights(p, f)
                        rows += [[table.scan_ids[i], split, *map(_r, w[j])] for j, i in enumerate(idx)]
                    rel = f"gating/weights/fold{fs.fold}_{kind}_{s}.csv"
                    _write_rows(root / rel, ["scan_id", "split", *(f"w{i + 1}" for i in range(k))], rows)
                    files.append(rel)
    gating.write_gating_report(root / "gating_report.csv", report, k)
    _write_rows(root / "gating" / "selected.csv",
                ["fold", "kind", "strategy", "val_auc", *(f"w{i + 1}" for i in range(k))], selected)
    _write_rows(root / "scores" / "gate.csv", SCORE_HEADER, score_rows)
    return files + ["gating_report.csv", "gating/selected.csv", "scores/gate.csv"]


def stage_ensemble(cfg: RunConfig, root: Path) -> list[str]:
    table = load_table(root, cfg)
    plan = read_plan(root)
    k = len(table.regions)
    weight_rows, score_rows = [], []
    for fs in plan.folds:
        for kind in cfg.kind_list:
            o = FoldOutputs.load(_outputs_path(root, fs.fold, kind))
            w = ens.val_auc_weights(o.val_aucs)
            pred = ens.weighted_ensemble(o.test_prob, w)
            weight_rows.append([fs.fold, kind, *map(_r, w)])
            score_rows += _score_rows(f"weighted:{kind}", fs.fold, table, o.test_rows, pred.probability)
    _write_rows(root / "ensemble" / "weights.csv", ["fold", "kind", *(f"w{i + 1}" for i in range(k))], weight_rows)
    _write_rows(root / "scores" / "ensemble.csv", SCORE_HEADER, score_rows)
    return ["ensemble/weights.csv", "scores/ensemble.csv"]


def stage4_inits(root: Path, cfg: RunConfig, fold: int) -> list[tuple[str, np.ndarray]]:
    """Initial expert weights: validation-AUC weights and the selected gate, per kind."""
    weights = {(int(r["fold"]), r["kind"]): r for r in _read_rows(root / "ensemble" / "weights.csv")}
    chosen = {(int(r["fold"]), r["kind"]): r for r in _read_rows(root / "gating" / "selected.csv")}
    out = []
    for kind in cfg.kind_list:
        for tag, src in (("auc", weights), ("gated", chosen)):
            row = src[(fold, kind)]
            w = np.array([float(v) for c, v in row.items() if c.startswith("w") and c[1:].isdigit()])
            out.append((f"{tag}:{kind}", ens.stage4_initial_weights(w)))
    return out


def stage_stage4(cfg: RunConfig, root: Path) -> list[str]:
    table = load_table(root, cfg)
    plan = read_plan(root)
    k = len(table.regions)
    results, score_rows, files = [], [], []

    def data(rows):
        return ens.MoEData(table.global_descriptors[rows], table.descriptors[rows], table.labels[rows].astype(float))

    for fs in plan.folds:
        test_rows = table.rows_for(fs.test)
        tr, va, te = data(table.rows_for(fs.train)), data(table.rows_for(fs.val)), data(test_rows)
        std = ens.MoEStandardizer.fit(tr)
        tr, va, te = std(tr), std(va), std(te)
        for init, w0 in stage4_inits(root, cfg, fs.fold):
            mcfg = moe_config(cfg, fs.fold, init)
            head = ens.MoEHead(k, len(DESCRIPTOR_NAMES), w0, mcfg)
            ens.train_moe(head, tr, va, mcfg)
            prob, _, _, w = head(te.global_desc, te.region_desc)
            test_auc = ev.auc(prob.data, te.labels)
            if not on_simplex(w.data):
                raise InvariantError(f"stage-4 weights for {init} leave the simplex")
            base = f"stage4/fold{fs.fold}_{_safe(init)}"
            (root / "stage4").mkdir(parents=True, exist_ok=True)
            state = head.state_dict()
            state.update({"standardizer." + n: v for n, v in vars(std).items()})
            save_checkpoint(root / f"{base}.ckpt", state)
            ens.write_moew(root / f"{base}.moew", w.data)
            files += [f"{base}.ckpt", f"{base}.moew"]
            results.append((fs.fold, init, test_auc, w.data))
            score_rows += _score_rows(f"moe:{init}", fs.fold, table, test_rows, clamp_prob(prob.data))
    ens.write_stage4_csv(root / "stage4_results.csv", results, k)
    _write_rows(root / "scores" / "stage4.csv", SCORE_HEADER, score_rows)
    return files + ["stage4_results.csv", "scores/stage4.csv"]


def stage_evaluate(cfg: RunConfig, root: Path) -> list[str]:
    cohort = cohort_of(root)
    label = {r.scan_id: r.label for r in cohort.records}
    scores: dict[str, dict[int, list[tuple[float, int]]]] = {}
    for name in ("experts", "gate", "ensemble", "stage4"):
        path = root / "scores" / f"{name}.csv"
        if not path.is_file():
            continue
        for r in _read_rows(path):
            scores.setdefault(r["method"], {}).setdefault(int(r["fold"]), []).append(
                (float(r["score"]), label[r["scan_id"]]))
    if "baseline" not in scores:
        raise DataError("no baseline scores")
    rows, summaries = [], []
    base_folds = None
    for method, folds in scores.items():
        aucs = []
        for fold in sorted(folds):
            s, y = zip(*folds[fold])
            a = ev.auc(np.array(s), np.array(y))
            if not 0.0 <= a <= 1.0:
                raise InvariantError(f"AUC outside [0, 1] for {method}")
            aucs.append(a)
            rows.append((method, fold, a))
        if method == "baseline":
            base_folds = aucs
            summaries.append(ev.summarize(aucs, method))
        else:
            summaries.append(ev.summarize(aucs, method, baseline=base_folds))
    ev.write_results_csv(root / "results.csv", rows)
    ev.write_summary_csv(root / "summary.csv", summaries)
    return ["results.csv", "summary.csv"]


STAGE_FUNCS = {
    "synth": stage_synth, "extract": stage_extract, "experts": stage_experts, "gate": stage_gate,
    "ensemble": stage_ensemble, "stage4": stage_stage4, "evaluate": stage_evaluate,
}


def _inputs_for(ledger: RunLedger, stage: str) -> dict[str, str]:
    inputs = {}
    for s in STAGES[: STAGES.index(stage)]:
        if s in ledger.stages:
            inputs.update(ledger.stages[s].outputs)
    return inputs


@dataclass
class PipelineRun:
    ran: list[str]
    skipped: list[str]


def run_stages(cfg: RunConfig, stages=STAGES, resume: bool = True) -> PipelineRun:
    """Run ``stages`` in order, skipping those whose ledger entry is still current."""
    root = Path(cfg.out)
    root.mkdir(parents=True, exist_ok=True)
    ledger = RunLedger.load(root)
    config_hash = hash_text(cfg.fingerprint())
    ran, skipped = [], []
    forced = not resume
    for stage in STAGES:
        if stage not in stages:
            continue
        inputs = _inputs_for(ledger, stage)
        if not forced:
            for s in STAGES[: STAGES.index(stage)]:
                rec = ledger.stages.get(s)
                if rec is None or not ledger.is_current(s, config_hash, _inputs_for(ledger, s)):
                    raise StageError(stage, DataError(f"requires a current {s} stage; run it first"))
        if not forced and ledger.is_current(stage, config_hash, inputs):
            skipped.append(stage)
            log.info("stage %s up to date", stage)
        else:
            started = time.perf_counter()
            log.info("stage %s running", stage)
            try:
                outputs = STAGE_FUNCS[stage](cfg, root)
            except Exception as exc:
                raise StageError(stage, exc) from exc
            ledger.record(stage, config_hash, inputs, outputs, started)
            ran.append(stage)
            forced = True
        if stage == cfg.stop_after:
            break
    return PipelineRun(ran, skipped)
