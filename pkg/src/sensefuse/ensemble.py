"""Joint-model orchestration: static fold plan, per-fold leakage-free
artifacts, cross-validated candidate selection per construct, modality
fusion, the proxy-target second pass, and the serializable prediction bundle.

The same fused-matrix construction code serves training, validation
prediction, and the standalone predict command, so replaying a serialized
bundle reproduces the run's validation predictions exactly.
"""

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import (
    ConstructId,
    ModalityKind,
    PipelineConfig,
    PROXY_CONSTRUCTS,
    clamp_to_range,
)
from .errors import (
    EmptyBlockWarning,
    EmptyFusion,
    EmptySeries,
    NoUsableFeatures,
    SensefuseError,
    TooFewParticipants,
    VersionMismatch,
)
from .evaluation import MonotoneComposite, smape, tau_or_nan
from .features import build_summary_blocks
from .hon import HonFeaturizer
from .impute import CohortImputer, ImputePolicy
from .ingest import FeatureMatrix, Universe
from .models import (
    CandidateSpec,
    component_from_dict,
    component_to_dict,
)
from .models import fit as fit_component
from .reduce import PrincipalComponents, SelectionMask, select_top_k

BUNDLE_VERSION = 1

SELECTION_MODALITIES = (ModalityKind.WEARABLE, ModalityKind.PHONE_AGENT,
                        ModalityKind.BEACON, ModalityKind.HEART_RATE_DERIVED)
# fixed fusion order per block
FUSION_ORDER = (ModalityKind.WEARABLE, ModalityKind.PHONE_AGENT,
                ModalityKind.BEACON, ModalityKind.SOCIAL_MEDIA,
                ModalityKind.HON_HEART, ModalityKind.HON_STRESS,
                ModalityKind.HEART_RATE_DERIVED)

PROXY_PREFIX = "proxy."


# ---------------------------------------------------------------------------
# Fold plan and splits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldPlan:
    """Static partition of the training participants into K folds."""

    n_folds: int
    assignment: tuple  # ((pid, fold), ...) sorted by pid
    static: bool = True

    def fold_of(self, pid: str) -> int:
        return dict(self.assignment)[pid]

    def members(self, fold: int) -> list:
        return [p for p, f in self.assignment if f == fold]


def make_fold_plan(participants, n_folds: int, seed: int) -> FoldPlan:
    """Seeded shuffle then round-robin; fold sizes differ by at most one."""
    pids = sorted(participants)
    if len(pids) < n_folds:
        raise TooFewParticipants(f"{len(pids)} participants for {n_folds} folds")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xF07D)))
    order = rng.permutation(len(pids))
    assignment = sorted((pids[j], int(i % n_folds)) for i, j in enumerate(order))
    return FoldPlan(n_folds=n_folds, assignment=tuple(assignment))


def split_train_validation(participants, holdout_fraction: float,
                           seed: int) -> tuple[list, list]:
    pids = sorted(participants)
    n_val = int(round(holdout_fraction * len(pids)))
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5B11)))
    order = rng.permutation(len(pids))
    val = sorted(pids[j] for j in order[:n_val])
    train = sorted(pids[j] for j in order[n_val:])
    return train, val


# ---------------------------------------------------------------------------
# Per-fold target-free artifacts
# ---------------------------------------------------------------------------


def _align_columns(fm: FeatureMatrix, columns: list) -> FeatureMatrix:
    """Reindex a matrix to a stored column list; absent columns go missing."""
    index = {c: j for j, c in enumerate(fm.columns)}
    values = np.full((len(fm.participants), len(columns)), np.nan)
    for j, col in enumerate(columns):
        src = index.get(col)
        if src is not None:
            values[:, j] = fm.values[:, src]
    return FeatureMatrix(fm.modality, list(fm.participants), list(columns), values)


def _wearable_signal(universe: Universe, signal: str) -> dict:
    sset = universe.series.get(ModalityKind.WEARABLE, {})
    return {pid: ts for (pid, sig), ts in sset.items() if sig == signal}


class FoldPipeline:
    """Everything fitted per fold that does not look at any target: sequence
    featurizers, imputation statistics, and the social projection."""

    def __init__(self, config: PipelineConfig):
        self.config = config

    def fit(self, universe: Universe, summary_blocks: dict,
            participants: list, train_pids: list):
        cfg = self.config
        self.participants_ = list(participants)
        row_of = {p: i for i, p in enumerate(participants)}
        train_index = np.array([row_of[p] for p in train_pids], dtype=int)
        train_set = set(train_pids)

        blocks = {m: fm.subset(participants) for m, fm in summary_blocks.items()}

        self.hon_ = {}
        for modality, signal in ((ModalityKind.HON_HEART, "heart_rate"),
                                 (ModalityKind.HON_STRESS, "stress")):
            series = _wearable_signal(universe, signal)
            train_series = {p: ts for p, ts in series.items() if p in train_set}
            try:
                featurizer = HonFeaturizer(
                    orders=cfg.hon_orders, n_bins=cfg.hon_bins,
                    slot_minutes=cfg.slot_minutes,
                    n_components=cfg.hon_pca_components).fit(train_series)
            except EmptySeries:
                warnings.warn(f"{modality.value}: no usable training series",
                              category=EmptyBlockWarning, stacklevel=2)
                continue
            self.hon_[modality] = featurizer
            emb = featurizer.transform(series, participants)
            names = [f"{modality.value}.pc{j}" for j in range(emb.shape[1])]
            blocks[modality] = FeatureMatrix(modality, list(participants),
                                             names, emb)

        policy = ImputePolicy(
            default_strategy=cfg.default_strategy,
            overrides=cfg.imputation_policy,
            full_modality_strategy=cfg.full_modality_strategy,
            donor=cfg.donor_modality,
            k_clusters=cfg.k_clusters,
        )
        self.imputer_ = CohortImputer(policy=policy, seed=cfg.seed)
        self.imputer_.fit(blocks, train_index)
        self.block_columns_ = {m: list(fm.columns) for m, fm in blocks.items()}
        completed = self.imputer_.transform(blocks)

        self.social_pca_ = None
        if ModalityKind.SOCIAL_MEDIA in completed:
            social = completed[ModalityKind.SOCIAL_MEDIA]
            k = min(cfg.social_pca_components, len(train_index) - 1,
                    len(social.columns))
            if k >= 1:
                self.social_pca_ = PrincipalComponents(n_components=k).fit(
                    social.values[train_index])

        self._finish(completed)
        return self

    def _finish(self, completed: dict):
        """Split imputed blocks into selection inputs and pass-through blocks."""
        self.selection_blocks_ = {}
        self.pca_blocks_ = {}
        for modality in SELECTION_MODALITIES:
            if modality in completed:
                fm = completed[modality]
                self.selection_blocks_[modality] = (list(fm.columns), fm.values)
        if self.social_pca_ is not None:
            scores = self.social_pca_.transform(
                completed[ModalityKind.SOCIAL_MEDIA].values)
            names = [f"social.pc{j:03d}" for j in range(scores.shape[1])]
            self.pca_blocks_[ModalityKind.SOCIAL_MEDIA] = (names, scores)
        for modality in (ModalityKind.HON_HEART, ModalityKind.HON_STRESS):
            if modality in completed:
                fm = completed[modality]
                self.pca_blocks_[modality] = (list(fm.columns), fm.values)

    def apply(self, universe: Universe, participants: list):
        """Recompute blocks for arbitrary participants with frozen statistics."""
        summary = build_summary_blocks(universe, self.config)
        blocks = {}
        for modality, columns in self.block_columns_.items():
            if modality in (ModalityKind.HON_HEART, ModalityKind.HON_STRESS):
                featurizer = self.hon_.get(modality)
                signal = ("heart_rate" if modality is ModalityKind.HON_HEART
                          else "stress")
                series = _wearable_signal(universe, signal)
                emb = (featurizer.transform(series, participants)
                       if featurizer is not None
                       else np.full((len(participants), len(columns)), np.nan))
                blocks[modality] = FeatureMatrix(modality, list(participants),
                                                 columns, emb)
            else:
                fm = summary.get(modality)
                if fm is None:
                    fm = FeatureMatrix(modality, list(participants), columns,
                                       np.full((len(participants), len(columns)),
                                               np.nan))
                else:
                    fm = _align_columns(fm.subset(participants), columns)
                blocks[modality] = fm
        completed = self.imputer_.transform(blocks)
        clone = FoldPipeline(self.config)
        clone.participants_ = list(participants)
        clone.hon_ = self.hon_
        clone.imputer_ = self.imputer_
        clone.block_columns_ = self.block_columns_
        clone.social_pca_ = self.social_pca_
        clone._finish(completed)
        return clone

    def state(self) -> dict:
        return {
            "block_columns": {m.value: cols
                              for m, cols in self.block_columns_.items()},
            "hon": {m.value: f.state() for m, f in self.hon_.items()},
            "imputer": self.imputer_.state(),
            "social_pca": (self.social_pca_.state()
                           if self.social_pca_ is not None else None),
        }

    @classmethod
    def from_state(cls, state: dict, config: PipelineConfig) -> "FoldPipeline":
        pipe = cls(config)
        pipe.block_columns_ = {ModalityKind(m): list(cols)
                               for m, cols in state["block_columns"].items()}
        pipe.hon_ = {ModalityKind(m): HonFeaturizer.from_state(s)
                     for m, s in state["hon"].items()}
        pipe.imputer_ = CohortImputer.from_state(state["imputer"])
        pipe.social_pca_ = (PrincipalComponents.from_state(state["social_pca"])
                            if state["social_pca"] is not None else None)
        return pipe


# ---------------------------------------------------------------------------
# Fusion
# ---------------------------------------------------------------------------


@dataclass
class FusedDesign:
    """Ordered fused feature space for one (construct, fold)."""

    names: list
    parts: list          # (part label, [names]) in fusion order
    masks: dict          # modality -> SelectionMask
    matrix_by_rows: dict = field(default_factory=dict)


def fuse(pipe: FoldPipeline, train_rows: np.ndarray, y_train: np.ndarray,
         config: PipelineConfig, proxy: tuple | None = None) -> FusedDesign:
    """Column-wise fusion in fixed modality order: per-modality top-k
    summary features, then projection blocks. Proxy columns, when given,
    are admitted only when their training-fold correlation clears a
    2.5-sigma null gate, so uninformative proxies are dropped."""
    masks = {}
    sel_parts = []  # (modality, names)
    for modality in SELECTION_MODALITIES:
        if modality not in pipe.selection_blocks_:
            continue
        names, matrix = pipe.selection_blocks_[modality]
        try:
            mask = select_top_k(matrix[train_rows], y_train, names,
                                config.top_k_per_modality,
                                config.selection_method)
        except NoUsableFeatures:
            continue
        masks[modality] = mask
        sel_parts.append((modality, mask.names))

    proxy_kept: list = []
    if proxy is not None:
        proxy_names, proxy_values = proxy
        gate = 2.5 / math.sqrt(max(train_rows.size, 1))
        try:
            mask = select_top_k(np.asarray(proxy_values)[train_rows], y_train,
                                list(proxy_names), len(proxy_names),
                                config.selection_method)
        except NoUsableFeatures:
            mask = None
        if mask is not None:
            admitted = {nm for nm, score in mask.entries if abs(score) >= gate}
            proxy_kept = [nm for nm in proxy_names if nm in admitted]
            masks["proxy"] = SelectionMask(
                entries=[e for e in mask.entries if e[0] in admitted],
                method=mask.method)

    parts = []
    for modality in FUSION_ORDER:
        for m, nms in sel_parts:
            if m is modality:
                parts.append((modality.value, nms))
        if modality in pipe.pca_blocks_:
            names, _ = pipe.pca_blocks_[modality]
            parts.append((modality.value, list(names)))
    if proxy_kept:
        parts.append(("proxy", proxy_kept))

    names = [nm for _, nms in parts for nm in nms]
    if not names:
        raise EmptyFusion("every block is empty for this construct")
    return FusedDesign(names=names, parts=parts, masks=masks)


def _columns_from_parts(pipe: FoldPipeline, parts, rows: np.ndarray,
                        proxy: tuple | None = None) -> np.ndarray:
    """Materialize named columns (in part order) for the given rows."""
    blocks = {}
    for modality, (names, matrix) in pipe.selection_blocks_.items():
        blocks[modality.value] = ({nm: j for j, nm in enumerate(names)}, matrix)
    for modality, (names, matrix) in pipe.pca_blocks_.items():
        blocks[modality.value] = ({nm: j for j, nm in enumerate(names)}, matrix)
    if proxy is not None:
        proxy_names, proxy_values = proxy
        blocks["proxy"] = ({nm: j for j, nm in enumerate(proxy_names)},
                           np.asarray(proxy_values))
    cols = []
    for label, nms in parts:
        index, matrix = blocks[label]
        for nm in nms:
            cols.append(matrix[rows, index[nm]])
    return np.column_stack(cols) if cols else np.empty((rows.size, 0))


def design_matrix(pipe: FoldPipeline, design: FusedDesign, rows: np.ndarray,
                  proxy: tuple | None = None) -> np.ndarray:
    return _columns_from_parts(pipe, design.parts, rows, proxy)


# ---------------------------------------------------------------------------
# Candidate fitting over one fused design
# ---------------------------------------------------------------------------


@dataclass
class ConstructModel:
    """Fitted model for one construct: either a single component over the
    fused matrix or one component per part with averaged predictions."""

    fusion_mode: str
    design_parts: list
    names: list
    components: list  # [(part label or "", names, TrainedComponent)]
    uses_proxy: bool = False

    def predict_rows(self, pipe: FoldPipeline, rows: np.ndarray,
                     proxy: tuple | None = None) -> np.ndarray:
        if self.fusion_mode == "feature":
            _, names, component = self.components[0]
            X = _columns_from_parts(pipe, self.design_parts, rows, proxy)
            return component.predict(X, names)
        preds = []
        for label, names, component in self.components:
            X = _columns_from_parts(pipe, [(label, names)], rows, proxy)
            preds.append(component.predict(X, names))
        return np.mean(preds, axis=0)

    def to_dict(self) -> dict:
        return {
            "fusion_mode": self.fusion_mode,
            "design_parts": [[label, list(nms)] for label, nms in self.design_parts],
            "names": list(self.names),
            "uses_proxy": self.uses_proxy,
            "components": [
                {"part": label, "names": list(nms),
                 "component": component_to_dict(component)}
                for label, nms, component in self.components
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ConstructModel":
        return cls(
            fusion_mode=doc["fusion_mode"],
            design_parts=[(label, list(nms)) for label, nms in doc["design_parts"]],
            names=list(doc["names"]),
            uses_proxy=bool(doc["uses_proxy"]),
            components=[(c["part"], list(c["names"]),
                         component_from_dict(c["component"]))
                        for c in doc["components"]],
        )


def _fit_candidate(spec: CandidateSpec, pipe: FoldPipeline, design: FusedDesign,
                   train_rows: np.ndarray, y_train: np.ndarray,
                   config: PipelineConfig,
                   proxy: tuple | None = None) -> ConstructModel:
    if config.fusion_mode == "feature":
        X = design_matrix(pipe, design, train_rows, proxy)
        component = fit_component(spec, X, y_train, design.names, config.seed)
        return ConstructModel("feature", design.parts, design.names,
                              [("", design.names, component)],
                              uses_proxy=any(p == "proxy" for p, _ in design.parts))
    components = []
    for label, nms in design.parts:
        X = _columns_from_parts(pipe, [(label, nms)], train_rows, proxy)
        try:
            component = fit_component(spec, X, y_train, nms, config.seed)
        except SensefuseError:
            continue
        components.append((label, nms, component))
    if not components:
        raise EmptyFusion("no per-modality component could be fitted")
    return ConstructModel("per_modality_mean", design.parts, design.names,
                          components,
                          uses_proxy=any(p == "proxy" for p, _ in design.parts))


# ---------------------------------------------------------------------------
# Per-construct cross-validated selection
# ---------------------------------------------------------------------------


@dataclass
class FoldRecord:
    fold: int
    tau: float
    smape: float
    baseline_smape: float
    gemm_tau: float


@dataclass
class ConstructResult:
    construct: ConstructId
    kind: str
    selected: CandidateSpec | None = None
    mean_score: float = -math.inf
    fold_records: list = field(default_factory=list)
    candidate_log: list = field(default_factory=list)  # (label, fold, score, smape)
    oof: dict = field(default_factory=dict)       # pid -> clamped prediction
    validation: dict = field(default_factory=dict)
    final_model: ConstructModel | None = None
    final_masks: dict = field(default_factory=dict)
    skipped: str | None = None


def _score(kind: str, preds: np.ndarray, truth: np.ndarray) -> float:
    if kind == "classification":
        return float(np.mean(preds == truth))
    return tau_or_nan(preds, truth)


def _clamp_all(construct, values: np.ndarray) -> np.ndarray:
    return np.array([clamp_to_range(construct, float(v)) for v in values])


def _run_construct(cid: ConstructId, config: PipelineConfig,
                   registry: dict, fold_pipes: list, final_pipe: FoldPipeline,
                   plan: FoldPlan, participants: list, train_pids: list,
                   val_pids: list, y_all: np.ndarray,
                   proxy_all: tuple | None = None) -> ConstructResult:
    construct = registry[cid]
    kind = construct.kind
    result = ConstructResult(construct=cid, kind=kind)
    row_of = {p: i for i, p in enumerate(participants)}
    fold_of = dict(plan.assignment)

    y_train_pids = [p for p in train_pids if math.isfinite(y_all[row_of[p]])]
    if len(y_train_pids) < max(plan.n_folds, 3):
        result.skipped = f"only {len(y_train_pids)} training targets"
        return result

    specs = [CandidateSpec.make(fam, params)
             for fam, params in config.candidate_specs(kind)]
    scores = {s: [] for s in specs}
    smapes = {s: [] for s in specs}
    fold_preds = {s: {} for s in specs}  # spec -> {pid: raw prediction}

    for k in range(plan.n_folds):
        pipe = fold_pipes[k]
        fit_pids = [p for p in y_train_pids if fold_of[p] != k]
        test_pids = [p for p in train_pids if fold_of[p] == k]
        test_scored = [p for p in test_pids if math.isfinite(y_all[row_of[p]])]
        if len(fit_pids) < 3 or not test_pids:
            continue
        fit_rows = np.array([row_of[p] for p in fit_pids])
        test_rows = np.array([row_of[p] for p in test_pids])
        scored_rows = np.array([row_of[p] for p in test_scored])
        y_fit = y_all[fit_rows]
        y_scored = y_all[scored_rows]

        try:
            design = fuse(pipe, fit_rows, y_fit, config, proxy_all)
        except (EmptyFusion, NoUsableFeatures):
            result.candidate_log.append(("<fusion>", k, -math.inf, math.nan))
            continue

        baseline = float(y_fit.mean())
        base_smape = smape(np.full(y_scored.size, baseline), y_scored) \
            if y_scored.size else math.nan

        gemm_val = math.nan
        if config.gemm_top_features > 0 and kind == "regression" \
                and y_scored.size >= 2:
            top = design.names[:0]
            ranked = sorted(
                (entry for mask in design.masks.values()
                 for entry in mask.entries),
                key=lambda e: (-abs(e[1]), e[0]))
            top = []
            for nm, _ in ranked:
                if nm in design.names and nm not in top:
                    top.append(nm)
                if len(top) >= config.gemm_top_features:
                    break
            if top:
                Xg_fit = _named_columns(pipe, design, fit_rows, top, proxy_all)
                Xg_te = _named_columns(pipe, design, scored_rows, top, proxy_all)
                try:
                    composite = MonotoneComposite(
                        restarts=config.gemm_restarts, iters=config.gemm_iters,
                        seed=config.seed).fit(Xg_fit, y_fit)
                    gemm_val = tau_or_nan(composite.predict(Xg_te), y_scored)
                except SensefuseError:
                    gemm_val = math.nan

        for spec in specs:
            try:
                model = _fit_candidate(spec, pipe, design, fit_rows, y_fit,
                                       config, proxy_all)
                raw = model.predict_rows(pipe, test_rows, proxy_all)
            except (SensefuseError, np.linalg.LinAlgError):
                result.candidate_log.append((spec.label(), k, -math.inf,
                                             math.nan))
                continue
            clamped = _clamp_all(construct, raw)
            for pid, value in zip(test_pids, clamped):
                fold_preds[spec][pid] = float(value)
            if y_scored.size >= 2:
                scored_mask = np.isin(test_rows, scored_rows)
                s = _score(kind, clamped[scored_mask], y_scored)
                sm = smape(clamped[scored_mask], y_scored)
            else:
                s, sm = math.nan, math.nan
            scores[spec].append((k, s))
            smapes[spec].append(sm)
            result.candidate_log.append((spec.label(), k, s, sm))

        result.fold_records.append(FoldRecord(
            fold=k, tau=math.nan, smape=math.nan,
            baseline_smape=base_smape, gemm_tau=gemm_val))

    def mean_defined(vals):
        vals = [v for v in vals if v is not None and math.isfinite(v)]
        return float(np.mean(vals)) if vals else None

    ranking = []
    for spec in specs:
        taus = mean_defined([s for _, s in scores[spec]])
        if taus is None:
            continue
        sm = mean_defined(smapes[spec])
        ranking.append((-taus, sm if sm is not None else math.inf,
                        spec.label(), spec))
    if not ranking:
        result.skipped = "no candidate produced a defined score"
        return result
    ranking.sort(key=lambda r: (r[0], r[1], r[2]))
    selected = ranking[0][3]
    result.selected = selected
    result.mean_score = -ranking[0][0]

    # out-of-fold predictions of the selected candidate, plus per-fold metrics
    result.oof = dict(fold_preds[selected])
    for record in result.fold_records:
        k = record.fold
        test_scored = [p for p in train_pids
                       if fold_of[p] == k and math.isfinite(y_all[row_of[p]])
                       and p in result.oof]
        if len(test_scored) >= 2:
            preds = np.array([result.oof[p] for p in test_scored])
            truth = np.array([y_all[row_of[p]] for p in test_scored])
            record.tau = tau_or_nan(preds, truth)
            record.smape = smape(preds, truth)

    # refit on all training folds and predict the validation set
    fit_rows = np.array([row_of[p] for p in y_train_pids])
    y_fit = y_all[fit_rows]
    try:
        design = fuse(final_pipe, fit_rows, y_fit, config, proxy_all)
        result.final_model = _fit_candidate(selected, final_pipe, design,
                                            fit_rows, y_fit, config, proxy_all)
        result.final_masks = {
            (m.value if isinstance(m, ModalityKind) else m): mask
            for m, mask in design.masks.items()}
    except (SensefuseError, np.linalg.LinAlgError) as exc:
        result.skipped = f"final refit failed: {exc}"
        return result
    if val_pids:
        val_rows = np.array([row_of[p] for p in val_pids])
        raw = result.final_model.predict_rows(final_pipe, val_rows, proxy_all)
        clamped = _clamp_all(construct, raw)
        result.validation = {p: float(v) for p, v in zip(val_pids, clamped)}
    return result


def _named_columns(pipe: FoldPipeline, design: FusedDesign, rows: np.ndarray,
                   names: list, proxy: tuple | None) -> np.ndarray:
    full = design_matrix(pipe, design, rows, proxy)
    index = {nm: j for j, nm in enumerate(design.names)}
    return full[:, [index[nm] for nm in names]]


# ---------------------------------------------------------------------------
# The joint run
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    config: PipelineConfig
    participants: list
    train_pids: list
    val_pids: list
    plan: FoldPlan
    constructs: dict = field(default_factory=dict)  # ConstructId -> ConstructResult
    proxy_pass_ran: bool = False
    final_pipe: FoldPipeline | None = None
    fold_pipes: list = field(default_factory=list)


def _proxy_features(result_by_cid: dict, participants: list,
                    train_pids: list, val_pids: list,
                    registry: dict) -> tuple | None:
    """Out-of-fold proxies for training rows; final-model predictions for
    validation rows. Returns (names, matrix aligned to participants)."""
    names, columns = [], []
    row_of = {p: i for i, p in enumerate(participants)}
    for cid in PROXY_CONSTRUCTS:
        res = result_by_cid.get(cid)
        if res is None or res.skipped or res.selected is None:
            continue
        col = np.full(len(participants), np.nan)
        for pid, value in res.oof.items():
            col[row_of[pid]] = value
        for pid, value in res.validation.items():
            col[row_of[pid]] = value
        train_rows = [row_of[p] for p in train_pids]
        if np.isnan(col[train_rows]).any():
            # rows the CV never covered fall back to the mean of the
            # training-side proxies only (validation values stay out)
            fill = float(np.nanmean(col[train_rows]))
            col = np.where(np.isnan(col), fill, col)
        names.append(PROXY_PREFIX + cid.value)
        columns.append(col)
    if not names:
        return None
    return names, np.column_stack(columns)


def run_joint_model(universe: Universe, config: PipelineConfig) -> RunResult:
    """Per-construct candidate selection over the static fold plan, then the
    proxy-target second pass (unless disabled)."""
    registry = config.registry()
    participants = sorted(universe.participants)
    if universe.ground_truth is None:
        raise SensefuseError("run_joint_model needs a ground-truth table")
    gt = universe.ground_truth.subset(participants)

    train_pids, val_pids = split_train_validation(
        participants, config.holdout_fraction, config.seed)
    plan = make_fold_plan(train_pids, config.folds, config.seed)

    summary_blocks = build_summary_blocks(universe, config)
    if not summary_blocks and ModalityKind.WEARABLE not in universe.series:
        raise EmptyFusion("no modality data present")

    fold_pipes = []
    for k in range(plan.n_folds):
        fit_pids = [p for p in train_pids if plan.fold_of(p) != k]
        fold_pipes.append(FoldPipeline(config).fit(
            universe, summary_blocks, participants, fit_pids))
    final_pipe = FoldPipeline(config).fit(
        universe, summary_blocks, participants, train_pids)

    def run_pass(cids, proxy):
        out = {}
        def job(cid):
            y_all = gt.column(cid) if cid in gt.values else \
                np.full(len(participants), np.nan)
            return _run_construct(cid, config, registry, fold_pipes,
                                  final_pipe, plan, participants, train_pids,
                                  val_pids, y_all, proxy)
        if config.workers > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                futures = {cid: pool.submit(job, cid) for cid in cids}
            for cid in cids:
                out[cid] = futures[cid].result()
        else:
            for cid in cids:
                out[cid] = job(cid)
        return out

    result = RunResult(config=config, participants=participants,
                       train_pids=train_pids, val_pids=val_pids, plan=plan,
                       final_pipe=final_pipe, fold_pipes=fold_pipes)
    result.constructs = run_pass(list(config.constructs), None)

    if not config.skip_proxy_pass:
        proxy = _proxy_features(result.constructs, participants, train_pids,
                                val_pids, registry)
        if proxy is not None:
            rerun = [cid for cid in config.constructs
                     if cid not in PROXY_CONSTRUCTS]
            second = run_pass(rerun, proxy)
            for cid, res in second.items():
                if res.skipped is None:
                    result.constructs[cid] = res
            result.proxy_pass_ran = True
    return result


def proxy_ground_truth_pass(universe: Universe, config: PipelineConfig,
                            first_pass: RunResult) -> RunResult:
    """Standalone second pass over an existing first-pass result (the main
    entry point runs it automatically unless skip_proxy_pass is set)."""
    registry = config.registry()
    participants = first_pass.participants
    gt = universe.ground_truth.subset(participants)
    proxy = _proxy_features(first_pass.constructs, participants,
                            first_pass.train_pids, first_pass.val_pids,
                            registry)
    if proxy is None:
        return first_pass
    fold_pipes = [FoldPipeline(config).fit(
        universe, build_summary_blocks(universe, config), participants,
        [p for p in first_pass.train_pids if first_pass.plan.fold_of(p) != k])
        for k in range(first_pass.plan.n_folds)]
    for cid in config.constructs:
        if cid in PROXY_CONSTRUCTS:
            continue
        y_all = gt.column(cid) if cid in gt.values else \
            np.full(len(participants), np.nan)
        res = _run_construct(cid, config, registry, fold_pipes,
                             first_pass.final_pipe, first_pass.plan,
                             participants, first_pass.train_pids,
                             first_pass.val_pids, y_all, proxy)
        if res.skipped is None:
            first_pass.constructs[cid] = res
    first_pass.proxy_pass_ran = True
    return first_pass


# ---------------------------------------------------------------------------
# Prediction bundle (serialized run artifacts)
# ---------------------------------------------------------------------------


@dataclass
class PredictionBundle:
    config: PipelineConfig
    pipeline: FoldPipeline
    models: dict            # ConstructId -> ConstructModel
    ranges: dict            # ConstructId -> (lo, hi)
    config_hash: str

    def predict(self, universe: Universe, constructs=None) -> dict:
        """Per-construct clamped predictions for every participant in the
        given universe; proxy-consuming models get proxy columns from the
        bundled proxy models first."""
        registry = self.config.registry()
        participants = sorted(universe.participants)
        rows = np.arange(len(participants))
        pipe = self.pipeline.apply(universe, participants)
        if constructs is None:
            constructs = list(self.models)

        proxy = None
        proxy_names, proxy_cols = [], []
        for cid in PROXY_CONSTRUCTS:
            model = self.models.get(cid)
            if model is None:
                continue
            raw = model.predict_rows(pipe, rows, None)
            clamped = _clamp_all(registry[cid], raw)
            proxy_names.append(PROXY_PREFIX + cid.value)
            proxy_cols.append(clamped)
        if proxy_names:
            proxy = (proxy_names, np.column_stack(proxy_cols))

        out = {}
        for cid in constructs:
            model = self.models.get(cid)
            if model is None:
                continue
            raw = model.predict_rows(pipe, rows, proxy)
            out[cid] = (participants, _clamp_all(registry[cid], raw))
        return out

    def to_dict(self) -> dict:
        return {
            "format_version": BUNDLE_VERSION,
            "config_hash": self.config_hash,
            "seed": self.config.seed,
            "pipeline": self.pipeline.state(),
            "ranges": {cid.value: list(self.ranges[cid]) for cid in self.ranges},
            "models": {cid.value: model.to_dict()
                       for cid, model in self.models.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict, config: PipelineConfig) -> "PredictionBundle":
        if doc.get("format_version") != BUNDLE_VERSION:
            raise VersionMismatch(
                f"bundle format {doc.get('format_version')} != {BUNDLE_VERSION}")
        return cls(
            config=config,
            pipeline=FoldPipeline.from_state(doc["pipeline"], config),
            models={ConstructId(c): ConstructModel.from_dict(m)
                    for c, m in doc["models"].items()},
            ranges={ConstructId(c): tuple(v) for c, v in doc["ranges"].items()},
            config_hash=doc["config_hash"],
        )


def build_bundle(result: RunResult) -> PredictionBundle:
    registry = result.config.registry()
    models = {cid: res.final_model for cid, res in result.constructs.items()
              if res.final_model is not None and res.skipped is None}
    ranges = {cid: (registry[cid].lo, registry[cid].hi) for cid in models}
    return PredictionBundle(config=result.config, pipeline=result.final_pipe,
                            models=models, ranges=ranges,
                            config_hash=result.config.config_hash())
