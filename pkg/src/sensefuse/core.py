"""Domain types, configuration, construct registry, and range post-processing.

Everything downstream shares these types. Config objects are frozen after
validation so they can be handed to parallel workers without locks.
"""

import dataclasses
import enum
import hashlib
import json
import math
from dataclasses import dataclass, field

import yaml

from .errors import InvalidConfig, NonFiniteValue


class ConstructId(str, enum.Enum):
    """The 19 survey-derived prediction targets."""

    IRB = "irb"
    ITP = "itp"
    OCB = "ocb"
    INTERPERSONAL_DEVIANCE = "interpersonal_deviance"
    ORGANIZATIONAL_DEVIANCE = "organizational_deviance"
    ABSTRACTION = "abstraction"
    VOCABULARY = "vocabulary"
    EXTRAVERSION = "extraversion"
    AGREEABLENESS = "agreeableness"
    CONSCIENTIOUSNESS = "conscientiousness"
    NEUROTICISM = "neuroticism"
    OPENNESS = "openness"
    POSITIVE_AFFECT = "positive_affect"
    NEGATIVE_AFFECT = "negative_affect"
    ANXIETY = "anxiety"
    ALCOHOL = "alcohol"
    TOBACCO = "tobacco"
    PHYSICAL_ACTIVITY = "physical_activity"
    SLEEP = "sleep"


class ModalityKind(str, enum.Enum):
    WEARABLE = "wearable"
    PHONE_AGENT = "phone_agent"
    BEACON = "beacon"
    SOCIAL_MEDIA = "social_media"
    HON_HEART = "hon_heart"
    HON_STRESS = "hon_stress"
    HEART_RATE_DERIVED = "heart_rate_derived"


@dataclass(frozen=True)
class Construct:
    """One prediction target with its instrument range.

    kind is "regression" unless the config opts the construct into
    classification mode.
    """

    id: ConstructId
    lo: float
    hi: float
    kind: str = "regression"

    def __post_init__(self):
        if not self.lo < self.hi:
            raise InvalidConfig(f"construct_ranges.{self.id.value}", "lo must be < hi")
        if self.kind not in ("regression", "classification"):
            raise InvalidConfig(f"constructs.{self.id.value}.kind", "unknown kind")


# Instrument ranges are not stated in numeric form anywhere upstream; these
# defaults follow the published scoring conventions of each instrument
# (per-item frequency/agreement scales, sum scores for PANAS-X/STAI/AUDIT/PSQI)
# and every one of them can be overridden from the config file.
DEFAULT_RANGES: dict[ConstructId, tuple[float, float]] = {
    ConstructId.IRB: (1.0, 7.0),
    ConstructId.ITP: (1.0, 5.0),
    ConstructId.OCB: (1.0, 5.0),
    ConstructId.INTERPERSONAL_DEVIANCE: (1.0, 7.0),
    ConstructId.ORGANIZATIONAL_DEVIANCE: (1.0, 7.0),
    ConstructId.ABSTRACTION: (0.0, 25.0),
    ConstructId.VOCABULARY: (0.0, 40.0),
    ConstructId.EXTRAVERSION: (1.0, 5.0),
    ConstructId.AGREEABLENESS: (1.0, 5.0),
    ConstructId.CONSCIENTIOUSNESS: (1.0, 5.0),
    ConstructId.NEUROTICISM: (1.0, 5.0),
    ConstructId.OPENNESS: (1.0, 5.0),
    ConstructId.POSITIVE_AFFECT: (10.0, 50.0),
    ConstructId.NEGATIVE_AFFECT: (10.0, 50.0),
    ConstructId.ANXIETY: (20.0, 80.0),
    ConstructId.ALCOHOL: (0.0, 40.0),
    ConstructId.TOBACCO: (0.0, 100.0),
    ConstructId.PHYSICAL_ACTIVITY: (0.0, 20000.0),
    ConstructId.SLEEP: (0.0, 21.0),
}

JOB_CONSTRUCTS: tuple[ConstructId, ...] = (
    ConstructId.IRB,
    ConstructId.ITP,
    ConstructId.OCB,
    ConstructId.INTERPERSONAL_DEVIANCE,
    ConstructId.ORGANIZATIONAL_DEVIANCE,
)

# Established predictors of job performance used as the theory-driven
# comparison set: the five personality traits plus the two cognitive scores.
THEORY_CONSTRUCTS: tuple[ConstructId, ...] = (
    ConstructId.EXTRAVERSION,
    ConstructId.AGREEABLENESS,
    ConstructId.CONSCIENTIOUSNESS,
    ConstructId.NEUROTICISM,
    ConstructId.OPENNESS,
    ConstructId.ABSTRACTION,
    ConstructId.VOCABULARY,
)

# Constructs whose out-of-fold predictions are fed back as proxy features
# for every other construct on the second modeling pass.
PROXY_CONSTRUCTS: tuple[ConstructId, ...] = (
    ConstructId.ALCOHOL,
    ConstructId.OCB,
)


def construct_registry(
    ranges: dict[ConstructId, tuple[float, float]] | None = None,
    classification: tuple[ConstructId, ...] = (),
) -> dict[ConstructId, Construct]:
    """Build the registry of all 19 constructs, applying range overrides."""
    merged = dict(DEFAULT_RANGES)
    if ranges:
        merged.update(ranges)
    registry = {}
    for cid in ConstructId:
        lo, hi = merged[cid]
        kind = "classification" if cid in classification else "regression"
        registry[cid] = Construct(id=cid, lo=float(lo), hi=float(hi), kind=kind)
    return registry


def clamp_to_range(construct: Construct, value: float) -> float:
    """Clamp a prediction into the construct's prescribed range."""
    if not math.isfinite(value):
        raise NonFiniteValue(f"cannot clamp non-finite value for {construct.id.value}")
    return min(construct.hi, max(construct.lo, value))


# Plausibility rules used by the ingest outlier screen, keyed by signal name.
# Values outside [lo, hi] are rejected with a reason, never silently kept.
DEFAULT_SCREEN_RULES: dict[str, tuple[float, float]] = {
    "heart_rate": (25.0, 250.0),
    "stress": (0.0, 100.0),
    "sleep_minutes": (0.0, 1440.0),
    "commute_minutes": (0.0, 1440.0),
    "steps": (0.0, 200000.0),
}

DEFAULT_CANDIDATES: tuple[tuple[str, dict], ...] = (
    ("ols", {}),
    ("ridge", {"alpha": 1.0}),
    ("ridge", {"alpha": 10.0}),
    ("ridge_cv", {}),
    ("lasso", {"alpha": 0.05}),
    ("bayesian_ridge", {}),
    ("kernel_svr_linear", {"alpha": 1.0}),
    ("kernel_svr_rbf", {"alpha": 1.0}),
    ("kernel_svr_poly", {"alpha": 1.0, "degree": 2}),
    ("cart", {"min_leaf": 5}),
    ("random_forest", {"n_trees": 100, "min_leaf": 5}),
)

DEFAULT_CLASS_CANDIDATES: tuple[tuple[str, dict], ...] = (
    ("knn_class", {"k": 5}),
    ("linear_svm_class", {}),
    ("rbf_svm_class", {}),
    ("cart_class", {"min_leaf": 5}),
    ("rf_class", {"n_trees": 100, "min_leaf": 5}),
)


@dataclass(frozen=True)
class PipelineConfig:
    """Validated run configuration with every default resolved.

    Construct instances through :func:`validate_config`; the constructor
    itself performs no checking.
    """

    seed: int = 0
    folds: int = 5
    holdout_fraction: float = 0.2
    top_k_per_modality: int = 20
    social_pca_components: int = 200
    hon_orders: tuple[int, ...] = (1, 2, 3, 4, 5)
    hon_pca_components: int = 5
    hon_bins: int = 3
    slot_minutes: int = 30
    selection_method: str = "spearman"
    smape_definition: str = "bounded-0-200"
    timezone_offset_hours: float = 0.0
    # impute
    imputation_policy: tuple[tuple[str, str], ...] = ()  # (modality|column, strategy)
    default_strategy: str = "mean"
    full_modality_strategy: str = "cluster_cross_stream"
    donor_modality: ModalityKind = ModalityKind.WEARABLE
    k_clusters: int = 8
    # modeling
    constructs: tuple[ConstructId, ...] = tuple(ConstructId)
    classification_constructs: tuple[ConstructId, ...] = ()
    construct_ranges: tuple[tuple[ConstructId, float, float], ...] = ()
    candidates: tuple[tuple[str, tuple[tuple[str, object], ...]], ...] = tuple(
        (fam, tuple(sorted(params.items()))) for fam, params in DEFAULT_CANDIDATES
    )
    class_candidates: tuple[tuple[str, tuple[tuple[str, object], ...]], ...] = tuple(
        (fam, tuple(sorted(params.items()))) for fam, params in DEFAULT_CLASS_CANDIDATES
    )
    fusion_mode: str = "feature"
    skip_proxy_pass: bool = False
    workers: int = 1
    # evaluation
    gemm_restarts: int = 20
    gemm_iters: int = 200
    gemm_top_features: int = 5
    bootstrap_samples: int = 2000
    screen_rules: tuple[tuple[str, float, float], ...] = tuple(
        (name, lo, hi) for name, (lo, hi) in sorted(DEFAULT_SCREEN_RULES.items())
    )

    def registry(self) -> dict[ConstructId, Construct]:
        ranges = {cid: (lo, hi) for cid, lo, hi in self.construct_ranges}
        return construct_registry(ranges, self.classification_constructs)

    def candidate_specs(self, kind: str) -> list[tuple[str, dict]]:
        grid = self.class_candidates if kind == "classification" else self.candidates
        return [(fam, dict(params)) for fam, params in grid]

    def screen_rule_map(self) -> dict[str, tuple[float, float]]:
        return {name: (lo, hi) for name, lo, hi in self.screen_rules}

    def policy_map(self) -> dict[str, str]:
        return dict(self.imputation_policy)

    def config_hash(self) -> str:
        """Stable digest of every result-affecting field (worker count is an
        execution knob and never changes outputs)."""
        d = dataclasses.asdict(self)
        d.pop("workers", None)
        payload = json.dumps(d, sort_keys=True, default=str)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


_KNOWN_STRATEGIES = ("mean", "median", "zero", "rolling_mean", "cluster_cross_stream")


def _check(cond: bool, field_name: str, reason: str):
    if not cond:
        raise InvalidConfig(field_name, reason)


def validate_config(raw: dict | PipelineConfig | None = None) -> PipelineConfig:
    """Fill defaults and enforce every invariant; raises InvalidConfig."""
    if raw is None:
        raw = {}
    if isinstance(raw, PipelineConfig):
        raw = dataclasses.asdict(raw)
    else:
        raw = dict(raw)

    unknown = set(raw) - {f.name for f in dataclasses.fields(PipelineConfig)}
    if unknown:
        raise InvalidConfig(sorted(unknown)[0], "unknown field")

    if "hon_orders" in raw:
        raw["hon_orders"] = tuple(int(n) for n in raw["hon_orders"])
    if "constructs" in raw:
        raw["constructs"] = tuple(ConstructId(c) for c in raw["constructs"])
    if "classification_constructs" in raw:
        raw["classification_constructs"] = tuple(
            ConstructId(c) for c in raw["classification_constructs"]
        )
    if "construct_ranges" in raw:
        ranges = raw["construct_ranges"]
        if isinstance(ranges, dict):
            ranges = [(c, lo, hi) for c, (lo, hi) in sorted(ranges.items())]
        raw["construct_ranges"] = tuple(
            (ConstructId(c), float(lo), float(hi)) for c, lo, hi in ranges
        )
    if "donor_modality" in raw:
        raw["donor_modality"] = ModalityKind(raw["donor_modality"])
    for grid_field in ("candidates", "class_candidates"):
        if grid_field in raw:
            raw[grid_field] = tuple(
                (fam, tuple(sorted(dict(params).items())))
                for fam, params in raw[grid_field]
            )
    if "imputation_policy" in raw:
        policy = raw["imputation_policy"]
        if isinstance(policy, dict):
            policy = sorted(policy.items())
        raw["imputation_policy"] = tuple((str(k), str(v)) for k, v in policy)
    if "screen_rules" in raw:
        rules = raw["screen_rules"]
        if isinstance(rules, dict):
            rules = [(name, lo, hi) for name, (lo, hi) in sorted(rules.items())]
        raw["screen_rules"] = tuple((str(n), float(lo), float(hi)) for n, lo, hi in rules)

    cfg = PipelineConfig(**raw)

    _check(cfg.folds >= 2, "folds", "must be >= 2")
    _check(cfg.top_k_per_modality >= 1, "top_k_per_modality", "must be >= 1")
    _check(cfg.social_pca_components >= 1, "social_pca_components", "must be >= 1")
    _check(len(cfg.hon_orders) > 0, "hon_orders", "must be nonempty")
    _check(all(n >= 1 for n in cfg.hon_orders), "hon_orders", "orders must be >= 1")
    _check(cfg.hon_pca_components >= 1, "hon_pca_components", "must be >= 1")
    _check(cfg.hon_bins >= 2, "hon_bins", "must be >= 2")
    _check(cfg.slot_minutes > 0, "slot_minutes", "must be > 0")
    _check(0.0 <= cfg.holdout_fraction < 1.0, "holdout_fraction", "must be in [0, 1)")
    _check(cfg.selection_method in ("pearson", "spearman"), "selection_method",
           "must be pearson or spearman")
    _check(cfg.smape_definition == "bounded-0-200", "smape_definition",
           "only the bounded-0-200 variant is supported")
    _check(cfg.fusion_mode in ("feature", "per_modality_mean"), "fusion_mode",
           "must be feature or per_modality_mean")
    _check(cfg.k_clusters >= 1, "k_clusters", "must be >= 1")
    _check(cfg.workers >= 1, "workers", "must be >= 1")
    _check(len(cfg.constructs) >= 1, "constructs", "must model at least one construct")
    _check(len(set(cfg.constructs)) == len(cfg.constructs), "constructs", "duplicates")
    for key, strategy in cfg.imputation_policy:
        _check(strategy in _KNOWN_STRATEGIES, "imputation_policy",
               f"unknown strategy {strategy!r} for {key!r}")
    _check(cfg.default_strategy in _KNOWN_STRATEGIES, "default_strategy",
           "unknown strategy")
    for name, lo, hi in cfg.screen_rules:
        _check(lo < hi, "screen_rules", f"rule for {name!r} needs lo < hi")
    for _, lo, hi in cfg.construct_ranges:
        _check(lo < hi, "construct_ranges", "lo must be < hi")
    _check(cfg.gemm_restarts >= 1, "gemm_restarts", "must be >= 1")
    _check(cfg.gemm_iters >= 1, "gemm_iters", "must be >= 1")
    _check(cfg.bootstrap_samples >= 1, "bootstrap_samples", "must be >= 1")

    cfg.registry()  # raises InvalidConfig on a bad range override
    return cfg


def config_to_dict(cfg: PipelineConfig) -> dict:
    """JSON-safe dict that validate_config can rehydrate exactly."""
    d = dataclasses.asdict(cfg)
    d["constructs"] = [c.value for c in cfg.constructs]
    d["classification_constructs"] = [c.value
                                      for c in cfg.classification_constructs]
    d["construct_ranges"] = [[c.value, lo, hi]
                             for c, lo, hi in cfg.construct_ranges]
    d["donor_modality"] = cfg.donor_modality.value
    d["candidates"] = [[fam, [list(kv) for kv in params]]
                       for fam, params in cfg.candidates]
    d["class_candidates"] = [[fam, [list(kv) for kv in params]]
                             for fam, params in cfg.class_candidates]
    d["imputation_policy"] = [list(kv) for kv in cfg.imputation_policy]
    d["screen_rules"] = [list(r) for r in cfg.screen_rules]
    d["hon_orders"] = list(cfg.hon_orders)
    return d


def load_config(path: str, seed_override: int | None = None) -> PipelineConfig:
    """Read a YAML config file (nested sections per module) and validate it.

    Sections group fields by pipeline stage purely for readability; keys are
    flattened before validation, so ``hon.orders`` and a top-level
    ``hon_orders`` are equivalent.
    """
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise InvalidConfig("<root>", "config must be a mapping")

    section_prefix = {
        "core": "", "pipeline": "", "hon": "hon_", "reduce": "", "impute": "",
        "models": "", "ensemble": "", "eval": "", "synth": "", "ingest": "",
    }
    flat: dict = {}
    for key, value in data.items():
        if isinstance(value, dict) and key in section_prefix:
            prefix = section_prefix[key]
            for sub, sval in value.items():
                name = sub if sub.startswith(prefix) or not prefix else prefix + sub
                flat[name] = sval
        else:
            flat[key] = value
    if seed_override is not None:
        flat["seed"] = int(seed_override)
    return validate_config(flat)
