"""End-to-end analysis runs: manifest -> splits -> subset fits -> report.

A run fits every nonempty subset of each declared feature-space family,
scores them with pooled out-of-sample R^2, applies sub-model correction,
computes the variance-partitioning summaries against a designated space,
runs the configured paired tests, and writes a report directory:

    report.json          deterministic results summary
    provenance.json      timestamps, durations, versions (excluded from
                         byte-level comparisons)
    tables/*.csv         flat per-unit tables
    predictions/*.bbsm   pooled test predictions per fitted subset
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import __version__
from .errors import DataError, ManifestError
from .features import FeatureSpace, build_oasm
from .matrixio import LoadedDataset, load_manifest, save_matrix
from .metrics import (
    ComparisonReport,
    build_comparison_report,
    clip_and_average,
    r2_oos,
)
from .ridge import BandedSearchConfig, RidgeConfig, banded_search
from .splits import (
    SplitPlan,
    plan_blank,
    plan_fedorenko,
    plan_grouped,
    plan_pereira,
    shuffle_plan,
)
from .stats import TestResult, bh_fdr, paired_squared_error_ttest

logger = logging.getLogger(__name__)

MAX_FAMILY_SPACES = 6


@dataclass
class SpaceSpec:
    name: str
    members: tuple[str, ...]
    band: str


@dataclass
class FamilySpec:
    name: str
    spaces: tuple[str, ...]
    complexity_order: tuple[str, ...]
    llm: Optional[str] = None


@dataclass
class TestPairSpec:
    name: str
    model_a: object  # "intercept" | {"spaces": [...]} | {"family": [...], "required": ...}
    model_b: object


@dataclass
class SplitSpec:
    scheme: str
    mode: str = "contiguous"
    shuffle_seed: int = 0
    selection_seed: Optional[int] = None
    n_outer: int = 5
    n_inner: int = 4


@dataclass
class AnalysisConfig:
    manifest: Path
    split: SplitSpec
    spaces: list[SpaceSpec]
    families: list[FamilySpec]
    tests: list[TestPairSpec] = field(default_factory=list)
    oasm_sigma: Optional[float] = None
    ridge: RidgeConfig = field(default_factory=RidgeConfig)
    search: BandedSearchConfig = field(default_factory=BandedSearchConfig)
    alpha_level: float = 0.05
    output: Optional[Path] = None
    echo: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path) -> "AnalysisConfig":
        path = Path(path)
        if not path.exists():
            raise DataError(f"config not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc, base_dir=path.parent)

    @classmethod
    def from_dict(cls, doc: dict, base_dir=Path(".")) -> "AnalysisConfig":
        try:
            split_doc = dict(doc["split"])
            split = SplitSpec(
                scheme=split_doc.pop("scheme"),
                mode=split_doc.pop("mode", "contiguous"),
                shuffle_seed=split_doc.pop("shuffle_seed", 0),
                selection_seed=split_doc.pop("selection_seed", None),
                n_outer=split_doc.pop("n_outer", 5),
                n_inner=split_doc.pop("n_inner", 4),
            )
            if split_doc:
                raise DataError(f"unknown split keys: {sorted(split_doc)}")
            spaces = [
                SpaceSpec(
                    name=s["name"],
                    members=tuple(s["members"]),
                    band=s.get("band", s["name"].lower()),
                )
                for s in doc["spaces"]
            ]
            families = [
                FamilySpec(
                    name=f["name"],
                    spaces=tuple(f["spaces"]),
                    complexity_order=tuple(
                        f.get("complexity_order", f["spaces"])),
                    llm=f.get("llm"),
                )
                for f in doc["families"]
            ]
            tests = [
                TestPairSpec(t["name"], t["model_a"], t["model_b"])
                for t in doc.get("tests", [])
            ]
            manifest = doc["manifest"]
        except KeyError as exc:
            raise DataError(f"config missing key: {exc}") from exc

        try:
            ridge_doc = doc.get("ridge", {})
            ridge_cfg = RidgeConfig(**ridge_doc) if ridge_doc else RidgeConfig()
            search_cfg = BandedSearchConfig(**doc.get("search", {}))
        except TypeError as exc:
            raise DataError(f"bad ridge/search config: {exc}") from exc

        config = cls(
            manifest=(Path(base_dir) / manifest),
            split=split,
            spaces=spaces,
            families=families,
            tests=tests,
            oasm_sigma=doc.get("oasm_sigma"),
            ridge=ridge_cfg,
            search=search_cfg,
            alpha_level=doc.get("alpha_level", 0.05),
            output=Path(base_dir) / doc["output"] if doc.get("output") else None,
            echo={k: v for k, v in doc.items() if k != "output"},
        )
        config.validate()
        return config

    def validate(self) -> None:
        if self.split.mode not in ("contiguous", "shuffled", "both"):
            raise DataError(f"unknown split mode {self.split.mode!r}")
        if self.split.scheme not in ("pereira", "fedorenko", "blank", "grouped"):
            raise DataError(f"unknown split scheme {self.split.scheme!r}")
        names = [s.name for s in self.spaces]
        if len(set(names)) != len(names):
            raise DataError("duplicate space names")
        declared = set(names)
        for fam in self.families:
            unknown = set(fam.spaces) - declared
            if unknown:
                raise DataError(
                    f"family {fam.name!r} references unknown spaces {sorted(unknown)}"
                )
            if len(fam.spaces) > MAX_FAMILY_SPACES:
                raise DataError(
                    f"family {fam.name!r} declares {len(fam.spaces)} spaces; "
                    f"the subset cap is {MAX_FAMILY_SPACES}"
                )
            if set(fam.complexity_order) != set(fam.spaces):
                raise DataError(
                    f"family {fam.name!r}: complexity_order must cover exactly "
                    "its spaces"
                )
            if fam.llm is not None and fam.llm not in fam.spaces:
                raise DataError(
                    f"family {fam.name!r}: llm space {fam.llm!r} not in family"
                )
        for test in self.tests:
            for side in (test.model_a, test.model_b):
                self._validate_side(side, declared)

    @staticmethod
    def _validate_side(side, declared) -> None:
        if side == "intercept":
            return
        if isinstance(side, dict) and "spaces" in side:
            unknown = set(side["spaces"]) - declared
        elif isinstance(side, dict) and "family" in side:
            unknown = set(side["family"]) - declared
            required = side.get("required")
            if required is not None and required not in side["family"]:
                raise DataError(f"required space {required!r} not in test family")
        else:
            raise DataError(f"unintelligible test side: {side!r}")
        if unknown:
            raise DataError(f"test references unknown spaces {sorted(unknown)}")


def build_plan(split: SplitSpec, recording) -> SplitPlan:
    blocks = recording.block_ids
    if split.scheme == "pereira":
        if recording.categories is None:
            raise DataError("pereira scheme needs sample_categories in the manifest")
        passage_cats = []
        seen = []
        for b, c in zip(blocks, recording.categories):
            if not seen or seen[-1] != b:
                seen.append(int(b))
                passage_cats.append(int(c))
        counts = {c: passage_cats.count(c) for c in set(passage_cats)}
        sizes = set(counts.values())
        if len(sizes) != 1:
            raise DataError(f"unequal passages per category: {counts}")
        return plan_pereira(passage_cats, sizes.pop(), blocks,
                            seed=split.selection_seed)
    if split.scheme == "fedorenko":
        n_sentences = np.unique(blocks).size
        return plan_fedorenko(n_sentences, blocks)
    if split.scheme == "blank":
        return plan_blank(blocks)
    return plan_grouped(blocks, split.n_outer, split.n_inner)


def layered_best(subset_scores: Mapping, complexity_order: Sequence[str]):
    """Per-tier best score: for each space, the max over subsets containing
    it and nothing ranked above it. Ties go to the smaller subset."""
    table = {}
    for key, value in subset_scores.items():
        key = frozenset([key]) if isinstance(key, str) else frozenset(key)
        table[key] = float(value)
    universe = frozenset().union(*table.keys())
    if set(complexity_order) != set(universe):
        raise DataError("complexity order must cover exactly the scored spaces")
    rank = {s: i for i, s in enumerate(complexity_order)}
    entries = []
    for i, space in enumerate(complexity_order):
        candidates = [
            k for k in table
            if space in k and all(rank[s] <= i for s in k)
        ]
        if not candidates:
            raise DataError(f"no scored subset for tier {space!r}")
        best = sorted(
            candidates,
            key=lambda k: (-table[k], len(k), sorted(k)),
        )[0]
        entries.append({
            "space": space,
            "score": table[best],
            "subset": "+".join(sorted(best, key=lambda s: rank[s])),
        })
    return entries


def star_predictions(subset_preds: Mapping, subset_r2: Mapping,
                     family: Sequence[str], required: Optional[str] = None):
    """Per-unit predictions of each unit's best-scoring subset."""
    keys = []
    for size in range(1, len(family) + 1):
        for combo in itertools.combinations(family, size):
            key = frozenset(combo)
            if required is not None and required not in key:
                continue
            if key not in subset_r2:
                raise DataError(f"missing fitted subset {sorted(key)}")
            keys.append(key)
    scores = np.stack([subset_r2[k] for k in keys])
    best = np.argmax(scores, axis=0)  # first max -> smaller subset wins ties
    out = np.empty_like(subset_preds[keys[0]])
    for i, key in enumerate(keys):
        cols = best == i
        if cols.any():
            out[:, cols] = subset_preds[key][:, cols]
    return out


@dataclass
class TestOutcome:
    name: str
    result: TestResult
    n_rejected_raw: int
    n_rejected_fdr: int


@dataclass
class FamilyResult:
    name: str
    mode: str
    subset_names: list[str]
    subset_r2: dict            # frozenset -> per-unit r2
    subset_preds: dict         # frozenset -> pooled test predictions
    comparison: ComparisonReport
    layered: list
    tests: list[TestOutcome]


@dataclass
class RunReport:
    dataset_name: str
    config_echo: dict
    results: dict              # mode -> family name -> FamilyResult
    intercepts: dict           # mode -> pooled intercept predictions
    participants: np.ndarray
    provenance: dict

    def summary_dict(self) -> dict:
        modes = {}
        for mode, families in self.results.items():
            fam_docs = {}
            for fam_name, fr in families.items():
                subsets = {}
                for key in sorted(fr.subset_r2, key=lambda k: (len(k), sorted(k))):
                    name = "+".join(sorted(key))
                    summary = fr.comparison.submodel_table[name]
                    subsets[name] = {
                        "mean_r2": summary.mean,
                        "sem": _none_if_nan(summary.sem),
                        "participant_means": summary.participant_means.tolist(),
                    }
                doc = {
                    "subsets": subsets,
                    "layered": fr.layered,
                    "mean_r2_corrected": float(
                        np.maximum(fr.comparison.r2_corrected, 0).mean()),
                    "tests": [
                        {
                            "name": t.name,
                            "n_rejected_raw": t.n_rejected_raw,
                            "n_rejected_fdr": t.n_rejected_fdr,
                        }
                        for t in fr.tests
                    ],
                }
                if fr.comparison.omega is not None:
                    doc["omega"] = {
                        "mean": fr.comparison.omega.mean,
                        "sem": _none_if_nan(fr.comparison.omega.sem),
                        "per_participant":
                            fr.comparison.omega.participant_values.tolist(),
                        "n_excluded": fr.comparison.omega.n_excluded,
                    }
                if fr.comparison.phi is not None:
                    doc["phi"] = {
                        "mean": fr.comparison.phi.mean,
                        "sem": _none_if_nan(fr.comparison.phi.sem),
                        "per_participant":
                            fr.comparison.phi.participant_values.tolist(),
                        "n_excluded": fr.comparison.phi.n_excluded,
                    }
                fam_docs[fam_name] = doc
            modes[mode] = fam_docs
        return {
            "dataset": self.dataset_name,
            "config": self.config_echo,
            "modes": modes,
        }

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        (out / "tables").mkdir(parents=True, exist_ok=True)
        (out / "predictions").mkdir(parents=True, exist_ok=True)

        with open(out / "report.json", "w") as fh:
            json.dump(self.summary_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")
        with open(out / "provenance.json", "w") as fh:
            json.dump(self.provenance, fh, sort_keys=True, indent=2)
            fh.write("\n")

        participants = self.participants
        for mode, families in self.results.items():
            dumped = set()
            save_matrix(out / "predictions" / f"{mode}__intercept.bbsm",
                        self.intercepts[mode])
            for fam_name, fr in families.items():
                stem = f"{mode}__{fam_name}"
                with open(out / "tables" / f"{stem}__r2.csv", "w",
                          newline="") as fh:
                    writer = csv.writer(fh)
                    writer.writerow(["unit", "participant", "subset", "r2"])
                    for key in sorted(fr.subset_r2,
                                      key=lambda k: (len(k), sorted(k))):
                        name = "+".join(sorted(key))
                        for unit, value in enumerate(fr.subset_r2[key]):
                            writer.writerow([
                                unit, int(participants[unit]), name,
                                repr(float(value)),
                            ])
                self._write_corrected_csv(
                    out / "tables" / f"{stem}__corrected.csv", fr, participants)
                if fr.tests:
                    with open(out / "tables" / f"{stem}__tests.csv", "w",
                              newline="") as fh:
                        writer = csv.writer(fh)
                        writer.writerow(
                            ["pair", "unit", "participant", "t", "p", "rejected"])
                        for t in fr.tests:
                            for unit, pid, tval, pval, rej in t.result.csv_rows():
                                writer.writerow([
                                    t.name, unit, pid, repr(tval), repr(pval), rej,
                                ])
                for key in sorted(fr.subset_preds,
                                  key=lambda k: (len(k), sorted(k))):
                    name = "+".join(sorted(key))
                    if (mode, name) in dumped:
                        continue
                    dumped.add((mode, name))
                    save_matrix(out / "predictions" / f"{mode}__{name}.bbsm",
                                fr.subset_preds[key])
        return out / "report.json"

    @staticmethod
    def _write_corrected_csv(path, fr: FamilyResult, participants) -> None:
        comparison = fr.comparison
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([
                "unit", "participant", "r2_corrected", "r2_corrected_with_llm",
                "r2_corrected_without_llm", "omega", "phi",
            ])
            n_units = comparison.r2_corrected.size
            for unit in range(n_units):
                def cell(arr):
                    if arr is None:
                        return ""
                    value = arr[unit] if not hasattr(arr, "per_unit") \
                        else arr.per_unit[unit]
                    return "" if np.isnan(value) else repr(float(value))
                writer.writerow([
                    unit, int(participants[unit]),
                    repr(float(comparison.r2_corrected[unit])),
                    cell(comparison.r2_corrected_with_llm),
                    cell(comparison.r2_corrected_without_llm),
                    cell(comparison.omega),
                    cell(comparison.phi),
                ])


def _none_if_nan(value: float):
    return None if np.isnan(value) else value


def _subset_features(subset: Sequence[str], spaces: dict[str, SpaceSpec],
                     matrices: dict[str, FeatureSpace]) -> list[FeatureSpace]:
    out = []
    for space_name in subset:
        spec = spaces[space_name]
        for member in spec.members:
            if member not in matrices:
                raise DataError(
                    f"space {space_name!r} references unknown matrix {member!r}"
                )
            fs = matrices[member]
            out.append(FeatureSpace(fs.name, fs.data, spec.band))
    return out


def run_analysis(config: AnalysisConfig, threads: int = 1,
                 output_dir=None) -> RunReport:
    started = time.time()
    logger.info("resolved config: %s", json.dumps(config.echo, sort_keys=True))

    dataset: LoadedDataset = load_manifest(config.manifest)
    recording = dataset.recording
    Y = recording.responses

    matrices = {fs.name: fs for fs in dataset.features}
    if config.oasm_sigma is not None:
        if "OASM" in matrices:
            raise DataError("manifest already provides a matrix named OASM")
        matrices["OASM"] = build_oasm(
            recording.n_samples, recording.block_ids, config.oasm_sigma)
    spaces = {s.name: s for s in config.spaces}
    for spec in config.spaces:
        for member in spec.members:
            if member not in matrices:
                raise ManifestError(
                    f"space {spec.name!r} needs matrix {member!r}, "
                    "which the manifest does not provide"
                )

    base_plan = build_plan(config.split, recording)
    plans = {}
    if config.split.mode in ("contiguous", "both"):
        plans["contiguous"] = base_plan
    if config.split.mode in ("shuffled", "both"):
        plans["shuffled"] = shuffle_plan(base_plan, config.split.shuffle_seed)

    # one fit per distinct (mode, subset), shared across families
    jobs = []
    seen = set()
    for mode in plans:
        for fam in config.families:
            order = {s: i for i, s in enumerate(fam.spaces)}
            for size in range(1, len(fam.spaces) + 1):
                for combo in itertools.combinations(fam.spaces, size):
                    subset = tuple(sorted(combo, key=order.get))
                    key = (mode, frozenset(subset))
                    if key not in seen:
                        seen.add(key)
                        jobs.append((mode, subset))

    def run_job(job):
        mode, subset = job
        t0 = time.time()
        fit = banded_search(
            _subset_features(subset, spaces, matrices), Y, plans[mode],
            ridge_cfg=config.ridge, search_cfg=config.search, threads=1,
        )
        logger.info("fit %s / %s in %.2fs", mode, "+".join(subset),
                    time.time() - t0)
        return fit, time.time() - t0

    results = _map_jobs(run_job, jobs, threads)
    fits = {}
    durations = {}
    for (mode, subset), (fit, elapsed) in zip(jobs, results):
        fits[(mode, frozenset(subset))] = fit
        durations[f"{mode}:{'+'.join(subset)}"] = elapsed

    participants = recording.unit_participants
    report_results: dict = {}
    intercepts = {}
    for mode in plans:
        report_results[mode] = {}
        any_fit = next(f for (m, _), f in fits.items() if m == mode)
        intercepts[mode] = any_fit.intercept_predictions
        for fam in config.families:
            fam_subsets = {}
            fam_preds = {}
            for size in range(1, len(fam.spaces) + 1):
                for combo in itertools.combinations(fam.spaces, size):
                    key = frozenset(combo)
                    fit = fits[(mode, key)]
                    fam_preds[key] = fit.test_predictions
                    fam_subsets[key] = r2_oos(
                        Y, fit.test_predictions, fit.intercept_predictions)
            comparison = build_comparison_report(
                fam_subsets, participants, llm=fam.llm,
                oasm="OASM" if (fam.llm and "OASM" in fam.spaces) else None,
            )
            scalar_scores = {
                key: clip_and_average(values, participants).mean
                for key, values in fam_subsets.items()
            }
            layered = layered_best(scalar_scores, fam.complexity_order)
            tests = _run_tests(
                config, fam, Y, fam_preds, fam_subsets,
                intercepts[mode], participants,
            )
            report_results[mode][fam.name] = FamilyResult(
                name=fam.name, mode=mode,
                subset_names=["+".join(sorted(k)) for k in fam_subsets],
                subset_r2=fam_subsets,
                subset_preds=fam_preds,
                comparison=comparison,
                layered=layered,
                tests=tests,
            )

    provenance = {
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "elapsed_seconds": time.time() - started,
        "fit_durations": durations,
        "threads": threads,
        "numpy_version": np.__version__,
        "encodebench_version": __version__,
    }
    report = RunReport(
        dataset_name=dataset.manifest.dataset_name,
        config_echo=config.echo,
        results=report_results,
        intercepts=intercepts,
        participants=participants,
        provenance=provenance,
    )
    target = output_dir or config.output
    if target is not None:
        report.save(target)
    return report


def _map_jobs(fn, jobs, threads):
    if threads <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))


def _run_tests(config: AnalysisConfig, fam: FamilySpec, Y, fam_preds,
               fam_subsets, intercept_pred, participants) -> list[TestOutcome]:
    outcomes = []
    for test in config.tests:
        try:
            pred_a = _resolve_side(test.model_a, fam, fam_preds, fam_subsets,
                                   intercept_pred)
            pred_b = _resolve_side(test.model_b, fam, fam_preds, fam_subsets,
                                   intercept_pred)
        except KeyError:
            continue  # pair refers to subsets outside this family
        t, p = paired_squared_error_ttest(Y, pred_a, pred_b)
        rejected = bh_fdr(p, participants, config.alpha_level)
        result = TestResult(
            t=t, p=p, rejected=rejected, n_samples=Y.shape[0],
            participant_ids=np.asarray(participants), level=config.alpha_level,
        )
        outcomes.append(TestOutcome(
            name=test.name,
            result=result,
            n_rejected_raw=int((p < config.alpha_level).sum()),
            n_rejected_fdr=int(rejected.sum()),
        ))
    return outcomes


def _resolve_side(side, fam: FamilySpec, fam_preds, fam_subsets,
                  intercept_pred):
    if side == "intercept":
        return intercept_pred
    if "spaces" in side:
        return fam_preds[frozenset(side["spaces"])]
    return star_predictions(
        fam_preds, fam_subsets, tuple(side["family"]),
        required=side.get("required"),
    )
