"""Closed-form ridge regression over an alpha grid, banded scaling, and
per-unit hyperparameter search.

Solver notes
------------
One factorization of the (scaled, standardized) design serves the whole
alpha grid. Tall problems use an economy SVD of X; wide problems use the
eigendecomposition of the Gram matrix X X^T, which gives identical
predictions through the push-through identity
``X_ev (X^T X + aI)^-1 X^T Y = K_ev (K + aI)^-1 Y``. ``alpha = 0`` is the
pseudo-inverse (minimum-norm least squares) limit. The intercept is never
penalized: features and targets are centered on training rows and the
training target mean is added back to predictions.

Search notes
------------
Candidate scaling vectors come first from the subset-mask enumeration
(every way of zeroing out feature spaces), then from Dirichlet draws whose
RNG streams depend only on (seed, iteration index), so results do not
depend on thread scheduling. Per unit, the best (gamma, alpha) by pooled
inner-validation R^2 wins; strict improvement is required, so earlier
candidates and smaller alphas win ties. The random phase stops early once
the across-unit mean of running-best validation scores fails to improve by
more than ``min_improvement`` for ``patience`` consecutive iterations.
"""

from __future__ import annotations

import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import metrics
from .errors import DataError
from .features import FeatureSpace, zscore_fit_apply
from .splits import SplitPlan

_RCOND = np.finfo(np.float64).eps


def default_alpha_grid() -> tuple[float, ...]:
    """{0} plus 40 exponentially spaced penalties from 2^-5 to 2^34."""
    exponents = np.linspace(-5.0, 34.0, 40)
    return (0.0,) + tuple(float(2.0 ** e) for e in exponents)


@dataclass(frozen=True)
class RidgeConfig:
    alphas: tuple[float, ...] = field(default_factory=default_alpha_grid)

    def __post_init__(self):
        alphas = tuple(float(a) for a in self.alphas)
        if not alphas or alphas[0] != 0.0:
            raise DataError("alpha grid must start at 0")
        if any(b <= a for a, b in zip(alphas, alphas[1:])):
            raise DataError("alpha grid must be strictly ascending")
        object.__setattr__(self, "alphas", alphas)


@dataclass(frozen=True)
class BandedSearchConfig:
    max_iters: int = 1000
    patience: int = 50
    min_improvement: float = 1e-4
    dirichlet_concentration: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.max_iters >= self.patience >= 1:
            raise DataError("need max_iters >= patience >= 1")
        if self.min_improvement <= 0:
            raise DataError("min_improvement must be > 0")
        if self.dirichlet_concentration <= 0:
            raise DataError("dirichlet_concentration must be > 0")
        if self.seed < 0:
            raise DataError("seed must be non-negative")


def _check_finite(name, arr):
    if not np.isfinite(arr).all():
        raise DataError(f"{name} contains non-finite values")


def _primal_grid(Xc_tr, Yc_tr, Xc_ev, alphas):
    """Predictions per alpha from one SVD of the centered design."""
    U, S, Vt = np.linalg.svd(Xc_tr, full_matrices=False)
    UTY = U.T @ Yc_tr
    G = Xc_ev @ Vt.T
    smax = S[0] if S.size else 0.0
    cutoff = smax * max(Xc_tr.shape) * _RCOND
    D = np.empty((len(alphas), S.size))
    for i, a in enumerate(alphas):
        if a == 0.0:
            keep = S > cutoff
            D[i] = np.where(keep, 1.0 / np.where(keep, S, 1.0), 0.0)
        else:
            D[i] = S / (S ** 2 + a)
    scaled = G[None, :, :] * D[:, None, :]
    preds = scaled.reshape(-1, S.size) @ UTY
    return preds.reshape(len(alphas), G.shape[0], Yc_tr.shape[1])


def _dual_grid(K_tr, K_ev, Yc_tr, alphas):
    """Predictions per alpha from one eigendecomposition of the Gram matrix."""
    lam, V = np.linalg.eigh(K_tr)
    lam = np.maximum(lam, 0.0)
    T = V.T @ Yc_tr
    G = K_ev @ V
    lmax = lam[-1] if lam.size else 0.0
    cutoff = lmax * (K_tr.shape[0] * _RCOND) ** 2
    D = np.empty((len(alphas), lam.size))
    for i, a in enumerate(alphas):
        if a == 0.0:
            keep = lam > cutoff
            D[i] = np.where(keep, 1.0 / np.where(keep, lam, 1.0), 0.0)
        else:
            D[i] = 1.0 / (lam + a)
    scaled = G[None, :, :] * D[:, None, :]
    preds = scaled.reshape(-1, lam.size) @ T
    return preds.reshape(len(alphas), G.shape[0], Yc_tr.shape[1])


def ridge_solve(X_train, Y_train, X_eval, alphas) -> np.ndarray:
    """Predict X_eval for every alpha; returns (n_alphas, n_eval, n_units).

    A 1-D target collapses the unit axis: the result is (n_alphas, n_eval).
    """
    X = np.asarray(X_train, dtype=np.float64)
    Y = np.asarray(Y_train, dtype=np.float64)
    Xe = np.asarray(X_eval, dtype=np.float64)
    squeeze = Y.ndim == 1
    if squeeze:
        Y = Y[:, None]
    if X.ndim != 2 or Xe.ndim != 2 or X.shape[1] != Xe.shape[1]:
        raise DataError("X_train and X_eval must be 2-D with equal column counts")
    if X.shape[0] != Y.shape[0]:
        raise DataError("X_train and Y_train row counts differ")
    if X.shape[0] < 2:
        raise DataError("need at least 2 training rows")
    for name, arr in (("X_train", X), ("Y_train", Y), ("X_eval", Xe)):
        _check_finite(name, arr)
    alphas = [float(a) for a in alphas]
    if any(a < 0 for a in alphas):
        raise DataError("alphas must be non-negative")

    x_mean = X.mean(axis=0)
    y_mean = Y.mean(axis=0)
    Xc = X - x_mean
    Yc = Y - y_mean
    Xec = Xe - x_mean
    if X.shape[1] <= X.shape[0]:
        preds = _primal_grid(Xc, Yc, Xec, alphas)
    else:
        preds = _dual_grid(Xc @ Xc.T, Xec @ Xc.T, Yc, alphas)
    preds += y_mean
    return preds[:, :, 0] if squeeze else preds


def ridge_weights(X_train, Y_train, alphas):
    """Weights per alpha on centered data: (n_alphas, n_dims, n_units),
    plus the (feature means, target means) used for centering."""
    X = np.asarray(X_train, dtype=np.float64)
    Y = np.asarray(Y_train, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    _check_finite("X_train", X)
    _check_finite("Y_train", Y)
    x_mean = X.mean(axis=0)
    y_mean = Y.mean(axis=0)
    Xc = X - x_mean
    Yc = Y - y_mean
    alphas = [float(a) for a in alphas]
    if X.shape[1] <= X.shape[0]:
        U, S, Vt = np.linalg.svd(Xc, full_matrices=False)
        UTY = U.T @ Yc
        smax = S[0] if S.size else 0.0
        cutoff = smax * max(Xc.shape) * _RCOND
        W = np.empty((len(alphas), X.shape[1], Y.shape[1]))
        for i, a in enumerate(alphas):
            if a == 0.0:
                keep = S > cutoff
                d = np.where(keep, 1.0 / np.where(keep, S, 1.0), 0.0)
            else:
                d = S / (S ** 2 + a)
            W[i] = (Vt.T * d) @ UTY
        return W, (x_mean, y_mean)
    lam, V = np.linalg.eigh(Xc @ Xc.T)
    lam = np.maximum(lam, 0.0)
    T = V.T @ Yc
    lmax = lam[-1] if lam.size else 0.0
    cutoff = lmax * (Xc.shape[0] * _RCOND) ** 2
    XtV = Xc.T @ V
    W = np.empty((len(alphas), X.shape[1], Y.shape[1]))
    for i, a in enumerate(alphas):
        if a == 0.0:
            keep = lam > cutoff
            d = np.where(keep, 1.0 / np.where(keep, lam, 1.0), 0.0)
        else:
            d = 1.0 / (lam + a)
        W[i] = (XtV * d) @ T
    return W, (x_mean, y_mean)


def group_bands(spaces: Sequence[FeatureSpace]):
    """Concatenate feature spaces sharing a band_group, in first-seen order."""
    if not spaces:
        raise DataError("need at least one feature space")
    n = spaces[0].n_samples
    order: list[str] = []
    members: dict[str, list[np.ndarray]] = {}
    for fs in spaces:
        if fs.n_samples != n:
            raise DataError(
                f"feature space {fs.name!r} has {fs.n_samples} rows, expected {n}"
            )
        if fs.band_group not in members:
            order.append(fs.band_group)
            members[fs.band_group] = []
        members[fs.band_group].append(fs.data)
    mats = [np.hstack(members[g]) if len(members[g]) > 1 else members[g][0]
            for g in order]
    return order, mats


def apply_band_scaling(band_matrices: Sequence[np.ndarray], gamma) -> np.ndarray:
    """Scale each band's columns by its gamma entry and concatenate."""
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.ndim != 1 or gamma.size != len(band_matrices):
        raise DataError(
            f"gamma has {gamma.size} entries for {len(band_matrices)} bands"
        )
    if (gamma < 0).any():
        raise DataError("gamma entries must be non-negative")
    return np.hstack([g * np.asarray(m, dtype=np.float64)
                      for g, m in zip(gamma, band_matrices)])


def enumerate_masks(n_bands: int) -> list[np.ndarray]:
    """Uniform sub-simplex vectors for every nonempty band subset.

    Ordered by subset size then lexicographically; the full set comes last.
    """
    if not 1 <= n_bands <= 16:
        raise DataError("n_bands must be between 1 and 16")
    masks = []
    for size in range(1, n_bands + 1):
        for subset in itertools.combinations(range(n_bands), size):
            gamma = np.zeros(n_bands)
            gamma[list(subset)] = 1.0 / size
            masks.append(gamma)
    return masks


@dataclass
class ValidationFold:
    indices: np.ndarray      # pooled validation rows, inner-fold order
    predictions: np.ndarray  # winning-hyperparameter predictions per unit
    intercepts: np.ndarray   # per-inner-fold training means, tiled


@dataclass
class FitResult:
    band_names: list[str]
    alphas: tuple[float, ...]
    test_predictions: np.ndarray       # samples x units, pooled over outer folds
    intercept_predictions: np.ndarray  # samples x units, per-fold training means
    chosen_gamma: np.ndarray           # outer folds x units x bands
    chosen_alpha: np.ndarray           # outer folds x units
    validation_r2: np.ndarray          # outer folds x units (best per unit)
    validation_folds: list[ValidationFold]
    n_random_iterations: list[int]
    early_stopped: list[bool]
    weights: Optional[list[np.ndarray]] = None  # per outer fold: units x dims

    def test_r2(self, responses) -> np.ndarray:
        Y = np.asarray(responses, dtype=np.float64)
        return metrics.r2_oos(Y, self.test_predictions, self.intercept_predictions)

    def save(self, out_dir) -> None:
        from .matrixio import save_matrix  # deferred; matrixio imports features

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_matrix(out / "test_predictions.bbsm", self.test_predictions)
        save_matrix(out / "intercept_predictions.bbsm", self.intercept_predictions)
        doc = {
            "band_names": self.band_names,
            "alphas": list(self.alphas),
            "chosen_gamma": self.chosen_gamma.tolist(),
            "chosen_alpha": self.chosen_alpha.tolist(),
            "validation_r2": self.validation_r2.tolist(),
            "n_random_iterations": self.n_random_iterations,
            "early_stopped": self.early_stopped,
        }
        with open(out / "fit.json", "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=2)
            fh.write("\n")


class _FoldData:
    """Standardized per-band matrices and Gram caches for one train/eval split."""

    def __init__(self, band_mats, Y, train_idx, eval_idx):
        self.train_idx = train_idx
        self.eval_idx = eval_idx
        self.n_train = len(train_idx)
        self.Ztr = []
        self.Zev = []
        for X in band_mats:
            ztr, (zev,), _, _ = zscore_fit_apply(X[train_idx], [X[eval_idx]])
            self.Ztr.append(ztr)
            self.Zev.append(zev)
        self.y_mean = Y[train_idx].mean(axis=0)
        self.Yc = Y[train_idx] - self.y_mean
        self._gram: dict[int, np.ndarray] = {}
        self._cross: dict[int, np.ndarray] = {}

    def _band_gram(self, b):
        if b not in self._gram:
            self._gram[b] = self.Ztr[b] @ self.Ztr[b].T
            self._cross[b] = self.Zev[b] @ self.Ztr[b].T
        return self._gram[b], self._cross[b]

    def predict_grid(self, gamma, alphas, unit_slice=None):
        """(n_alphas, n_eval, n_units) predictions for one scaling vector."""
        Yc = self.Yc if unit_slice is None else self.Yc[:, unit_slice]
        active = np.flatnonzero(np.asarray(gamma) > 0)
        dims = sum(self.Ztr[b].shape[1] for b in active)
        if dims <= self.n_train:
            Xtr = np.hstack([gamma[b] * self.Ztr[b] for b in active])
            Xev = np.hstack([gamma[b] * self.Zev[b] for b in active])
            preds = _primal_grid(Xtr, Yc, Xev, alphas)
        else:
            K = np.zeros((self.n_train, self.n_train))
            C = np.zeros((len(self.eval_idx), self.n_train))
            for b in active:
                g2 = gamma[b] ** 2
                Kb, Cb = self._band_gram(b)
                K += g2 * Kb
                C += g2 * Cb
            preds = _dual_grid(K, C, Yc, alphas)
        y_mean = self.y_mean if unit_slice is None else self.y_mean[unit_slice]
        return preds + y_mean

    def weights_for(self, gamma, alpha, unit_slice):
        """Refit weights on the scaled standardized design for chosen units."""
        X = np.hstack([g * Z for g, Z in zip(gamma, self.Ztr)])
        W, _ = ridge_weights(X, self.Yc[:, unit_slice], [alpha])
        return W[0]


def _map_ordered(fn, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _random_gamma(seed: int, iteration: int, n_bands: int,
                  concentration: float) -> np.ndarray:
    rng = np.random.default_rng((seed, iteration))
    return rng.dirichlet(np.full(n_bands, concentration))


def _as_response_matrix(responses) -> np.ndarray:
    Y = getattr(responses, "responses", responses)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2:
        raise DataError("responses must be a samples x units matrix")
    _check_finite("responses", Y)
    return Y


def banded_search(features: Sequence[FeatureSpace], responses, plan: SplitPlan,
                  ridge_cfg: Optional[RidgeConfig] = None,
                  search_cfg: Optional[BandedSearchConfig] = None,
                  threads: int = 1, store_weights: bool = False) -> FitResult:
    """Nested-CV banded ridge fit with per-unit hyperparameter selection."""
    ridge_cfg = ridge_cfg or RidgeConfig()
    search_cfg = search_cfg or BandedSearchConfig()
    Y = _as_response_matrix(responses)
    band_names, band_mats = group_bands(list(features))
    n_bands = len(band_names)
    n_samples, n_units = Y.shape
    if band_mats[0].shape[0] != n_samples:
        raise DataError("feature and response row counts differ")
    alphas = ridge_cfg.alphas

    masks = enumerate_masks(n_bands)
    test_pred = np.zeros((n_samples, n_units))
    intercept_pred = np.zeros((n_samples, n_units))
    chosen_gamma = np.zeros((len(plan.outer_folds), n_units, n_bands))
    chosen_alpha = np.zeros((len(plan.outer_folds), n_units))
    validation_r2 = np.zeros((len(plan.outer_folds), n_units))
    validation_folds = []
    n_random_iterations = []
    early_stopped = []
    all_weights = [] if store_weights else None

    for fold_pos, fold in enumerate(plan.outer_folds):
        inner = [_FoldData(band_mats, Y, f.train, f.validation)
                 for f in fold.inner_folds]
        val_indices = np.concatenate([f.eval_idx for f in inner])
        y_val = Y[val_indices]
        icpt_val = np.concatenate(
            [np.broadcast_to(f.y_mean, (len(f.eval_idx), n_units)) for f in inner]
        )
        mse_icpt = ((y_val - icpt_val) ** 2).mean(axis=0)
        if (mse_icpt == 0).any():
            bad = np.flatnonzero(mse_icpt == 0).tolist()
            raise DataError(f"constant validation target for units {bad}")

        def evaluate(gamma):
            pooled = np.concatenate(
                [f.predict_grid(gamma, alphas) for f in inner], axis=1
            )
            mse = ((pooled - y_val[None, :, :]) ** 2).mean(axis=1)
            r2 = 1.0 - mse / mse_icpt[None, :]
            alpha_idx = np.argmax(r2, axis=0)  # first max -> smallest alpha
            scores = r2[alpha_idx, np.arange(n_units)]
            best_pred = np.take_along_axis(
                pooled, alpha_idx[None, None, :], axis=0
            )[0]
            return scores, alpha_idx, best_pred

        best_score = np.full(n_units, -np.inf)
        best_cand = np.zeros(n_units, dtype=np.int64)
        best_alpha_idx = np.zeros(n_units, dtype=np.int64)
        best_val_pred = np.zeros((len(val_indices), n_units))
        candidates: list[np.ndarray] = []

        def fold_in(cand_idx, result):
            scores, alpha_idx, best_pred = result
            improved = scores > best_score
            if improved.any():
                best_score[improved] = scores[improved]
                best_cand[improved] = cand_idx
                best_alpha_idx[improved] = alpha_idx[improved]
                best_val_pred[:, improved] = best_pred[:, improved]

        for result in zip(
            range(len(masks)), _map_ordered(evaluate, masks, threads)
        ):
            candidates.append(masks[result[0]])
            fold_in(*result)

        n_random = 0
        stopped = False
        if n_bands > 1:
            prev_mean = best_score.mean()
            stall = 0
            t = 0
            while t < search_cfg.max_iters and not stopped:
                chunk = list(range(t, min(t + max(threads, 1),
                                          search_cfg.max_iters)))
                gammas = [
                    _random_gamma(search_cfg.seed, i, n_bands,
                                  search_cfg.dirichlet_concentration)
                    for i in chunk
                ]
                results = _map_ordered(evaluate, gammas, threads)
                for gamma, result in zip(gammas, results):
                    candidates.append(gamma)
                    fold_in(len(candidates) - 1, result)
                    n_random += 1
                    cur_mean = best_score.mean()
                    gain = cur_mean - prev_mean
                    prev_mean = cur_mean
                    stall = stall + 1 if gain < search_cfg.min_improvement else 0
                    if stall >= search_cfg.patience:
                        stopped = True
                        break
                t = chunk[-1] + 1

        # refit each unit's winner on train+validation, predict the test set
        trval = np.setdiff1d(np.arange(n_samples), fold.test)
        refit = _FoldData(band_mats, Y, trval, fold.test)
        fold_weights = np.zeros((n_units, sum(m.shape[1] for m in band_mats))) \
            if store_weights else None
        for cand_id in np.unique(best_cand):
            units = np.flatnonzero(best_cand == cand_id)
            gamma = candidates[cand_id]
            unit_alpha_idx = best_alpha_idx[units]
            uniq = np.unique(unit_alpha_idx)
            preds = refit.predict_grid(gamma, [alphas[i] for i in uniq],
                                       unit_slice=units)
            for pos, ai in enumerate(uniq):
                sel = unit_alpha_idx == ai
                test_pred[np.ix_(fold.test, units[sel])] = preds[pos][:, sel]
                if store_weights:
                    w = refit.weights_for(gamma, alphas[ai], units[sel])
                    fold_weights[units[sel], :] = w.T
        intercept_pred[fold.test, :] = refit.y_mean

        chosen_gamma[fold_pos] = np.stack([candidates[c] for c in best_cand])
        chosen_alpha[fold_pos] = np.asarray(alphas)[best_alpha_idx]
        validation_r2[fold_pos] = best_score
        validation_folds.append(ValidationFold(
            indices=val_indices, predictions=best_val_pred, intercepts=icpt_val
        ))
        n_random_iterations.append(n_random)
        early_stopped.append(stopped)
        if store_weights:
            all_weights.append(fold_weights)

    return FitResult(
        band_names=band_names,
        alphas=alphas,
        test_predictions=test_pred,
        intercept_predictions=intercept_pred,
        chosen_gamma=chosen_gamma,
        chosen_alpha=chosen_alpha,
        validation_r2=validation_r2,
        validation_folds=validation_folds,
        n_random_iterations=n_random_iterations,
        early_stopped=early_stopped,
        weights=all_weights,
    )


@dataclass
class LayerSelection:
    best_index: object           # int, or list[int] when fitting per seed
    scores: np.ndarray           # (n_candidates,) or (n_seeds, n_candidates)
    mean_best_score: float


def _clipped_mean_test_r2(feature_set, Y, plan, ridge_cfg, search_cfg,
                          threads) -> float:
    fit = banded_search(feature_set, Y, plan, ridge_cfg=ridge_cfg,
                        search_cfg=search_cfg, threads=threads)
    r2 = fit.test_r2(Y)
    return float(np.maximum(r2, 0.0).mean())


def select_best_layer(candidate_feature_sets, responses, plan: SplitPlan,
                      ridge_cfg: Optional[RidgeConfig] = None,
                      search_cfg: Optional[BandedSearchConfig] = None,
                      seeds: Optional[Sequence[int]] = None,
                      threads: int = 1) -> LayerSelection:
    """Fit each candidate feature set and pick the best by clipped mean
    test R^2 across units (ties go to the lowest index).

    With ``seeds``, ``candidate_feature_sets`` holds one candidate list per
    seed; the best candidate is chosen per seed and the mean of per-seed
    best scores is reported.
    """
    if len(candidate_feature_sets) == 0:
        raise DataError("no candidate feature sets")
    Y = _as_response_matrix(responses)
    ridge_cfg = ridge_cfg or RidgeConfig()
    search_cfg = search_cfg or BandedSearchConfig()

    if seeds is None:
        scores = np.array([
            _clipped_mean_test_r2(c, Y, plan, ridge_cfg, search_cfg, threads)
            for c in candidate_feature_sets
        ])
        best = int(np.argmax(scores))
        return LayerSelection(best, scores, float(scores[best]))

    if len(seeds) != len(candidate_feature_sets):
        raise DataError("one candidate list per seed is required")
    all_scores = []
    bests = []
    for seed, candidates in zip(seeds, candidate_feature_sets):
        cfg = replace(search_cfg, seed=int(seed))
        scores = np.array([
            _clipped_mean_test_r2(c, Y, plan, ridge_cfg, cfg, threads)
            for c in candidates
        ])
        all_scores.append(scores)
        bests.append(int(np.argmax(scores)))
    all_scores = np.stack(all_scores)
    mean_best = float(np.mean([s[b] for s, b in zip(all_scores, bests)]))
    return LayerSelection(bests, all_scores, mean_best)
