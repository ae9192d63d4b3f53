"""Analysis of four-alternative choice data from the representation study.

Pipeline: trials -> per subject/condition selection proportions -> OLS with
subject fixed effects and a Type II ANOVA; in parallel a trial-level logit
GLM (one binary row per trial and representation) with likelihood-ratio
omnibus tests against hierarchically reduced models.

Factors use treatment coding with the first level as reference.
"""
from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .distributions import chi2_sf, f_sf

log = logging.getLogger(__name__)

FACTOR_LEVELS = {
    "representation": ("G", "I", "M", "N"),
    "distance": ("D0", "D1", "D2", "D3", "D4"),
    "lod": ("L0", "L1", "L2", "L3"),
    "mode": ("Image", "Video"),
}
STUDY_FACTORS = ("representation", "distance", "lod", "mode")

# terms of the trial-level GLM whose omnibus tests are reported
GLM_EFFECTS = (
    ("representation",), ("distance",), ("lod",), ("mode",),
    ("representation", "distance"), ("representation", "lod"), ("representation", "mode"),
    ("lod", "distance"), ("representation", "lod", "distance"),
)

GLM_TOL = 1e-8
GLM_MAX_ITER = 50
SEPARATION_LIMIT = 30.0


class RankDeficientError(np.linalg.LinAlgError):
    pass


class SeparationError(ArithmeticError):
    pass


# -- data -------------------------------------------------------------------

@dataclass(frozen=True)
class TrialRecord:
    subject: str
    mode: str
    distance: str
    lod: str
    chosen: str
    repetition: int = 0

    def __post_init__(self):
        for name, allowed in (("mode", FACTOR_LEVELS["mode"]),
                              ("distance", FACTOR_LEVELS["distance"]),
                              ("lod", FACTOR_LEVELS["lod"]),
                              ("chosen", FACTOR_LEVELS["representation"])):
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name}={getattr(self, name)!r} not in {allowed}")


TRIAL_COLUMNS = ("subject", "mode", "distance", "lod", "chosen", "repetition")


def read_trials(path) -> List[TrialRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(TRIAL_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"trial file lacks columns {sorted(missing)}")
        trials = [TrialRecord(r["subject"].strip(), r["mode"].strip(), r["distance"].strip(),
                              r["lod"].strip(), r["chosen"].strip(), int(r["repetition"]))
                  for r in reader]
    check_unique(trials)
    return trials


def write_trials(trials: Sequence[TrialRecord], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIAL_COLUMNS)
        for t in trials:
            w.writerow([t.subject, t.mode, t.distance, t.lod, t.chosen, t.repetition])
    return path


def check_unique(trials):
    keys = [(t.subject, t.mode, t.distance, t.lod, t.repetition) for t in trials]
    if len(set(keys)) != len(keys):
        raise ValueError("duplicate (subject, mode, distance, lod, repetition) trials")


def trials_frame(trials: Sequence[TrialRecord]) -> pd.DataFrame:
    return pd.DataFrame([t.__dict__ for t in trials], columns=list(TRIAL_COLUMNS))


def selection_proportions(trials: Sequence[TrialRecord]) -> pd.DataFrame:
    """Share of repetitions choosing each representation, per subject and condition.

    Every observed cell gets one row per representation (zeros included), so
    proportions sum to one within a cell.
    """
    if not trials:
        raise ValueError("no trials")
    df = trials_frame(trials)
    cell = ["subject", "mode", "distance", "lod"]
    counts = (df.groupby(cell + ["chosen"]).size().unstack("chosen")
              .reindex(columns=list(FACTOR_LEVELS["representation"]), fill_value=0)
              .fillna(0))
    props = counts.div(counts.sum(axis=1), axis=0)
    out = props.stack().rename("proportion").reset_index()
    out = out.rename(columns={"chosen": "representation"})
    return out.sort_values(cell + ["representation"]).reset_index(drop=True)


def synthetic_trials(n_subjects: int = 24, repetitions: int = 3, seed: int = 0,
                     effects: bool = True) -> List[TrialRecord]:
    """Random choice data shaped like the study design.

    With ``effects`` the mesh dominates near/high detail and the Gaussians
    and impostors gain as distance and LoD increase; without it every choice
    is uniform.
    """
    rng = np.random.default_rng(seed)
    reps = FACTOR_LEVELS["representation"]
    out = []
    for s in range(n_subjects):
        subj = f"S{s + 1:02d}"
        for mode in FACTOR_LEVELS["mode"]:
            for di, dist in enumerate(FACTOR_LEVELS["distance"]):
                for li, lod in enumerate(FACTOR_LEVELS["lod"]):
                    if effects:
                        far = di / 4.0
                        low = li / 3.0
                        w = np.array([1.0 + 1.5 * far + 1.0 * low,      # G
                                      0.4 + 1.2 * far * low,            # I
                                      3.0 - 1.2 * far - 1.2 * low,      # M
                                      0.8 + 0.2 * far])                 # N
                    else:
                        w = np.ones(4)
                    p = w / w.sum()
                    for r in range(repetitions):
                        out.append(TrialRecord(subj, mode, dist, lod, reps[rng.choice(4, p=p)], r))
    return out


# -- design matrices ------------------------------------------------------------

@dataclass
class DesignMatrix:
    y: np.ndarray
    X: np.ndarray
    columns: List[str]
    terms: List[tuple]  # term owning each column; () is the intercept

    def term_columns(self, term) -> np.ndarray:
        return np.array([i for i, t in enumerate(self.terms) if t == tuple(term)], dtype=int)

    def subset(self, terms) -> "DesignMatrix":
        keep = {tuple(t) for t in terms} | {()}
        idx = [i for i, t in enumerate(self.terms) if t in keep]
        return DesignMatrix(self.y, self.X[:, idx], [self.columns[i] for i in idx],
                            [self.terms[i] for i in idx])


def factorial_effects(factors: Sequence[str]) -> List[tuple]:
    """All main effects and interactions, lower orders first."""
    return [c for k in range(1, len(factors) + 1) for c in itertools.combinations(factors, k)]


def _levels(df, factor, levels):
    if levels and factor in levels:
        return list(levels[factor])
    return sorted(df[factor].astype(str).unique())


def build_design(df: pd.DataFrame, response: str, effects: Sequence[tuple],
                 fixed: Sequence[str] = ("subject",), levels: Optional[dict] = None) -> DesignMatrix:
    """Intercept + treatment-coded ``effects`` + dummy-coded fixed-effect factors."""
    levels = dict(FACTOR_LEVELS, **(levels or {}))
    n = len(df)
    dummies: Dict[str, List[Tuple[str, np.ndarray]]] = {}
    factors = {f for e in effects for f in e} | set(fixed)
    for f in factors:
        vals = df[f].astype(str).to_numpy()
        lv = _levels(df, f, levels)
        unknown = set(vals) - set(lv)
        if unknown:
            raise ValueError(f"factor {f} has unexpected levels {sorted(unknown)}")
        dummies[f] = [(f"{f}[{v}]", (vals == v).astype(np.float64)) for v in lv[1:]]

    cols = [np.ones(n)]
    names = ["intercept"]
    terms: List[tuple] = [()]
    for e in effects:
        e = tuple(e)
        for combo in itertools.product(*(dummies[f] for f in e)):
            names.append(":".join(c[0] for c in combo))
            col = np.ones(n)
            for c in combo:
                col = col * c[1]
            cols.append(col)
            terms.append(e)
    for f in fixed:
        for name, col in dummies[f]:
            names.append(name)
            cols.append(col)
            terms.append((f,))
    y = df[response].to_numpy(dtype=np.float64)
    return DesignMatrix(y, np.column_stack(cols), names, terms)


# -- OLS / ANOVA -----------------------------------------------------------------

@dataclass
class OLSFit:
    coef: np.ndarray
    rss: float
    df_resid: int
    rank: int


def fit_ols(X, y=None) -> OLSFit:
    """Least squares; ``X`` may be a :class:`DesignMatrix`."""
    if isinstance(X, DesignMatrix):
        X, y = X.X, X.y
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rank = int(np.linalg.matrix_rank(X))
    if rank < X.shape[1]:
        raise RankDeficientError(f"design has rank {rank} < {X.shape[1]} columns")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    return OLSFit(coef, float(resid @ resid), X.shape[0] - rank, rank)


@dataclass
class AnovaRow:
    effect: str
    df: int
    ss: float
    F: float
    eta_sq: float
    p: float


@dataclass
class AnovaTable:
    rows: List[AnovaRow]
    df_resid: int
    rss: float
    ss_total: float

    def row(self, effect: str) -> AnovaRow:
        for r in self.rows:
            if r.effect == effect:
                return r
        raise KeyError(effect)


def effect_name(term) -> str:
    return " x ".join(t.capitalize() if t != "lod" else "LoD" for t in term)


def anova_type2(data: pd.DataFrame, response: str = "proportion",
                effects: Optional[Sequence[tuple]] = None, fixed: Sequence[str] = ("subject",),
                levels: Optional[dict] = None, design: Optional[DesignMatrix] = None) -> AnovaTable:
    """Type II sums of squares for every effect of an OLS model.

    For effect E, SS(E) = RSS(model without E and without every term that
    contains E) - RSS(same model plus E). F uses the full model's residual
    mean square; eta squared is SS(E) over the total sum of squares.
    """
    if effects is None:
        effects = factorial_effects(STUDY_FACTORS)
    effects = [tuple(e) for e in effects]
    if design is None:
        design = build_design(data, response, effects, fixed, levels)
    fixed_terms = [(f,) for f in fixed]
    full = fit_ols(design)
    mse = full.rss / full.df_resid if full.df_resid > 0 else math.nan
    y = design.y
    ss_total = float(np.sum((y - y.mean()) ** 2))

    rows = []
    for e in effects:
        base = [t for t in effects if not set(e) <= set(t)] + fixed_terms
        without = fit_ols(design.subset(base))
        with_e = fit_ols(design.subset(base + [e]))
        df_e = with_e.rank - without.rank
        ss = max(0.0, without.rss - with_e.rss)
        F = (ss / df_e) / mse if mse > 0 else math.inf
        p = f_sf(F, df_e, full.df_resid) if full.df_resid > 0 else math.nan
        rows.append(AnovaRow(effect_name(e), df_e, ss, F,
                             ss / ss_total if ss_total > 0 else 0.0, p))
    return AnovaTable(rows, full.df_resid, full.rss, ss_total)


def effect_df(term, levels=FACTOR_LEVELS) -> int:
    """Columns contributed by a treatment-coded term: product of (levels - 1)."""
    return int(np.prod([len(levels[f]) - 1 for f in term]))


# -- logistic GLM ------------------------------------------------------------------

@dataclass
class GLMFit:
    coef: np.ndarray
    deviance: float
    converged: bool
    iterations: int
    rank: int = 0
    history: List[float] = field(default_factory=list)


def binomial_deviance(y, mu, weights=None) -> float:
    y = np.asarray(y, dtype=np.float64)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=np.float64)
    mu = np.clip(mu, 1e-300, 1 - 1e-16)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(y > 0, y * np.log(y / mu), 0.0)
        b = np.where(y < 1, (1 - y) * np.log((1 - y) / (1 - mu)), 0.0)
    return float(2.0 * np.sum(w * (a + b)))


def _expit(eta):
    return 0.5 * (1.0 + np.tanh(0.5 * eta))


def fit_logit_glm(X, y=None, weights=None, tol: float = GLM_TOL,
                  max_iter: int = GLM_MAX_ITER) -> GLMFit:
    """Binomial logit GLM by iteratively reweighted least squares.

    ``y`` holds success proportions (0/1 for single trials) and ``weights``
    the number of trials per row. Iterates until the relative deviance change
    drops below ``tol`` or ``max_iter`` is reached; a step that raises the
    deviance is halved. Raises :class:`SeparationError` when a coefficient
    ends up beyond +-30 and :class:`RankDeficientError` for singular designs.
    """
    if isinstance(X, DesignMatrix):
        X, y = X.X, X.y
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=np.float64)
    rank = int(np.linalg.matrix_rank(X))
    if rank < X.shape[1]:
        raise RankDeficientError(f"design has rank {rank} < {X.shape[1]} columns")

    mu = (w * y + 0.5) / (w + 1.0)
    eta = np.log(mu / (1 - mu))
    beta = None
    dev_old = None
    history = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        var = np.maximum(mu * (1 - mu), 1e-12)
        z = eta + (y - mu) / var
        sw = np.sqrt(w * var)
        new, *_ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
        eta_new = X @ new
        dev = binomial_deviance(y, _expit(eta_new), w)
        if dev_old is not None:
            halvings = 0
            while dev > dev_old and halvings < 30:
                new = 0.5 * (beta + new)
                eta_new = X @ new
                dev = binomial_deviance(y, _expit(eta_new), w)
                halvings += 1
        beta, eta, mu = new, eta_new, _expit(eta_new)
        history.append(dev)
        if dev_old is not None and abs(dev - dev_old) / (abs(dev) + 0.1) < tol:
            converged = True
            break
        dev_old = dev

    if np.max(np.abs(beta)) > SEPARATION_LIMIT:
        raise SeparationError(f"coefficient magnitude {np.max(np.abs(beta)):.1f} exceeds "
                              f"{SEPARATION_LIMIT}: the data are (quasi-)separated")
    if not converged:
        log.warning("IRLS stopped after %d iterations without converging", it)
    return GLMFit(beta, history[-1], converged, it, rank, history)


@dataclass
class LRTest:
    statistic: float
    df: int
    p: float


def lr_test(full: GLMFit, reduced: GLMFit, df_diff: Optional[int] = None,
            tol: float = 1e-6) -> LRTest:
    """Likelihood-ratio test of a nested model against the full one."""
    if df_diff is None:
        df_diff = full.rank - reduced.rank
    lr = reduced.deviance - full.deviance
    if lr < -tol * (1.0 + abs(full.deviance)):
        raise ValueError(f"negative LR statistic {lr:.3g}: models are not nested or did not converge")
    lr = max(lr, 0.0)
    p = chi2_sf(lr, df_diff) if df_diff > 0 else 1.0
    return LRTest(lr, df_diff, p)


def choice_long_format(trials: Sequence[TrialRecord]) -> pd.DataFrame:
    """One row per trial and representation with ``chosen`` in {0, 1}."""
    rows = []
    for t in trials:
        for rep in FACTOR_LEVELS["representation"]:
            rows.append((t.subject, t.mode, t.distance, t.lod, rep, float(t.chosen == rep)))
    return pd.DataFrame(rows, columns=["subject", "mode", "distance", "lod",
                                       "representation", "chosen"])


@dataclass
class OmnibusRow:
    effect: str
    statistic: float
    df: int
    p: float
    note: str = ""


def glm_omnibus(trials: Sequence[TrialRecord], effects: Sequence[tuple] = GLM_EFFECTS,
                fixed: Sequence[str] = ("subject",)) -> List[OmnibusRow]:
    """LR omnibus test per effect against the model without it and its higher-order terms.

    The full model holds ``effects`` plus subject fixed effects; df is the
    difference in parameter counts.
    """
    effects = [tuple(e) for e in effects]
    long = choice_long_format(trials)
    design = build_design(long, "chosen", effects, fixed)
    fixed_terms = [(f,) for f in fixed]
    full = fit_logit_glm(design)
    out = []
    for e in effects:
        reduced_terms = [t for t in effects if not set(e) <= set(t)] + fixed_terms
        try:
            reduced = fit_logit_glm(design.subset(reduced_terms))
            r = lr_test(full, reduced)
            out.append(OmnibusRow(effect_name(e), r.statistic, r.df, r.p))
        except (SeparationError, RankDeficientError) as exc:
            out.append(OmnibusRow(effect_name(e), math.nan, 0, math.nan, str(exc)))
    return out


# -- reporting ----------------------------------------------------------------------

def _fmt_p(p):
    if math.isnan(p):
        return "nan"
    return "<0.001" if p < 0.001 else f"{p:.3f}"


def write_anova(table: AnovaTable, out_dir) -> Tuple[Path, Path]:
    out_dir = Path(out_dir)
    csv_path = out_dir / "anova.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["effect", "df", "ss", "F", "eta_sq", "p"])
        for r in table.rows:
            w.writerow([r.effect, r.df, f"{r.ss:.6g}", f"{r.F:.4f}", f"{r.eta_sq:.4f}", f"{r.p:.6g}"])
    width = max(len(r.effect) for r in table.rows)
    lines = [f"{'Effect':<{width}}  {'df':>4} {'F':>9} {'eta^2':>7} {'p':>7}"]
    for r in table.rows:
        lines.append(f"{r.effect:<{width}}  {r.df:>4} {r.F:>9.2f} {r.eta_sq:>7.3f} {_fmt_p(r.p):>7}")
    lines.append(f"denominator df = {table.df_resid}")
    txt_path = out_dir / "anova.txt"
    txt_path.write_text("\n".join(lines) + "\n")
    return csv_path, txt_path


def write_omnibus(rows: Sequence[OmnibusRow], out_dir) -> Tuple[Path, Path]:
    out_dir = Path(out_dir)
    csv_path = out_dir / "lr_tests.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["effect", "LR", "df", "p", "note"])
        for r in rows:
            w.writerow([r.effect, f"{r.statistic:.4f}", r.df, f"{r.p:.6g}", r.note])
    width = max(len(r.effect) for r in rows)
    lines = [f"{'Effect':<{width}}  {'LR':>9} {'df':>4} {'p':>7}"]
    for r in rows:
        lines.append(f"{r.effect:<{width}}  {r.statistic:>9.2f} {r.df:>4} {_fmt_p(r.p):>7}"
                     + (f"  ({r.note})" if r.note else ""))
    txt_path = out_dir / "lr_tests.txt"
    txt_path.write_text("\n".join(lines) + "\n")
    return csv_path, txt_path
