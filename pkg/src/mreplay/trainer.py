"""Session loop for continual score regression with feature replay.

Per session: train on the session's few-shot split (the base session also
gets the fine-tune pool). Each step always minimizes the regression loss
on the current batch; once the memory bank is non-empty it adds

* a projector alignment loss (current features vs projected frozen-encoder
  features),
* a replay regression loss on projected stored features,
* the graph regularizer over the joint replayed/current batch,

and takes one Adam step on the weighted sum. At session end the stored
features are refreshed through the projector exactly once, then the
finished session's features are stored by score-ordered uniform selection.

Method semantics are resolved into one shared loop:

* ``magr``: everything above,
* ``sequential-ft``: no memory at all,
* ``joint``: one session over the union of all training splits,
* ``replay-raw``: stores raw inputs, re-encoded at every replay step,
* ``replay-feature-naive``: stores features but never projects, refreshes
  or applies the graph term.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, fields, replace

import numpy as np

from . import autodiff as ad
from . import losses as ls
from . import memory as mem
from .data import ScoreScaler, Sample, SessionPlan
from .metrics import EvalMatrix, rho_aft, rho_avg, rho_fwt, spearman
from .models import (ModelBundle, components, default_spec, encode, freeze_copy,
                     init_bundle, make_rng, predict, project, regress)

METHODS = ("magr", "sequential-ft", "joint", "replay-raw", "replay-feature-naive")

STREAM_ORDER = 5
STREAM_REPLAY = 6
STREAM_EPS = 7
STREAM_REFERENCE = 8
STREAM_STORE = 9

ABLATION_FLAGS = ("no_mp", "no_residual", "no_ii_gr", "no_j_gr", "mse_gr",
                  "random_sampling", "reverse_kl", "abs_score_distance")


@dataclass(frozen=True)
class TrainConfig:
    method: str = "magr"
    lambda_p: float = 1.0
    lambda_r: float = 1.0
    b1: int = 5
    b2: int = 3
    epochs: int = 50
    patience: int = 10
    min_delta: float = 1e-5
    m: int = 10
    lr: float = 1e-4
    weight_decay: float = 1e-4
    no_mp: bool = False
    no_residual: bool = False
    no_ii_gr: bool = False
    no_j_gr: bool = False
    mse_gr: bool = False
    random_sampling: bool = False
    reverse_kl: bool = False
    abs_score_distance: bool = False
    lm_stop_grad: bool = False
    stratified_replay: bool = False
    classic_forgetting: bool = False
    held_out_only: bool = False
    online: bool = False
    seed: int = 0
    encoder_widths: tuple[int, ...] = (32, 64, 16)
    projector_widths: tuple[int, ...] = (16, 16, 16)
    trunk_widths: tuple[int, ...] = (16, 8)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; pick one of {METHODS}")
        if self.b1 < 1 or self.b2 < 1:
            raise ValueError(f"batch sizes must be >= 1, got b1={self.b1} b2={self.b2}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.min_delta < 0:
            raise ValueError(f"min_delta must be >= 0, got {self.min_delta}")
        if self.m < 1:
            raise ValueError(f"memory per session must be >= 1, got {self.m}")
        if self.lambda_p < 0 or self.lambda_r < 0:
            raise ValueError("loss weights must be >= 0")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ValueError(f"bad optimizer settings lr={self.lr} "
                             f"weight_decay={self.weight_decay}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")
        if self.no_mp and self.no_residual:
            raise ValueError("no_mp removes the projector entirely; "
                             "no_residual contradicts it")

    @property
    def effective_epochs(self) -> int:
        return 1 if self.online else self.epochs

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        known = {f.name for f in fields(TrainConfig)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config fields: {sorted(unknown)}")
        kw = dict(d)
        for key in ("encoder_widths", "projector_widths", "trunk_widths"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return TrainConfig(**kw)


@dataclass(frozen=True)
class _Resolved:
    """Method string + ablation flags collapsed into loop switches."""

    use_memory: bool
    store_raw: bool
    use_projector: bool
    residual: bool
    use_joint_term: bool
    use_block_terms: bool
    mse_gr: bool
    random_sampling: bool
    reverse_kl: bool
    signed_scores: bool

    @property
    def use_graph(self) -> bool:
        return self.use_joint_term or self.use_block_terms


def resolve(config: TrainConfig) -> _Resolved:
    no_mp, no_ii, no_j = config.no_mp, config.no_ii_gr, config.no_j_gr
    use_memory, store_raw = True, False
    if config.method in ("sequential-ft", "joint"):
        use_memory = False
    elif config.method == "replay-raw":
        store_raw, no_mp, no_ii, no_j = True, True, True, True
    elif config.method == "replay-feature-naive":
        no_mp, no_ii, no_j = True, True, True
    return _Resolved(use_memory=use_memory, store_raw=store_raw,
                     use_projector=not no_mp,
                     residual=not config.no_residual,
                     use_joint_term=not no_j, use_block_terms=not no_ii,
                     mse_gr=config.mse_gr,
                     random_sampling=config.random_sampling,
                     reverse_kl=config.reverse_kl,
                     signed_scores=not config.abs_score_distance)


@dataclass
class TrainState:
    bundle: ModelBundle
    bank: mem.MemoryBank
    adam: dict[str, ad.AdamState]
    rngs: dict[str, np.random.Generator]
    session: int = 0


@dataclass
class SessionReport:
    session: int
    epochs_run: int
    steps: int
    step_terms: list[dict]
    epoch_losses: list[float]
    wall_seconds: float


@dataclass
class RunResult:
    method: str
    seed: int
    n_sessions: int
    matrix: EvalMatrix
    reports: list[SessionReport]
    summary: dict
    state: TrainState


def bundle_spec_for(config: TrainConfig, input_width: int, feature_mode: bool):
    if feature_mode:
        d = input_width
        return default_spec(projector_widths=(d,) + tuple(config.projector_widths[1:-1]) + (d,),
                            trunk_widths=(d,) + tuple(config.trunk_widths[1:]),
                            feature_mode=True)
    return default_spec(d_x=input_width,
                        encoder_widths=tuple(config.encoder_widths),
                        projector_widths=tuple(config.projector_widths),
                        trunk_widths=tuple(config.trunk_widths))


def new_state(config: TrainConfig, input_width: int,
              feature_mode: bool = False) -> TrainState:
    spec = bundle_spec_for(config, input_width, feature_mode)
    bundle = init_bundle(spec, config.seed)
    adam = {name: ad.adam_init(params, lr=config.lr,
                               weight_decay=config.weight_decay)
            for name, params in components(bundle).items()}
    rngs = {
        "order": make_rng(config.seed, STREAM_ORDER),
        "replay": make_rng(config.seed, STREAM_REPLAY),
        "eps": make_rng(config.seed, STREAM_EPS),
        "store": make_rng(config.seed, STREAM_STORE),
    }
    return TrainState(bundle=bundle, bank=mem.MemoryBank(capacity=config.m),
                      adam=adam, rngs=rngs)


def _train_step(state: TrainState, xb: np.ndarray, yb: np.ndarray,
                config: TrainConfig, res: _Resolved) -> dict:
    bundle = state.bundle
    xt = ad.constant(xb)
    h_new = encode(bundle, xt)
    eps_new = state.rngs["eps"].standard_normal((xb.shape[0], 1))
    _, _, y_hat = regress(bundle, h_new, eps_new)
    l_d = ls.regression_loss(y_hat, yb.reshape(-1, 1))
    l_m = l_p = l_r = None
    if res.use_memory and state.bank.size > 0:
        if res.use_projector:
            h_frozen = encode(bundle, xt, frozen=True)
            h_projected = project(bundle, h_frozen, residual=res.residual)
            l_p = ls.projector_loss(h_new, h_projected)
        feats, y_old, _ = mem.sample_replay(state.bank, config.b1,
                                            state.rngs["replay"],
                                            stratified=config.stratified_replay)
        old_leaf = ad.constant(feats)
        if res.store_raw:
            h_old = encode(bundle, old_leaf)
        elif res.use_projector:
            h_old = project(bundle, old_leaf, residual=res.residual)
        else:
            h_old = old_leaf
        eps_old = state.rngs["eps"].standard_normal((feats.shape[0], 1))
        h_for_scoring = ad.stop_gradient(h_old) if config.lm_stop_grad else h_old
        _, _, y_hat_old = regress(bundle, h_for_scoring, eps_old)
        l_m = ls.regression_loss(y_hat_old, y_old.reshape(-1, 1))
        if res.use_graph:
            batch = ls.JointBatch(old=h_old, new=h_new,
                                  scores=np.concatenate([y_old, yb]))
            l_r = ls.graph_reg_loss(batch, joint=res.use_joint_term,
                                    intra_inter=res.use_block_terms,
                                    use_mse=res.mse_gr,
                                    reverse_kl=res.reverse_kl,
                                    signed=res.signed_scores)
    total = ls.total_loss(l_d, l_m, l_p, l_r,
                          lambda_p=config.lambda_p, lambda_r=config.lambda_r)
    grads = ad.backward(total, [[1.0]])
    for name, params in components(bundle).items():
        comp = {key: grads[t] for key, t in params.items() if t in grads}
        if comp:
            ad.adam_step(params, comp, state.adam[name])
    val = lambda t: None if t is None else float(t.value[0, 0])
    return {"l_d": val(l_d), "l_m": val(l_m), "l_p": val(l_p), "l_r": val(l_r),
            "total": float(total.value[0, 0])}


def train_session(state: TrainState, x: np.ndarray, y: np.ndarray,
                  ids: list[str], config: TrainConfig) -> SessionReport:
    """Train one session on normalized data and update the memory bank."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.ndim != 2 or x.shape[0] != y.size or len(ids) != y.size:
        raise ValueError(f"inconsistent session data: {x.shape} inputs, "
                         f"{y.size} scores, {len(ids)} ids")
    if y.size == 0:
        raise ValueError("empty training session")
    res = resolve(config)
    t = state.session + 1
    started = time.perf_counter()
    if t >= 2:
        freeze_copy(state.bundle)
    step_terms: list[dict] = []
    epoch_losses: list[float] = []
    best = np.inf
    streak = 0
    epochs_run = 0
    for _ in range(config.effective_epochs):
        perm = state.rngs["order"].permutation(y.size)
        batch_losses = []
        for lo in range(0, y.size, config.b2):
            idx = perm[lo:lo + config.b2]
            terms = _train_step(state, x[idx], y[idx], config, res)
            step_terms.append(terms)
            batch_losses.append(terms["total"])
        epochs_run += 1
        epoch_loss = float(np.mean(batch_losses))
        epoch_losses.append(epoch_loss)
        if best - epoch_loss < config.min_delta:
            streak += 1
        else:
            streak = 0
        best = min(best, epoch_loss)
        if streak >= config.patience:
            break
    if res.use_memory:
        if res.use_projector and state.bank.size > 0:
            def refreshed(stored: np.ndarray) -> np.ndarray:
                return project(state.bundle, ad.constant(stored),
                               residual=res.residual).value
            mem.refresh(state.bank, refreshed, t)
        if res.store_raw:
            stored_feats = x
        else:
            stored_feats = encode(state.bundle, x).value
        mem.store_session(state.bank, stored_feats, y, ids, t,
                          rng=state.rngs["store"],
                          random_sampling=res.random_sampling)
    state.session = t
    return SessionReport(session=t, epochs_run=epochs_run,
                         steps=len(step_terms), step_terms=step_terms,
                         epoch_losses=epoch_losses,
                         wall_seconds=time.perf_counter() - started)


# ------------------------------------------------------------------ driving


def _session_arrays(samples) -> tuple[np.ndarray, np.ndarray, list[str]]:
    x = np.stack([s.x for s in samples])
    y = np.array([s.score for s in samples], dtype=np.float64)
    ids = [s.sample_id for s in samples]
    return x, y, ids


def evaluate_on(bundle: ModelBundle, samples, scaler: ScoreScaler
                ) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic predictions vs truths, both in original score units."""
    x, y, _ = _session_arrays(samples)
    truth = scaler.denormalize(y)
    pred = scaler.denormalize(predict(bundle, x))
    return truth, pred


def _training_samples(plan: SessionPlan, t: int) -> tuple[Sample, ...]:
    split = plan.sessions[t - 1]
    if t == 1:
        return split.train + plan.fine_tune_pool
    return split.train


def run_continual(plan: SessionPlan, scaler: ScoreScaler,
                  config: TrainConfig, on_session=None) -> RunResult:
    """Drive a full run: T sessions (or one pooled session for ``joint``),
    evaluation after every session, and the aggregate metrics.

    ``on_session(state, t)`` is called after each session's evaluations,
    e.g. to persist checkpoints."""
    T = plan.n_sessions
    if T < 2:
        raise ValueError(f"need at least 2 sessions, got {T}")
    state = new_state(config, plan.input_width, plan.feature_mode)
    matrix = EvalMatrix(n_sessions=T)
    reports: list[SessionReport] = []
    ho = config.held_out_only

    def eval_cell(i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
        truth, pred = evaluate_on(state.bundle, plan.test_samples(j, ho), scaler)
        matrix.set_cell(i, j, spearman(truth, pred))
        return truth, pred

    if config.method == "joint":
        pooled = []
        for t in range(1, T + 1):
            pooled.extend(_training_samples(plan, t))
        x, y, ids = _session_arrays(pooled)
        reports.append(train_session(state, x, y, ids, config))
        truths, preds = [], []
        for j in range(1, T + 1):
            truth, pred = eval_cell(T, j)
            truths.append(truth)
            preds.append(pred)
        final = rho_avg(np.concatenate(truths), np.concatenate(preds))
        matrix.pooled[T] = final
        if on_session is not None:
            on_session(state, state.session)
        summary = {"method": config.method, "seed": config.seed,
                   "rho_avg": final, "rho_aft": None, "rho_fwt": None}
        return RunResult(method=config.method, seed=config.seed, n_sessions=T,
                         matrix=matrix, reports=reports, summary=summary,
                         state=state)

    reference = init_bundle(state.bundle.spec,
                            _reference_seed(config.seed))
    for t in range(2, T + 1):
        truth, pred = evaluate_on(reference, plan.test_samples(t, ho), scaler)
        matrix.reference[t] = spearman(truth, pred)

    for t in range(1, T + 1):
        x, y, ids = _session_arrays(_training_samples(plan, t))
        reports.append(train_session(state, x, y, ids, config))
        truths, preds = [], []
        for j in range(1, t + 1):
            truth, pred = eval_cell(t, j)
            truths.append(truth)
            preds.append(pred)
        matrix.pooled[t] = rho_avg(np.concatenate(truths), np.concatenate(preds))
        if t < T:
            eval_cell(t, t + 1)
        if on_session is not None:
            on_session(state, t)

    summary = {"method": config.method, "seed": config.seed,
               "rho_avg": matrix.pooled[T],
               "rho_aft": rho_aft(matrix, classic=config.classic_forgetting),
               "rho_fwt": rho_fwt(matrix)}
    return RunResult(method=config.method, seed=config.seed, n_sessions=T,
                     matrix=matrix, reports=reports, summary=summary,
                     state=state)


def _reference_seed(seed: int) -> int:
    # distinct deterministic seed for the forward-transfer reference model
    return seed * 2 + 1


def run_baseline(method: str, plan: SessionPlan, scaler: ScoreScaler,
                 config: TrainConfig) -> RunResult:
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; pick one of {METHODS}")
    return run_continual(plan, scaler, replace(config, method=method))


def feature_deviation(bundle_a: ModelBundle, bundle_b: ModelBundle, x) -> float:
    """Mean squared entrywise gap between the two encoders' features."""
    fa = encode(bundle_a, np.asarray(x, dtype=np.float64)).value
    fb = encode(bundle_b, np.asarray(x, dtype=np.float64)).value
    if fa.shape != fb.shape:
        raise ad.ShapeError(f"feature shapes differ: {fa.shape} vs {fb.shape}")
    return float(((fa - fb) ** 2).mean())


SWEEP_AXES = ("shots", "noise", "memory")


def run_sweep(axis: str, values, data_cfg, train_cfg: TrainConfig,
              seeds) -> list[dict]:
    """Grid of runs along one robustness axis; one result row per cell."""
    from .data import generate_synthetic, grade_split, inject_label_noise, \
        normalize_scores

    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; pick one of {SWEEP_AXES}")
    dataset = generate_synthetic(data_cfg)
    rows = []
    for value in values:
        for seed in seeds:
            shots = int(value) if axis == "shots" else data_cfg.shots
            plan = grade_split(dataset, data_cfg.T, shots, seed)
            noise = float(value) if axis == "noise" else data_cfg.label_noise
            if noise > 0:
                plan = inject_label_noise(plan, noise, seed)
            plan, scaler = normalize_scores(plan)
            cfg = replace(train_cfg, seed=seed,
                          m=int(value) if axis == "memory" else train_cfg.m)
            result = run_continual(plan, scaler, cfg)
            rows.append({"axis": axis, "value": value, "seed": seed,
                         "rho_avg": result.summary["rho_avg"],
                         "rho_aft": result.summary["rho_aft"],
                         "rho_fwt": result.summary["rho_fwt"]})
    return rows
