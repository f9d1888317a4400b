"""Synthetic tasks, training loops, and parameter audits.

Tasks:

* ``rotation3d`` -- learn a fixed proper rotation y = W x with a single
  structured layer (d = k = 3).
* ``hamilton`` -- learn the quaternion left product y = q * p from data
  with an n = 4 layer; ``freeze_rule`` pins the rule tensor to the fixed
  quaternion basis so only four scalars remain.
* ``copy-seq`` / ``reverse-seq`` -- token-level transduction with the
  encoder-decoder model.

Every run is a pure function of (spec, seed): datasets, batching,
initialization and evaluation all draw from PCG64 streams derived from the
spec seed, so replays produce bit-identical loss series.
"""

import hashlib
import json
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import container
from .layer import PhmParams, build_H, phm_forward, phm_init, save_phm_params
from .models import BOS_ID, ModelConfig, PhmTransformer, count_transformer_params
from .optim import global_grad_norm, make_optimizer
from .quaternion import Quaternion, hamilton, hamilton_kron_basis, random_quaternion
from .rng import make_rng
from .tensor import Tensor, backward, mean_all, mul, sub

__all__ = [
    "ExperimentSpec", "RunRecord", "RunError", "SpecError",
    "gen_rotation_dataset", "gen_hamilton_dataset", "gen_copy_dataset",
    "run_experiment", "param_audit", "random_rotation",
]

TASKS = ("rotation3d", "hamilton", "copy-seq", "reverse-seq")


class SpecError(ValueError):
    """Malformed or inconsistent experiment spec."""


class RunError(RuntimeError):
    """Training failed (diverged); carries the partial record."""

    def __init__(self, message, record):
        super().__init__(message)
        self.record = record


_SPEC_FIELDS = {
    "task", "n", "steps", "batch_size", "seed", "lr", "optimizer",
    "log_interval", "dims", "freeze_rule", "stop_loss",
    "target_accuracy", "eval_interval", "eval_size",
}


@dataclass
class ExperimentSpec:
    """Declarative description of one training run."""

    task: str
    n: int
    steps: int
    batch_size: int
    seed: int
    lr: float
    optimizer: str = "adam"
    log_interval: int = 100
    dims: dict = field(default_factory=dict)
    freeze_rule: bool = False
    stop_loss: float = None
    target_accuracy: float = None
    eval_interval: int = 100
    eval_size: int = 256

    @staticmethod
    def from_dict(raw: dict) -> "ExperimentSpec":
        """Strict construction: unknown keys are errors, not warnings."""
        unknown = set(raw) - _SPEC_FIELDS
        if unknown:
            raise SpecError(f"unknown spec keys: {sorted(unknown)}")
        missing = {"task", "n", "steps", "batch_size", "seed", "lr"} - set(raw)
        if missing:
            raise SpecError(f"missing spec keys: {sorted(missing)}")
        spec = ExperimentSpec(**raw)
        spec.validate()
        return spec

    @staticmethod
    def from_json(path) -> "ExperimentSpec":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise SpecError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}")
        if not isinstance(raw, dict):
            raise SpecError(f"{path}: top level must be an object")
        return ExperimentSpec.from_dict(raw)

    def validate(self) -> "ExperimentSpec":
        if self.task not in TASKS:
            raise SpecError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.steps < 1 or self.batch_size < 1:
            raise SpecError("steps and batch_size must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise SpecError(f"unknown optimizer {self.optimizer!r}")
        if self.task == "rotation3d":
            d = self.dims.get("d", 3)
            k = self.dims.get("k", 3)
            if (d, k) != (3, 3):
                raise SpecError("rotation3d is a 3 -> 3 task")
            if d % self.n or k % self.n:
                raise SpecError(f"n={self.n} must divide 3 for rotation3d")
        elif self.task == "hamilton":
            d = self.dims.get("d", 4)
            k = self.dims.get("k", 4)
            if (d, k) != (4, 4):
                raise SpecError("hamilton is a 4 -> 4 task")
            if self.n != 4:
                raise SpecError("hamilton requires n=4")
        else:
            cfg = self._model_config()
            cfg.validate()
        return self

    def _model_config(self) -> ModelConfig:
        dims = dict(self.dims)
        needed = {"layers", "d", "d_ff", "heads", "vocab", "seq_len"}
        missing = needed - set(dims)
        if missing:
            raise SpecError(f"sequence task dims missing keys: {sorted(missing)}")
        extra = set(dims) - needed - {"dropout"}
        if extra:
            raise SpecError(f"sequence task dims has unknown keys: {sorted(extra)}")
        return ModelConfig(
            layers=dims["layers"], d=dims["d"], d_ff=dims["d_ff"],
            heads=dims["heads"], n=self.n, vocab=dims["vocab"],
            max_len=dims["seq_len"] + 2, dropout=dims.get("dropout", 0.0),
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def spec_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


@dataclass
class RunRecord:
    """Per-step series plus final summary for one run."""

    spec_hash: str
    steps: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    final_loss: float = None
    final_metric: float = None
    extra: dict = field(default_factory=dict)
    params: object = None  # trained model, in-memory only

    def append(self, step, loss, grad_norm, wall):
        self.steps.append(int(step))
        self.losses.append(float(loss))
        self.grad_norms.append(float(grad_norm))
        self.wall_ms.append(float(wall))

    def save_csv(self, path) -> None:
        lines = ["step,loss,grad_norm,wall_ms"]
        for s, l, g, w in zip(self.steps, self.losses, self.grad_norms, self.wall_ms):
            lines.append(f"{s},{l!r},{g!r},{w:.3f}")
        Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# dataset generators
# ---------------------------------------------------------------------------

def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """A proper rotation: orthogonal with determinant +1."""
    g = rng.standard_normal((3, 3))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def gen_rotation_dataset(seed: int, count: int):
    """Pairs y = W x with one fixed rotation W and x uniform in the unit ball.

    Returns (X, Y, W); X rows are ball samples, Y = X @ W^T exactly.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = make_rng(seed)
    w = random_rotation(rng)
    direction = rng.standard_normal((count, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = rng.random(count) ** (1.0 / 3.0)
    x = direction * radius[:, None]
    y = x @ w.T
    return x, y, w


def gen_hamilton_dataset(seed: int, count: int):
    """Pairs y = q * p with one fixed quaternion q and p standard normal.

    Targets go through the scalar quaternion oracle, not any layer code.
    Returns (P, Y, q).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = make_rng(seed)
    q = random_quaternion(rng)
    p = rng.standard_normal((count, 4))
    y = np.empty_like(p)
    for i in range(count):
        y[i] = hamilton(q, Quaternion.from_array(p[i])).as_array()
    return p, y, q


def gen_copy_dataset(seed: int, vocab: int, length: int, count: int,
                     reverse: bool = False):
    """Token sequences with target = source (or reversed source).

    Ids 0..2 are reserved (pad/bos/eos); payload tokens are >= 3.
    """
    if vocab < 4:
        raise ValueError("vocab must leave room for payload tokens beyond pad/bos/eos")
    rng = make_rng(seed)
    src = rng.integers(3, vocab, size=(count, length), dtype=np.int64)
    tgt = src[:, ::-1].copy() if reverse else src.copy()
    return src, tgt


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _mse(pred: Tensor, target: np.ndarray) -> Tensor:
    diff = sub(pred, Tensor(target))
    return mean_all(mul(diff, diff))


def _regression_data(spec: ExperimentSpec):
    count = max(4096, spec.batch_size) + 1024
    if spec.task == "rotation3d":
        x, y, truth = gen_rotation_dataset(spec.seed, count)
    else:
        x, y, truth = gen_hamilton_dataset(spec.seed, count)
    return (x[:-1024], y[:-1024]), (x[-1024:], y[-1024:]), truth


def _build_regression_model(spec: ExperimentSpec) -> PhmParams:
    # these tasks intentionally run at the smallest dims with nontrivial
    # rule tensors, where the k*d < n^4 advisory always fires
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        if spec.task == "rotation3d":
            return phm_init(spec.n, 3, 3, seed=spec.seed + 1)
        if spec.freeze_rule:
            rng = make_rng(spec.seed + 1)
            a = Tensor(hamilton_kron_basis(), requires_grad=False)
            s = Tensor(rng.uniform(-0.5, 0.5, size=(4, 1, 1)), requires_grad=True)
            return PhmParams(4, 4, 4, a, s, b=None)
        return phm_init(4, 4, 4, seed=spec.seed + 1, bias=False)


def _run_regression(spec: ExperimentSpec, record: RunRecord) -> RunRecord:
    (train_x, train_y), (eval_x, eval_y), truth = _regression_data(spec)
    model = _build_regression_model(spec)
    params = model.parameters()
    opt = make_optimizer(spec.optimizer, params, spec.lr)
    batch_rng = make_rng(spec.seed + 2)

    def eval_mse() -> float:
        return float(_mse(phm_forward(model, Tensor(eval_x)), eval_y).data)

    t_prev = time.perf_counter()
    for step in range(1, spec.steps + 1):
        idx = batch_rng.integers(0, train_x.shape[0], size=spec.batch_size)
        loss = _mse(phm_forward(model, Tensor(train_x[idx])), train_y[idx])
        loss_val = float(loss.data)
        if not np.isfinite(loss_val):
            record.params = model
            raise RunError(f"loss diverged at step {step}", record)
        opt.zero_grad()
        backward(loss)
        gnorm = global_grad_norm(params)
        opt.step()
        now = time.perf_counter()
        record.append(step, loss_val, gnorm, (now - t_prev) * 1e3)
        t_prev = now
        if spec.stop_loss is not None and step % spec.eval_interval == 0:
            if eval_mse() < spec.stop_loss:
                break

    record.final_loss = record.losses[-1]
    record.final_metric = eval_mse()
    record.params = model
    if spec.task == "rotation3d":
        record.extra["rotation"] = truth.tolist()
    else:
        record.extra["quaternion"] = list(truth.as_array())
        record.extra["final_H"] = build_H(model).data.tolist()
    return record


def _run_sequence(spec: ExperimentSpec, record: RunRecord) -> RunRecord:
    cfg = spec._model_config()
    reverse = spec.task == "reverse-seq"
    seq_len = spec.dims["seq_len"]
    model = PhmTransformer(cfg, seed=spec.seed + 1)
    params = model.parameters()
    opt = make_optimizer(spec.optimizer, params, spec.lr)
    batch_rng = make_rng(spec.seed + 2)
    eval_src, eval_tgt = gen_copy_dataset(spec.seed + 3, cfg.vocab, seq_len,
                                          spec.eval_size, reverse=reverse)

    def decoder_inputs(tgt):
        dec = np.full_like(tgt, BOS_ID)
        dec[:, 1:] = tgt[:, :-1]
        return dec

    def eval_accuracy() -> float:
        logits = model.forward(eval_src, decoder_inputs(eval_tgt))
        pred = np.argmax(logits.data, axis=-1)
        return float((pred == eval_tgt).mean())

    t_prev = time.perf_counter()
    for step in range(1, spec.steps + 1):
        src = batch_rng.integers(3, cfg.vocab, size=(spec.batch_size, seq_len),
                                 dtype=np.int64)
        tgt = src[:, ::-1].copy() if reverse else src
        loss = model.loss(src, decoder_inputs(tgt), tgt)
        loss_val = float(loss.data)
        if not np.isfinite(loss_val):
            record.params = model
            raise RunError(f"loss diverged at step {step}", record)
        opt.zero_grad()
        backward(loss)
        gnorm = global_grad_norm(params)
        opt.step()
        now = time.perf_counter()
        record.append(step, loss_val, gnorm, (now - t_prev) * 1e3)
        t_prev = now
        if spec.target_accuracy is not None and step % spec.eval_interval == 0:
            acc = eval_accuracy()
            if acc >= spec.target_accuracy:
                record.extra["stopped_at"] = step
                break

    record.final_loss = record.losses[-1]
    record.final_metric = eval_accuracy()
    record.params = model
    return record


def run_experiment(spec: ExperimentSpec, out_dir=None) -> RunRecord:
    """Train per spec; optionally persist record, spec, and checkpoint.

    On divergence raises :class:`RunError` after persisting whatever was
    recorded (when ``out_dir`` is given).
    """
    spec.validate()
    record = RunRecord(spec_hash=spec.spec_hash())
    try:
        if spec.task in ("rotation3d", "hamilton"):
            record = _run_regression(spec, record)
        else:
            record = _run_sequence(spec, record)
    except RunError:
        if out_dir is not None:
            _persist(spec, record, out_dir, partial=True)
        raise
    if out_dir is not None:
        _persist(spec, record, out_dir, partial=False)
    return record


def _persist(spec: ExperimentSpec, record: RunRecord, out_dir, partial: bool):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    record.save_csv(out / "record.csv")
    meta = spec.to_dict()
    meta["spec_hash"] = record.spec_hash
    meta["partial"] = partial
    if record.final_metric is not None:
        meta["final_metric"] = record.final_metric
    container.save_sidecar(out / "spec.json", meta)
    model = record.params
    if isinstance(model, PhmParams):
        save_phm_params(out / "checkpoint.bin", model, {"spec_hash": record.spec_hash})
    elif isinstance(model, PhmTransformer):
        arrays = {name: p.data for name, p in model.named_parameters().items()}
        container.save_arrays(out / "checkpoint.bin", arrays)
        manifest = {"config": asdict(model.cfg), "keys": list(arrays),
                    "spec_hash": record.spec_hash}
        container.save_sidecar(out / "checkpoint.bin.json", manifest)


# ---------------------------------------------------------------------------
# parameter audit
# ---------------------------------------------------------------------------

def param_audit(n_values, layers: int = 4, d: int = 512, d_ff: int = 2048,
                heads: int = 8):
    """Non-embedding parameter counts and savings vs the n=1 baseline.

    Counts come from the closed-form model total (pinned to element
    enumeration by tests); embeddings and the vocabulary projection are
    excluded since they do not scale with n.
    """
    base = count_transformer_params(layers, d, d_ff, heads, 1)
    rows = []
    for n in n_values:
        count = count_transformer_params(layers, d, d_ff, heads, n)
        rows.append({
            "n": int(n),
            "params": int(count),
            "savings_pct": 100.0 * (1.0 - count / base),
        })
    return rows
