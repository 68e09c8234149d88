"""Desk-scale training of a front-end plus a linear classifier on toy signals.

The model is ``front-end -> per-channel temporal pooling -> affine head``.
The default pooling is the lag-one autocorrelation of each feature channel,
``z[c] = mean_t x[c, t] * x[c, t + 1]``. Under instance normalization every
channel has zero mean and unit variance, so a plain time average would be
identically zero; the lag-one statistic instead measures how much of a
channel's variation is slow (the on/off envelope of the class band) rather
than frame-to-frame noise. ``pooling="mean"`` is available for comparison.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np

from .frontend import FilterParams, FrontendConfig, frontend_backward, frontend_forward, init_params
from .signal_io import N_TOY_CLASSES, ToyExample, toy_dataset
from .tensor_core import ContractError, NumericalError, Param

POOLINGS = ("lag1", "mean")
DEFAULT_LR = 0.02
FRONTEND_LR_SCALE = 0.1


class DivergenceError(NumericalError):
    def __init__(self, name: str):
        self.param = name
        super().__init__(f"non-finite gradient or update in parameter {name!r}")


@dataclass
class Optimizer:
    """SGD with heavy-ball momentum: ``v <- m v + g; p <- p - lr s v``.

    `lr_scale` maps a parameter name to a step multiplier ``s`` (default 1).
    """
    learning_rate: float = DEFAULT_LR
    momentum: float = 0.9
    lr_scale: dict = field(default_factory=dict)
    velocity: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ContractError(f"learning rate must be positive, got {self.learning_rate}")


def sgd_step(optimizer: Optimizer, params: list[Param]) -> None:
    """Update every trainable param in place, then zero all gradients.

    Velocities are keyed by ``Param.name``, which must be unique.
    """
    live = [p for p in params if p.trainable]
    for p in live:
        if not np.all(np.isfinite(p.grad)):
            raise DivergenceError(p.name)
    for p in live:
        v = optimizer.velocity.get(p.name)
        if v is None or v.shape != p.value.shape:
            v = np.zeros_like(p.value)
        v = optimizer.momentum * v + p.grad
        optimizer.velocity[p.name] = v
        with np.errstate(over="ignore", invalid="ignore"):
            p.value -= optimizer.learning_rate * optimizer.lr_scale.get(p.name, 1.0) * v
        if not np.all(np.isfinite(p.value)):
            raise DivergenceError(p.name)
    for p in params:
        p.zero_grad()


def cross_entropy(logits, label: int):
    """Softmax cross-entropy; returns ``(loss, d loss / d logits)``."""
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    if not 0 <= label < z.size:
        raise ContractError(f"label {label} out of range for {z.size} classes")
    z = z - z.max()
    logp = z - np.log(np.exp(z).sum())
    grad = np.exp(logp)
    grad[label] -= 1.0
    return float(-logp[label]), grad


@dataclass
class ToyModel:
    config: FrontendConfig
    frontend: FilterParams
    head_w: Param
    head_b: Param
    pooling: str = "lag1"

    def params(self) -> list[Param]:
        return self.frontend.all() + [self.head_w, self.head_b]

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()


def make_model(config: FrontendConfig, seed: int = 0, pooling: str = "lag1") -> ToyModel:
    """Front-end at its configured init plus a zero-initialized head."""
    if pooling not in POOLINGS:
        raise ContractError(f"pooling must be one of {POOLINGS}, got {pooling!r}")
    c = config.n_channels
    return ToyModel(config, init_params(config, seed),
                    Param(np.zeros((N_TOY_CLASSES, c)), name="head_w"),
                    Param(np.zeros((1, N_TOY_CLASSES)), name="head_b"),
                    pooling)


def _pool(F, pooling):
    if pooling == "mean":
        return F.mean(axis=1)
    return (F[:, 1:] * F[:, :-1]).mean(axis=1)


def _pool_backward(gz, F, pooling):
    if pooling == "mean":
        return np.repeat(gz[:, None] / F.shape[1], F.shape[1], axis=1)
    n = F.shape[1] - 1
    g = np.zeros_like(F)
    g[:, 1:] += gz[:, None] * F[:, :-1] / n
    g[:, :-1] += gz[:, None] * F[:, 1:] / n
    return g


def forward_model(model: ToyModel, example: ToyExample | object):
    """Class logits for one example; also returns the cache for backward."""
    wave = example.wave if isinstance(example, ToyExample) else example
    fmap, fcache = frontend_forward(wave, model.frontend, model.config)
    z = _pool(fmap.values, model.pooling)
    logits = model.head_w.value @ z + model.head_b.value[0]
    return logits, (fmap.values, z, fcache)


def backward_model(model: ToyModel, cache, dlogits) -> None:
    F, z, fcache = cache
    d = np.asarray(dlogits, dtype=np.float64).reshape(-1)
    model.head_w.accumulate(np.outer(d, z))
    model.head_b.accumulate(d)
    gz = model.head_w.value.T @ d
    frontend_backward(_pool_backward(gz, F, model.pooling), fcache, input_grad=False)


def loss_and_grad(model: ToyModel, example: ToyExample) -> tuple[float, np.ndarray]:
    """Forward, loss, and backward for one example; returns (loss, logits)."""
    logits, cache = forward_model(model, example)
    loss, d = cross_entropy(logits, example.label)
    backward_model(model, cache, d)
    return loss, logits


def predict(model: ToyModel, examples) -> np.ndarray:
    return np.array([int(np.argmax(forward_model(model, ex)[0])) for ex in examples])


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    heldout_acc: float


@dataclass
class TrainReport:
    config: FrontendConfig
    seed: int
    settings: dict
    epochs: list[EpochRecord] = field(default_factory=list)
    status: str = "ok"
    failure: str = ""
    model: ToyModel | None = field(default=None, repr=False, compare=False)

    @property
    def diverged(self) -> bool:
        return self.status == "diverged"

    @property
    def last_finite_epoch(self) -> int:
        return self.epochs[-1].epoch if self.epochs else 0

    @property
    def final_heldout_acc(self) -> float:
        return self.epochs[-1].heldout_acc if self.epochs else float("nan")

    def epochs_to(self, accuracy: float) -> int | None:
        """First epoch whose held-out accuracy reaches `accuracy`, else None."""
        for r in self.epochs:
            if r.heldout_acc >= accuracy:
                return r.epoch
        return None

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("epoch,train_loss,train_acc,heldout_acc\n")
        for r in self.epochs:
            out.write(f"{r.epoch},{r.train_loss:.17g},{r.train_acc:.17g},{r.heldout_acc:.17g}\n")
        return out.getvalue()

    def summary(self) -> str:
        c = self.config
        e90 = self.epochs_to(0.9)
        lines = {
            "variant": c.variant, "init": c.init, "lowpass": c.lowpass,
            "log_offset": c.log_offset, "pre_emphasis": c.use_pre_emphasis,
            "instance_norm": c.use_instance_norm, "seed": self.seed,
            **self.settings,
            "status": self.status, "last_finite_epoch": self.last_finite_epoch,
            "final_heldout_acc": f"{self.final_heldout_acc:.6f}",
            "epochs_to_90": e90 if e90 is not None else "never",
        }
        if self.failure:
            lines["failure"] = self.failure
        return "".join(f"{k}={v}\n" for k, v in lines.items())


def train(config: FrontendConfig, seed: int = 1, epochs: int = 30, n_train: int = 400,
          n_heldout: int = 200, learning_rate: float = DEFAULT_LR, momentum: float = 0.9,
          frontend_lr_scale: float = FRONTEND_LR_SCALE, pooling: str = "lag1",
          progress=None, model: ToyModel | None = None) -> TrainReport:
    """Per-example SGD on the toy task; deterministic given all arguments.

    The training set is ``toy_dataset(n_train, 2 * seed)``, the held-out set
    ``toy_dataset(n_heldout, 2 * seed + 1)``; random filters and the epoch
    shuffles are seeded from `seed`. A non-finite loss or gradient stops the
    run and marks the report as diverged instead of raising.

    Front-end parameters step at ``frontend_lr_scale * learning_rate``. The
    features are instance-normalized, so the loss does not depend on the
    scale of a filter row and the effective step on a row of norm ``r`` is
    ``lr / r^2``; unit-norm filters at the head's learning rate jump
    far enough to scramble features the head has already fitted.

    Pass `model` to continue from existing weights (trained in place); its
    config and pooling take precedence.
    """
    if model is None:
        model = make_model(config, seed, pooling)
    config, pooling = model.config, model.pooling
    opt = Optimizer(learning_rate, momentum,
                    lr_scale={p.name: frontend_lr_scale for p in model.frontend.all()})
    train_set = toy_dataset(n_train, 2 * seed)
    held = toy_dataset(n_heldout, 2 * seed + 1)
    held_labels = np.array([ex.label for ex in held])
    rng = np.random.default_rng([seed, 7])
    settings = dict(epochs=epochs, n_train=n_train, n_heldout=n_heldout,
                    learning_rate=learning_rate, momentum=momentum,
                    frontend_lr_scale=frontend_lr_scale, pooling=pooling)
    report = TrainReport(config, seed, settings, model=model)
    params = model.params()

    for epoch in range(1, epochs + 1):
        total, correct = 0.0, 0
        try:
            for i in rng.permutation(n_train):
                ex = train_set[i]
                loss, logits = loss_and_grad(model, ex)
                if not np.isfinite(loss):
                    raise NumericalError(f"non-finite loss at epoch {epoch}")
                total += loss
                correct += int(np.argmax(logits) == ex.label)
                sgd_step(opt, params)
            held_acc = float(np.mean(predict(model, held) == held_labels))
        except (NumericalError, FloatingPointError) as e:
            report.status = "diverged"
            report.failure = str(e)
            break
        rec = EpochRecord(epoch, total / n_train, correct / n_train, held_acc)
        report.epochs.append(rec)
        if progress is not None:
            progress(rec)
    return report


ABLATION_AXES = ("instance_norm", "lowpass", "init", "pre_emphasis")


def ablation_arms(axis: str, base: FrontendConfig) -> tuple[FrontendConfig, FrontendConfig]:
    """The two configs compared along `axis`; the first is the paper's proposal."""
    if axis == "instance_norm":
        return replace(base, use_instance_norm=True), replace(base, use_instance_norm=False)
    if axis == "pre_emphasis":
        return replace(base, use_pre_emphasis=True), replace(base, use_pre_emphasis=False)
    if axis == "lowpass":
        other = "han_learnt" if base.variant == "scattering" else "max_pool"
        return replace(base, lowpass="han_fixed"), replace(base, lowpass=other)
    if axis == "init":
        filt = "scatt" if base.variant == "scattering" else "gamm"
        return replace(base, init=filt), replace(base, init="rand")
    raise ContractError(f"axis must be one of {ABLATION_AXES}, got {axis!r}")


@dataclass
class AblationResult:
    axis: str
    arms: tuple[FrontendConfig, FrontendConfig]
    seeds: list[int]
    reports: list[tuple[TrainReport, TrainReport]]

    def all_reports(self) -> list[TrainReport]:
        return [r for pair in self.reports for r in pair]

    def mean_final_acc(self, arm: int) -> float:
        return float(np.mean([pair[arm].final_heldout_acc for pair in self.reports]))

    def mean_epochs_to(self, arm: int, accuracy: float = 0.9) -> float:
        """Mean first epoch reaching `accuracy`; runs that never do count as epochs + 1."""
        vals = []
        for pair in self.reports:
            r = pair[arm]
            e = r.epochs_to(accuracy)
            vals.append(e if e is not None else r.settings["epochs"] + 1)
        return float(np.mean(vals))

    def summary(self) -> str:
        lines = [f"axis={self.axis}", f"seeds={','.join(map(str, self.seeds))}"]
        for arm, tag in ((0, "a"), (1, "b")):
            c = self.arms[arm]
            lines.append(f"{tag}.config={c.variant}/{c.init}/{c.lowpass}"
                         f"/in={int(c.use_instance_norm)}/pe={int(c.use_pre_emphasis)}")
            lines.append(f"{tag}.mean_final_acc={self.mean_final_acc(arm):.6f}")
            lines.append(f"{tag}.mean_epochs_to_90={self.mean_epochs_to(arm):.3f}")
            lines.append(f"{tag}.diverged={sum(p[arm].diverged for p in self.reports)}")
        return "\n".join(lines) + "\n"


def ablation_run(axis: str, base: FrontendConfig, seeds, **train_kw) -> AblationResult:
    """Train matched pairs that differ only along `axis`, one pair per seed."""
    seeds = list(seeds)
    if len(seeds) < 3:
        raise ContractError(f"ablation needs at least 3 seeds, got {len(seeds)}")
    arms = ablation_arms(axis, base)
    reports = [(train(arms[0], s, **train_kw), train(arms[1], s, **train_kw)) for s in seeds]
    return AblationResult(axis, arms, seeds, reports)
