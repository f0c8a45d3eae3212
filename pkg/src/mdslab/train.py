"""K-fold cross-validation training loop and evaluation metrics.

The driver trains a fresh model per fold (fold-derived seeds, so folds are
independent yet reproducible), keeps the parameters of the best-accuracy
fold, and reports per-fold accuracies. Model selection by max fold
accuracy is optimistic by construction; the reported Acc_best should be
read as the selection criterion, not an unbiased estimate.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import nn

# spawn-key namespaces for fold-level rng derivation
_KEY_FOLD_SPLIT = 11
_KEY_FOLD_INIT = 12
_KEY_FOLD_SHUFFLE = 13


@dataclass(frozen=True)
class FoldPlan:
    """Disjoint index folds covering range(n); sizes differ by at most 1."""

    n: int
    k_fold: int
    seed: int
    folds: tuple[tuple[int, ...], ...]

    def train_indices(self, j: int) -> list[int]:
        out: list[int] = []
        for i, fold in enumerate(self.folds):
            if i != j:
                out.extend(fold)
        return out

    def val_indices(self, j: int) -> list[int]:
        return list(self.folds[j])


def kfold_split(n: int, k_fold: int, seed: int) -> FoldPlan:
    """Shuffled partition into k folds; the first n % k folds get one extra."""
    if k_fold < 2:
        raise ValueError("k_fold must be >= 2")
    if n < k_fold:
        raise ValueError(f"cannot split {n} samples into {k_fold} folds")
    rng = np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(_KEY_FOLD_SPLIT,)))
    perm = rng.permutation(n)
    base, extra = divmod(n, k_fold)
    folds = []
    pos = 0
    for j in range(k_fold):
        size = base + (1 if j < extra else 0)
        folds.append(tuple(int(i) for i in perm[pos:pos + size]))
        pos += size
    return FoldPlan(n=n, k_fold=k_fold, seed=seed, folds=tuple(folds))


@dataclass(frozen=True)
class Hyper:
    """Optimizer and loop hyperparameters.

    lambda_wd, when set, overrides the model config's weight decay.
    """

    eta: float = 1e-3
    batch: int = 8
    k_epoch: int = 30
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lambda_wd: float | None = None

    def validate(self) -> None:
        if self.eta <= 0:
            raise ValueError("eta must be > 0")
        if self.batch < 1:
            raise ValueError("batch size must be >= 1")
        if self.k_epoch < 0:
            raise ValueError("k_epoch must be >= 0")


@dataclass
class EvalResult:
    """Accuracy plus the full confusion matrix M[true, predicted]."""

    accuracy: float
    matrix: np.ndarray
    n_samples: int

    def class_counts(self, k: int) -> dict[str, int]:
        """TP/FP/FN/TN of class k; the four always sum to n_samples."""
        tp = int(self.matrix[k, k])
        fp = int(self.matrix[:, k].sum()) - tp
        fn = int(self.matrix[k, :].sum()) - tp
        tn = self.n_samples - tp - fp - fn
        return {"TP": tp, "FP": fp, "FN": fn, "TN": tn}


def evaluate(params: dict, xs, labels, cfg: nn.ModelConfig) -> EvalResult:
    """Accuracy and confusion matrix of argmax predictions on a test set."""
    labels = [int(c) for c in labels]
    if len(labels) == 0:
        raise ValueError("empty evaluation set")
    if any(not 0 <= c < cfg.k_tar for c in labels):
        raise ValueError(f"labels must lie in [0, {cfg.k_tar})")
    matrix = np.zeros((cfg.k_tar, cfg.k_tar), dtype=np.int64)
    for x, c in zip(xs, labels):
        matrix[c, nn.predict(params, x, cfg)] += 1
    acc = float(np.trace(matrix)) / len(labels)
    return EvalResult(accuracy=acc, matrix=matrix, n_samples=len(labels))


@dataclass
class TrainReport:
    """Cross-validation outcome: per-fold accuracy and the winning params."""

    fold_accuracy: list[float]
    best_fold: int
    best_params: dict[str, np.ndarray]
    loss_traces: list[list[float]] = field(default_factory=list)
    k_fold: int = 0
    seed: int = 0

    @property
    def acc_avg(self) -> float:
        return float(np.mean(self.fold_accuracy))

    @property
    def acc_best(self) -> float:
        return float(max(self.fold_accuracy))


def _train_one_fold(xs, labels, cfg, hyper, rng_init, rng_shuffle,
                    fold_id: int):
    params = nn.init_params(cfg, rng_init)
    opt = nn.OptState.for_params(params, eta=hyper.eta, beta1=hyper.beta1,
                                 beta2=hyper.beta2, eps=hyper.eps)
    n = len(labels)
    trace = []
    for epoch in range(hyper.k_epoch):
        order = rng_shuffle.permutation(n)
        losses = []
        weights = []
        for start in range(0, n, hyper.batch):
            batch = order[start:start + hyper.batch]
            bx = [xs[i] for i in batch]
            by = [labels[i] for i in batch]
            try:
                loss, grads = nn.batch_loss_and_grads(params, bx, by, cfg)
            except FloatingPointError as err:
                raise RuntimeError(
                    f"fold {fold_id} diverged at epoch {epoch}, batch "
                    f"starting {start}: {err}") from err
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"fold {fold_id} diverged at epoch {epoch}, batch "
                    f"starting {start}: loss = {loss}")
            nn.adam_step(params, grads, opt)
            losses.append(loss)
            weights.append(len(batch))
        trace.append(float(np.average(losses, weights=weights)))
    return params, trace


def run_cv(xs, labels, cfg: nn.ModelConfig, hyper: Hyper, k_fold: int,
           seed: int) -> TrainReport:
    """K-fold cross-validation with per-fold fresh initialization.

    Per fold: init from a fold-derived seed, k_epoch epochs of shuffled
    batches (last partial batch kept), one validation pass at the end.
    The parameters attaining the highest fold accuracy (strictly greater,
    earliest fold wins ties) are retained.
    """
    hyper.validate()
    labels = [int(c) for c in labels]
    if hyper.lambda_wd is not None:
        cfg = dataclasses.replace(cfg, lambda_wd=hyper.lambda_wd)
    plan = kfold_split(len(labels), k_fold, seed)
    min_train = min(len(plan.train_indices(j)) for j in range(k_fold))
    if hyper.batch > min_train:
        raise ValueError(
            f"batch size {hyper.batch} exceeds smallest fold-train size "
            f"{min_train}")
    accs: list[float] = []
    traces: list[list[float]] = []
    best_acc = -1.0
    best_fold = -1
    best_params: dict[str, np.ndarray] = {}
    for j in range(k_fold):
        tr = plan.train_indices(j)
        va = plan.val_indices(j)
        rng_init = np.random.default_rng(
            np.random.SeedSequence(seed, spawn_key=(_KEY_FOLD_INIT, j)))
        rng_shuffle = np.random.default_rng(
            np.random.SeedSequence(seed, spawn_key=(_KEY_FOLD_SHUFFLE, j)))
        params, trace = _train_one_fold([xs[i] for i in tr],
                                        [labels[i] for i in tr],
                                        cfg, hyper, rng_init, rng_shuffle, j)
        result = evaluate(params, [xs[i] for i in va],
                          [labels[i] for i in va], cfg)
        accs.append(result.accuracy)
        traces.append(trace)
        if result.accuracy > best_acc:
            best_acc = result.accuracy
            best_fold = j
            best_params = {k: v.copy() for k, v in params.items()}
    return TrainReport(fold_accuracy=accs, best_fold=best_fold,
                       best_params=best_params, loss_traces=traces,
                       k_fold=k_fold, seed=seed)


def report_text(report: TrainReport) -> str:
    """Human-readable summary of a cross-validation run."""
    lines = [
        "cross-validation report",
        f"k_fold = {report.k_fold}",
        f"seed = {report.seed}",
    ]
    for j, acc in enumerate(report.fold_accuracy):
        mark = "  <- best" if j == report.best_fold else ""
        lines.append(f"fold {j}: accuracy = {acc:.6f}{mark}")
    lines.append(f"acc_avg = {report.acc_avg:.6f}")
    lines.append(f"acc_best = {report.acc_best:.6f}")
    return "\n".join(lines) + "\n"


def loss_trace_csv(report: TrainReport) -> str:
    """CSV of per-epoch mean train loss, one column per fold."""
    header = "epoch," + ",".join(f"fold{j}" for j in range(report.k_fold))
    rows = [header]
    n_epochs = max((len(t) for t in report.loss_traces), default=0)
    for e in range(n_epochs):
        cells = [str(e)]
        for t in report.loss_traces:
            cells.append(f"{t[e]:.10g}" if e < len(t) else "")
        rows.append(",".join(cells))
    return "\n".join(rows) + "\n"


def confusion_csv(result: EvalResult) -> str:
    """Confusion matrix as CSV, rows = true class, cols = predicted."""
    k = result.matrix.shape[0]
    header = "true\\pred," + ",".join(str(q) for q in range(k))
    rows = [header]
    for p in range(k):
        rows.append(str(p) + "," + ",".join(str(int(v))
                                            for v in result.matrix[p]))
    return "\n".join(rows) + "\n"
