import copy
import logging
import math
from collections import defaultdict
from contextlib import closing
from dataclasses import dataclass
from functools import wraps
from queue import Empty, Full, Queue
from threading import Event, Thread
from typing import Any, Callable, Generator, Iterator, TypeVar

import numpy as np
import pandas as pd
import torch

from .backend import DiffBackend, finite_guard
from .data.partition import PartitionedDataset, TupleBatch, batch_tuples, tuples_per_epoch
from .exceptions import DivergenceError, NumericError
from .metrics import RunMetrics
from .models.artifacts import CheckpointMetadata, LossRecord, TrainingState, TrainingStatus
from .models.config_models import RunConfig
from .rules import RuleSet, run_batch, total_loss
from .storage import ArtifactStorage
from .vae.model import LogicVAE, build_model

logger = logging.getLogger(__name__)

STATUS_NAME = "train_status.yaml"
HISTORY_NAME = "loss_history.csv"
# seconds between stop checks of a producer waiting on a full queue
PUT_TIMEOUT = 0.1

T = TypeVar("T")


@dataclass
class TrainingResult:
    model: LogicVAE
    history: list[LossRecord]
    best_epoch: int
    checkpoint: str
    stopped_early: bool = False


TrainFuncType = Callable[..., TrainingResult]


class _Failure:
    def __init__(self, error: BaseException) -> None:
        self.error = error


def _prefetched(batches: Iterator[T], depth: int) -> Generator[T, None, None]:
    """Assemble up to ``depth`` batches ahead in a worker thread."""
    if depth == 0:
        yield from batches
        return

    queue: Queue[Any] = Queue(maxsize=depth)
    done = object()
    stop = Event()

    def offer(item: Any) -> bool:
        while not stop.is_set():
            try:
                queue.put(item, timeout=PUT_TIMEOUT)
                return True
            except Full:
                continue
        return False

    def produce() -> None:
        try:
            for batch in batches:
                if not offer(batch):
                    logger.debug("Consumer went away, stopping the batch producer")
                    return
        except BaseException as error:
            offer(_Failure(error))
        else:
            offer(done)

    worker = Thread(target=produce, name="batch-producer", daemon=True)
    worker.start()
    try:
        while (item := queue.get()) is not done:
            if isinstance(item, _Failure):
                raise item.error
            yield item
    finally:
        stop.set()
        # a producer blocked on a full queue needs room to notice the stop
        while True:
            try:
                queue.get_nowait()
            except Empty:
                break
        worker.join()


def split_holdout(
    ds: PartitionedDataset, fraction: float, seed: int
) -> tuple[PartitionedDataset, PartitionedDataset | None]:
    """Hold out the same fraction of every partition, or nothing if a partition would get no sample."""
    sizes = {key: int(len(members) * fraction) for key, members in ds.partitions.items()}
    if fraction == 0 or min(sizes.values()) < 1:
        logger.info("No held-out slice, early stopping uses the training loss")
        return ds, None

    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    kept, held = {}, {}
    for key, members in ds.partitions.items():
        order = rng.permutation(len(members))
        held[key] = [members[i] for i in sorted(order[: sizes[key]])]
        kept[key] = [members[i] for i in sorted(order[sizes[key] :])]
    return (
        PartitionedDataset(factors=ds.factors, partitions=kept),
        PartitionedDataset(factors=ds.factors, partitions=held),
    )


def _epoch_batches(
    ds: PartitionedDataset, batch_size: int, seed: int, epoch: int, prefetch: int
) -> Generator[TupleBatch, None, None]:
    return _prefetched(
        batch_tuples(ds, batch_size, np.random.SeedSequence([seed, epoch])), prefetch
    )


@torch.no_grad()
def holdout_loss(
    model: LogicVAE, holdout: PartitionedDataset, rules: RuleSet, batch_size: int, seed: int
) -> float:
    model.eval()
    try:
        generator = torch.Generator().manual_seed(seed)
        size = min(batch_size, min(len(members) for members in holdout.partitions.values()))
        totals = [
            total_loss(run_batch(model, batch, generator), rules).total.item()
            for batch in batch_tuples(holdout, size, np.random.SeedSequence([seed, 0]))
        ]
    finally:
        model.train()
    return float(np.mean(totals))


def history_table(history: list[LossRecord]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {"epoch": record.epoch, **record.components, "holdout_total": record.holdout_total}
            for record in history
        ]
    )


def _update_status(storage: ArtifactStorage, status: TrainingStatus) -> None:
    try:
        storage.save_document(STATUS_NAME, status)
        logger.debug(f"Updated training status to {status.state.value}")
    except Exception as error:
        logger.error(f"Unable to update training status {status}: {error}")
        raise


def handle_training_exception(func: TrainFuncType) -> TrainFuncType:
    """Record the run status around ``train`` and keep it accurate when training aborts."""

    @wraps(func)
    def _inner(
        dataset: PartitionedDataset,
        rules: RuleSet,
        config: RunConfig,
        storage: ArtifactStorage,
        backend: DiffBackend,
        manifest_digest: str = "",
        metrics: RunMetrics | None = None,
    ) -> TrainingResult:
        status = TrainingStatus(state=TrainingState.running, config_digest=config.digest())
        _update_status(storage=storage, status=status)
        try:
            result = func(
                dataset=dataset,
                rules=rules,
                config=config,
                storage=storage,
                backend=backend,
                manifest_digest=manifest_digest,
                metrics=metrics,
                status=status,
            )

        except DivergenceError as error:
            status.state = TrainingState.diverged
            status.long_status = f"Got divergence: {error}"
            status.checkpoint = error.last_good_checkpoint
            logger.exception(f"Training diverged, last good checkpoint {error.last_good_checkpoint}")
            _update_status(storage=storage, status=status)
            raise

        except Exception as error:
            status.state = TrainingState.failed
            status.long_status = f"Got exception: {error}"
            logger.exception(f"Training failed: {error}")
            _update_status(storage=storage, status=status)
            raise

        status.state = TrainingState.successful
        status.long_status = (
            f"Trained {len(result.history)} epochs, best epoch {result.best_epoch}"
        )
        _update_status(storage=storage, status=status)
        return result

    return _inner


def _save_checkpoint(
    model: LogicVAE,
    config: RunConfig,
    storage: ArtifactStorage,
    manifest_digest: str,
    epoch: int,
    total: float | None,
) -> str:
    metadata = CheckpointMetadata(
        architecture=config.model,
        training=config.training,
        seed=config.seed,
        epoch=epoch,
        total_loss=total,
        config_digest=config.digest(),
        manifest_digest=manifest_digest,
    )
    return storage.save_checkpoint(config.training.checkpoint, model.state_dict(), metadata)


@handle_training_exception
def train(
    dataset: PartitionedDataset,
    rules: RuleSet,
    config: RunConfig,
    storage: ArtifactStorage,
    backend: DiffBackend,
    manifest_digest: str,
    metrics: RunMetrics | None,
    status: TrainingStatus,
) -> TrainingResult:
    training = config.training
    seed = config.seed
    train_ds, holdout = split_holdout(dataset, training.holdout_fraction, seed)
    steps_per_epoch = tuples_per_epoch(train_ds, training.batch_size)

    backend.seed(seed, training.deterministic)
    model = build_model(config.model)
    model.train()
    params = backend.parameters(model)
    optimizer = torch.optim.Adam(model.parameters(), lr=training.learning_rate)
    generator = torch.Generator().manual_seed(seed)

    checkpoint = _save_checkpoint(model, config, storage, manifest_digest, epoch=0, total=None)
    status.checkpoint = checkpoint
    best_state = copy.deepcopy(model.state_dict())
    best_total, best_epoch, stale = math.inf, 0, 0
    history: list[LossRecord] = []
    stopped_early = False

    for epoch in range(1, training.epochs + 1):
        sums: dict[str, float] = defaultdict(float)
        with closing(
            _epoch_batches(train_ds, training.batch_size, seed, epoch, training.prefetch)
        ) as batches:
            for step, batch in enumerate(batches):
                try:
                    with finite_guard(model):
                        breakdown = total_loss(run_batch(model, batch, generator), rules)
                except NumericError as error:
                    raise DivergenceError(
                        f"Non-finite activation in epoch {epoch}, step {step}: {error}",
                        last_good_checkpoint=checkpoint,
                    ) from error
                if not math.isfinite(breakdown.total.item()):
                    raise DivergenceError(
                        f"Non-finite total loss in epoch {epoch}, step {step}",
                        last_good_checkpoint=checkpoint,
                    )

                grads = backend.backward(params, breakdown.total)
                optimizer.zero_grad()
                for name, param in params.items():
                    param.grad = grads[name]
                optimizer.step()

                for component, value in breakdown.as_record().items():
                    sums[component] += value
                logger.debug(f"Epoch {epoch} step {step}: total {breakdown.total.item():.6f}")

        components = {component: value / steps_per_epoch for component, value in sums.items()}
        monitored = (
            holdout_loss(model, holdout, rules, training.batch_size, seed)
            if holdout is not None
            else components["total"]
        )
        history.append(
            LossRecord(
                epoch=epoch,
                components=components,
                holdout_total=monitored if holdout is not None else None,
            )
        )
        if metrics is not None:
            metrics.record_epoch(epoch, components)
        logger.info(
            f"Epoch {epoch}/{training.epochs}: total {components['total']:.6f}, "
            f"recloss {components.get('recloss', math.nan):.6f}, monitored {monitored:.6f}"
        )

        if monitored < best_total:
            best_total, best_epoch, stale = monitored, epoch, 0
            best_state = copy.deepcopy(model.state_dict())
            checkpoint = _save_checkpoint(model, config, storage, manifest_digest, epoch, monitored)
            status.checkpoint = checkpoint
            status.best_epoch = epoch
        else:
            stale += 1
            if stale >= training.patience:
                logger.info(f"No improvement for {stale} epochs, stopping at epoch {epoch}")
                stopped_early = True
                break

    model.load_state_dict(best_state)
    return TrainingResult(
        model=model,
        history=history,
        best_epoch=best_epoch,
        checkpoint=checkpoint,
        stopped_early=stopped_early,
    )


def load_model(storage: ArtifactStorage, name: str) -> tuple[LogicVAE, CheckpointMetadata]:
    state, metadata = storage.load_checkpoint(name)
    model = build_model(metadata.architecture)
    model.load_state_dict(state)
    model.eval()
    return model, metadata
