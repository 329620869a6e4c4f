from logging import getLogger

from prometheus_client import CollectorRegistry, Gauge, Info, generate_latest

logger = getLogger(__name__)

METRICS_NAME = "metrics.prom"


class RunMetrics:
    """Gauges of one command run, written as a text exposition file."""

    def __init__(self) -> None:
        self.registry = CollectorRegistry()
        self.train_loss = Gauge(
            "reasoners_train_loss",
            "Mean training value of a rule over the last epoch",
            ["component"],
            registry=self.registry,
        )
        self.train_epoch = Gauge(
            "reasoners_train_epoch", "Last completed training epoch", registry=self.registry
        )
        self.reasoner_auroc = Gauge(
            "reasoners_reasoner_auroc",
            "AUROC of a factor reasoner on its test split",
            ["factor"],
            registry=self.registry,
        )
        self.mutual_information = Gauge(
            "reasoners_mutual_information",
            "Mutual information in nats of the top ranked latent dims with a factor",
            ["factor", "rank"],
            registry=self.registry,
        )
        self.run_info = Info(
            "reasoners_run", "Digests of the config and dataset behind these values", registry=self.registry
        )

    def record_epoch(self, epoch: int, components: dict[str, float]) -> None:
        self.train_epoch.set(epoch)
        for component, value in components.items():
            self.train_loss.labels(component=component).set(value)

    def record_provenance(self, provenance: dict[str, str]) -> None:
        self.run_info.info(provenance)

    def exposition(self) -> bytes:
        return generate_latest(self.registry)


def get_run_metrics() -> RunMetrics:
    return RunMetrics()
