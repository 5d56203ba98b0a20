import pytest

from varsfl.config import ExperimentConfig

ACCEPTANCE_LINES: list[str] = []


def micro_config(**overrides) -> ExperimentConfig:
    """Seconds-scale federation: 4 classes, 10 clients, tiny network."""
    base = dict(
        dataset__num_classes=4, dataset__feature_dim=6, dataset__samples_per_class=(120, 90, 60, 80),
        dataset__cluster_spread=1.0, partition__num_clients=10, partition__max_classes=3,
        partition__min_samples=5, model__hidden_dims=(8, 6), model__dropout_layers=(1,),
        training__rounds=5, training__clients_per_round=3.0, training__local_epochs=1, training__batch_size=16,
        training__learning_rate=0.01, selector__cold_start=2, selector__window=3,
        experiment__seeds=(7,), experiment__thresholds=(0.5,),
    )
    base.update(overrides)
    return ExperimentConfig().replace(**base).validate()


@pytest.fixture
def micro():
    return micro_config


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
