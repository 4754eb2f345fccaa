import pytest

from npdetect.experiment import ExperimentConfig, prepare_corpus
from npdetect.synth import SynthConfig, synth_corpus
from npdetect.vae import VaeConfig

TINY_SYNTH = SynthConfig(n_recordings=4, duration_s=4.0, spans_per_recording=(2, 3), seed=7)

# small enough for a trial to take about a second
TINY_CONFIG_TEXT = """\
n_trials = 2
Q = 7
library_budget = 24
gammas = [0.5, 2.0]
nus = [0.1, 0.3, 0.5]
percentiles = [30, 50, 70]
split_fraction = 0.3
vae.epochs = 2
vae.batch_size = 32
"""


def tiny_config(**kw):
    base = dict(n_trials=2, Q=7, library_budget=24, gammas=(0.5, 2.0), nus=(0.1, 0.3, 0.5),
                percentiles=(30, 50, 70), split_fraction=0.3,
                vae=VaeConfig(epochs=2, batch_size=32))
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    synth_corpus(d, TINY_SYNTH)
    return d


@pytest.fixture(scope="session")
def tiny_prepared(tiny_corpus):
    return prepare_corpus(tiny_corpus, tiny_config())


@pytest.fixture(scope="session")
def tiny_config_file(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "tiny.cfg"
    p.write_text(TINY_CONFIG_TEXT)
    return p


# acceptance criteria report here; the lines are echoed after the run
ACCEPTANCE = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[criterion])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
