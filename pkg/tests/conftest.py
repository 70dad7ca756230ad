import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from zonerec import _accel, synth

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(params=["numba", "numpy"])
def backend(request, monkeypatch):
    """Run a test once per kernel backend."""
    if request.param == "numba" and not _accel.HAVE_NUMBA:
        pytest.skip("numba not installed")
    monkeypatch.setattr(_accel, "USE_NUMBA", request.param == "numba")
    return request.param


@pytest.fixture(scope="session")
def alphabet():
    return synth.Alphabet()


@pytest.fixture(scope="session")
def lexicon(alphabet):
    return synth.make_lexicon(alphabet, 40, seed=2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)



@pytest.fixture(scope="session")
def small_system(alphabet):
    """A quickly trained recogniser on a 12-word lexicon with held-out samples."""
    from zonerec import hmm, recognizer as R

    lex = synth.make_lexicon(alphabet, 12, seed=5)
    train = synth.make_corpus(alphabet, lex, 300, seed=21)
    test = synth.make_corpus(alphabet, lex, 60, seed=22)
    ts = R.collect_training([(s.gray, s.entry) for s in train])
    models = R.train_models(ts, hmm.TrainConfig(states=4, mixtures=2))
    return {"lexicon": lex, "models": models, "test": test, "training": ts,
            "recognizer": R.Recognizer(models, lex)}
