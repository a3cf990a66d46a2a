"""Shared builders for tests: toy corpora and oracle separators."""
import numpy as np

from remixit.data import Corpus, CorpusItem, SynthSpec, generate_corpus


def toy_corpus(n=8, T=128, seed=0, domain="A"):
    return generate_corpus(SynthSpec(n_items=n, duration_s=T / 8000, noise_domain=domain, snr_db=(0, 10)), seed)


def random_corpus(n=4, T=128, seed=0):
    rng = np.random.default_rng(seed)
    items = [CorpusItem(mixture=s + m, speech=s, noise=m) for s, m in rng.standard_normal((n, 2, T))]
    return Corpus(items, "paired", "rand", 8000)


class OracleSeparator:
    """Returns the ground-truth (speech, noise) of whichever corpus item matches each input row."""

    def __init__(self, corpus: Corpus):
        self.mixtures = corpus.mixtures
        self.speech = corpus.speech
        self.noise = corpus.noise

    def __call__(self, mixtures):
        mixtures = np.atleast_2d(mixtures)
        idx = [int(np.argmin(np.sum((self.mixtures - row) ** 2, axis=1))) for row in mixtures]
        return np.stack([self.speech[idx], self.noise[idx]])
