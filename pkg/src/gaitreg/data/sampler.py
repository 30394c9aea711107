from __future__ import annotations

import numpy as np

from ..core.rng import stream_seed


class PKSampler:
    """Batches of P distinct identities with K samples each.

    Every call draws from one seeded stream, so a fixed seed gives a fixed
    sequence of batches. An identity with fewer than K samples has its
    (shuffled) samples tiled up to K when ``fallback`` is on.
    """

    def __init__(self, labels, P: int, K: int, seed: int, fallback: bool = True):
        labels = np.asarray(labels)
        self.P, self.K, self.fallback = int(P), int(K), fallback
        self.ids = np.unique(labels)
        self.members = {int(i): np.flatnonzero(labels == i) for i in self.ids}
        if self.P < 1 or self.K < 1:
            raise ValueError("P and K must be positive")
        if len(self.ids) < self.P:
            raise ValueError(f"need at least P={self.P} identities, dataset has {len(self.ids)}")
        if not fallback:
            short = [i for i, m in self.members.items() if len(m) < self.K]
            if short:
                raise ValueError(f"identity {short[0]} has fewer than K={self.K} samples and fallback is off")
        self._rng = np.random.default_rng(stream_seed(seed, "pk-sampler"))

    def __call__(self) -> np.ndarray:
        """Sample indices, identity-major: P blocks of K."""
        chosen = self._rng.choice(self.ids, size=self.P, replace=False)
        out = []
        for pid in chosen:
            pool = self.members[int(pid)]
            if len(pool) >= self.K:
                out.append(self._rng.choice(pool, size=self.K, replace=False))
            else:
                reps = -(-self.K // len(pool))
                out.append(np.tile(self._rng.permutation(pool), reps)[: self.K])
        return np.concatenate(out)


def pk_sample(index, P: int, K: int, seed: int, fallback: bool = True):
    """One PK batch of PersonSamples from a DatasetIndex."""
    idx = PKSampler(index.identities, P, K, seed, fallback)()
    return [index.sample(int(i)) for i in idx]
