"""Counter-based random streams keyed by ``(seed, stream id)``.

Every stochastic consumer in a scenario draws from its own Philox stream, so
the numbers a consumer sees never depend on how many draws another consumer
made or on the order in which scenarios are executed.
"""

import numpy as np

GPS = 1
SENSORS = 2
ATTACK = 3
SCENARIO = 4
TRAINING = 5

_MASK64 = (1 << 64) - 1


def stream(seed: int, *stream_id: int) -> np.random.Generator:
    """Return an independent generator for ``seed`` and a stream path."""
    key = np.random.SeedSequence([int(seed) & _MASK64, *(int(s) for s in stream_id)])
    return np.random.Generator(np.random.Philox(key))
