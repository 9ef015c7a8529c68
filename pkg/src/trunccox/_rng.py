"""Counter-based random streams keyed by (seed, purpose, index...).

Every consumer of randomness asks for its own stream, e.g. replicate 17 of
a bootstrap, or the population draws of simulation replicate 3. Streams are
independent of each other and of the order in which they are requested, so
results do not depend on scheduling or worker count.
"""

import numpy as np

# fixed purpose codes; never renumber, or old seeds change meaning
SAMPLE = 0
BOOTSTRAP = 1
PERMUTATION = 2
CALIBRATION = 3
PILOT = 4
VALIDATION = 5


def stream(seed: int, purpose: int, *index: int) -> np.random.Generator:
    """Generator for ``(seed, purpose, *index)`` backed by Philox."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(purpose), *(int(i) for i in index)))
    return np.random.Generator(np.random.Philox(ss))
