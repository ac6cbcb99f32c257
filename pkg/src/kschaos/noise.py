"""Counter-based Gaussian noise for reproducible particle ensembles.

Every normal variate is addressed by (seed, purpose, replica, step, row).
The generator is Philox with an explicit counter, so the stream for any
address can be regenerated in isolation: worker layout, chunking, and
evaluation order cannot change the numbers.  Purpose lanes keep initial
position sampling and Brownian increments on disjoint counters.
"""

import numpy as np

# Purpose lanes.  Distinct lanes give statistically independent substreams
# for the same (replica, step) address.
LANE_INIT = 0
LANE_INCREMENT = 1
LANE_SAMPLE = 2

_KEY_SALT = 0x9E3779B97F4A7C15  # fixed odd constant, decorrelates small seeds


class NoiseStream:
    """Addressable source of 2D standard normal blocks.

    Parameters
    ----------
    seed : int
        Base seed.  Two streams with different seeds are independent for
        all practical purposes; the same seed reproduces every block.
    """

    def __init__(self, seed):
        if not (0 <= int(seed) < 2**63):
            raise ValueError("seed must fit in a nonnegative 63-bit integer")
        self.seed = int(seed)

    def _generator(self, purpose, replica, step):
        counter = [0, int(purpose), int(replica), int(step)]
        bg = np.random.Philox(counter=counter, key=[self.seed, _KEY_SALT])
        return np.random.Generator(bg)

    def normals(self, replica, step, n, purpose=LANE_INCREMENT):
        """Return an (n, 2) block of standard normals for one address.

        Box-Muller on explicit uniforms rather than Generator.normal so the
        mapping from counter to variate is pinned by this module, not by
        numpy's choice of Gaussian algorithm.
        """
        gen = self._generator(purpose, replica, step)
        u = gen.random((int(n), 2))
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))  # 1-u in (0,1], log finite
        phase = 2.0 * np.pi * u[:, 1]
        out = np.empty((int(n), 2))
        out[:, 0] = r * np.cos(phase)
        out[:, 1] = r * np.sin(phase)
        return out

    def uniforms(self, replica, step, n, purpose=LANE_SAMPLE):
        """Return an (n,) block of uniforms in [0, 1) for one address."""
        gen = self._generator(purpose, replica, step)
        return gen.random(int(n))

    def increments(self, replica, step, n, dt):
        """Brownian increments over one step of size dt, shape (n, 2)."""
        return np.sqrt(dt) * self.normals(replica, step, n, LANE_INCREMENT)
