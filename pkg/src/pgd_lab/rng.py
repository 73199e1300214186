"""Counter-based standard normal draws.

Every Gaussian variate used by the package is a pure function of

    (seed, replicate, stream, step, particle, coordinate)

so any subset of particles, steps or replicates can be generated on its own
and agree bit-for-bit with a bulk draw.  The bit source is numpy's
Philox4x64-10 used in counter mode: the key is ``(seed, replicate)`` and
counter word 1 holds the stream tag.  Within a stream the variates are laid
out flat, ``j = (step * n_particles + particle) * dim + coordinate``; variate
``j`` comes from 64-bit word ``j`` (counter word 0 = ``j // 4``), and words
``2i, 2i + 1`` form one Box-Muller pair.
"""

from __future__ import annotations

import numpy as np

# stream tags
STREAM_X = 0
STREAM_THETA = 1
STREAM_INIT_X = 2
STREAM_REFERENCE = 3
STREAM_INIT_THETA = 4

_TWO_PI = 2.0 * np.pi
_INV_2_53 = 1.0 / 9007199254740992.0


def _uniform_open(words):
    # 53-bit mantissa, shifted by half an ulp so 0 and 1 are never produced
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * _INV_2_53


def _raw_words(seed, replicate, stream, start, n_counters):
    bitgen = np.random.Philox(
        key=np.array([seed, replicate], dtype=np.uint64),
        counter=np.array([start, stream, 0, 0], dtype=np.uint64),
    )
    return bitgen.random_raw(4 * n_counters)


def _normals_range(seed, replicate, stream, j0, count):
    """Variates ``j0 .. j0 + count - 1`` of one stream."""
    p0 = j0 // 2
    p1 = -(-(j0 + count) // 2)
    c0 = p0 // 2
    c1 = -(-p1 // 2)
    words = _raw_words(seed, replicate, stream, c0, c1 - c0)
    words = words[2 * p0 - 4 * c0:2 * p1 - 4 * c0]
    u1 = _uniform_open(words[0::2])
    u2 = _uniform_open(words[1::2])
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = _TWO_PI * u2
    out = np.empty(2 * (p1 - p0))
    out[0::2] = radius * np.cos(angle)
    out[1::2] = radius * np.sin(angle)
    off = j0 - 2 * p0
    return out[off:off + count]


def normals(seed, replicate, stream, step_start, n_steps, n_particles, dim,
            particle_start=0, particle_stop=None):
    """Standard normals of shape ``(n_steps, particle_stop - particle_start, dim)``.

    ``n_particles`` is the total particle count of the run; it fixes the
    layout, so a particle slice drawn alone matches the same slice of a full
    draw.
    """
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    if particle_stop is None:
        particle_stop = n_particles
    width = particle_stop - particle_start
    if n_steps == 0 or width == 0 or dim == 0:
        return np.zeros((n_steps, width, dim))
    if width == n_particles:
        j0 = step_start * n_particles * dim
        flat = _normals_range(seed, replicate, stream, j0, n_steps * n_particles * dim)
        return flat.reshape(n_steps, n_particles, dim)
    out = np.empty((n_steps, width, dim))
    for i in range(n_steps):
        j0 = ((step_start + i) * n_particles + particle_start) * dim
        out[i] = _normals_range(seed, replicate, stream, j0, width * dim).reshape(width, dim)
    return out


def normals_batch(seed, replicates, stream, step_start, n_steps, n_particles, dim):
    """Stack of :func:`normals` over replicates, shape ``(R, n_steps, N, dim)``."""
    out = np.empty((len(replicates), n_steps, n_particles, dim))
    for i, rep in enumerate(replicates):
        out[i] = normals(seed, rep, stream, step_start, n_steps, n_particles, dim)
    return out
