"""Counter-based random streams keyed by (master seed, bank, history).

Each stream is a Philox generator seeded through ``SeedSequence`` with the
triple, so a (bank, history) path can be replayed on its own and streams
never depend on which worker, block or order produced them.  Normal
variates come from the inverse normal CDF applied to 53-bit uniforms built
directly from the raw 64-bit output.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

DRAWS_PER_DAY = 2  # shock innovation, measurement error


def bank_key(bank_code: str) -> int:
    return zlib.crc32(bank_code.encode("utf-8"))


def check_distinct_keys(bank_codes) -> None:
    keys = {}
    for code in bank_codes:
        k = bank_key(code)
        if k in keys and keys[k] != code:
            raise ValueError(f"stream key collision between {keys[k]!r} and {code!r}")
        keys[k] = code


def uniforms_from_raw(raw: np.ndarray) -> np.ndarray:
    """Map uint64 words to the open interval (0, 1) using their top 53 bits."""
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


@dataclass
class RngStream:
    master_seed: int
    bank_code: str
    history: int
    drawn: int = 0

    def __post_init__(self) -> None:
        seq = np.random.SeedSequence([self.master_seed & 0xFFFFFFFFFFFFFFFF, bank_key(self.bank_code), self.history])
        self._bitgen = np.random.Philox(seq)

    @property
    def derived_seed(self) -> tuple[int, int, int]:
        return (self.master_seed, bank_key(self.bank_code), self.history)

    def uniforms(self, n: int) -> np.ndarray:
        raw = self._bitgen.random_raw(n)
        self.drawn += n
        return uniforms_from_raw(np.asarray(raw, dtype=np.uint64))

    def normals(self, n: int) -> np.ndarray:
        return ndtri(self.uniforms(n))


def path_normals(master_seed: int, bank_code: str, history: int, n_days: int) -> np.ndarray:
    """Standard normals for one path, shape (n_days, DRAWS_PER_DAY)."""
    return RngStream(master_seed, bank_code, history).normals(n_days * DRAWS_PER_DAY).reshape(n_days, DRAWS_PER_DAY)


def block_normals(master_seed: int, bank_codes, histories, n_days: int) -> np.ndarray:
    """Normals for many paths, shape (n_days, n_banks, n_histories, DRAWS_PER_DAY)."""
    n = n_days * DRAWS_PER_DAY
    raw = np.empty((len(bank_codes), len(histories), n), dtype=np.uint64)
    for i, code in enumerate(bank_codes):
        key = bank_key(code)
        for j, h in enumerate(histories):
            seq = np.random.SeedSequence([master_seed & 0xFFFFFFFFFFFFFFFF, key, int(h)])
            raw[i, j] = np.random.Philox(seq).random_raw(n)
    z = ndtri(uniforms_from_raw(raw))
    return np.ascontiguousarray(z.reshape(len(bank_codes), len(histories), n_days, DRAWS_PER_DAY).transpose(2, 0, 1, 3))
