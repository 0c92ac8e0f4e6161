import abc
import io
import json
import logging
import sqlite3

import attr
import numpy as np
import sqlitedict

from .config import OpticsConfig
from .optics import PSFStack
from .utils import canonical_json

logger = logging.getLogger(__name__)

# Bumped whenever the stored record layout or the PSF computation changes
RECORD_FORMAT = 1


class _Cache(abc.ABC):
    @classmethod
    @abc.abstractmethod
    def fingerprint(cls, optics: OpticsConfig, coefficients) -> str:
        return ''

    @abc.abstractmethod
    def __getitem__(self, fingerprint: str) -> PSFStack:
        pass

    @abc.abstractmethod
    def __setitem__(self, fingerprint: str, psf: PSFStack) -> None:
        pass

    def close(self):
        pass


class DummyCache(_Cache):
    @classmethod
    def fingerprint(cls, optics: OpticsConfig, coefficients) -> str:
        return ''

    def __getitem__(self, fingerprint: str) -> PSFStack:
        raise KeyError(fingerprint)

    def __setitem__(self, fingerprint: str, psf: PSFStack) -> None:
        pass

    def __str__(self):
        return "no cache"


def pack_psf(psf: PSFStack, compressed: bool = True) -> bytes:
    """Serialize a PSF stack as an ``.npz`` archive (no pickled objects)"""
    optics = canonical_json(attr.asdict(psf.config)) if psf.config is not None else ''
    buffer = io.BytesIO()
    save = np.savez_compressed if compressed else np.savez
    save(buffer,
         kernels=np.asarray(psf.kernels, dtype=np.float64),
         crop_loss=np.asarray(psf.crop_loss, dtype=np.float64),
         optics=np.array(optics))
    return buffer.getvalue()


def unpack_psf(data: bytes) -> PSFStack:
    with np.load(io.BytesIO(data), allow_pickle=False) as archive:
        optics = str(archive["optics"])
        return PSFStack(
            kernels=archive["kernels"].copy(),
            config=OpticsConfig(**json.loads(optics)) if optics else None,
            crop_loss=tuple(float(v) for v in archive["crop_loss"]),
        )


class PSFCache(_Cache):
    """Rendered PSF stacks in a sqlite file, keyed by optics and coefficients.

    Records are ``.npz`` archives, so a cache file never unpickles
    anything. Lookups are counted; the counts show up in ``str(cache)``.
    """

    def __init__(self, path, *, compressed=True):
        self.compressed = compressed
        self.hits = 0
        self.misses = 0
        tablename = 'psf_npz_deflate' if compressed else 'psf_npz'
        self.db = sqlitedict.SqliteDict(path,
                                        tablename=tablename,
                                        autocommit=True,
                                        encode=self.encode,
                                        decode=self.decode)

    def encode(self, psf: PSFStack):
        return sqlite3.Binary(pack_psf(psf, self.compressed))

    def decode(self, obj) -> PSFStack:
        return unpack_psf(bytes(obj))

    @classmethod
    def fingerprint(cls, optics: OpticsConfig, coefficients) -> str:
        """
        >>> from privlens.zernike import ZernikeCoefficients
        >>> fp = PSFCache.fingerprint(OpticsConfig(), ZernikeCoefficients([0.0, 0.1]))
        >>> json.loads(fp)["beta"]
        ['0.0', '0.1']
        """
        return canonical_json({
            'format': RECORD_FORMAT,
            'optics': attr.asdict(optics),
            'beta': [repr(float(b)) for b in coefficients.beta],
            'units': coefficients.units,
        })

    def __str__(self):
        return f"PSFCache <{self.db.filename} | " \
               f"{len(self.db)} records | " \
               f"{self.hits} hits, {self.misses} misses>"

    def __getitem__(self, fingerprint: str) -> PSFStack:
        try:
            psf = self.db[fingerprint]
        except KeyError:
            self.misses += 1
            raise
        self.hits += 1
        return psf

    def __setitem__(self, fingerprint: str, psf: PSFStack) -> None:
        self.db[fingerprint] = psf

    def close(self):
        logger.debug("Closing %s", self)
        self.db.close()
