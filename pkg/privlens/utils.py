import hashlib
import json
import os
import tempfile
from typing import Any, Union

THREADS_ENV = "PRIVLENS_THREADS"


def get_thread_limit(default: int = None) -> int:
    """
    Return the maximum number of worker threads. ``PRIVLENS_THREADS`` caps
    internal parallelism; when unset the CPU count is used.
    """
    value = os.environ.get(THREADS_ENV)
    if value:
        try:
            limit = int(value)
        except ValueError:
            raise ValueError(f"Invalid '{THREADS_ENV}' value: {value!r}")
        if limit < 1:
            raise ValueError(f"Invalid '{THREADS_ENV}' value: {limit}")
        return limit
    return default or os.cpu_count() or 1


def derive_seed(master: int, *labels) -> int:
    """
    Derive a 64-bit sub-seed from the master seed and a path of labels.
    The rule is the first 8 bytes (little-endian) of the SHA-256 digest of
    ``"master/label1/label2..."``, so it is stable across platforms.

    >>> derive_seed(0, "noise") == derive_seed(0, "noise")
    True
    >>> derive_seed(0, "noise") == derive_seed(1, "noise")
    False
    >>> derive_seed(7, "iteration", 3) < 2 ** 64
    True
    """
    key = "/".join(str(part) for part in (master,) + labels)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def canonical_json(obj: Any) -> str:
    """Serialization used for hashing and fingerprints"""
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def sha256_hex(data: Union[str, bytes]) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def get_data_path(createdir=True):
    """ Return a path to a folder where privlens keeps persistent data,
    like the PSF cache.
    """
    path = os.environ.get("PRIVLENS_DATA_DIR", ".privlens")
    if createdir:
        os.makedirs(path, exist_ok=True)
    return path


def atomic_write(path: str, data: Union[str, bytes]) -> str:
    """
    Write ``data`` to ``path`` through a temporary file in the same
    directory followed by a rename, so readers never see partial files.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return path
