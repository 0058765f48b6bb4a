"""Versioned, checksummed chain checkpoints.

Layout (little endian)::

    8 bytes   magic  b"DNCBCKPT"
    4 bytes   uint32 format version
    8 bytes   uint64 payload length
    32 bytes  sha256 of the payload
    payload   numpy .npz archive

The archive holds the data matrix and mask, current factors, counts, gammas,
sparse subcounts, any saved posterior samples and a JSON ``meta`` entry with
model kind, parameters, iteration counter and the bit-generator state.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpointError, IncompatibleCheckpointError
from .gibbs import Chain, FitResult
from .model import AugmentedState, BoundedMatrix, DncbParams, Hyperparams, MfFactors, Subcounts, TdFactors

MAGIC = b"DNCBCKPT"
VERSION = 1
_HEADER = struct.Struct("<8sIQ32s")

_FACTOR_FIELDS = {"mf": ("theta1", "theta2", "phi"), "td": ("theta", "phi", "pi1", "pi2")}


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _restore_rng(state: dict) -> np.random.Generator:
    bg = getattr(np.random, state["bit_generator"])()
    bg.state = state
    return np.random.Generator(bg)


def save_checkpoint(path, result: FitResult, rng: np.random.Generator, extra: dict | None = None) -> None:
    chain = result.chain
    f, st = chain.factors, chain.state
    arrays = {
        "values": chain.data.values,
        "mask": chain.data.mask,
        "y1": st.y1,
        "y2": st.y2,
        "gamma1": st.gamma1,
        "gamma2": st.gamma2,
        "col_rates": chain.params.rates(chain.data.shape[1]),
    }
    for name in _FACTOR_FIELDS[chain.kind]:
        arrays[f"f_{name}"] = getattr(f, name)
        if result.samples:
            arrays[f"s_{name}"] = np.stack([getattr(s, name) for s in result.samples])
    if st.subcounts is not None:
        for t in (1, 2):
            idx, cnt = st.subcounts.pair(t)
            arrays[f"sc_index{t}"] = idx
            arrays[f"sc_counts{t}"] = cnt
    meta = {
        "kind": chain.kind,
        "eps1": chain.params.eps1,
        "eps2": chain.params.eps2,
        "hyper": vars(chain.hyper),
        "iteration": chain.iteration,
        "allow_approx": chain.allow_approx,
        "sample_iterations": list(result.sample_iterations),
        "rng": _rng_state(rng),
        "row_labels": chain.data.row_labels,
        "col_labels": chain.data.col_labels,
        "delta": chain.data.delta,
        "extra": extra or {},
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    payload = buf.getvalue()
    header = _HEADER.pack(MAGIC, VERSION, len(payload), hashlib.sha256(payload).digest())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(header + payload)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[FitResult, np.random.Generator, dict]:
    """Restore (result with chain, rng, extra metadata).

    Raises
    ------
    CorruptCheckpointError
        Bad magic, truncated file or checksum mismatch.
    IncompatibleCheckpointError
        File written by a different format version.
    """
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CorruptCheckpointError(f"{path}: truncated header")
    magic, version, length, digest = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CorruptCheckpointError(f"{path}: not a checkpoint file")
    if version != VERSION:
        raise IncompatibleCheckpointError(f"{path}: format version {version}, this build reads version {VERSION}")
    payload = raw[_HEADER.size:]
    if len(payload) != length or hashlib.sha256(payload).digest() != digest:
        raise CorruptCheckpointError(f"{path}: checksum mismatch (file truncated or modified)")
    with np.load(io.BytesIO(payload)) as z:
        arr = {k: z[k] for k in z.files}
    meta = json.loads(arr.pop("meta").tobytes().decode())
    kind = meta["kind"]
    data = BoundedMatrix(arr["values"], arr["mask"], meta["row_labels"], meta["col_labels"], meta["delta"])
    cls = TdFactors if kind == "td" else MfFactors
    names = _FACTOR_FIELDS[kind]
    factors = cls(*(arr[f"f_{n}"] for n in names))
    samples = []
    if f"s_{names[0]}" in arr:
        stacks = [arr[f"s_{n}"] for n in names]
        samples = [cls(*(s[i].copy() for s in stacks)) for i in range(stacks[0].shape[0])]
    sc = None
    if "sc_index1" in arr:
        sc = Subcounts(arr["sc_index1"], arr["sc_counts1"], arr["sc_index2"], arr["sc_counts2"])
    state = AugmentedState(arr["y1"], arr["y2"], arr["gamma1"], arr["gamma2"], sc)
    params = DncbParams(meta["eps1"], meta["eps2"], arr["col_rates"])
    chain = Chain(data, kind, params, Hyperparams(**meta["hyper"]), factors, state, meta["iteration"],
                  meta["allow_approx"])
    result = FitResult(chain, samples, list(meta["sample_iterations"]))
    return result, _restore_rng(meta["rng"]), meta["extra"]
