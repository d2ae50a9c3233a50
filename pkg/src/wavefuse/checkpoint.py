"""Checkpoint files: a text manifest followed by a raw little-endian payload.

Layout::

    wavefuse-checkpoint 1
    step <int>
    best_val <float>
    rng <json>
    optim_step <int>
    window <float> ...              (training losses since the last log line)
    config <key> = <value>          (one line per RunConfig field)
    tensor <name> <float32|float64> <d0>x<d1>... <byte offset> <byte count>
    end
    <payload bytes>

Tensor names are ``model.<param>``, ``adam_m.<param>`` and ``adam_v.<param>``.
Offsets are relative to the first payload byte.
"""
import json

import numpy as np

from .config import RunConfig

MAGIC = "wavefuse-checkpoint"
VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(ValueError):
    pass


def rng_state_to_json(rng):
    def plain(v):
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        if isinstance(v, np.ndarray):
            return {"__array__": [int(x) for x in v], "dtype": str(v.dtype)}
        if isinstance(v, np.integer):
            return int(v)
        return v

    return json.dumps(plain(rng.bit_generator.state), sort_keys=True)


def rng_from_json(text):
    def restore(v):
        if isinstance(v, dict):
            if "__array__" in v:
                return np.array(v["__array__"], dtype=v["dtype"])
            return {k: restore(x) for k, x in v.items()}
        return v

    state = restore(json.loads(text))
    bitgen = getattr(np.random, state["bit_generator"])()
    bitgen.state = state
    return np.random.Generator(bitgen)


def save_checkpoint(path, config, model, optim=None, step=0, rng=None, best_val=float("inf"),
                    window=()):
    tensors = [("model." + n, p.value) for n, p in model.named_params()]
    if optim is not None:
        for n, _ in model.named_params():
            if n in optim.m:
                tensors.append(("adam_m." + n, optim.m[n]))
                tensors.append(("adam_v." + n, optim.v[n]))
    lines = [f"{MAGIC} {VERSION}", f"step {step}", f"best_val {best_val!r}"]
    if rng is not None:
        lines.append("rng " + rng_state_to_json(rng))
    if optim is not None:
        lines.append(f"optim_step {optim.step}")
    if window:
        lines.append("window " + " ".join(repr(float(v)) for v in window))
    lines += ["config " + ln for ln in config.to_text().splitlines()]
    payload = []
    offset = 0
    for name, arr in tensors:
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {dtype} for {name}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
        shape = "x".join(str(d) for d in arr.shape) or "scalar"
        lines.append(f"tensor {name} {dtype} {shape} {offset} {len(raw)}")
        payload.append(raw)
        offset += len(raw)
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for raw in payload:
            fh.write(raw)


def read_checkpoint(path):
    """Parse a checkpoint into a dict with ``config``, ``tensors``, ``step`` etc."""
    with open(path, "rb") as fh:
        buf = fh.read()
    marker = b"\nend\n"
    cut = buf.find(marker)
    if cut < 0:
        raise CheckpointError("missing manifest terminator")
    try:
        header = buf[:cut].decode("ascii").split("\n")
    except UnicodeDecodeError as exc:
        raise CheckpointError("manifest is not ASCII") from exc
    payload = buf[cut + len(marker):]
    if header[0] != f"{MAGIC} {VERSION}":
        raise CheckpointError(f"not a version-{VERSION} checkpoint: {header[0]!r}")
    out = {"step": 0, "best_val": float("inf"), "rng": None, "optim_step": None, "window": [],
           "tensors": {}}
    config_lines = []
    end = 0
    try:
        for line in header[1:]:
            kind, _, rest = line.partition(" ")
            if kind == "step":
                out["step"] = int(rest)
            elif kind == "best_val":
                out["best_val"] = float(rest)
            elif kind == "rng":
                out["rng"] = rest
            elif kind == "optim_step":
                out["optim_step"] = int(rest)
            elif kind == "window":
                out["window"] = [float(v) for v in rest.split()]
            elif kind == "config":
                config_lines.append(rest)
            elif kind == "tensor":
                name, dtype, shape, offset, nbytes = rest.split()
                offset, nbytes = int(offset), int(nbytes)
                dims = () if shape == "scalar" else tuple(int(d) for d in shape.split("x"))
                if dtype not in _DTYPES:
                    raise CheckpointError(f"unsupported dtype {dtype}")
                count = int(np.prod(dims, dtype=np.int64))
                if count * np.dtype(_DTYPES[dtype]).itemsize != nbytes:
                    raise CheckpointError(f"byte count does not match shape for {name}")
                if offset + nbytes > len(payload):
                    raise CheckpointError(f"payload truncated at {name}")
                arr = np.frombuffer(payload, dtype=_DTYPES[dtype], count=count, offset=offset)
                out["tensors"][name] = arr.astype(dtype).reshape(dims)
                end = max(end, offset + nbytes)
            else:
                raise CheckpointError(f"unknown manifest record {kind!r}")
    except ValueError as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"malformed manifest: {exc}") from exc
    if end != len(payload):
        raise CheckpointError("payload length does not match manifest")
    out["config"] = RunConfig.from_text("\n".join(config_lines))
    return out


def load_into(ckpt, model, optim=None):
    """Copy tensors from a parsed checkpoint into ``model`` (and ``optim``)."""
    tensors = ckpt["tensors"]
    for name, p in model.named_params():
        key = "model." + name
        if key not in tensors:
            raise CheckpointError(f"checkpoint lacks {key}")
        arr = tensors[key]
        if arr.shape != p.value.shape:
            raise CheckpointError(f"shape mismatch for {name}: {arr.shape} vs {p.value.shape}")
        p.value[...] = arr
    expected = {"model." + n for n, _ in model.named_params()}
    extra = {k for k in tensors if k.startswith("model.")} - expected
    if extra:
        raise CheckpointError(f"unexpected tensors: {sorted(extra)[:3]}")
    if optim is not None and ckpt["optim_step"] is not None:
        optim.step = ckpt["optim_step"]
        for name, p in model.named_params():
            if "adam_m." + name in tensors:
                optim.m[name] = tensors["adam_m." + name].astype(p.value.dtype).copy()
                optim.v[name] = tensors["adam_v." + name].astype(p.value.dtype).copy()
