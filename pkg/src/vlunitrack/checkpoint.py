"""Self-describing checkpoint archive.

A zip (readable by ``numpy.load``) holding one ``.npy`` entry per trainable
parameter under ``param/``, per optimizer moment under ``optim/``, and a
``metadata.json`` record.  Entries are written in sorted order with a fixed
timestamp so identical contents give identical bytes.  Frozen-encoder state
is never stored.
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from vlunitrack.config import TrackerConfig, config_from_text, config_to_text

FORMAT_VERSION = "vlunitrack-ckpt/1"
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    optim: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def config(self) -> TrackerConfig:
        return config_from_text(self.metadata["config"])

    @property
    def step(self) -> int:
        return int(self.metadata.get("step", 0))


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.asarray(arr).copy(order="C"), allow_pickle=False)
    return buf.getvalue()


def _write_entry(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = dict(ckpt.metadata)
    meta["format"] = FORMAT_VERSION
    with zipfile.ZipFile(path, "w") as zf:
        _write_entry(zf, "metadata.json", json.dumps(meta, sort_keys=True, indent=1).encode())
        for prefix, arrays in (("param/", ckpt.params), ("optim/", ckpt.optim)):
            for name in sorted(arrays):
                _write_entry(zf, f"{prefix}{name}.npy", _npy_bytes(arrays[name]))


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("metadata.json"))
            params, optim = {}, {}
            for name in zf.namelist():
                for prefix, target in (("param/", params), ("optim/", optim)):
                    if name.startswith(prefix) and name.endswith(".npy"):
                        arr = np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False)
                        target[name[len(prefix):-4]] = arr
    except (zipfile.BadZipFile, KeyError, ValueError) as e:
        raise CheckpointError(f"corrupt checkpoint {path}: {e}") from None
    if meta.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format {meta.get('format')!r}")
    return Checkpoint(params, optim, meta)


def model_params(model: torch.nn.Module) -> dict[str, np.ndarray]:
    return {n: p.detach().cpu().numpy().copy() for n, p in model.named_parameters() if p.requires_grad}


def optimizer_arrays(model: torch.nn.Module, opt: torch.optim.Optimizer | None) -> dict[str, np.ndarray]:
    out = {}
    if opt is None:
        return out
    for name, p in model.named_parameters():
        st = opt.state.get(p)
        if not st:
            continue
        for key, val in st.items():
            out[f"{name}/{key}"] = torch.as_tensor(val).detach().cpu().numpy().copy()
    return out


def make_checkpoint(model, opt, cfg: TrackerConfig, step: int, extra: dict | None = None) -> Checkpoint:
    meta = {"config": config_to_text(cfg), "step": int(step), "seed": int(cfg.seed)}
    if extra:
        meta.update(extra)
    return Checkpoint(model_params(model), optimizer_arrays(model, opt), meta)


def restore_model(ckpt: Checkpoint, model: torch.nn.Module, opt: torch.optim.Optimizer | None = None):
    named = dict(model.named_parameters())
    missing = [n for n, p in named.items() if p.requires_grad and n not in ckpt.params]
    unknown = [n for n in ckpt.params if n not in named]
    if missing or unknown:
        raise CheckpointError(f"parameter mismatch: missing={missing[:5]} unknown={unknown[:5]}")
    with torch.no_grad():
        for n, arr in ckpt.params.items():
            if tuple(named[n].shape) != arr.shape:
                raise CheckpointError(f"shape mismatch for {n}: {arr.shape} vs {tuple(named[n].shape)}")
            named[n].copy_(torch.from_numpy(arr))
    if opt is not None:
        for key, arr in ckpt.optim.items():
            pname, field_name = key.rsplit("/", 1)
            p = named[pname]
            opt.state.setdefault(p, {})[field_name] = torch.from_numpy(arr.copy())
    return model
