"""Run configuration with desk-scale defaults and a full-scale preset."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field


@dataclass
class Config:
    preset: str = "desk"
    seed: int = 0
    # shared latent / model width
    d: int = 64
    # embedder (toy stand-in for the pretrained language model)
    embedder: str = "toy"  # "toy" or "import"
    embeddings_path: str = ""
    emb_blocks: int = 2
    emb_heads: int = 4
    train_embedder: bool = False
    # decoder
    dec_blocks: int = 2
    dec_heads: int = 4
    dec_ffn: int = 256
    max_len: int = 256
    memory_positions: bool = True
    # denoiser
    d_h: int = 64
    egnn_layers: int = 4
    time_dim: int = 64
    coord_scale: float = 10.0
    # diffusion
    schedule: str = "sqrt"
    T: int = 200
    # optimizer
    lr: float = 5e-4
    weight_decay: float = 1e-5
    stage2_lr: float = 5e-4
    # data
    k: int = 3
    edge_mode: str = "sum"
    max_segment: int = 100
    val_fraction: float = 0.1
    # training loop
    stage1_steps: int = 2000
    stage2_steps: int = 5000
    batch_size: int = 20
    stage2_batch: int = 8
    log_every: int = 50
    # generation / evaluation
    n_samples: int = 20
    temperature: float = 1.0
    top_k: int = 0
    gen_max_len: int = 128
    align_match: int = 1
    align_mismatch: int = -1
    align_gap: int = -1
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, doc: dict) -> "Config":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, text: str) -> "Config":
        return cls.from_dict(json.loads(text))

    def replace(self, **kw) -> "Config":
        return dataclasses.replace(self, **kw)

    def diff(self, other: "Config") -> dict[str, tuple]:
        a, b = self.to_dict(), other.to_dict()
        return {k: (a[k], b[k]) for k in a if a[k] != b[k]}


def desk_preset() -> Config:
    return Config()


def full_preset() -> Config:
    """Full-scale values (1280-d latents from an imported 650M-parameter PLM)."""
    return Config(
        preset="full", d=1280, embedder="import", d_h=640, egnn_layers=4,
        dec_blocks=3, dec_heads=8, dec_ffn=4960, schedule="sqrt", T=1000,
        lr=5e-4, weight_decay=1e-5, stage2_lr=5e-4, k=3, n_samples=200,
    )


PRESETS = {"desk": desk_preset, "full": full_preset}


def load_config(path: str | None = None, **overrides) -> Config:
    doc = {}
    if path:
        with open(path) as fh:
            doc = json.load(fh)
    preset = PRESETS[doc.get("preset", "desk")]()
    cfg = preset.replace(**{k: v for k, v in doc.items() if k != "preset"})
    return cfg.replace(**{k: v for k, v in overrides.items() if v is not None})
