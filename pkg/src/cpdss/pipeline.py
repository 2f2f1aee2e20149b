"""Two-stage pipeline: prepare -> train decoder -> train diffusion -> generate -> evaluate."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numcore as nc
from .checkpoint import load_container, save_container
from .config import Config
from .decoder import DecoderModel, GenerationConfig, generate_batch, sequence_loss
from .diffusion import LatentStats, make_schedule, p_sample, training_loss
from .egnn import EgnnDenoiser
from .encoder import AttnPool, PrecomputedEmbedder, ToyEmbedder, attention_pool_ids, import_embeddings
from .evalmetrics import SSComposition, composition_mse, diversity_report, mean_std, ss_identity
from .protio import (SS_ALPHABET, EmptyProteinError, PDBParseError, Protein, assign_ss, filter_dataset,
                     load_ss_sidecar, parse_pdb)
from .ssgraph import GraphBatch, SSGraph, build_graph, segment, segment_ids

log = logging.getLogger(__name__)


# ------------------------------------------------------------------ seeding


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary parts (independent of PYTHONHASHSEED)."""
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


def is_validation(pid: str, fraction: float) -> bool:
    if fraction <= 0:
        return False
    h = int.from_bytes(hashlib.sha256(pid.encode()).digest()[:4], "little")
    return (h % 1000) < fraction * 1000


# ------------------------------------------------------------------ records


@dataclass
class Example:
    id: str
    aa_seq: str
    ss_seq: str
    graph: SSGraph

    @property
    def segments(self):
        return self.graph.segments or segment(self.ss_seq)


def load_prepared(data_dir) -> tuple[dict, list[Example]]:
    data_dir = Path(data_dir)
    manifest = json.loads((data_dir / "manifest.json").read_text())
    examples = []
    for rec in manifest["kept"]:
        graph = SSGraph.from_json((data_dir / rec["graph"]).read_text())
        examples.append(Example(rec["id"], rec["aa_seq"], rec["ss_seq"], graph))
    return manifest, examples


# ------------------------------------------------------------------ stage 1 model


class Stage1Model(nc.Module):
    """Embedder + attention pooling + decoder."""

    def __init__(self, cfg: Config, embedder=None):
        self.cfg = cfg
        rng = np.random.default_rng(derive_seed(cfg.seed, "pool"))
        if embedder is None:
            embedder = ToyEmbedder(cfg.d, cfg.emb_blocks, cfg.emb_heads, seed=derive_seed(cfg.seed, "embedder"))
        self.embedder = embedder
        self.pool = AttnPool(cfg.d, rng)
        self.decoder = DecoderModel(cfg.d, cfg.dec_blocks, cfg.dec_heads, cfg.dec_ffn, cfg.max_len,
                                    cfg.memory_positions, seed=derive_seed(cfg.seed, "decoder"))
        if isinstance(self.embedder, nc.Module):
            self.embedder.set_trainable(cfg.train_embedder)
        self._z_cache: dict[str, np.ndarray] = {}

    def trainable(self) -> list[nc.Tensor]:
        params = self.pool.parameters() + self.decoder.parameters()
        if self.cfg.train_embedder and isinstance(self.embedder, nc.Module):
            params = self.embedder.parameters() + params
        return params

    def residue_embeddings(self, seqs: list[str]) -> list[nc.Tensor]:
        if self.cfg.train_embedder:
            return self.embedder.embed_batch(seqs)
        missing = sorted({s for s in seqs if s not in self._z_cache})
        if missing:
            with nc.no_grad():
                for s, z in zip(missing, self.embedder.embed_batch(missing)):
                    self._z_cache[s] = z.data
        return [nc.Tensor(self._z_cache[s], dtype=self._z_cache[s].dtype) for s in seqs]

    def encode(self, examples: list[Example]) -> list[nc.Tensor]:
        """Per-segment latents H (m_i x d) for each example."""
        Zs = self.residue_embeddings([e.aa_seq for e in examples])
        Z = nc.concat(Zs, axis=0) if len(Zs) > 1 else Zs[0]
        ids, counts, off = [], [], 0
        for e in examples:
            segs = e.segments
            ids.append(segment_ids(segs) + off)
            counts.append(len(segs))
            off += len(segs)
        H = attention_pool_ids(Z, np.concatenate(ids), off, self.pool.weight, self.pool.bias)
        out, start = [], 0
        for c in counts:
            out.append(H[start:start + c])
            start += c
        return out

    def loss(self, examples: list[Example]):
        return sequence_loss(self.decoder, [e.aa_seq for e in examples], self.encode(examples))

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        if isinstance(self.embedder, nc.Module):
            out.update({f"embedder.{k}": v for k, v in self.embedder.state_dict().items()})
        out.update({f"pool.{k}": v for k, v in self.pool.state_dict().items()})
        out.update({f"decoder.{k}": v for k, v in self.decoder.state_dict().items()})
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        def sub(prefix):
            return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}

        if isinstance(self.embedder, nc.Module):
            self.embedder.load_state_dict(sub("embedder."))
        self.pool.load_state_dict(sub("pool."))
        self.decoder.load_state_dict(sub("decoder."))
        self._z_cache.clear()


def make_embedder(cfg: Config, examples: list[Example]):
    if cfg.embedder == "import":
        table = import_embeddings(cfg.embeddings_path, {e.id: len(e.aa_seq) for e in examples}, cfg.d)
        return PrecomputedEmbedder(table, {e.id: e.aa_seq for e in examples})
    return None


def teacher_forced_accuracy(model: Stage1Model, examples: list[Example]) -> float:
    with nc.no_grad():
        _, correct, total = model.loss(examples)
    return correct / total


# ------------------------------------------------------------------ stage 2 model


def make_denoiser(cfg: Config) -> EgnnDenoiser:
    return EgnnDenoiser(cfg.d, cfg.d_h, cfg.egnn_layers, cfg.time_dim, cfg.coord_scale,
                        seed=derive_seed(cfg.seed, "denoiser"))


# ------------------------------------------------------------------ training loops


class LossLog:
    def __init__(self, path: Path, append: bool = False):
        self.path = path
        new = not (append and path.exists())
        self.fh = open(path, "a" if append else "w", newline="")
        self.w = csv.writer(self.fh)
        if new:
            self.w.writerow(["step", "split", "loss"])

    def write(self, step: int, split: str, loss: float) -> None:
        self.w.writerow([step, split, f"{loss:.6f}"])
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()


def _batches(n: int, size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + size] for i in range(0, n, size)]


def fit_stage1(model: Stage1Model, train: list[Example], steps: int, lr: float, weight_decay: float,
               batch_size: int, seed: int, start_step: int = 0, opt: nc.AdamW | None = None,
               on_log=None, log_every: int = 50) -> nc.AdamW:
    params = model.trainable()
    if opt is None:
        opt = nc.AdamW(params, lr=lr, weight_decay=weight_decay)
    for step in range(start_step, steps):
        rng = np.random.default_rng(derive_seed(seed, "stage1", step))
        idx = rng.choice(len(train), size=min(batch_size, len(train)), replace=False)
        batch = [train[i] for i in sorted(idx)]
        opt.zero_grad()
        loss, _, _ = model.loss(batch)
        loss.backward()
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
        opt.step()
        if on_log is not None and ((step + 1) % log_every == 0 or step + 1 == steps):
            on_log(step + 1, float(loss.data))
    return opt


def fit_stage2(denoiser: EgnnDenoiser, graphs: list[SSGraph], latents: list[np.ndarray], schedule, steps: int,
               lr: float, weight_decay: float, batch_size: int, seed: int, start_step: int = 0,
               opt: nc.AdamW | None = None, on_step=None) -> nc.AdamW:
    """Train the denoiser on fixed (normalized) latents; ``on_step(step, loss)`` sees every step."""
    params = denoiser.parameters()
    if opt is None:
        opt = nc.AdamW(params, lr=lr, weight_decay=weight_decay)
    dtype = nc.get_dtype()
    for step in range(start_step, steps):
        rng = np.random.default_rng(derive_seed(seed, "stage2", step))
        idx = sorted(rng.choice(len(graphs), size=min(batch_size, len(graphs)), replace=False))
        batch = GraphBatch.from_graphs([graphs[i] for i in idx])
        H0 = np.concatenate([latents[i] for i in idx]).astype(dtype)
        opt.zero_grad()
        loss = training_loss(denoiser, H0, batch, schedule, rng)
        loss.backward()
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
        opt.step()
        if on_step is not None:
            on_step(step + 1, float(loss.data))
    return opt


# ------------------------------------------------------------------ prepare


def prepare(in_dir, out_dir, cfg: Config) -> dict:
    """Parse PDBs (+ optional .ss sidecars), filter, build graphs, write manifest."""
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    (out_dir / "graphs").mkdir(parents=True, exist_ok=True)
    proteins: list[Protein] = []
    errors = []
    ss_source = {}
    for path in sorted(in_dir.glob("*.pdb")):
        pid = path.stem
        try:
            p = parse_pdb(path.read_text(), pid)
            side = path.with_suffix(".ss")
            if side.exists():
                load_ss_sidecar(p, side.read_text())
                ss_source[pid] = "sidecar"
            else:
                p.ss_seq = assign_ss(p)
                ss_source[pid] = "assigned"
            proteins.append(p)
        except (OSError, UnicodeDecodeError, PDBParseError, EmptyProteinError, ValueError) as exc:
            log.warning("skipping %s: %s", path.name, exc)
            errors.append({"file": path.name, "error": str(exc)})
    kept, rejected = filter_dataset(proteins, cfg.max_segment)
    kept_recs = []
    for p in kept:
        g = build_graph(p, cfg.k, cfg.edge_mode)
        rel = f"graphs/{p.id}.json"
        (out_dir / rel).write_text(g.to_json())
        kept_recs.append({"id": p.id, "n": len(p), "m": g.m, "aa_seq": p.aa_seq, "ss_seq": p.ss_seq,
                          "ss_source": ss_source[p.id], "graph": rel,
                          "split": "val" if is_validation(p.id, cfg.val_fraction) else "train"})
    manifest = {
        "config": cfg.to_dict(),
        "kept": kept_recs,
        "rejected": [{"id": p.id, "n": len(p), "reason": why} for p, why in rejected],
        "errors": errors,
        "counts": {"kept": len(kept), "rejected": len(rejected), "errors": len(errors)},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


# ------------------------------------------------------------------ stage 1 CLI driver


class ConfigMismatch(RuntimeError):
    pass


def _split(examples: list[Example], manifest: dict):
    split = {r["id"]: r.get("split", "train") for r in manifest["kept"]}
    train = [e for e in examples if split[e.id] == "train"]
    val = [e for e in examples if split[e.id] == "val"]
    return train, val


def train_decoder(data_dir, cfg: Config, out_dir, resume=None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest, examples = load_prepared(data_dir)
    train, val = _split(examples, manifest)
    if not train:
        raise ValueError("no training examples")
    model = Stage1Model(cfg, make_embedder(cfg, examples))
    start = 0
    opt = None
    if resume:
        text, arrays = load_container(resume)
        old = Config.from_json(text)
        delta = old.diff(cfg)
        delta.pop("stage1_steps", None)
        if delta:
            raise ConfigMismatch(f"resume config differs: {delta}")
        model.load_arrays(arrays)
        opt = nc.AdamW(model.trainable(), lr=cfg.lr, weight_decay=cfg.weight_decay)
        opt.load_state_arrays(arrays)
        start = opt.step_count
    logger = LossLog(out_dir / "stage1_loss.csv", append=bool(resume))
    best = [math.inf]

    def on_log(step, loss):
        logger.write(step, "train", loss)
        score = loss
        if val:
            with nc.no_grad():
                vloss, _, _ = model.loss(val)
            score = float(vloss.data)
            logger.write(step, "val", score)
        if score < best[0]:
            best[0] = score
            save_stage1(out_dir / "stage1_best.cpds", cfg, model, None)

    opt = fit_stage1(model, train, cfg.stage1_steps, cfg.lr, cfg.weight_decay, cfg.batch_size, cfg.seed,
                     start_step=start, opt=opt, on_log=on_log, log_every=cfg.log_every)
    logger.close()
    path = out_dir / "stage1.cpds"
    save_stage1(path, cfg, model, opt)
    acc = teacher_forced_accuracy(model, train)
    log.info("stage 1 teacher-forced accuracy on train: %.4f", acc)
    (out_dir / "stage1_summary.json").write_text(json.dumps({"train_accuracy": acc}, sort_keys=True) + "\n")
    return path


def save_stage1(path, cfg: Config, model: Stage1Model, opt: nc.AdamW | None) -> None:
    arrays = model.arrays()
    if opt is not None:
        arrays.update(opt.state_arrays())
    save_container(path, cfg.to_json(), arrays)


def load_stage1(path, examples: list[Example] | None = None) -> tuple[Config, Stage1Model]:
    text, arrays = load_container(path)
    cfg = Config.from_json(text)
    model = Stage1Model(cfg, make_embedder(cfg, examples or []) if cfg.embedder == "import" else None)
    model.load_arrays(arrays)
    return cfg, model


# ------------------------------------------------------------------ stage 2 CLI driver


def cache_latents(model: Stage1Model, examples: list[Example]) -> dict[str, np.ndarray]:
    out = {}
    with nc.no_grad():
        for e in sorted(examples, key=lambda e: e.id):
            out[e.id] = model.encode([e])[0].data.astype(np.float32)
    return out


def train_diffusion(data_dir, stage1_path, cfg: Config, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest, examples = load_prepared(data_dir)
    train, _ = _split(examples, manifest)
    s1_cfg, model = load_stage1(stage1_path, examples)
    if s1_cfg.d != cfg.d:
        raise ConfigMismatch(f"stage-1 latent dim {s1_cfg.d} != config d {cfg.d}")
    latents = cache_latents(model, train)
    save_container(out_dir / "latents.cpds", {"kind": "latents", "stage1": str(stage1_path)}, latents)
    ids = sorted(latents)
    stats = LatentStats.fit([latents[i] for i in ids])
    by_id = {e.id: e for e in train}
    graphs = [by_id[i].graph for i in ids]
    normed = [stats.normalize(latents[i]) for i in ids]
    denoiser = make_denoiser(cfg)
    schedule = make_schedule(cfg.schedule, cfg.T)
    logger = LossLog(out_dir / "stage2_loss.csv")
    window: list[float] = []

    def on_step(step, loss):
        window.append(loss)
        if step % cfg.log_every == 0 or step == cfg.stage2_steps:
            logger.write(step, "train", float(np.mean(window)))
            window.clear()

    opt = fit_stage2(denoiser, graphs, normed, schedule, cfg.stage2_steps, cfg.stage2_lr, cfg.weight_decay,
                     cfg.stage2_batch, cfg.seed, on_step=on_step)
    logger.close()
    arrays = {f"denoiser.{k}": v for k, v in denoiser.state_dict().items()}
    arrays["stats.mean"] = stats.mean
    arrays["stats.std"] = stats.std
    arrays.update(opt.state_arrays())
    path = out_dir / "stage2.cpds"
    save_container(path, cfg.to_json(), arrays)
    return path


def load_stage2(path) -> tuple[Config, EgnnDenoiser, LatentStats]:
    text, arrays = load_container(path)
    cfg = Config.from_json(text)
    den = make_denoiser(cfg)
    den.load_state_dict({k[len("denoiser."):]: v for k, v in arrays.items() if k.startswith("denoiser.")})
    return cfg, den, LatentStats(arrays["stats.mean"].astype(np.float64), arrays["stats.std"].astype(np.float64))


# ------------------------------------------------------------------ generation


def sample_sequences(graph: SSGraph, decoder: DecoderModel, denoiser, stats: LatentStats, cfg: Config,
                     n_samples: int, template_id: str, gen: GenerationConfig) -> list[dict]:
    """n independent latent samples -> decoded sequences for one template graph."""
    schedule = make_schedule(cfg.schedule, cfg.T)
    seeds = [derive_seed(cfg.seed, template_id, i) for i in range(n_samples)]
    diff_rngs = [np.random.default_rng([s, 0]) for s in seeds]
    dec_rngs = [np.random.default_rng([s, 1]) for s in seeds]
    batch = GraphBatch.from_graphs([graph] * n_samples)
    H = p_sample(batch, schedule, denoiser, cfg.d, diff_rngs)
    latents = [stats.denormalize(h) for h in batch.split(H)]
    decoded = generate_batch(decoder, latents, gen, dec_rngs)
    return [{"template_id": template_id, "sample_index": i, "sequence": seq, "truncated": bool(tr), "seed": s}
            for i, ((seq, tr), s) in enumerate(zip(decoded, seeds))]


def generate(graph_paths, stage1_path, stage2_path, cfg: Config, out_path, n_samples: int | None = None) -> int:
    _, s1 = load_stage1(stage1_path)
    s2_cfg, denoiser, stats = load_stage2(stage2_path)
    n_samples = n_samples or cfg.n_samples
    gen = GenerationConfig(cfg.gen_max_len, cfg.temperature, cfg.top_k, cfg.seed)
    n = 0
    with open(out_path, "w") as fh:
        for path in graph_paths:
            path = Path(path)
            try:
                graph = SSGraph.from_json(path.read_text())
            except (KeyError, ValueError, OSError) as exc:
                log.warning("skipping %s: %s", path, exc)
                continue
            tid = graph.id or path.stem
            for rec in sample_sequences(graph, s1.decoder, denoiser, stats, s2_cfg.replace(seed=cfg.seed),
                                        n_samples, tid, gen):
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
                n += 1
    return n


# ------------------------------------------------------------------ evaluation


class PropensityPredictor:
    """Per-residue SS class by residue/class propensity fitted on template sequences."""

    def __init__(self, pairs: list[tuple[str, str]], pseudo: float = 1.0):
        letters = sorted({c for aa, _ in pairs for c in aa})
        counts = {c: np.full(3, pseudo) for c in letters}
        total = np.full(3, pseudo)
        for aa, ss in pairs:
            for a, s in zip(aa, ss):
                k = SS_ALPHABET.index(s)
                counts[a][k] += 1
                total[k] += 1
        prior = total / total.sum()
        self.label = {a: SS_ALPHABET[int(np.argmax((c / c.sum()) / prior))] for a, c in counts.items()}
        self.default = SS_ALPHABET[int(np.argmax(prior))]

    def predict(self, seq: str) -> str:
        return "".join(self.label.get(a, self.default) for a in seq)


def evaluate(generated_path, data_dir, cfg: Config, mode: str = "self-consistency", sidecar_dir=None) -> dict:
    manifest, examples = load_prepared(data_dir)
    conds = {e.id: e for e in examples}
    records = [json.loads(line) for line in Path(generated_path).read_text().splitlines() if line.strip()]
    if mode == "self-consistency":
        predictor = PropensityPredictor([(e.aa_seq, e.ss_seq) for e in examples])
    elif mode == "sidecar":
        if sidecar_dir is None:
            raise ValueError("sidecar mode needs a sidecar directory")
    else:
        raise ValueError(f"unknown evaluation mode {mode!r}")
    scores = dict(match=cfg.align_match, mismatch=cfg.align_mismatch, gap=cfg.align_gap)
    by_tpl: dict[str, list[dict]] = {}
    for r in records:
        by_tpl.setdefault(r["template_id"], []).append(r)
    dropped = 0
    per_template = {}
    for tid in sorted(by_tpl):
        if tid not in conds:
            log.warning("no condition for template %s", tid)
            dropped += len(by_tpl[tid])
            continue
        cond = conds[tid].ss_seq
        recs = sorted(by_tpl[tid], key=lambda r: r["sample_index"])
        gen_ss, seqs = [], []
        for r in recs:
            if not r["sequence"]:
                dropped += 1
                continue
            if mode == "sidecar":
                path = Path(sidecar_dir) / f"{tid}_{r['sample_index']}.ss"
                if not path.exists():
                    dropped += 1
                    continue
                from .protio import collapse_ss8
                ss = collapse_ss8(path.read_text().strip())
            else:
                ss = predictor.predict(r["sequence"])
            gen_ss.append(ss)
            seqs.append(r["sequence"])
        if not gen_ss:
            continue
        entry = {"n_samples": len(gen_ss)}
        entry["seq_id"] = diversity_report(seqs, **scores) if len(seqs) >= 2 else None
        for tag, drop in (("", False), ("_noloop", True)):
            ids = [ss_identity(cond, g, drop, **scores)[0] for g in gen_ss]
            mses = [composition_mse(SSComposition.of(cond), SSComposition.of(g), drop) for g in gen_ss]
            m, s = mean_std(ids)
            entry[f"id{tag}"] = {"mean": m, "std": s}
            entry[f"id_max{tag}"] = max(ids)
            m, s = mean_std(mses)
            entry[f"mse{tag}"] = {"mean": m, "std": s}
        per_template[tid] = entry

    def agg(getter):
        vals = [getter(e) for e in per_template.values()]
        vals = [v for v in vals if v is not None]
        m, s = mean_std(vals)
        return {"mean": m, "std": s}

    aggregate = {"seq_id": agg(lambda e: e["seq_id"])}
    for tag in ("", "_noloop"):
        aggregate[f"id{tag}"] = agg(lambda e, t=tag: e[f"id{t}"]["mean"])
        aggregate[f"id_max{tag}"] = agg(lambda e, t=tag: e[f"id_max{t}"])
        aggregate[f"mse{tag}"] = agg(lambda e, t=tag: e[f"mse{t}"]["mean"])
    return {
        "mode": mode,
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "units": {"identity": "percent", "mse": "squared percentage points"},
        "dropped_samples": dropped,
        "per_template": per_template,
        "aggregate": aggregate,
    }
